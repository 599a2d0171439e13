"""Compile a few corpus cases natively and to wasm, compare crashes, then harden.

Needs clang, wasm-ld and the WASI sysroot (see README).  Uses 10 runs per
artifact so it finishes in about a minute; the full study uses 100.

    python3 demos/03_differential_run.py [case-id ...]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from wasmguard.corpus import load_manifest
from wasmguard.diff_harness import HarnessConfig, format_summary, run_diff

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CASES = ["cwe121-char-declare-loop", "cwe121-wchar-declare-cpy", "safe-memcpy"]


def main() -> int:
    ids = sys.argv[1:] or DEFAULT_CASES
    manifest = load_manifest(ROOT / "corpus/manifest.yaml").select(ids)
    with tempfile.TemporaryDirectory(prefix="wasmguard-demo-") as tmp:
        cfg = HarnessConfig(runs=10, out_root=Path(tmp), second_compiler=False)
        report = run_diff(manifest, cfg, progress=lambda msg: print(f"  {msg}", file=sys.stderr))
    for err in report.errors:
        print(f"error: {err}")
    post = {(r.case_id, r.opt): r.divergence.cls for r in report.post}
    for r in report.pre:
        print(f"{r.case_id:<28} {r.opt}  {r.divergence.cls:<18} -> {post.get((r.case_id, r.opt), '-')}")
    print()
    print(format_summary(report))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
