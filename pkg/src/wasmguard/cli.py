"""Command-line entry point: analyze, harden, diff, report, corpus-build."""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .canary_injector import (
    DEFAULT_GUARD_VALUE, DEFAULT_RANDOM_IMPORT, FIXED, HARDENED, RANDOM, CanaryConfig,
    GuardImportMissing, InvalidConfig, harden, verify_hardening,
)
from .corpus import (
    OPT_LEVELS, TARGETS, CorpusError, build_corpus, default_manifest_path, load_manifest,
)
from .diff_harness import (
    EXIT_INFRA, HarnessConfig, format_summary, load_report, run_diff,
)
from .frame_analysis import (
    ESCAPES_FRAME, AmbiguousStackPointer, detect_frames, detect_sp_global,
    find_escaping_stores, unresolved_store_counts,
)
from .toolchain import ToolchainMissing
from .wasm_model import WasmError, decode_module, encode_module

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_ESCAPES = 3
EXIT_ALL_SKIPPED = 4

GUARD_MODES = {"fixed": FIXED, "random": RANDOM}

# Real stdout while human-readable output is diverted for `--json -`.
_json_stream = None


def schema(name: str) -> dict:
    text = resources.files("wasmguard").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


SCHEMA_NAMES = ("analyze", "harden", "report", "summary", "corpus-build", "manifest")


def validate_document(doc: dict, name: str) -> None:
    """Validate against a bundled schema; cross-file $refs resolve by file name."""
    from referencing import Registry, Resource

    resources_ = [(f"{n}.schema.json", Resource.from_contents(schema(n))) for n in SCHEMA_NAMES]
    registry = Registry().with_resources(resources_)
    registry = registry.with_resources(
        [(f"wasmguard/{n}.schema.json", r) for n, (_, r) in zip(SCHEMA_NAMES, resources_)])
    jsonschema.Draft202012Validator(schema(name), registry=registry).validate(doc)


def _emit_json(doc: dict, dest: str | None) -> None:
    if dest is None:
        return
    text = json.dumps(doc, indent=2) + "\n"
    if dest == "-":
        (_json_stream or sys.stdout).write(text)
        return
    path = Path(dest)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".wasmguard-", dir=path.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _err(msg: str) -> None:
    print(f"wasmguard: {msg}", file=sys.stderr)


def _load_module(path: str):
    data = Path(path).read_bytes()
    return decode_module(data), len(data)


# ------------------------------------------------------------ analyze

def analysis_document(m, path: str = "") -> dict:
    """Frames, skips and escape findings of one module as a JSON-ready dict."""
    sp = detect_sp_global(m)
    scan = detect_frames(m, sp)
    findings = find_escaping_stores(m, scan.frames, include_warnings=True)
    unresolved = unresolved_store_counts(m, scan.frames)
    names = m.function_names()
    return {
        "module": path,
        "sp_global": sp,
        "frames": [
            {
                "function_index": f.function_index,
                "name": names.get(f.function_index),
                "frame_size": f.frame_size,
                "base_local": f.base_local,
                "prologue_span": list(f.prologue_span),
                "epilogue_spans": [list(s) for s in f.epilogue_spans],
                "restore_styles": list(f.restore_styles),
                "unresolved_stores": unresolved.get(f.function_index, 0),
            }
            for f in scan.frames
        ],
        "skipped": [
            {"function_index": s.function_index, "name": names.get(s.function_index),
             "reason": s.reason, "detail": s.detail}
            for s in scan.skipped
        ],
        "findings": [
            {"function_index": e.function_index, "name": names.get(e.function_index),
             "store_index": e.store_index, "store_width": e.store_width,
             "effective_offset": e.effective_offset, "frame_size": e.frame_size,
             "severity": e.severity}
            for e in findings
        ],
    }


def _print_analysis(doc: dict, show_skipped: bool) -> None:
    print(f"stack pointer global: {doc['sp_global'] if doc['sp_global'] is not None else 'none'}")
    by_func: dict[int, list[dict]] = {}
    for e in doc["findings"]:
        by_func.setdefault(e["function_index"], []).append(e)
    if doc["frames"]:
        print(f"{'func':>6}  {'name':<28} {'frame':>6}  {'base':>5}  escapes")
    for f in doc["frames"]:
        esc = [e for e in by_func.get(f["function_index"], []) if e["severity"] == ESCAPES_FRAME]
        desc = ", ".join(f"+{e['effective_offset']}/{e['store_width']}B" for e in esc) or "-"
        base = "-" if f["base_local"] is None else str(f["base_local"])
        print(f"{f['function_index']:>6}  {(f['name'] or '')[:28]:<28} {f['frame_size']:>6}  {base:>5}  {desc}")
    if show_skipped:
        for s in doc["skipped"]:
            print(f"{s['function_index']:>6}  {(s['name'] or '')[:28]:<28} skipped: {s['reason']}")
    n_esc = sum(e["severity"] == ESCAPES_FRAME for e in doc["findings"])
    n_top = len(doc["findings"]) - n_esc
    print(f"{len(doc['frames'])} frames, {len(doc['skipped'])} skipped, "
          f"{n_esc} escaping stores, {n_top} top-word warnings")


def cmd_analyze(args) -> int:
    try:
        m, _ = _load_module(args.module)
    except OSError as exc:
        _err(f"cannot read {args.module}: {exc}")
        return EXIT_ERROR
    except WasmError as exc:
        _err(f"cannot decode {args.module}: {exc}")
        return EXIT_ERROR
    try:
        doc = analysis_document(m, args.module)
    except AmbiguousStackPointer as exc:
        _err(str(exc))
        return EXIT_ERROR
    _print_analysis(doc, args.show_skipped)
    try:
        _emit_json(doc, args.json)
    except OSError as exc:
        _err(f"cannot write {args.json}: {exc}")
        return EXIT_ERROR
    return EXIT_ESCAPES if any(e["severity"] == ESCAPES_FRAME for e in doc["findings"]) else EXIT_OK


# ------------------------------------------------------------ harden

def _parse_hex(text: str) -> int:
    t = text.lower().replace("_", "")
    t = t[2:] if t.startswith("0x") else t
    try:
        return int(t, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex value: {text!r}")


def _guard_size(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if k <= 0 or k % 4 or k > 16:
        raise argparse.ArgumentTypeError(f"guard size must be a multiple of 4 between 4 and 16, got {k}")
    return k


def _import_name(text: str) -> tuple[str, str]:
    mod, sep, field = text.rpartition(".")
    if not sep or not mod or not field:
        raise argparse.ArgumentTypeError("expected MODULE.FIELD")
    return mod, field


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def canary_config(args, parser: argparse.ArgumentParser) -> CanaryConfig:
    mode = GUARD_MODES[args.guard_mode]
    if mode == RANDOM and args.guard_value is not None:
        parser.error("--guard-value only applies to --guard-mode fixed")
    try:
        return CanaryConfig(
            guard_size=args.guard_size,
            guard_mode=mode,
            fixed_value=DEFAULT_GUARD_VALUE if args.guard_value is None else args.guard_value,
            random_import=args.random_import,
            on_violation=args.on_violation,
        )
    except InvalidConfig as exc:
        parser.error(str(exc))


def cmd_harden(args, parser) -> int:
    cfg = canary_config(args, parser)
    try:
        m, _ = _load_module(args.input)
    except OSError as exc:
        _err(f"cannot read {args.input}: {exc}")
        return EXIT_ERROR
    except WasmError as exc:
        _err(f"cannot decode {args.input}: {exc}")
        return EXIT_ERROR
    try:
        sp = detect_sp_global(m)
        scan = detect_frames(m, sp)
        hm, rep = harden(m, scan, cfg)
    except (AmbiguousStackPointer, GuardImportMissing) as exc:
        _err(str(exc))
        return EXIT_ERROR
    names = m.function_names()
    for f in rep.functions:
        label = names.get(f.function_index) or ""
        if f.action == HARDENED:
            print(f"{f.function_index:>6}  {label[:28]:<28} hardened  frame {f.old_frame_size} -> "
                  f"{f.new_frame_size}, {f.check_sites} check site(s), +{f.instruction_delta} instrs")
        elif args.show_skipped:
            print(f"{f.function_index:>6}  {label[:28]:<28} skipped   {f.reason}")
    doc = {"input": args.input, "output": None, "verified": None, **rep.to_dict()}
    if not rep.hardened:
        print("no function hardened; output not written")
        _emit_json(doc, args.json)
        return EXIT_ALL_SKIPPED
    if not args.no_verify:
        result = verify_hardening(m, hm, rep)
        doc["verified"] = result.passed
        if not result.passed:
            for msg in result.failures:
                _err(f"verification failed: {msg}")
            return EXIT_ERROR
    try:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".wasmguard-", dir=out.parent)
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_module(hm))
        os.replace(tmp, out)
    except OSError as exc:
        _err(f"cannot write {args.output}: {exc}")
        return EXIT_ERROR
    doc["output"] = args.output
    print(f"{len(rep.hardened)} hardened, {len(rep.skipped)} skipped; "
          f"size {rep.original_size} -> {rep.hardened_size} bytes (+{rep.size_delta_bytes}), "
          f"+{rep.instruction_delta} instructions")
    try:
        _emit_json(doc, args.json)
    except OSError as exc:
        _err(f"cannot write {args.json}: {exc}")
        return EXIT_ERROR
    return EXIT_OK


# ------------------------------------------------------------ corpus / diff

def _manifest(args):
    path = args.manifest or default_manifest_path()
    m = load_manifest(path)
    if args.case:
        m = m.select(args.case)
    tc = m.toolchain.with_overrides(
        native=args.cc_native, wasm=args.cc_wasm,
        native_second=args.cc_native2, runtime=getattr(args, "runtime_cmd", None),
    )
    return m, tc


def cmd_corpus_build(args) -> int:
    try:
        m, tc = _manifest(args)
    except (CorpusError, KeyError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    opts = args.opt or list(OPT_LEVELS)
    targets = args.target or list(TARGETS)
    cells = [(c.id, cell) for c in m.cases for cell in c.compile_matrix
             if cell[0] in targets and cell[1] in opts]
    try:
        res = build_corpus(m, args.build_dir, cells, tc, workers=args.jobs, reuse=not args.force)
    except ToolchainMissing as exc:
        _err(str(exc))
        return EXIT_ERROR
    for (cid, (target, opt)), art in sorted(res.artifacts.items()):
        print(f"{cid:<32} {target}-{opt:<3} {art.path}")
    for f in res.failures:
        _err(str(f))
    doc = {
        "build_dir": str(args.build_dir),
        "artifacts": [
            {"case_id": cid, "target": target, "opt": opt, "path": str(art.path),
             "sha256": art.metadata.get("artifact_sha256"),
             "compiler_version": art.metadata.get("compiler_version")}
            for (cid, (target, opt)), art in sorted(res.artifacts.items())
        ],
        "failures": [
            {"case_id": f.case_id, "target": f.cell[0], "opt": f.cell[1],
             "returncode": f.returncode, "stderr": f.stderr[-2000:]}
            for f in res.failures
        ],
    }
    try:
        _emit_json(doc, args.json)
    except OSError as exc:
        _err(f"cannot write {args.json}: {exc}")
        return EXIT_ERROR
    return EXIT_ERROR if res.failures else EXIT_OK


def cmd_diff(args, parser) -> int:
    cfg = canary_config(args, parser)
    try:
        m, tc = _manifest(args)
    except (CorpusError, KeyError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    hc = HarnessConfig(
        runs=args.runs, timeout=args.timeout, opt_levels=tuple(args.opt) if args.opt else None,
        guard=cfg, workers=args.jobs, second_compiler=not args.no_second_compiler,
        out_root=Path(args.build_dir),
    )
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    report = run_diff(m, hc, tc, progress, hardening=not args.no_harden)
    doc = report.to_dict()
    print(format_summary(doc))
    for v in report.violations:
        target = v.get("target", "")
        print(f"violation: {v['case_id']} {v['opt']} {target} {v['phase']}: "
              f"expected {v['expected']}, observed {v['observed']}".replace("  ", " "))
    for d in report.drift:
        print(f"drift: {d['case_id']} {d['target']}-{d['opt']}: reference {d['reference']}, "
              f"observed {d['observed']}")
    for e in report.errors:
        _err(f"{e.get('stage')}: {e.get('case_id', '')} {e.get('error', '')}".strip())
    dest = args.json or str(Path(args.build_dir) / "report.json")
    try:
        _emit_json(doc, dest)
    except OSError as exc:
        _err(f"cannot write {dest}: {exc}")
        return EXIT_INFRA
    if dest != "-":
        print(f"report: {dest}")
    return report.exit_code


def cmd_report(args) -> int:
    try:
        doc = load_report(args.report)
        validate_document(doc, "report")
    except (OSError, ValueError, jsonschema.ValidationError) as exc:
        _err(f"cannot use {args.report}: {exc}")
        return EXIT_ERROR
    print(format_summary(doc))
    if args.cases:
        post = {(r["case_id"], r["opt"]): r["class"] for r in doc["post_hardening"]}
        for r in doc["pre_hardening"]:
            after = post.get((r["case_id"], r["opt"]), "-")
            print(f"{r['case_id']:<32} {r['opt']}  {r['class']:<18} -> {after}")
    try:
        _emit_json(doc["summary"], args.json)
    except OSError as exc:
        _err(f"cannot write {args.json}: {exc}")
        return EXIT_ERROR
    return EXIT_OK


# ------------------------------------------------------------ parser

def _add_guard_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("guard")
    g.add_argument("--guard-size", type=_guard_size, default=8, metavar="K",
                   help="guard bytes per frame, a multiple of 4 up to 16 (default 8)")
    g.add_argument("--guard-mode", choices=sorted(GUARD_MODES), default="fixed",
                   help="fixed constant or per-run random guard (default fixed)")
    g.add_argument("--guard-value", type=_parse_hex, metavar="HEX",
                   help=f"64-bit fixed guard whose top byte is 00 (default {DEFAULT_GUARD_VALUE:#018x})")
    g.add_argument("--random-import", type=_import_name, default=DEFAULT_RANDOM_IMPORT,
                   metavar="MODULE.FIELD", help="entropy import for --guard-mode random")
    g.add_argument("--on-violation", choices=["trap"], default="trap",
                   help="what a mismatching guard does (only trap)")


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="corpus manifest (default: bundled corpus/manifest.yaml)")
    p.add_argument("--case", action="append", metavar="ID", help="restrict to a case id (repeatable)")
    p.add_argument("--opt", action="append", choices=OPT_LEVELS,
                   help="optimization level (repeatable)")
    p.add_argument("--build-dir", default="build/corpus", help="artifact root (default build/corpus)")
    p.add_argument("--cc-native", metavar="TEMPLATE", help="native compile template ($WASMGUARD_CC_NATIVE)")
    p.add_argument("--cc-wasm", metavar="TEMPLATE", help="wasm compile template ($WASMGUARD_CC_WASM)")
    p.add_argument("--cc-native2", metavar="TEMPLATE",
                   help="second native compiler template ($WASMGUARD_CC_NATIVE2)")
    p.add_argument("-j", "--jobs", type=_positive_int, help="worker bound (default min(4, cpus))")
    p.add_argument("--json", metavar="PATH", help="write JSON here ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wasmguard",
        description="Shadow-stack frame analysis, canary hardening and native/wasm differential testing.",
    )
    parser.add_argument("--version", action="version", version=f"wasmguard {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="report frames and escaping stores of a module")
    p.add_argument("module")
    p.add_argument("--show-skipped", action="store_true", help="list functions without a frame")
    p.add_argument("--json", metavar="PATH", help="write JSON here ('-' for stdout)")

    p = sub.add_parser("harden", help="insert frame guards into a module")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_guard_flags(p)
    p.add_argument("--no-verify", action="store_true", help="skip structural verification")
    p.add_argument("--show-skipped", action="store_true", help="list skipped functions")
    p.add_argument("--json", metavar="PATH", help="write JSON here ('-' for stdout)")

    p = sub.add_parser("diff", help="compile, run and classify the corpus, then re-run hardened")
    _add_corpus_flags(p)
    p.add_argument("--runs", type=_positive_int, help="runs per artifact (default from manifest)")
    p.add_argument("--timeout", type=_positive_float, metavar="SECS",
                   help="per-run timeout (default from manifest)")
    p.add_argument("--runtime-cmd", metavar="TEMPLATE", help="wasm runtime template ($WASMGUARD_RUNTIME_CMD)")
    p.add_argument("--no-second-compiler", action="store_true", help="skip the compiler-dependence check")
    p.add_argument("--no-harden", action="store_true", help="stop after the pre-hardening phase")
    _add_guard_flags(p)

    p = sub.add_parser("report", help="summarise a diff report")
    p.add_argument("report")
    p.add_argument("--cases", action="store_true", help="list per-case transitions")
    p.add_argument("--json", metavar="PATH", help="write the summary JSON here ('-' for stdout)")

    p = sub.add_parser("corpus-build", help="compile the corpus matrix")
    _add_corpus_flags(p)
    p.add_argument("--target", action="append", choices=TARGETS, help="restrict to a target (repeatable)")
    p.add_argument("--force", action="store_true", help="rebuild even when artifacts are current")
    return parser


def main(argv: list[str] | None = None) -> int:
    global _json_stream
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "json", None) != "-":
        return _dispatch(parser, args)
    _json_stream = sys.stdout
    try:
        with contextlib.redirect_stdout(sys.stderr):
            return _dispatch(parser, args)
    finally:
        _json_stream = None


def _dispatch(parser: argparse.ArgumentParser, args) -> int:
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.command == "analyze":
        return cmd_analyze(args)
    if args.command == "harden":
        return cmd_harden(args, sub)
    if args.command == "diff":
        return cmd_diff(args, sub)
    if args.command == "report":
        return cmd_report(args)
    return cmd_corpus_build(args)


if __name__ == "__main__":
    sys.exit(main())
