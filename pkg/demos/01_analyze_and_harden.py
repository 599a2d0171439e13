"""Find the escaping store in a compiled test case, harden it, watch it trap.

The module is the bundled O1 build of cwe121-char-declare-loop: 100 bytes are
written into a 50-byte stack array.  Natively the stack protector aborts;
in wasm the write lands in the caller's frame and nothing notices.

    python3 demos/01_analyze_and_harden.py
"""

from __future__ import annotations

from pathlib import Path

from wasmguard.canary_injector import harden, verify_hardening
from wasmguard.frame_analysis import detect_frames, detect_sp_global, find_escaping_stores
from wasmguard.wasm_model import decode_module, encode_module
from wasmguard.wasm_model.interpreter import interpret

ROOT = Path(__file__).resolve().parents[1]
MODULE = ROOT / "corpus/prebuilt/cwe121-char-declare-loop/wasm32-wasi-O1/program.wasm"


def main() -> None:
    data = MODULE.read_bytes()
    m = decode_module(data)
    names = m.function_names()
    print(f"{MODULE.relative_to(ROOT)}: {len(data)} bytes, {len(m.functions)} functions")

    sp = detect_sp_global(m)
    scan = detect_frames(m, sp)
    print(f"stack pointer is global {sp}; {len(scan.frames)} functions keep a frame in linear memory")

    for e in find_escaping_stores(m, scan):
        print(f"  {names.get(e.function_index)}: {e.store_width}-byte store at frame+{e.effective_offset}, "
              f"frame is {e.frame_size} bytes")

    before = interpret(m, "_start", sp_global=sp)
    print(f"\nunmodified run: {before.status}, exit {before.exit_code}")
    print("  " + before.stdout.decode(errors="replace").strip().replace("\n", "\n  "))

    hardened, report = harden(m, scan)
    verify_hardening(m, hardened, report).raise_for_failures()
    size = len(encode_module(hardened))
    print(f"\nhardened {len(report.hardened)} functions: {len(data)} -> {size} bytes "
          f"(+{(size - len(data)) / len(data):.1%})")
    for f in report.hardened:
        if f.function_index in {e.function_index for e in find_escaping_stores(m, scan)}:
            print(f"  {names.get(f.function_index)}: frame {f.old_frame_size} -> {f.new_frame_size}, "
                  f"{f.check_sites} check site(s)")

    after = interpret(hardened, "_start", sp_global=sp)
    print(f"\nhardened run: {after.status} ({after.reason})")
    print("  " + after.stdout.decode(errors="replace").strip().replace("\n", "\n  "))


if __name__ == "__main__":
    main()
