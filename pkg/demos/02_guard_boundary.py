"""Where exactly does the guard catch a write?

A synthetic function reserves an N-byte frame and performs one W-byte store at
frame+d.  After hardening with a K-byte guard, the store traps exactly when it
overlaps [N, N+K).  The table below walks d across the frame top.

    python3 demos/02_guard_boundary.py [N] [K]
"""

from __future__ import annotations

import sys

import wasmtime

from wasmguard.canary_injector import CanaryConfig, harden
from wasmguard.frame_analysis import detect_frames, find_escaping_stores
from wasmguard.wasm_model import decode_module
from wasmguard.wasm_model.interpreter import interpret


def single_store(frame: int, offset: int, width: int) -> str:
    op = {1: "i32.store8", 4: "i32.store", 8: "i64.store"}[width]
    value = "i64.const 0x4141414141414141" if width == 8 else "i32.const 0x41414141"
    return f"""
(module
  (memory 2)
  (global (mut i32) (i32.const 65536))
  (func (export "f") (result i32) (local i32)
    global.get 0 i32.const {frame} i32.sub local.tee 0 global.set 0
    local.get 0 {value} {op} offset={offset}
    local.get 0 i32.const {frame} i32.add global.set 0
    i32.const 0))
"""


def main() -> None:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 64
    k = int(sys.argv[2]) if len(sys.argv) > 2 else 8
    cfg = CanaryConfig(guard_size=k)
    print(f"frame N={n}, guard K={k}: guard occupies [{n}, {n + k})\n")
    print(f"{'d':>5}  " + "  ".join(f"W={w}".ljust(16) for w in (1, 4, 8)))
    for d in range(n - 8, n + k + 1):
        cells = []
        for w in (1, 4, 8):
            m = decode_module(bytes(wasmtime.wat2wasm(single_store(n, d, w))))
            scan = detect_frames(m, 0)
            flagged = bool(find_escaping_stores(m, scan))
            out, _ = harden(m, scan, cfg)
            trapped = interpret(out, "f").reason == "unreachable"
            cells.append(f"{'flag' if flagged else '-':4} {'TRAP' if trapped else 'ok':4}".ljust(16))
        print(f"{d:>5}  " + "  ".join(cells))
    print("\nflag: static analysis reports the store as escaping the frame")
    print("TRAP: the hardened module stops at the guard check")


if __name__ == "__main__":
    main()
