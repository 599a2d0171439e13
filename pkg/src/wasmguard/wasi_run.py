"""Run a WASI command module under wasmtime with process-like exit semantics.

    python3 -m wasmguard.wasi_run module.wasm [args...]

Stdio is inherited.  proc_exit codes propagate.  A trap prints
"wasm trap: <reason>" on stderr and exits with TRAP_EXIT_CODE, mirroring
how standalone runtimes report an aborted instance.
"""
from __future__ import annotations

import re
import sys

TRAP_EXIT_CODE = 134


def _engine():
    import wasmtime

    cfg = wasmtime.Config()
    try:
        cfg.cache = True
    except Exception:  # cache support depends on the wasmtime build
        pass
    return wasmtime.Engine(cfg)


def _reason(message: str) -> str:
    lines = [ln.strip() for ln in message.strip().splitlines() if ln.strip()]
    last = lines[-1] if lines else "trap"
    return re.sub(r"^(\d+:\s*)?(wasm trap:\s*)?", "", last)


def run(path: str, args: list[str]) -> int:
    import wasmtime

    engine = _engine()
    store = wasmtime.Store(engine)
    module = wasmtime.Module.from_file(engine, path)
    linker = wasmtime.Linker(engine)
    linker.define_wasi()
    wasi = wasmtime.WasiConfig()
    wasi.argv = [path, *args]
    wasi.inherit_stdin()
    wasi.inherit_stdout()
    wasi.inherit_stderr()
    store.set_wasi(wasi)
    try:
        inst = linker.instantiate(store, module)
        inst.exports(store)["_start"](store)
    except wasmtime.ExitTrap as exc:
        return exc.code
    except wasmtime.Trap as exc:
        sys.stdout.flush()
        print(f"wasm trap: {_reason(exc.message)}", file=sys.stderr)
        return TRAP_EXIT_CODE
    except wasmtime.WasmtimeError as exc:
        # wasmtime-py surfaces some traps as plain errors carrying the trap text.
        text = str(exc)
        if "wasm trap" in text or "unreachable" in text:
            print(f"wasm trap: {_reason(text)}", file=sys.stderr)
            return TRAP_EXIT_CODE
        raise
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print("usage: python3 -m wasmguard.wasi_run MODULE.wasm [ARGS...]", file=sys.stderr)
        return 2
    return run(argv[0], argv[1:])


if __name__ == "__main__":
    sys.exit(main())
