"""Hand-written text-format fixtures, assembled by wasmtime's wat2wasm.

The listings mirror the instruction shapes that matter for frame analysis and
canary insertion; everything else is the minimum needed to make them run.
"""

from __future__ import annotations

import functools

import wasmtime

# Four-line function with a spare local and no stack pointer traffic.
FRAMELESS = """
(module
  (type (func (param i32 i32) (result i32)))
  (func $main (type 0) (param i32 i32) (result i32)
    (local i32)
    local.get 0)
  (export "main" (func $main)))
"""

# 64-byte frame, base pointer in local 2, memset of 99 bytes through the
# returned pointer and a terminating byte store at offset 99.
CHAR_DECLARE_LOOP = """
(module
  (memory (export "memory") 2)
  (global $sp (mut i32) (i32.const 65536))
  (func $memset (param i32 i32 i32) (result i32)
    (local i32)
    block
      loop
        local.get 3
        local.get 2
        i32.ge_u
        br_if 1
        local.get 0
        local.get 3
        i32.add
        local.get 1
        i32.store8
        local.get 3
        i32.const 1
        i32.add
        local.set 3
        br 0
      end
    end
    local.get 0)
  (func $main (param i32 i32) (result i32)
    (local i32)
    global.get 0
    i32.const 64
    i32.sub
    local.tee 2
    global.set 0
    local.get 2
    i32.const 67
    i32.const 99
    call $memset
    local.tee 2
    i32.const 0
    i32.store8 offset=99
    local.get 2
    i32.const 64
    i32.add
    global.set 0
    i32.const 0)
  (export "main" (func $main)))
"""

# The O1 shape of the optimization-sensitive case: a 16-byte frame with
# base in local 0 and an 8-byte store 32 bytes above the base.
INT_ALLOCA_O1 = """
(module
  (memory (export "memory") 2)
  (global $sp (mut i32) (i32.const 65536))
  (func $bad (result i32)
    (local i32)
    global.get 0
    i32.const 16
    i32.sub
    local.tee 0
    global.set 0
    local.get 0
    i32.const 32
    i32.add
    i64.const 0
    i64.store
    local.get 0
    i32.const 16
    i32.add
    global.set 0
    i32.const 0)
  (export "bad" (func $bad)))
"""

# Same idiom with a correctly sized write at the bottom of the frame.
SAFE_FRAME = """
(module
  (memory (export "memory") 2)
  (global $sp (mut i32) (i32.const 65536))
  (func $good (result i32)
    (local i32)
    global.get 0
    i32.const 16
    i32.sub
    local.tee 0
    global.set 0
    local.get 0
    i64.const 0
    i64.store
    local.get 0
    i32.const 16
    i32.add
    global.set 0
    i32.const 0)
  (export "good" (func $good)))
"""

# A framed function in a module that imports the WASI entropy source.
RANDOM_IMPORT = """
(module
  (import "wasi_snapshot_preview1" "random_get" (func $random_get (param i32 i32) (result i32)))
  (memory (export "memory") 2)
  (global $sp (mut i32) (i32.const 65536))
  (func $f (param i32) (result i32)
    (local i32)
    global.get 0
    i32.const 32
    i32.sub
    local.tee 1
    global.set 0
    local.get 1
    local.get 0
    i32.add
    i64.const 0x4141414141414141
    i64.store
    local.get 1
    i32.const 32
    i32.add
    global.set 0
    i32.const 0)
  (export "f" (func $f)))
"""

GUARD_PROBE_VALUE = 0x4141414141414141


@functools.lru_cache(maxsize=None)
def assemble(text: str) -> bytes:
    return bytes(wasmtime.wat2wasm(text))


def single_store(frame: int, offset: int, width: int, early_return: bool = False) -> str:
    """A framed function performing one ``width``-byte store at base+``offset``.

    With ``early_return`` the function has a second restore site on a branch
    taken when its argument is nonzero.
    """
    op = {1: "i32.store8", 2: "i32.store16", 4: "i32.store", 8: "i64.store"}[width]
    value = "i64.const 0x4141414141414141" if width == 8 else "i32.const 0x41414141"
    early = ""
    if early_return:
        early = f"""
    local.get 0
    if
      local.get 1
      i32.const {frame}
      i32.add
      global.set 0
      i32.const 1
      return
    end"""
    return f"""
(module
  (memory (export "memory") 2)
  (global $sp (mut i32) (i32.const 65536))
  (func $f (param i32) (result i32)
    (local i32)
    global.get 0
    i32.const {frame}
    i32.sub
    local.tee 1
    global.set 0
    local.get 1
    {value}
    {op} offset={offset}{early}
    local.get 1
    i32.const {frame}
    i32.add
    global.set 0
    i32.const 0)
  (export "f" (func $f)))
"""
