"""Opcode table for the wasm core instruction set.

Each entry maps an opcode key to ``(mnemonic, immediate_kind)``.  Single-byte
opcodes use the byte as key; prefixed opcodes use ``(prefix, subopcode)``.
"""

from __future__ import annotations

# immediate kinds
NONE = "none"
BLOCKTYPE = "blocktype"
LABEL = "label"
BR_TABLE = "br_table"
FUNC = "func"
CALL_INDIRECT = "call_indirect"
LOCAL = "local"
GLOBAL = "global"
TABLE = "table"
MEMARG = "memarg"
MEMIDX = "memidx"
I32 = "i32"
I64 = "i64"
F32 = "f32"
F64 = "f64"
SELECT_T = "select_t"
HEAPTYPE = "heaptype"
DATA = "data"
DATA_MEM = "data_mem"
MEM_MEM = "mem_mem"
ELEM_TABLE = "elem_table"
ELEM = "elem"
TABLE_TABLE = "table_table"
SIMD = "simd"

OPCODES: dict[int | tuple[int, int], tuple[str, str]] = {
    0x00: ("unreachable", NONE),
    0x01: ("nop", NONE),
    0x02: ("block", BLOCKTYPE),
    0x03: ("loop", BLOCKTYPE),
    0x04: ("if", BLOCKTYPE),
    0x05: ("else", NONE),
    0x0B: ("end", NONE),
    0x0C: ("br", LABEL),
    0x0D: ("br_if", LABEL),
    0x0E: ("br_table", BR_TABLE),
    0x0F: ("return", NONE),
    0x10: ("call", FUNC),
    0x11: ("call_indirect", CALL_INDIRECT),
    0x12: ("return_call", FUNC),
    0x13: ("return_call_indirect", CALL_INDIRECT),
    0x1A: ("drop", NONE),
    0x1B: ("select", NONE),
    0x1C: ("select_t", SELECT_T),
    0x20: ("local.get", LOCAL),
    0x21: ("local.set", LOCAL),
    0x22: ("local.tee", LOCAL),
    0x23: ("global.get", GLOBAL),
    0x24: ("global.set", GLOBAL),
    0x25: ("table.get", TABLE),
    0x26: ("table.set", TABLE),
    0x3F: ("memory.size", MEMIDX),
    0x40: ("memory.grow", MEMIDX),
    0x41: ("i32.const", I32),
    0x42: ("i64.const", I64),
    0x43: ("f32.const", F32),
    0x44: ("f64.const", F64),
    0xD0: ("ref.null", HEAPTYPE),
    0xD1: ("ref.is_null", NONE),
    0xD2: ("ref.func", FUNC),
}

_MEMORY_OPS = """
i32.load i64.load f32.load f64.load i32.load8_s i32.load8_u i32.load16_s
i32.load16_u i64.load8_s i64.load8_u i64.load16_s i64.load16_u i64.load32_s
i64.load32_u i32.store i64.store f32.store f64.store i32.store8 i32.store16
i64.store8 i64.store16 i64.store32
""".split()

_NUMERIC_OPS = """
i32.eqz i32.eq i32.ne i32.lt_s i32.lt_u i32.gt_s i32.gt_u i32.le_s i32.le_u
i32.ge_s i32.ge_u i64.eqz i64.eq i64.ne i64.lt_s i64.lt_u i64.gt_s i64.gt_u
i64.le_s i64.le_u i64.ge_s i64.ge_u f32.eq f32.ne f32.lt f32.gt f32.le f32.ge
f64.eq f64.ne f64.lt f64.gt f64.le f64.ge i32.clz i32.ctz i32.popcnt i32.add
i32.sub i32.mul i32.div_s i32.div_u i32.rem_s i32.rem_u i32.and i32.or i32.xor
i32.shl i32.shr_s i32.shr_u i32.rotl i32.rotr i64.clz i64.ctz i64.popcnt
i64.add i64.sub i64.mul i64.div_s i64.div_u i64.rem_s i64.rem_u i64.and i64.or
i64.xor i64.shl i64.shr_s i64.shr_u i64.rotl i64.rotr f32.abs f32.neg f32.ceil
f32.floor f32.trunc f32.nearest f32.sqrt f32.add f32.sub f32.mul f32.div
f32.min f32.max f32.copysign f64.abs f64.neg f64.ceil f64.floor f64.trunc
f64.nearest f64.sqrt f64.add f64.sub f64.mul f64.div f64.min f64.max
f64.copysign i32.wrap_i64 i32.trunc_f32_s i32.trunc_f32_u i32.trunc_f64_s
i32.trunc_f64_u i64.extend_i32_s i64.extend_i32_u i64.trunc_f32_s
i64.trunc_f32_u i64.trunc_f64_s i64.trunc_f64_u f32.convert_i32_s
f32.convert_i32_u f32.convert_i64_s f32.convert_i64_u f32.demote_f64
f64.convert_i32_s f64.convert_i32_u f64.convert_i64_s f64.convert_i64_u
f64.promote_f32 i32.reinterpret_f32 i64.reinterpret_f64 f32.reinterpret_i32
f64.reinterpret_i64 i32.extend8_s i32.extend16_s i64.extend8_s i64.extend16_s
i64.extend32_s
""".split()

_SAT_OPS = """
i32.trunc_sat_f32_s i32.trunc_sat_f32_u i32.trunc_sat_f64_s i32.trunc_sat_f64_u
i64.trunc_sat_f32_s i64.trunc_sat_f32_u i64.trunc_sat_f64_s i64.trunc_sat_f64_u
""".split()

for _i, _name in enumerate(_MEMORY_OPS):
    OPCODES[0x28 + _i] = (_name, MEMARG)
for _i, _name in enumerate(_NUMERIC_OPS):
    OPCODES[0x45 + _i] = (_name, NONE)
for _i, _name in enumerate(_SAT_OPS):
    OPCODES[(0xFC, _i)] = (_name, NONE)

OPCODES.update({
    (0xFC, 8): ("memory.init", DATA_MEM),
    (0xFC, 9): ("data.drop", DATA),
    (0xFC, 10): ("memory.copy", MEM_MEM),
    (0xFC, 11): ("memory.fill", MEMIDX),
    (0xFC, 12): ("table.init", ELEM_TABLE),
    (0xFC, 13): ("elem.drop", ELEM),
    (0xFC, 14): ("table.copy", TABLE_TABLE),
    (0xFC, 15): ("table.grow", TABLE),
    (0xFC, 16): ("table.size", TABLE),
    (0xFC, 17): ("table.fill", TABLE),
})

# Reverse lookup: mnemonic -> opcode key.
BY_NAME: dict[str, int | tuple[int, int]] = {name: key for key, (name, _) in OPCODES.items()}

# Prefixes we cannot even skip over safely.
UNSUPPORTED_PREFIXES = {0xFB: "gc proposal", 0xFE: "threads proposal"}
UNSUPPORTED_OPCODES = {
    0x06: "exception handling (try)",
    0x07: "exception handling (catch)",
    0x08: "exception handling (throw)",
    0x09: "exception handling (rethrow)",
    0x0A: "exception handling (throw_ref)",
    0x18: "exception handling (delegate)",
    0x19: "exception handling (catch_all)",
    0x1F: "exception handling (try_table)",
}

STORE_WIDTH = {
    "i32.store": 4, "i64.store": 8, "f32.store": 4, "f64.store": 8,
    "i32.store8": 1, "i32.store16": 2, "i64.store8": 1, "i64.store16": 2,
    "i64.store32": 4,
}
LOAD_WIDTH = {
    "i32.load": 4, "i64.load": 8, "f32.load": 4, "f64.load": 8,
    "i32.load8_s": 1, "i32.load8_u": 1, "i32.load16_s": 2, "i32.load16_u": 2,
    "i64.load8_s": 1, "i64.load8_u": 1, "i64.load16_s": 2, "i64.load16_u": 2,
    "i64.load32_s": 4, "i64.load32_u": 4,
}

BLOCK_OPENERS = frozenset({"block", "loop", "if"})


def simd_immediate_kind(sub: int) -> str:
    """Immediate layout of a 0xFD-prefixed instruction, for passthrough."""
    if sub <= 11 or sub in (92, 93):
        return "memarg"
    if sub in (12, 13):
        return "bytes16"
    if 21 <= sub <= 34:
        return "lane"
    if 84 <= sub <= 91:
        return "memarg_lane"
    return "none"
