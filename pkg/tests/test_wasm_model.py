from __future__ import annotations

import dataclasses

import pytest
import wasmtime
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import prebuilt
from wat_fixtures import CHAR_DECLARE_LOOP, FRAMELESS, assemble
from wasmguard.wasm_model import (
    HEADER,
    CustomSection,
    EncodingOverflow,
    Export,
    FunctionBody,
    FuncType,
    Global,
    GlobalType,
    Instr,
    Limits,
    MalformedBinary,
    UnsupportedFeature,
    WasmModule,
    decode_module,
    encode_module,
    i32_const,
    i64_const,
)
from wasmguard.wasm_model.leb128 import read_s, read_u, write_s, write_u


def _validates(data: bytes) -> bool:
    try:
        wasmtime.Module.validate(wasmtime.Store().engine, data)
    except wasmtime.WasmtimeError:
        return False
    return True


# ------------------------------------------------------------ header and errors

def test_header_only_module_is_empty():
    m = decode_module(HEADER)
    assert m.types == [] and m.functions == [] and m.custom_sections == []
    assert m.layout == []
    assert encode_module(m) == HEADER


def test_empty_module_encodes_to_header():
    assert encode_module(WasmModule()) == HEADER
    assert len(HEADER) == 8


@pytest.mark.parametrize("data, offset", [
    (b"\x00asx\x01\x00\x00\x00", 0),
    (b"\x00as", 0),
    (b"\x00asm\x02\x00\x00\x00", 4),
])
def test_bad_header_reports_offset(data, offset):
    with pytest.raises(MalformedBinary) as exc:
        decode_module(data)
    assert exc.value.offset == offset


def test_section_length_past_end():
    with pytest.raises(MalformedBinary) as exc:
        decode_module(HEADER + b"\x01\x10\x00")
    assert exc.value.offset == 8


def test_truncated_leb_in_section_size():
    with pytest.raises(MalformedBinary, match="LEB128"):
        decode_module(HEADER + b"\x01\x80")


def test_threads_opcode_is_unsupported():
    with pytest.raises(UnsupportedFeature) as exc:
        decode_module(_module_with_body(b"\x00\xfe\x00\x0b"))
    assert "threads" in exc.value.feature
    assert exc.value.offset is not None


def _module_with_body(body: bytes, memory: bool = False) -> bytes:
    """Type () -> (), one function, code section holding ``body`` verbatim."""
    types = b"\x01\x04\x01\x60\x00\x00"
    funcs = b"\x03\x02\x01\x00"
    mem = b"\x05\x03\x01\x00\x01" if memory else b""
    payload = b"\x01" + write_u(len(body)) + body
    code = b"\x0a" + write_u(len(payload)) + payload
    return HEADER + types + funcs + mem + code


def test_out_of_range_global_index_rejected():
    with pytest.raises(MalformedBinary, match="index out of range"):
        decode_module(_module_with_body(b"\x00\x23\x05\x1a\x0b"))


def test_out_of_range_local_index_rejected():
    with pytest.raises(MalformedBinary, match="index out of range"):
        decode_module(_module_with_body(b"\x00\x20\x00\x1a\x0b"))


def test_unterminated_body_rejected():
    with pytest.raises(MalformedBinary):
        decode_module(_module_with_body(b"\x00\x02\x40\x0b"))


def test_encoding_overflow_on_oversized_immediate():
    with pytest.raises(EncodingOverflow):
        write_u(1 << 32)
    with pytest.raises(EncodingOverflow):
        write_s(1 << 31)


# ------------------------------------------------------------ round trip

@pytest.mark.parametrize("art", prebuilt(), ids=lambda a: a.id)
def test_corpus_binary_round_trips(art):
    data = art.path.read_bytes()
    assert encode_module(decode_module(data)) == data


def test_char_declare_loop_binary_shape(manifest):
    art = next(a for a in prebuilt("O1") if a.case_id == "cwe121-char-declare-loop")
    m = decode_module(art.path.read_bytes())
    exp = m.export("_start")
    assert exp is not None and exp.kind == "func"
    mutable_i32 = [i for i, g in enumerate(m.global_types()) if g.valtype == "i32" and g.mutable]
    assert mutable_i32 == [0]


def test_custom_sections_preserved_verbatim():
    m = decode_module(assemble(FRAMELESS))
    m.custom_sections.append(CustomSection("wasmguard.note", b"\x00\x01\xffpayload"))
    data = encode_module(m)
    again = decode_module(data)
    assert again.custom_sections[-1].payload == b"\x00\x01\xffpayload"
    assert encode_module(again) == data


def test_padded_leb_widths_survive_round_trip():
    # i32.const 1 with a five-byte LEB, then drop
    body = b"\x00\x41\x81\x80\x80\x80\x00\x1a\x0b"
    data = _module_with_body(body)
    m = decode_module(data)
    assert m.functions[0].instructions[0] == i32_const(1)
    assert encode_module(m) == data


def test_hand_built_function_matches_assembler():
    sig = FuncType(("i32", "i32"), ("i32",))
    m = WasmModule(
        types=[sig],
        functions=[FunctionBody(0, sig, ((1, "i32"),),
                                (Instr("local.get", (0,)), Instr("end")))],
        exports=[Export("main", "func", 0)],
    )
    data = encode_module(m)
    assembled = assemble(FRAMELESS)
    # the assembler appends a name section; everything before it must agree
    assert assembled.startswith(data)
    assert decode_module(assembled[len(data):].join([HEADER, b""])).custom_sections[0].name == "name"
    code = data[data.index(b"\x0a\x08"):]
    assert code == bytes.fromhex("0a 08 01 06 01 01 7f 20 00 0b")


def test_modified_module_validates_externally():
    m = decode_module(assemble(CHAR_DECLARE_LOOP))
    body = m.functions[1]
    instrs = list(body.instructions)
    instrs[1] = i32_const(80)
    m.functions[1] = dataclasses.replace(body, instructions=tuple(instrs))
    m.globals.append(Global(GlobalType("i64", True), (i64_const(0), Instr("end"))))
    data = encode_module(m)
    assert _validates(data)
    assert decode_module(data).functions[1].instructions[1] == i32_const(80)


# ------------------------------------------------------------ properties

@given(st.integers(0, (1 << 32) - 1), st.integers(0, 4))
def test_unsigned_leb_round_trip(value, pad):
    enc = write_u(value)
    width = len(enc) + pad if len(enc) + pad <= 5 else None
    enc = write_u(value, width)
    got, pos, w = read_u(enc, 0)
    assert (got, pos, w) == (value, len(enc), len(enc))


@given(st.integers(-(1 << 63), (1 << 63) - 1))
def test_signed_leb_round_trip(value):
    enc = write_s(value, bits=64)
    assert read_s(enc, 0, 64)[:2] == (value, len(enc))


_SIMPLE = st.sampled_from([
    Instr("i32.add"), Instr("i32.sub"), Instr("drop"), Instr("nop"),
    Instr("local.get", (0,)), Instr("local.set", (1,)), Instr("local.tee", (1,)),
    Instr("global.get", (0,)), Instr("global.set", (0,)), Instr("unreachable"),
    Instr("return"), Instr("memory.size", (0,)), Instr("call", (0,)),
])
_CONST = st.one_of(
    st.integers(-(1 << 31), (1 << 31) - 1).map(i32_const),
    st.integers(-(1 << 63), (1 << 63) - 1).map(i64_const),
)
_MEMOP = st.builds(
    lambda op, align, off: Instr(op, (align, off)),
    st.sampled_from(["i32.store", "i32.store8", "i64.store", "i32.load", "i64.load8_u"]),
    st.integers(0, 3), st.integers(0, (1 << 32) - 1),
)
# opaque SIMD instruction carried as raw immediates (v128.const)
_SIMD = st.binary(min_size=16, max_size=16).map(lambda b: Instr("simd", (12, b)))


def _nested(children):
    return st.builds(lambda op, inner: [Instr(op, (None,))] + inner + [Instr("end")],
                     st.sampled_from(["block", "loop"]), children)


_SEQ = st.recursive(
    st.lists(st.one_of(_SIMPLE, _CONST, _MEMOP, _SIMD).map(lambda i: [i]), max_size=6)
    .map(lambda xs: [i for x in xs for i in x]),
    lambda inner: st.lists(st.one_of(inner, _nested(inner)), max_size=4)
    .map(lambda xs: [i for x in xs for i in x]),
    max_leaves=20,
)


@settings(max_examples=150, deadline=None)
@given(_SEQ)
def test_decode_encode_decode_fixpoint(instrs):
    sig = FuncType(("i32",), ())
    m = WasmModule(
        types=[sig],
        functions=[FunctionBody(0, sig, ((1, "i32"),), tuple(instrs) + (Instr("end"),))],
        memories=[Limits(1)],
        globals=[Global(GlobalType("i32", True), (i32_const(0), Instr("end")))],
    )
    first = encode_module(m)
    decoded = decode_module(first)
    assert decoded.functions[0].instructions == m.functions[0].instructions
    second = encode_module(decoded)
    assert second == first
    assert decode_module(second).functions == decoded.functions


@given(st.integers(0, 31), st.integers(0, (1 << 32) - 1))
def test_memarg_fields_decode(align, offset):
    data = _module_with_body(
        b"\x00\x41\x00\x28" + write_u(align) + write_u(offset) + b"\x1a\x0b", memory=True)
    m = decode_module(data)
    load = m.functions[0].instructions[1]
    assert load.op == "i32.load" and load.imm == (align, offset)
    assert load.memarg_offset >= 0
    assert encode_module(m) == data


def test_memarg_without_memory_rejected():
    with pytest.raises(MalformedBinary):
        decode_module(_module_with_body(b"\x00\x41\x00\x28\x02\x00\x1a\x0b"))


def test_oversized_alignment_rejected():
    with pytest.raises(MalformedBinary, match="alignment"):
        decode_module(_module_with_body(b"\x00\x41\x00\x28\x20\x00\x1a\x0b", memory=True))
