from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import prebuilt
from oracles import prologue_oracle
from wat_fixtures import CHAR_DECLARE_LOOP, FRAMELESS, INT_ALLOCA_O1, SAFE_FRAME, assemble, single_store
from wasmguard.frame_analysis import (
    DYNAMIC_FRAME_SIZE,
    ESCAPES_FRAME,
    NO_FRAME,
    TOUCHES_FRAME_TOP_WORD,
    UNRECOGNIZED_EPILOGUE,
    AmbiguousStackPointer,
    detect_frames,
    detect_sp_global,
    find_escaping_stores,
    unresolved_store_counts,
)
from wasmguard.wasm_model import Export, Global, GlobalType, Instr, decode_module, encode_module, i32_const
from wasmguard.wasm_model.interpreter import interpret


def _scan(text: str):
    m = decode_module(assemble(text))
    return m, detect_frames(m, detect_sp_global(m))


# ------------------------------------------------------------ hand-written listings

def test_frameless_listing_has_no_stack_pointer():
    m, scan = _scan(FRAMELESS)
    assert detect_sp_global(m) is None
    assert scan.frames == []
    assert [(s.function_index, s.reason) for s in scan.skipped] == [(0, NO_FRAME)]


def test_char_declare_loop_frame_and_escape():
    m, scan = _scan(CHAR_DECLARE_LOOP)
    f = scan.frame_for(1)
    assert (f.sp_global, f.frame_size, f.base_local) == (0, 64, 2)
    assert scan.frame_for(0) is None
    found = find_escaping_stores(m, scan)
    assert [(e.function_index, e.effective_offset, e.store_width, e.frame_size, e.severity)
            for e in found] == [(1, 99, 1, 64, ESCAPES_FRAME)]


def test_int_alloca_o1_shape_escapes_past_frame():
    m, scan = _scan(INT_ALLOCA_O1)
    assert [(f.function_index, f.frame_size, f.base_local) for f in scan] == [(0, 16, 0)]
    found = find_escaping_stores(m, scan)
    assert [(e.effective_offset, e.store_width, e.frame_size) for e in found] == [(32, 8, 16)]


def test_safe_frame_has_no_findings():
    m, scan = _scan(SAFE_FRAME)
    assert len(scan) == 1
    assert find_escaping_stores(m, scan, include_warnings=True) == []


@pytest.mark.parametrize("width", [1, 2, 4, 8])
def test_store_ending_at_frame_top_is_not_an_escape(width):
    m, scan = _scan(single_store(64, 64 - width, width))
    assert find_escaping_stores(m, scan) == []
    warned = find_escaping_stores(m, scan, include_warnings=True)
    assert [e.severity for e in warned] == [TOUCHES_FRAME_TOP_WORD]


def test_store_one_byte_over_is_an_escape():
    m, scan = _scan(single_store(64, 61, 4))
    assert [(e.effective_offset, e.store_width) for e in find_escaping_stores(m, scan)] == [(61, 4)]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([16, 32, 48, 64, 128, 256]), st.integers(0, 300),
       st.sampled_from([1, 2, 4, 8]))
def test_detection_matches_boundary_rule(n, offset, width):
    m, scan = _scan(single_store(n, offset, width))
    found = find_escaping_stores(m, scan, include_warnings=True)
    if offset + width > n:
        expected = [ESCAPES_FRAME]
    elif offset + width > n - 8:
        expected = [TOUCHES_FRAME_TOP_WORD]
    else:
        expected = []
    assert [e.severity for e in found] == expected


def test_two_restore_sites_are_both_recorded():
    m, scan = _scan(single_store(32, 0, 8, early_return=True))
    (f,) = scan.frames
    assert len(f.epilogue_spans) == 2


# ------------------------------------------------------------ skip reasons

_DYNAMIC = """
(module
  (memory 1)
  (global $sp (mut i32) (i32.const 65536))
  (func (export "f") (param i32)
    global.get 0
    local.get 0
    i32.sub
    global.set 0))
"""

_NO_RESTORE = """
(module
  (memory 1)
  (global $sp (mut i32) (i32.const 65536))
  (func (export "f") (param i32)
    (local i32)
    global.get 0
    i32.const 32
    i32.sub
    local.tee 1
    global.set 0
    local.get 1
    local.get 0
    i32.store))
"""


def test_dynamic_frame_size_skipped():
    m = decode_module(assemble(_DYNAMIC))
    scan = detect_frames(m, 0)
    assert [s.reason for s in scan.skipped] == [DYNAMIC_FRAME_SIZE]


def test_missing_restore_skipped():
    m = decode_module(assemble(_NO_RESTORE))
    scan = detect_frames(m, 0)
    assert [s.reason for s in scan.skipped] == [UNRECOGNIZED_EPILOGUE]


def test_ambiguous_stack_pointer():
    text = """
    (module
      (memory 1)
      (global (mut i32) (i32.const 1024))
      (global (mut i32) (i32.const 2048))
      (func (local i32)
        global.get 0 i32.const 16 i32.sub local.tee 0 global.set 0
        local.get 0 i32.const 16 i32.add global.set 0)
      (func (local i32)
        global.get 1 i32.const 16 i32.sub local.tee 0 global.set 1
        local.get 0 i32.const 16 i32.add global.set 1))
    """
    with pytest.raises(AmbiguousStackPointer) as exc:
        detect_sp_global(decode_module(assemble(text)))
    assert exc.value.candidates == [0, 1]


def test_unresolved_store_is_counted():
    text = """
    (module
      (memory 1)
      (global (mut i32) (i32.const 1024))
      (func (param i32) (local i32)
        global.get 0 i32.const 16 i32.sub local.tee 1 global.set 0
        local.get 0 i32.const 7 i32.store
        local.get 1 i32.const 16 i32.add global.set 0))
    """
    m = decode_module(assemble(text))
    scan = detect_frames(m, 0)
    assert unresolved_store_counts(m, scan) == {0: 1}
    assert find_escaping_stores(m, scan) == []


# ------------------------------------------------------------ corpus

@pytest.mark.parametrize("art", prebuilt(), ids=lambda a: a.id)
def test_corpus_frames_agree_with_prologue_oracle(art):
    m = decode_module(art.path.read_bytes())
    sp = detect_sp_global(m)
    assert sp == 0
    scan = detect_frames(m, sp)
    assert scan.frames
    for f in scan:
        assert prologue_oracle(m, f.function_index, sp) == f.frame_size
    for s in scan.skipped:
        if s.reason == NO_FRAME:
            assert prologue_oracle(m, s.function_index, sp) is None


def test_char_declare_loop_corpus_frame_is_64():
    art = next(a for a in prebuilt("O1") if a.case_id == "cwe121-char-declare-loop")
    m = decode_module(art.path.read_bytes())
    scan = detect_frames(m, detect_sp_global(m))
    found = find_escaping_stores(m, scan)
    assert [(e.effective_offset, e.store_width, e.frame_size) for e in found] == [(99, 1, 64)]
    assert scan.frame_for(found[0].function_index).frame_size == 64


def _shift_globals(m):
    """Insert an unrelated mutable i32 global at index 0 and renumber every reference."""
    def shift(instrs):
        return tuple(Instr(i.op, (i.imm[0] + 1,) + i.imm[1:])
                     if i.op in ("global.get", "global.set") else i for i in instrs)
    m = dataclasses.replace(m)
    m.globals = [Global(GlobalType("i32", True), (i32_const(7), Instr("end")))] + [
        dataclasses.replace(g, init=shift(g.init)) for g in m.globals]
    m.functions = [dataclasses.replace(b, instructions=shift(b.instructions)) for b in m.functions]
    m.exports = [Export(e.name, e.kind, e.index + 1) if e.kind == "global" else e
                 for e in m.exports]
    return m


def test_stack_pointer_found_at_index_one():
    art = next(a for a in prebuilt("O1") if a.case_id == "cwe121-char-declare-loop")
    m = decode_module(encode_module(_shift_globals(decode_module(art.path.read_bytes()))))
    assert detect_sp_global(m) == 1
    scan = detect_frames(m, 1)
    found = find_escaping_stores(m, scan)
    assert [(e.effective_offset, e.store_width, e.frame_size) for e in found] == [(99, 1, 64)]


def test_adding_functions_keeps_existing_frames():
    art = next(a for a in prebuilt("O1") if a.case_id == "cwe131-memcpy-45")
    m = decode_module(art.path.read_bytes())
    before = detect_frames(m, 0)
    framed = m.functions[before.frames[0].function_index - m.num_imported_functions]
    extra = decode_module(assemble(FRAMELESS))
    m.types.append(extra.functions[0].signature)
    m.functions = m.functions + [dataclasses.replace(extra.functions[0], type_index=len(m.types) - 1),
                                 framed]
    after = detect_frames(decode_module(encode_module(m)), 0)
    assert after.frames[:len(before.frames)] == before.frames
    assert len(after.frames) == len(before.frames) + 1


@pytest.mark.parametrize("art", [a for a in prebuilt() if a.case_id.startswith("safe-")],
                         ids=lambda a: a.id)
def test_safe_controls_have_no_escapes(art):
    m = decode_module(art.path.read_bytes())
    assert find_escaping_stores(m, detect_frames(m, 0)) == []


@pytest.mark.parametrize("art", prebuilt(), ids=lambda a: a.id)
def test_executed_findings_write_above_entry_sp(art):
    m = decode_module(art.path.read_bytes())
    scan = detect_frames(m, 0)
    found = find_escaping_stores(m, scan)
    if not found:
        return
    trace = interpret(m, "_start", fuel=5_000_000, sp_global=0)
    acts = {a.id: a for a in trace.activations}
    for e in found:
        hits = [s for s in trace.stores if s.func == e.function_index and s.pc == e.store_index]
        for s in hits:
            assert s.address + s.width > acts[s.activation].sp_at_entry
