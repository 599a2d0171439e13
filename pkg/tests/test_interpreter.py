from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import prebuilt
from wat_fixtures import CHAR_DECLARE_LOOP, FRAMELESS, RANDOM_IMPORT, assemble
from wasmguard.wasm_model import MissingExport, UnstubbedImport, decode_module
from wasmguard.wasm_model.interpreter import COMPLETED, FUEL_EXHAUSTED, TRAPPED, interpret


def _module(text: str):
    return decode_module(assemble(text))


def test_frameless_listing_returns_first_argument():
    trace = interpret(_module(FRAMELESS), "main", args=(5, 9))
    assert trace.status == COMPLETED
    assert trace.results == (5,)


def test_unreachable_traps():
    m = _module('(module (func (export "f") unreachable))')
    trace = interpret(m, "f")
    assert trace.status == TRAPPED and trace.reason == "unreachable"


def test_char_declare_loop_store_events():
    trace = interpret(_module(CHAR_DECLARE_LOOP), "main", args=(0, 0), sp_global=0)
    assert trace.status == COMPLETED
    main_act = next(a for a in trace.activations if a.func == 1)
    base = main_act.sp_at_entry - 64
    own = [s for s in trace.stores if s.activation == main_act.id]
    assert [(s.address - base, s.width) for s in own] == [(99, 1)]
    # memset wrote bytes 0..98 of the buffer through the returned pointer
    filled = sorted(s.address - base for s in trace.stores if s.func == 0)
    assert filled == list(range(99))


def test_missing_export():
    with pytest.raises(MissingExport):
        interpret(_module(FRAMELESS), "nope")


def test_unstubbed_import_names_the_import():
    m = _module('(module (import "env" "mystery" (func)) (func (export "f")))')
    with pytest.raises(UnstubbedImport) as exc:
        interpret(m, "f")
    assert (exc.value.module, exc.value.name) == ("env", "mystery")


def test_host_override_replaces_stub():
    m = _module('(module (import "env" "seven" (func $s (result i32)))'
                ' (func (export "f") (result i32) call $s))')
    trace = interpret(m, "f", host={("env", "seven"): lambda ctx: 7})
    assert trace.results == (7,)


def test_fuel_exhaustion_is_a_status():
    m = _module('(module (func (export "spin") (loop br 0)))')
    trace = interpret(m, "spin", fuel=1000)
    assert trace.status == FUEL_EXHAUSTED
    assert trace.steps == 1000


def test_fuel_must_be_positive():
    with pytest.raises(ValueError):
        interpret(_module(FRAMELESS), "main", fuel=0, args=(1, 2))


def test_wasi_output_captured():
    art = next(a for a in prebuilt("O1") if a.case_id == "safe-memcpy")
    trace = interpret(decode_module(art.path.read_bytes()), "_start")
    assert trace.status == COMPLETED
    assert trace.stdout.startswith(b"Calling good()...\n")


_ENTROPY = """
(module
  (import "wasi_snapshot_preview1" "random_get" (func $rg (param i32 i32) (result i32)))
  (memory (export "memory") 1)
  (func (export "f") (param i32) (result i64)
    i32.const 64
    local.get 0
    call $rg
    drop
    i32.const 64
    i64.load))
"""


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 32))
def test_interpreter_is_deterministic(seed, n):
    m = _module(_ENTROPY)
    a = interpret(m, "f", args=(n,), seed=seed)
    b = interpret(m, "f", args=(n,), seed=seed)
    assert a == b
    assert a.stores == b.stores and a.memory == b.memory


def _store_program(stores):
    lines = []
    for addr, width, value in stores:
        op = {1: "i32.store8", 2: "i32.store16", 4: "i32.store", 8: "i64.store"}[width]
        const = "i64.const" if width == 8 else "i32.const"
        lines += [f"i32.const {addr}", f"{const} {value}", op]
    body = "\n    ".join(lines)
    return f'(module (memory 1) (func (export "f")\n    {body}))'


_STORE = st.tuples(st.integers(0, 4000), st.sampled_from([1, 2, 4, 8]),
                   st.integers(0, 2**31 - 1))


@settings(max_examples=60, deadline=None)
@given(st.lists(_STORE, max_size=12))
def test_store_events_cover_every_changed_byte(stores):
    trace = interpret(_module(_store_program(stores)), "f")
    covered = set()
    for s in trace.stores:
        covered.update(range(s.address, s.address + s.width))
    changed = {i for i, (x, y) in enumerate(zip(trace.initial_memory, trace.memory)) if x != y}
    assert changed <= covered


@pytest.mark.parametrize("art", prebuilt("O1"), ids=lambda a: a.id)
def test_store_events_cover_corpus_runs(art):
    trace = interpret(decode_module(art.path.read_bytes()), "_start", fuel=2_000_000)
    covered = set()
    for s in trace.stores:
        covered.update(range(s.address, s.address + s.width))
    changed = {i for i, (x, y) in enumerate(zip(trace.initial_memory, trace.memory)) if x != y}
    assert changed <= covered


def test_random_get_follows_seed():
    m = _module(RANDOM_IMPORT)
    assert interpret(m, "f", args=(0,), seed=1).status == COMPLETED
    ent = _module(_ENTROPY)
    assert interpret(ent, "f", args=(8,), seed=1).results != interpret(ent, "f", args=(8,), seed=2).results
