from __future__ import annotations

import dataclasses

import pytest
import wasmtime
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import prebuilt
from wat_fixtures import (
    CHAR_DECLARE_LOOP,
    FRAMELESS,
    INT_ALLOCA_O1,
    RANDOM_IMPORT,
    SAFE_FRAME,
    assemble,
    single_store,
)
from wasmguard.canary_injector import (
    FIXED,
    HARDENED,
    RANDOM,
    CanaryConfig,
    GuardImportMissing,
    InvalidConfig,
    harden,
    verify_hardening,
)
from wasmguard.frame_analysis import NO_FRAME, detect_frames, detect_sp_global
from wasmguard.wasm_model import Instr, decode_module, encode_module, i32_const
from wasmguard.wasm_model.interpreter import COMPLETED, TRAPPED, interpret

SP0 = 65536


def _load(text: str):
    m = decode_module(assemble(text))
    return m, detect_frames(m, detect_sp_global(m))


def _hardened(text: str, cfg: CanaryConfig | None = None):
    m, scan = _load(text)
    out, report = harden(m, scan, cfg)
    return m, out, report


def _validates(m) -> bool:
    try:
        wasmtime.Module.validate(wasmtime.Engine(), encode_module(m))
    except wasmtime.WasmtimeError:
        return False
    return True


# ------------------------------------------------------------ configuration

def test_default_guard_layout():
    cfg = CanaryConfig()
    assert (cfg.guard_size, cfg.guard_mode) == (8, FIXED)
    assert cfg.guard_bytes() == bytes.fromhex("00ff0a0ddec0adde")
    assert CanaryConfig(guard_size=16).guard_bytes() == bytes.fromhex("00ff0a0ddec0adde") * 2
    assert CanaryConfig(guard_size=4).guard_bytes() == bytes.fromhex("00ff0a0d")


@pytest.mark.parametrize("kwargs", [
    {"guard_size": 10}, {"guard_size": 0}, {"guard_size": 20}, {"guard_size": -4},
    {"guard_mode": "sometimes"}, {"fixed_value": 0x0100000000000000},
    {"fixed_value": 1 << 64}, {"on_violation": "log"},
    {"guard_mode": RANDOM, "random_import": None},
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(InvalidConfig):
        CanaryConfig(**kwargs)


@pytest.mark.parametrize("k", [4, 8, 12, 16])
def test_valid_guard_sizes(k):
    assert CanaryConfig(guard_size=k).guard_size == k


# ------------------------------------------------------------ hand-written listings

def test_char_declare_loop_constants_grow_by_guard():
    m, out, report = _hardened(CHAR_DECLARE_LOOP)
    body = out.functions[1].instructions
    assert body[1] == i32_const(72)
    consts = [i.imm[0] for i in body if i.op == "i32.const"]
    assert consts.count(72) == 2 and 64 in consts  # new frame twice, arm's offset once
    entry = report.entry(1)
    assert (entry.action, entry.old_frame_size, entry.new_frame_size, entry.check_sites) == \
        (HARDENED, 64, 72, 1)
    assert report.entry(0).reason == NO_FRAME
    assert verify_hardening(m, out, report).passed


def test_char_declare_loop_overflow_lands_in_guard_and_traps():
    m, out, report = _hardened(CHAR_DECLARE_LOOP)
    plain = interpret(m, "main", args=(0, 0), sp_global=0)
    assert plain.status == COMPLETED
    trace = interpret(out, "main", args=(0, 0), sp_global=0)
    act = next(a for a in trace.activations if a.func == 1)
    base = act.sp_at_entry - 72
    guard = range(base + 64, base + 72)
    hits = [s for s in trace.stores if s.func in (0, 1) and s.address in guard]
    assert hits, "the overflowing bytes should land inside the guard"
    assert trace.status == TRAPPED and trace.reason == "unreachable"


def test_int_alloca_store_skips_past_guard():
    # the guard sits at [16, 16+K) from the new base, so a store at base+32
    # clears it for every allowed K up to 16 and the check stays silent
    m, scan = _load(INT_ALLOCA_O1)
    for k in (4, 8, 12, 16):
        out, _ = harden(m, scan, CanaryConfig(guard_size=k))
        trace = interpret(out, "bad")
        assert trace.status == COMPLETED
        assert trace.memory[SP0 - k:SP0] == CanaryConfig(guard_size=k).guard_bytes()


def test_safe_frame_keeps_guard_intact():
    m, out, report = _hardened(SAFE_FRAME)
    trace = interpret(out, "good")
    assert trace.status == COMPLETED and trace.results == (0,)
    assert trace.memory[SP0 - 8:SP0] == CanaryConfig().guard_bytes()


def test_frameless_module_is_untouched():
    m, out, report = _hardened(FRAMELESS)
    assert encode_module(out) == assemble(FRAMELESS)
    assert [(f.function_index, f.action, f.reason) for f in report.functions] == \
        [(0, "skipped", NO_FRAME)]
    assert report.arm_function is None and report.hardened == []


def test_two_restore_sites_are_both_checked():
    m, out, report = _hardened(single_store(32, 32, 8, early_return=True))
    assert report.entry(0).check_sites == 2
    assert report.entry(0).instruction_delta == 2 + 2 * 1
    calls = [i for i in out.functions[0].instructions if i == Instr("call", (report.check_function,))]
    assert len(calls) == 2
    for arg in (0, 1):
        assert interpret(out, "f", args=(arg,)).reason == "unreachable"
    _, safe, _ = _hardened(single_store(32, 0, 8, early_return=True))
    assert [interpret(safe, "f", args=(a,)).results for a in (0, 1)] == [(0,), (1,)]


def test_hardening_is_deterministic():
    m, scan = _load(CHAR_DECLARE_LOOP)
    assert encode_module(harden(m, scan)[0]) == encode_module(harden(m, scan)[0])


# ------------------------------------------------------------ verification catches tampering

def test_verify_detects_removed_check():
    m, out, report = _hardened(CHAR_DECLARE_LOOP)
    body = out.functions[1]
    call = Instr("call", (report.check_function,))
    instrs = list(body.instructions)
    instrs.remove(call)
    instrs.insert(len(instrs) - 4, Instr("nop"))  # keep the length unchanged
    out.functions[1] = dataclasses.replace(body, instructions=tuple(instrs))
    assert not verify_hardening(m, out, report).passed


def test_verify_detects_wrong_guard_size():
    m, scan = _load(CHAR_DECLARE_LOOP)
    small, _ = harden(m, scan, CanaryConfig(guard_size=4))
    _, report8 = harden(m, scan, CanaryConfig(guard_size=8))
    failures = verify_hardening(m, small, report8).failures
    assert any("frame constant is 68" in f for f in failures)


def test_verify_detects_changed_untouched_function():
    m, out, report = _hardened(CHAR_DECLARE_LOOP)
    body = out.functions[0]
    out.functions[0] = dataclasses.replace(body, instructions=(Instr("nop"),) + body.instructions)
    assert any("function 0" in f for f in verify_hardening(m, out, report).failures)


# ------------------------------------------------------------ per-run random guard

def test_random_mode_seeds_guard_from_entropy():
    m, out, report = _hardened(RANDOM_IMPORT, CanaryConfig(guard_mode=RANDOM))
    assert verify_hardening(m, out, report).passed
    assert _validates(out)
    assert report.guard_global_index == 1 and report.guard_bytes is None
    guards = []
    for seed in (1, 2):
        trace = interpret(out, "f", args=(0,), seed=seed)
        assert trace.status == COMPLETED
        g = trace.memory[SP0 - 8:SP0]
        assert g[0] == 0  # terminator byte at the low end
        guards.append(g)
    assert guards[0] != guards[1]
    assert interpret(out, "f", args=(32,), seed=1).reason == "unreachable"


def test_random_mode_needs_entropy_import():
    m, scan = _load(CHAR_DECLARE_LOOP)
    with pytest.raises(GuardImportMissing):
        harden(m, scan, CanaryConfig(guard_mode=RANDOM))


# ------------------------------------------------------------ properties

def overlaps_guard(d: int, w: int, n: int, k: int) -> bool:
    return d < n + k and d + w > n


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([16, 32, 64, 128]), st.sampled_from([4, 8, 12, 16]),
       st.integers(-8, 16), st.sampled_from([1, 4, 8]))
def test_hardened_store_traps_iff_it_hits_guard(n, k, rel, w):
    d = n + rel
    if rel > k:
        d = n + k
    m, scan = _load(single_store(n, d, w))
    out, _ = harden(m, scan, CanaryConfig(guard_size=k))
    trace = interpret(out, "f", args=(0,))
    assert (trace.reason == "unreachable") == overlaps_guard(d, w, n, k)
    if not overlaps_guard(d, w, n, k):
        assert trace.status == COMPLETED


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([16, 32, 64]), st.integers(0, 7), st.sampled_from([1, 4, 8]))
def test_in_frame_stores_behave_identically(n, slot, w):
    d = min(slot * 8, n - w)
    m, scan = _load(single_store(n, d, w))
    out, _ = harden(m, scan)
    a, b = interpret(m, "f", args=(0,)), interpret(out, "f", args=(0,))
    assert (a.status, a.results) == (b.status, b.results) == (COMPLETED, (0,))


@pytest.mark.parametrize("art", prebuilt(), ids=lambda a: a.id)
def test_corpus_hardening_verifies_and_validates(art):
    m = decode_module(art.path.read_bytes())
    scan = detect_frames(m, detect_sp_global(m))
    out, report = harden(m, scan)
    assert verify_hardening(m, out, report).passed
    assert _validates(out)
    assert len(report.hardened) == len(scan.frames)
    for e in report.hardened:
        assert e.instruction_delta <= 6 + 5 * e.check_sites
    assert report.size_delta_bytes < 0.15 * report.original_size
