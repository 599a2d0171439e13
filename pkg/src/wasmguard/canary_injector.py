"""Binary-to-binary stack canary insertion for shadow-stack frames.

Each hardened function gets its frame enlarged from N to N+K bytes by
rewriting the prologue and epilogue constants.  Body offsets stay as they
were, so the extra K bytes end up at the top of the frame, directly below the
caller's region: ``[base+N, base+N+K) == [old_sp-K, old_sp)``.  A guard value
is written there right after the frame is allocated and compared right before
every stack pointer restore; a mismatch executes ``unreachable``.

The guard write and the check are two small helper functions appended to the
module (appending keeps every existing function index valid):

    arm(base, N) -> base     stores the guard at base+N
    check(sp) -> sp          traps unless the K bytes below sp hold the guard

Both return their first argument, which lets the call sit inline in the
existing prologue/epilogue sequences just before ``global.set sp``:

    ... local.tee b ; i32.const N ; call $arm ; global.set sp
    ... i32.const N+K ; i32.add ; call $check ; global.set sp

That is 2 added instructions per prologue and 1 per restore site.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .frame_analysis import FrameInfo, FrameScan, NO_FRAME, detect_frames
from .wasm_model import (
    FuncType,
    FunctionBody,
    Global,
    GlobalType,
    Instr,
    WasmModule,
    encode_module,
    i32_const,
    i64_const,
)

FIXED = "fixed-constant"
RANDOM = "per-run-random"
GUARD_MODES = (FIXED, RANDOM)
DEFAULT_GUARD_VALUE = 0x00FF0A0DDEC0ADDE
DEFAULT_RANDOM_IMPORT = ("wasi_snapshot_preview1", "random_get")

HARDENED = "hardened"
SKIPPED = "skipped"

# Inline instructions added to a hardened function: `i32.const N; call arm`
# before the prologue store, `call check` before each restore.
PROLOGUE_DELTA = 2
SITE_DELTA = 1


class HardenError(Exception):
    pass


class InvalidConfig(HardenError, ValueError):
    pass


class UnsupportedFrameShape(HardenError):
    def __init__(self, function_index: int, detail: str):
        self.function_index = function_index
        super().__init__(f"function {function_index}: {detail}")


class GuardImportMissing(HardenError):
    pass


class VerificationFailure(HardenError):
    def __init__(self, failures: list[str]):
        self.failures = failures
        super().__init__("; ".join(failures))


@dataclass(frozen=True)
class CanaryConfig:
    guard_size: int = 8
    guard_mode: str = FIXED
    fixed_value: int = DEFAULT_GUARD_VALUE
    random_import: tuple[str, str] | None = DEFAULT_RANDOM_IMPORT
    on_violation: str = "trap"

    def __post_init__(self):
        k = self.guard_size
        if not isinstance(k, int) or k <= 0 or k % 4 or k > 16:
            raise InvalidConfig(f"guard size must be a multiple of 4 between 4 and 16, got {k}")
        if self.guard_mode not in GUARD_MODES:
            raise InvalidConfig(f"guard mode must be one of {GUARD_MODES}")
        if not 0 <= self.fixed_value < 1 << 64:
            raise InvalidConfig("guard value must fit in 64 bits")
        if self.guard_mode == FIXED and self.fixed_value >> 56:
            raise InvalidConfig("guard value must start with a 0x00 byte")
        if self.guard_mode == RANDOM and self.random_import is None:
            raise InvalidConfig("per-run-random mode needs an entropy import")
        if self.on_violation != "trap":
            raise InvalidConfig("the only violation policy is 'trap'")

    def guard_bytes(self) -> bytes:
        """The fixed guard as laid out in memory, lowest address first.

        The 64-bit value is written most significant byte first, so the
        default puts its 0x00 byte at the bottom of the slot, where an upward
        overflow reaches first.  Guards longer than 8 bytes repeat it.
        """
        pattern = self.fixed_value.to_bytes(8, "big")
        return (pattern * 2)[: self.guard_size]


@dataclass
class FunctionReport:
    function_index: int
    action: str
    reason: str | None = None
    old_frame_size: int | None = None
    new_frame_size: int | None = None
    check_sites: int = 0
    instruction_delta: int = 0
    prologue_const: int | None = None
    epilogue_consts: tuple = ()


@dataclass
class HardenReport:
    guard_size: int
    guard_mode: str
    guard_bytes: bytes | None
    functions: list[FunctionReport] = field(default_factory=list)
    guard_global_index: int | None = None
    seeded_global_index: int | None = None
    arm_function: int | None = None
    check_function: int | None = None
    original_size: int = 0
    hardened_size: int = 0
    sp_global: int | None = None
    # body length of the two shared helpers appended to the module
    helper_instructions: int = 0

    @property
    def hardened(self) -> list[FunctionReport]:
        return [f for f in self.functions if f.action == HARDENED]

    @property
    def skipped(self) -> list[FunctionReport]:
        return [f for f in self.functions if f.action == SKIPPED]

    @property
    def size_delta_bytes(self) -> int:
        return self.hardened_size - self.original_size

    @property
    def instruction_delta(self) -> int:
        return sum(f.instruction_delta for f in self.functions)

    def entry(self, function_index: int) -> FunctionReport | None:
        for f in self.functions:
            if f.function_index == function_index:
                return f
        return None

    def to_dict(self) -> dict:
        return {
            "guard_size": self.guard_size,
            "guard_mode": self.guard_mode,
            "guard_bytes": self.guard_bytes.hex() if self.guard_bytes is not None else None,
            "sp_global": self.sp_global,
            "guard_global_index": self.guard_global_index,
            "arm_function": self.arm_function,
            "check_function": self.check_function,
            "original_size": self.original_size,
            "hardened_size": self.hardened_size,
            "size_delta_bytes": self.size_delta_bytes,
            "instruction_delta": self.instruction_delta,
            "helper_instructions": self.helper_instructions,
            "functions": [
                {
                    "function_index": f.function_index,
                    "action": f.action,
                    "reason": f.reason,
                    "old_frame_size": f.old_frame_size,
                    "new_frame_size": f.new_frame_size,
                    "check_sites": f.check_sites,
                    "instruction_delta": f.instruction_delta,
                }
                for f in self.functions
            ],
        }


@dataclass
class VerificationResult:
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.passed

    def raise_for_failures(self) -> None:
        if self.failures:
            raise VerificationFailure(self.failures)


# ------------------------------------------------------------ helpers

def _type_index(types: list[FuncType], ft: FuncType) -> int:
    for i, t in enumerate(types):
        if t == ft:
            return i
    types.append(ft)
    return len(types) - 1


def _chunks(k: int) -> list[tuple[int, int]]:
    """(offset, width) pieces covering a K-byte guard with 8/4-byte accesses."""
    out = []
    off = 0
    while off < k:
        w = 8 if k - off >= 8 else 4
        out.append((off, w))
        off += w
    return out


def _guard_operand(cfg: CanaryConfig, off: int, width: int, guard_global: int | None):
    if cfg.guard_mode == RANDOM:
        ins = [Instr("global.get", (guard_global,))]
        if width == 4:
            ins.append(Instr("i32.wrap_i64"))
        return ins
    chunk = cfg.guard_bytes()[off:off + width]
    value = int.from_bytes(chunk, "little")
    return [i64_const(value) if width == 8 else i32_const(value)]


def _store(width: int, offset: int) -> Instr:
    return Instr("i64.store" if width == 8 else "i32.store", (0, offset))


def _load(width: int, offset: int) -> Instr:
    return Instr("i64.load" if width == 8 else "i32.load", (0, offset))


def _arm_body(cfg: CanaryConfig, type_index: int, sig: FuncType, guard_global, seeded_global,
              entropy_func) -> FunctionBody:
    ins: list[Instr] = []
    if cfg.guard_mode == RANDOM:
        # seed once, using the free stack space just below the new frame as scratch
        ins += [
            Instr("global.get", (seeded_global,)), Instr("i32.eqz"), Instr("if", (None,)),
            Instr("local.get", (0,)), i32_const(8), Instr("i32.sub"), i32_const(8),
            Instr("call", (entropy_func,)), Instr("drop"),
            Instr("local.get", (0,)), i32_const(8), Instr("i32.sub"), Instr("i64.load", (0, 0)),
            i64_const(-256), Instr("i64.and"), Instr("global.set", (guard_global,)),
            i32_const(1), Instr("global.set", (seeded_global,)),
            Instr("end"),
        ]
    ins += [Instr("local.get", (0,)), Instr("local.get", (1,)), Instr("i32.add"),
            Instr("local.set", (2,))]
    for off, w in _chunks(cfg.guard_size):
        ins.append(Instr("local.get", (2,)))
        ins += _guard_operand(cfg, off, w, guard_global)
        ins.append(_store(w, off))
    ins += [Instr("local.get", (0,)), Instr("end")]
    return FunctionBody(type_index, sig, ((1, "i32"),), tuple(ins))


def _check_body(cfg: CanaryConfig, type_index: int, sig: FuncType, guard_global) -> FunctionBody:
    k = cfg.guard_size
    ins = [Instr("local.get", (0,)), i32_const(k), Instr("i32.sub"), Instr("local.set", (1,))]
    for n, (off, w) in enumerate(_chunks(k)):
        ins += [Instr("local.get", (1,)), _load(w, off)]
        ins += _guard_operand(cfg, off, w, guard_global)
        ins.append(Instr("i64.ne" if w == 8 else "i32.ne"))
        if n:
            ins.append(Instr("i32.or"))
    ins += [Instr("if", (None,)), Instr("unreachable"), Instr("end"),
            Instr("local.get", (0,)), Instr("end")]
    return FunctionBody(type_index, sig, ((1, "i32"),), tuple(ins))


def _find_entropy_import(m: WasmModule, cfg: CanaryConfig) -> int:
    mod, name = cfg.random_import
    want = FuncType(("i32", "i32"), ("i32",))
    for i, imp in enumerate(m.imported_functions):
        if imp.module == mod and imp.name == name:
            if m.types[imp.desc] != want:
                raise GuardImportMissing(f"import {mod}.{name} has type {m.types[imp.desc]}, "
                                         f"expected {want}")
            return i
    raise GuardImportMissing(f"module does not import {mod}.{name}")


def _check_shape(body: FunctionBody, f: FrameInfo) -> None:
    instrs = body.instructions
    n = f.frame_size

    def expect(idx, op, imm=None):
        if idx is None or not 0 <= idx < len(instrs):
            raise UnsupportedFrameShape(f.function_index, f"instruction {idx} out of range")
        ins = instrs[idx]
        if ins.op != op or (imm is not None and ins.imm != imm):
            raise UnsupportedFrameShape(f.function_index, f"expected {op} at {idx}, found {ins}")

    expect(f.prologue_const, "i32.const", (n,))
    expect(f.prologue_set, "global.set", (f.sp_global,))
    if not f.epilogue_spans:
        raise UnsupportedFrameShape(f.function_index, "no restore site")
    for style, const_idx, set_idx in zip(f.restore_styles, f.epilogue_consts, f.epilogue_sets):
        expect(set_idx, "global.set", (f.sp_global,))
        if style == "saved-old-sp-local":
            if const_idx is not None:
                raise UnsupportedFrameShape(f.function_index, "saved-sp restore with a constant")
        elif style in ("add-from-base-local", "add-from-current-global"):
            expect(const_idx, "i32.const", (n,))
        else:
            raise UnsupportedFrameShape(f.function_index, f"restore style {style!r}")
        if set_idx <= f.prologue_set:
            raise UnsupportedFrameShape(f.function_index, "restore precedes the prologue")


def _rewrite(body: FunctionBody, f: FrameInfo, k: int, arm: int, check: int) -> FunctionBody:
    n = f.frame_size
    replace = {f.prologue_const: i32_const(n + k)}
    for c in f.epilogue_consts:
        if c is not None:
            replace[c] = i32_const(n + k)
    before: dict[int, list[Instr]] = {f.prologue_set: [i32_const(n), Instr("call", (arm,))]}
    for s in f.epilogue_sets:
        before[s] = [Instr("call", (check,))]
    out: list[Instr] = []
    for idx, ins in enumerate(body.instructions):
        out.extend(before.get(idx, ()))
        out.append(replace.get(idx, ins))
    return dataclasses.replace(body, instructions=tuple(out))


def _copy_module(m: WasmModule) -> WasmModule:
    return dataclasses.replace(
        m, types=list(m.types), imports=list(m.imports), functions=list(m.functions),
        tables=list(m.tables), memories=list(m.memories), globals=list(m.globals),
        exports=list(m.exports), elements=list(m.elements),
        data_segments=list(m.data_segments), custom_sections=list(m.custom_sections),
        layout=list(m.layout))


# ------------------------------------------------------------ public API

def harden(m: WasmModule, frames, cfg: CanaryConfig | None = None) -> tuple[WasmModule, HardenReport]:
    """Return a hardened copy of ``m`` and a per-function report.

    ``frames`` is a :class:`FrameScan` (skip reasons are carried into the
    report) or a plain list of :class:`FrameInfo`.
    """
    cfg = cfg or CanaryConfig()
    k = cfg.guard_size
    by_func = {f.function_index: f for f in frames}
    skipped_reason = {}
    if isinstance(frames, FrameScan):
        skipped_reason = {s.function_index: s.reason for s in frames.skipped}
    sp_values = {f.sp_global for f in by_func.values()}
    if len(sp_values) > 1:
        raise InvalidConfig(f"frames disagree on the stack pointer global: {sorted(sp_values)}")

    original_bytes = encode_module(m)
    report = HardenReport(k, cfg.guard_mode,
                          cfg.guard_bytes() if cfg.guard_mode == FIXED else None,
                          original_size=len(original_bytes))
    report.sp_global = next(iter(sp_values)) if sp_values else None

    first = m.num_imported_functions
    plan: list[FrameInfo] = []
    for k_idx, body in enumerate(m.functions):
        fi = first + k_idx
        f = by_func.get(fi)
        if f is None:
            report.functions.append(FunctionReport(fi, SKIPPED, skipped_reason.get(fi, NO_FRAME)))
            continue
        try:
            _check_shape(body, f)
        except UnsupportedFrameShape as e:
            report.functions.append(FunctionReport(fi, SKIPPED, f"unsupported-frame-shape: {e}",
                                                   old_frame_size=f.frame_size))
            continue
        plan.append(f)
        report.functions.append(FunctionReport(fi, HARDENED))

    if not plan:
        report.hardened_size = report.original_size
        return m, report

    out = _copy_module(m)
    entropy = _find_entropy_import(m, cfg) if cfg.guard_mode == RANDOM else None
    guard_global = seeded_global = None
    if cfg.guard_mode == RANDOM:
        nglob = len(m.global_types())
        out.globals.append(Global(GlobalType("i64", True), (i64_const(0), Instr("end"))))
        out.globals.append(Global(GlobalType("i32", True), (i32_const(0), Instr("end"))))
        guard_global, seeded_global = nglob, nglob + 1
    arm_sig = FuncType(("i32", "i32"), ("i32",))
    check_sig = FuncType(("i32",), ("i32",))
    arm_type = _type_index(out.types, arm_sig)
    check_type = _type_index(out.types, check_sig)
    arm_index = m.num_functions
    check_index = arm_index + 1
    for f in plan:
        body = m.body(f.function_index)
        new_body = _rewrite(body, f, k, arm_index, check_index)
        out.functions[f.function_index - first] = new_body
        sites = len(f.epilogue_spans)
        report.functions[f.function_index - first] = FunctionReport(
            f.function_index, HARDENED, None, f.frame_size, f.frame_size + k, sites,
            len(new_body.instructions) - len(body.instructions), f.prologue_const, f.epilogue_consts)
    helpers = [_arm_body(cfg, arm_type, arm_sig, guard_global, seeded_global, entropy),
               _check_body(cfg, check_type, check_sig, guard_global)]
    out.functions.extend(helpers)
    report.helper_instructions = sum(len(h.instructions) for h in helpers)
    report.arm_function = arm_index
    report.check_function = check_index
    report.guard_global_index = guard_global
    report.seeded_global_index = seeded_global
    report.hardened_size = len(encode_module(out))
    return out, report


def verify_hardening(original: WasmModule, hardened: WasmModule,
                     report: HardenReport) -> VerificationResult:
    """Structural checks that ``hardened`` is what ``report`` says it is."""
    res = VerificationResult()
    fail = res.failures.append
    first = original.num_imported_functions

    if hardened.imports != original.imports:
        fail("import list changed")
    if hardened.exports != original.exports:
        fail("export list changed")
    if hardened.types[:len(original.types)] != original.types:
        fail("existing function types changed")
    if hardened.globals[:len(original.globals)] != original.globals:
        fail("existing globals changed")
    extra_globals = len(hardened.globals) - len(original.globals)
    want_globals = 2 if report.guard_global_index is not None else 0
    if extra_globals != want_globals:
        fail(f"expected {want_globals} added globals, found {extra_globals}")

    helpers = [i for i in (report.arm_function, report.check_function) if i is not None]
    if report.hardened and len(helpers) != 2:
        fail("report lists hardened functions but no guard helpers")
    if len(hardened.functions) != len(original.functions) + len(helpers):
        fail(f"expected {len(original.functions) + len(helpers)} functions, "
             f"found {len(hardened.functions)}")
        return res
    if helpers and helpers != [original.num_functions, original.num_functions + 1]:
        fail("guard helpers are not appended at the end of the function index space")

    hardened_entries = {e.function_index: e for e in report.hardened}
    for k_idx, body in enumerate(original.functions):
        fi = first + k_idx
        new = hardened.functions[k_idx]
        if fi not in hardened_entries:
            if new.instructions != body.instructions or new.local_groups != body.local_groups:
                fail(f"function {fi} was not hardened but its body changed")
            continue
        if new.local_groups != body.local_groups or new.type_index != body.type_index:
            fail(f"function {fi}: signature or locals changed")

    if not hardened_entries:
        return res

    k = report.guard_size
    arm_call = Instr("call", (report.arm_function,))
    check_call = Instr("call", (report.check_function,))
    sp = report.sp_global
    scan = detect_frames(hardened, sp)
    orig_scan = detect_frames(original, sp)
    for fi, entry in hardened_entries.items():
        instrs = hardened.body(fi).instructions
        f = scan.frame_for(fi)
        if f is None:
            fail(f"function {fi}: no recognizable frame after hardening")
            continue
        if entry.new_frame_size != entry.old_frame_size + k:
            fail(f"function {fi}: report frame sizes {entry.old_frame_size} -> "
                 f"{entry.new_frame_size} do not differ by K={k}")
        if f.frame_size != entry.old_frame_size + k:
            fail(f"function {fi}: frame constant is {f.frame_size}, "
                 f"expected {entry.old_frame_size} + {k}")
        arms = [i for i, ins in enumerate(instrs) if ins == arm_call]
        if len(arms) != 1:
            fail(f"function {fi}: expected exactly one guard store, found {len(arms)}")
        elif arms[0] != f.prologue_set - 1 or instrs[arms[0] - 1] != i32_const(entry.old_frame_size):
            fail(f"function {fi}: guard store is not placed at the prologue")
        orig = orig_scan.frame_for(fi)
        want_sites = len(orig.epilogue_spans) if orig else entry.check_sites
        if len(f.epilogue_spans) != want_sites:
            fail(f"function {fi}: {len(f.epilogue_spans)} restore sites, expected {want_sites}")
        for start, end in f.epilogue_spans:
            if instrs[end - 1] != check_call:
                fail(f"function {fi}: restore site at {end} has no guard check")
    return res
