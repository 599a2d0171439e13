"""Shadow-stack frame detection and static out-of-frame store detection.

C compilers targeting wasm keep address-taken locals in linear memory and
manage that region through a mutable i32 global used as stack pointer.  A
function that needs N bytes of it starts with

    global.get sp ; i32.const N ; i32.sub ; local.tee b ; global.set sp

and gives the bytes back before returning with

    local.get b ; i32.const N ; i32.add ; global.set sp

The analysis below is a forward abstract interpretation over the flat
instruction sequence.  Values are tracked as constants, as pointers relative to
the stack pointer at function entry ("entry") or to the frame base ("frame"),
or as unknown.  That is enough to recognise the prologue and every restore
site no matter how the compiler shuffles values through locals, and to fold
store addresses of the form ``base + const + memarg.offset``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .wasm_model import WasmModule
from .wasm_model.opcodes import STORE_WIDTH
from .wasm_model.types import FunctionBody, Instr

NO_FRAME = "no-frame"
UNRECOGNIZED_PROLOGUE = "unrecognized-prologue"
UNRECOGNIZED_EPILOGUE = "unrecognized-epilogue"
DYNAMIC_FRAME_SIZE = "dynamic-frame-size"
SKIP_REASONS = (NO_FRAME, UNRECOGNIZED_PROLOGUE, UNRECOGNIZED_EPILOGUE, DYNAMIC_FRAME_SIZE)

ADD_FROM_BASE_LOCAL = "add-from-base-local"
ADD_FROM_CURRENT_GLOBAL = "add-from-current-global"
SAVED_OLD_SP_LOCAL = "saved-old-sp-local"
RESTORE_STYLES = (ADD_FROM_BASE_LOCAL, ADD_FROM_CURRENT_GLOBAL, SAVED_OLD_SP_LOCAL)

ESCAPES_FRAME = "escapes-frame"
TOUCHES_FRAME_TOP_WORD = "touches-frame-top-word"

# libc routines that hand back their destination pointer.  clang relies on
# this and reuses the call result in place of the original pointer.
RETURNS_FIRST_ARG = frozenset({
    "memset", "memcpy", "memmove", "strcpy", "strcat", "strncpy", "strncat",
    "wcscpy", "wcscat", "wcsncpy", "wcsncat", "wmemset", "wmemcpy", "wmemmove",
    "stpcpy",
})

_LOOP_ITERATION_LIMIT = 32


class AmbiguousStackPointer(Exception):
    def __init__(self, candidates: list[int], count: int):
        self.candidates = candidates
        self.count = count
        super().__init__(
            f"globals {candidates} each match {count} prologues; cannot pick a stack pointer")


@dataclass(frozen=True)
class FrameInfo:
    function_index: int
    sp_global: int
    frame_size: int
    base_local: int | None
    prologue_span: tuple[int, int]
    epilogue_spans: tuple[tuple[int, int], ...]
    restore_styles: tuple[str, ...]
    # instruction indices the rewriter needs
    prologue_const: int
    epilogue_consts: tuple[int | None, ...]

    @property
    def prologue_set(self) -> int:
        return self.prologue_span[1]

    @property
    def epilogue_sets(self) -> tuple[int, ...]:
        return tuple(end for _, end in self.epilogue_spans)

    @property
    def restore_style(self) -> str:
        return self.restore_styles[0] if self.restore_styles else ""


@dataclass(frozen=True)
class SkippedFunction:
    function_index: int
    reason: str
    detail: str = ""


@dataclass
class FrameScan:
    """Result of :func:`detect_frames`; iterates over the detected frames."""

    sp_global: int | None
    frames: list[FrameInfo] = field(default_factory=list)
    skipped: list[SkippedFunction] = field(default_factory=list)

    def __iter__(self):
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def frame_for(self, func_index: int) -> FrameInfo | None:
        for f in self.frames:
            if f.function_index == func_index:
                return f
        return None


@dataclass(frozen=True)
class EscapeFinding:
    function_index: int
    store_index: int
    store_width: int
    effective_offset: int
    frame_size: int
    severity: str


# ------------------------------------------------------------ abstract values

@dataclass(frozen=True)
class _Const:
    value: int
    src: int | None


@dataclass(frozen=True)
class _Ptr:
    anchor: str  # "entry" or "frame"
    offset: int
    consts: tuple[tuple[int | None, int], ...] = ()
    origin: int = field(default=-1, compare=False)
    via: str = field(default="", compare=False)


@dataclass(frozen=True)
class _Dyn:
    """Entry stack pointer minus something non-constant."""

    origin: int = field(default=-1, compare=False)


def _wrap32(v: int) -> int:
    return (v + (1 << 31)) % (1 << 32) - (1 << 31)


def _merge_values(vals):
    first = vals[0]
    return first if all(v == first for v in vals[1:]) else None


# ------------------------------------------------------------ stack effects

_UNARY = {"eqz", "clz", "ctz", "popcnt", "abs", "neg", "ceil", "floor", "trunc",
          "nearest", "sqrt"}
_BINARY_SUFFIXED = {"lt", "gt", "le", "ge", "div", "rem", "shr"}
_FC_EFFECTS = {
    "memory.init": (3, 0), "data.drop": (0, 0), "memory.copy": (3, 0),
    "memory.fill": (3, 0), "table.init": (3, 0), "elem.drop": (0, 0),
    "table.copy": (3, 0), "table.grow": (2, 1), "table.size": (0, 1),
    "table.fill": (3, 0),
}


def _numeric_arity(op: str) -> int:
    sub = op.split(".", 1)[1]
    base = sub.split("_", 1)[0]
    if base in _BINARY_SUFFIXED:
        return 2
    if base in _UNARY or "_" in sub:
        return 1
    return 2


def block_arity(m: WasmModule, blocktype) -> tuple[int, int]:
    """(params, results) of a block type immediate."""
    if blocktype is None:
        return 0, 0
    if isinstance(blocktype, str):
        return 0, 1
    ft = m.types[blocktype]
    return len(ft.params), len(ft.results)


def simple_effect(m: WasmModule, ins: Instr) -> tuple[int, int] | None:
    """(pops, pushes) for instructions without control or local/global effects.

    Returns ``None`` for opaque instructions whose effect is not modelled.
    """
    op = ins.op
    if op in STORE_WIDTH:
        return 2, 0
    if op.endswith(("load", "load8_s", "load8_u", "load16_s", "load16_u", "load32_s",
                    "load32_u")):
        return 1, 1
    if op in ("i32.const", "i64.const", "f32.const", "f64.const", "memory.size",
              "ref.null", "ref.func"):
        return 0, 1
    if op in ("nop",):
        return 0, 0
    if op == "drop":
        return 1, 0
    if op in ("select", "select_t"):
        return 3, 1
    if op in ("memory.grow", "ref.is_null", "table.get"):
        return 1, 1
    if op == "table.set":
        return 2, 0
    if op in _FC_EFFECTS:
        return _FC_EFFECTS[op]
    if op == "call":
        ft = m.function_type(ins.imm[0])
        return len(ft.params), len(ft.results)
    if op == "call_indirect":
        ft = m.types[ins.imm[0]]
        return len(ft.params) + 1, len(ft.results)
    if op[:4] in ("i32.", "i64.", "f32.", "f64."):
        return _numeric_arity(op), 1
    return None


# ------------------------------------------------------------ helpers

def returns_first_arg(m: WasmModule, func_index: int, names: dict[int, str] | None = None) -> bool:
    """Whether calls to ``func_index`` yield their first i32 argument."""
    ft = m.function_type(func_index)
    if not ft.params or ft.params[0] != "i32" or ft.results != ("i32",):
        return False
    names = m.function_names() if names is None else names
    if names.get(func_index) in RETURNS_FIRST_ARG:
        return True
    if func_index < m.num_imported_functions:
        return False
    return _structurally_returns_arg0(m.body(func_index))


def _structurally_returns_arg0(body: FunctionBody) -> bool:
    instrs = body.instructions
    depth = 0
    for i, ins in enumerate(instrs):
        op = ins.op
        if op in ("local.set", "local.tee") and ins.imm[0] == 0:
            return False
        if op in ("block", "loop", "if"):
            depth += 1
        elif op == "end":
            depth -= 1
        elif op == "return":
            if i == 0 or instrs[i - 1] != Instr("local.get", (0,)):
                return False
        elif op in ("br", "br_if") and ins.imm[0] == depth:
            return False
        elif op == "br_table" and depth in ins.imm[0] + (ins.imm[1],):
            return False
        elif op in ("return_call", "return_call_indirect"):
            return False
    return len(instrs) >= 2 and instrs[-2] == Instr("local.get", (0,))


def _passthrough_set(m: WasmModule) -> frozenset[int]:
    names = m.function_names()
    return frozenset(i for i in range(m.num_functions) if returns_first_arg(m, i, names))


# ------------------------------------------------------------ the interpreter

@dataclass
class _Ctrl:
    kind: str  # func, block, loop, if, else
    pc: int
    height: int
    nparams: int
    nresults: int
    live_at_entry: bool
    entry: tuple | None = None  # (locals, sp, params) snapshot
    incoming: list = field(default_factory=list)  # branch states
    iterations: int = 0


class _Skip(Exception):
    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail


@dataclass
class FunctionAnalysis:
    """Everything learned about one function body."""

    function_index: int
    frame: FrameInfo | None = None
    skip: SkippedFunction | None = None
    findings: list[EscapeFinding] = field(default_factory=list)
    unresolved_stores: int = 0


class _Analyzer:
    def __init__(self, m: WasmModule, func_index: int, sp: int, passthrough: frozenset[int]):
        self.m = m
        self.fi = func_index
        self.sp_index = sp
        self.body = m.body(func_index)
        self.passthrough = passthrough
        self.instrs = self.body.instructions
        self.nlocals = len(self.body.local_types)
        # results collected by instruction index (re-analysis overwrites)
        self.uses: dict[int, set[int]] = {}
        self.epilogues: dict[int, tuple] = {}
        self.store_addr: dict[int, object] = {}
        self.prologue: tuple | None = None  # (get_idx, const_idx, set_idx, N, base_local)
        self.touches_sp = False
        self.bad_return: int | None = None

    # -- state --------------------------------------------------------------

    def _initial(self):
        nparams = len(self.body.signature.params)
        # parameters are opaque; declared locals start at zero
        self.locals = [None] * nparams + [_Const(0, None)] * (self.nlocals - nparams)
        self.stack: list = []
        self.spv = _Ptr("entry", 0)

    def _snapshot(self, nvals: int):
        vals = tuple(self.stack[-nvals:]) if nvals else ()
        if len(vals) < nvals:
            vals = (None,) * (nvals - len(vals)) + vals
        return (tuple(self.locals), self.spv, vals)

    def _merge_states(self, states):
        locs = tuple(_merge_values([s[0][i] for s in states]) for i in range(self.nlocals))
        spv = _merge_values([s[1] for s in states])
        n = len(states[0][2])
        vals = tuple(_merge_values([s[2][i] for s in states]) for i in range(n))
        return locs, spv, vals

    def _pop(self, pc: int):
        v = self.stack.pop() if self.stack else None
        if isinstance(v, _Const) and v.src is not None:
            self.uses.setdefault(v.src, set()).add(pc)
        return v

    def _pop_move(self):
        return self.stack.pop() if self.stack else None

    # -- control ------------------------------------------------------------

    def _branch(self, ctrls: list[_Ctrl], label: int, pc: int):
        target = ctrls[-1 - label]
        if target.kind == "func":
            self._returning(pc)
            return
        n = target.nparams if target.kind == "loop" else target.nresults
        target.incoming.append(self._snapshot(n))

    def _returning(self, pc: int):
        if self.prologue is not None and self.spv != _Ptr("entry", 0):
            if self.bad_return is None:
                self.bad_return = pc

    def run(self) -> None:
        self._initial()
        m = self.m
        instrs = self.instrs
        nparams_f = 0
        nres_f = len(self.body.signature.results)
        ctrls = [_Ctrl("func", -1, 0, nparams_f, nres_f, True)]
        live = True
        pc = 0
        while pc < len(instrs):
            ins = instrs[pc]
            op = ins.op
            if op in ("block", "loop", "if"):
                np_, nr = block_arity(m, ins.imm[0])
                if live and op == "if":
                    self._pop(pc)
                height = max(len(self.stack) - np_, 0)
                c = _Ctrl(op, pc, height, np_, nr, live)
                if live:
                    c.entry = self._snapshot(np_)
                ctrls.append(c)
                pc += 1
                continue
            if op == "else":
                c = ctrls[-1]
                if live:
                    c.incoming.append(self._snapshot(c.nresults))
                c.kind = "else"
                live = c.live_at_entry
                if live:
                    self._restore(c, c.entry)
                pc += 1
                continue
            if op == "end":
                c = ctrls[-1]
                if c.kind == "func":
                    if live:
                        self._returning(pc)
                    break
                if c.kind == "loop":
                    if c.live_at_entry and c.incoming:
                        merged = self._merge_states([c.entry] + c.incoming)
                        if merged != c.entry and c.iterations < _LOOP_ITERATION_LIMIT:
                            c.entry = merged
                            c.iterations += 1
                            c.incoming = []
                            self._restore(c, merged)
                            live = True
                            pc = c.pc + 1
                            continue
                        if merged != c.entry:
                            self._widen()
                            return
                    ctrls.pop()
                    if live:
                        self._truncate(c, c.nresults)
                    pc += 1
                    continue
                states = list(c.incoming)
                if live:
                    states.append(self._snapshot(c.nresults))
                if c.kind == "if" and c.live_at_entry:
                    # implicit empty else branch
                    states.append(c.entry)
                ctrls.pop()
                if states:
                    locs, spv, vals = self._merge_states(states)
                    self.stack = self.stack[:c.height]
                    while len(self.stack) < c.height:
                        self.stack.insert(0, None)
                    self.locals = list(locs)
                    self.spv = spv
                    self.stack.extend(vals)
                    live = True
                else:
                    live = False
                pc += 1
                continue
            if not live:
                pc += 1
                continue
            live = self._step(pc, ins, ctrls)
            pc += 1
        if self.prologue is None:
            return

    def _widen(self):
        raise _Skip(UNRECOGNIZED_PROLOGUE, "loop state did not converge")

    def _restore(self, c: _Ctrl, state):
        locs, spv, vals = state
        self.locals = list(locs)
        self.spv = spv
        self.stack = self.stack[:c.height]
        while len(self.stack) < c.height:
            self.stack.insert(0, None)
        self.stack.extend(vals)

    def _truncate(self, c: _Ctrl, nvals: int):
        vals = self.stack[len(self.stack) - nvals:] if nvals else []
        if len(vals) < nvals:
            vals = [None] * (nvals - len(vals)) + vals
        self.stack = self.stack[:c.height]
        while len(self.stack) < c.height:
            self.stack.insert(0, None)
        self.stack.extend(vals)

    # -- one instruction ----------------------------------------------------

    def _step(self, pc: int, ins: Instr, ctrls: list[_Ctrl]) -> bool:
        """Apply ``ins``; returns whether the following code is reachable."""
        op = ins.op
        stack = self.stack
        if op == "unreachable":
            return False
        if op == "return":
            self._returning(pc)
            return False
        if op == "br":
            self._branch(ctrls, ins.imm[0], pc)
            return False
        if op == "br_if":
            self._pop(pc)
            self._branch(ctrls, ins.imm[0], pc)
            return True
        if op == "br_table":
            self._pop(pc)
            labels, default = ins.imm
            for lab in set(labels) | {default}:
                self._branch(ctrls, lab, pc)
            return False
        if op in ("return_call", "return_call_indirect"):
            self._returning(pc)
            return False
        if op == "local.get":
            v = self.locals[ins.imm[0]]
            if isinstance(v, _Ptr):
                v = _Ptr(v.anchor, v.offset, v.consts, pc, "local")
            stack.append(v)
            return True
        if op == "local.set":
            self.locals[ins.imm[0]] = self._pop_move()
            return True
        if op == "local.tee":
            v = self._pop_move()
            self.locals[ins.imm[0]] = v
            stack.append(v)
            return True
        if op == "global.get":
            if ins.imm[0] == self.sp_index:
                self.touches_sp = True
                v = self.spv
                if isinstance(v, _Ptr):
                    v = _Ptr(v.anchor, v.offset, v.consts, pc, "global")
                stack.append(v)
            else:
                stack.append(None)
            return True
        if op == "global.set":
            v = self._pop(pc)
            if ins.imm[0] == self.sp_index:
                self.touches_sp = True
                self._set_sp(pc, v)
            return True
        if op == "i32.const":
            stack.append(_Const(ins.imm[0], pc))
            return True
        if op in ("i32.add", "i32.sub"):
            b = self._pop(pc)
            a = self._pop(pc)
            stack.append(_arith(op, a, b, pc))
            return True
        if op in STORE_WIDTH:
            self._pop(pc)
            addr = self._pop(pc)
            self.store_addr[pc] = addr
            return True
        if op == "call":
            f = ins.imm[0]
            ft = self.m.function_type(f)
            args = [self._pop(pc) for _ in ft.params][::-1]
            if f in self.passthrough and args and isinstance(args[0], _Ptr):
                a = args[0]
                stack.append(_Ptr(a.anchor, a.offset, a.consts, pc, "call"))
            else:
                stack.extend([None] * len(ft.results))
            return True
        eff = simple_effect(self.m, ins)
        if eff is None:
            # opaque instruction: forget the operand stack entirely
            self.stack = []
            return True
        pops, pushes = eff
        for _ in range(pops):
            self._pop(pc)
        stack.extend([None] * pushes)
        return True

    def _set_sp(self, pc: int, v) -> None:
        if self.prologue is None:
            if isinstance(v, _Dyn):
                raise _Skip(DYNAMIC_FRAME_SIZE, f"stack pointer lowered by a computed amount at {pc}")
            if not (isinstance(v, _Ptr) and v.anchor == "entry" and v.offset < 0):
                raise _Skip(UNRECOGNIZED_PROLOGUE, f"first stack pointer write at {pc} is not a decrement")
            if len(v.consts) != 1 or v.consts[0][1] != -1 or v.consts[0][0] is None:
                raise _Skip(UNRECOGNIZED_PROLOGUE, f"frame size at {pc} is not a single constant")
            n = -v.offset
            const_idx = v.consts[0][0]
            bases = [i for i, lv in enumerate(self.locals) if lv == v]
            self.prologue = (v.origin, const_idx, pc, n, bases[0] if bases else None)
            frame = _Ptr("frame", 0)

            def rebase(x):
                if isinstance(x, _Ptr) and x == v:
                    return _Ptr("frame", 0, (), x.origin, x.via)
                return x

            self.locals = [rebase(x) for x in self.locals]
            self.stack = [rebase(x) for x in self.stack]
            self.spv = frame
            return
        n = self.prologue[3]
        if isinstance(v, _Ptr) and v.anchor == "entry" and v.offset == 0 and not v.consts:
            if v.via != "local":
                raise _Skip(UNRECOGNIZED_EPILOGUE, f"restore at {pc} has no recognizable source")
            self.epilogues[pc] = (v.origin, None, SAVED_OLD_SP_LOCAL)
            self.spv = _Ptr("entry", 0)
            return
        if isinstance(v, _Ptr) and v.anchor == "frame" and v.offset == n:
            if len(v.consts) != 1 or v.consts[0][1] != 1 or v.consts[0][0] is None:
                raise _Skip(UNRECOGNIZED_EPILOGUE,
                            f"restore at {pc} does not add the frame size as one constant")
            style = ADD_FROM_BASE_LOCAL if v.via in ("local", "call") else ADD_FROM_CURRENT_GLOBAL
            self.epilogues[pc] = (min(v.origin, v.consts[0][0]), v.consts[0][0], style)
            self.spv = _Ptr("entry", 0)
            return
        if v is None or isinstance(v, _Dyn):
            raise _Skip(DYNAMIC_FRAME_SIZE, f"stack pointer moved by a computed amount at {pc}")
        if isinstance(v, _Ptr) and v.anchor == "entry":
            raise _Skip(UNRECOGNIZED_EPILOGUE, f"restore at {pc} does not match the frame size")
        raise _Skip(UNRECOGNIZED_PROLOGUE, f"second stack adjustment at {pc}")


def _arith(op: str, a, b, pc: int):
    if isinstance(a, _Const) and isinstance(b, _Const):
        v = a.value + b.value if op == "i32.add" else a.value - b.value
        return _Const(_wrap32(v), None)
    if op == "i32.add":
        if isinstance(b, _Ptr) and isinstance(a, _Const):
            a, b = b, a
        if isinstance(a, _Ptr) and isinstance(b, _Const):
            return _Ptr(a.anchor, a.offset + b.value, a.consts + ((b.src, 1),), a.origin, a.via)
        return None
    # i32.sub
    if isinstance(a, _Ptr) and isinstance(b, _Const):
        return _Ptr(a.anchor, a.offset - b.value, a.consts + ((b.src, -1),), a.origin, a.via)
    if isinstance(a, _Ptr) and isinstance(b, _Ptr) and a.anchor == b.anchor:
        return _Const(_wrap32(a.offset - b.offset), None)
    if isinstance(a, _Ptr) and a.anchor == "entry" and a.offset == 0:
        return _Dyn(a.origin)
    return None


# ------------------------------------------------------------ public API

def analyze_function(m: WasmModule, func_index: int, sp: int,
                     passthrough: frozenset[int] | None = None) -> FunctionAnalysis:
    """Frame, skip reason and store findings for one defined function."""
    if passthrough is None:
        passthrough = _passthrough_set(m)
    out = FunctionAnalysis(func_index)
    a = _Analyzer(m, func_index, sp, passthrough)
    try:
        a.run()
    except _Skip as s:
        out.skip = SkippedFunction(func_index, s.reason, s.detail)
        return out
    if a.prologue is None:
        if a.touches_sp:
            out.skip = SkippedFunction(func_index, UNRECOGNIZED_PROLOGUE,
                                       "reads the stack pointer but never lowers it")
        else:
            out.skip = SkippedFunction(func_index, NO_FRAME)
        return out
    get_idx, const_idx, set_idx, n, base = a.prologue
    if not a.epilogues:
        out.skip = SkippedFunction(func_index, UNRECOGNIZED_EPILOGUE, "no stack pointer restore")
        return out
    if a.bad_return is not None:
        out.skip = SkippedFunction(func_index, UNRECOGNIZED_EPILOGUE,
                                   f"exit at {a.bad_return} without restoring the stack pointer")
        return out
    if _depth_at(a.instrs, set_idx) != 0:
        out.skip = SkippedFunction(func_index, UNRECOGNIZED_PROLOGUE, "prologue is nested in control flow")
        return out
    # frame constants must not double as ordinary operands elsewhere
    sets = sorted(a.epilogues)
    for idx in [const_idx] + [a.epilogues[s][1] for s in sets if a.epilogues[s][1] is not None]:
        if len(a.uses.get(idx, ())) != 1:
            out.skip = SkippedFunction(func_index, UNRECOGNIZED_PROLOGUE,
                                       f"frame size constant at {idx} is shared with other code")
            return out
    out.frame = FrameInfo(
        function_index=func_index,
        sp_global=sp,
        frame_size=n,
        base_local=base,
        prologue_span=(min(get_idx, const_idx) if get_idx >= 0 else const_idx, set_idx),
        epilogue_spans=tuple((a.epilogues[s][0] if a.epilogues[s][0] >= 0 else s, s) for s in sets),
        restore_styles=tuple(a.epilogues[s][2] for s in sets),
        prologue_const=const_idx,
        epilogue_consts=tuple(a.epilogues[s][1] for s in sets),
    )
    for idx in sorted(a.store_addr):
        if idx < set_idx:
            continue
        addr = a.store_addr[idx]
        ins = a.instrs[idx]
        width = STORE_WIDTH[ins.op]
        if isinstance(addr, _Ptr):
            rel = addr.offset + (n if addr.anchor == "entry" else 0)
            eff = rel + ins.memarg_offset
            sev = _severity(eff, width, n)
            if sev:
                out.findings.append(EscapeFinding(func_index, idx, width, eff, n, sev))
        elif not isinstance(addr, _Const):
            out.unresolved_stores += 1
    return out


def _severity(eff: int, width: int, n: int) -> str | None:
    end = eff + width
    if end > n:
        return ESCAPES_FRAME
    if end > max(n - 8, 0):
        return TOUCHES_FRAME_TOP_WORD
    return None


def _depth_at(instrs, idx: int) -> int:
    depth = 0
    for ins in instrs[:idx]:
        if ins.op in ("block", "loop", "if"):
            depth += 1
        elif ins.op == "end":
            depth -= 1
    return depth


def _candidate_globals(m: WasmModule) -> list[int]:
    gtypes = m.global_types()
    return [i for i, g in enumerate(gtypes) if g.valtype == "i32" and g.mutable]


def detect_sp_global(m: WasmModule) -> int | None:
    """Index of the global used as shadow-stack pointer, or ``None``."""
    candidates = _candidate_globals(m)
    if not candidates or not m.functions:
        return None
    written: dict[int, list[int]] = {g: [] for g in candidates}
    for k, body in enumerate(m.functions):
        seen = {ins.imm[0] for ins in body.instructions if ins.op == "global.set"}
        for g in seen & written.keys():
            written[g].append(m.num_imported_functions + k)
    passthrough = _passthrough_set(m)
    counts: dict[int, int] = {}
    for g, funcs in written.items():
        n = 0
        for f in funcs:
            res = analyze_function(m, f, g, passthrough)
            if res.frame is not None or (res.skip and res.skip.reason == DYNAMIC_FRAME_SIZE):
                n += 1
        if n:
            counts[g] = n
    if not counts:
        return None
    best = max(counts.values())
    top = sorted(g for g, c in counts.items() if c == best)
    if len(top) > 1:
        raise AmbiguousStackPointer(top, best)
    return top[0]


def detect_frames(m: WasmModule, sp: int | None) -> FrameScan:
    """One FrameInfo per function carrying the prologue idiom; the rest are skipped."""
    scan = FrameScan(sp)
    first = m.num_imported_functions
    if sp is None:
        scan.skipped = [SkippedFunction(first + k, NO_FRAME) for k in range(len(m.functions))]
        return scan
    passthrough = _passthrough_set(m)
    for k in range(len(m.functions)):
        res = analyze_function(m, first + k, sp, passthrough)
        if res.frame is not None:
            scan.frames.append(res.frame)
        else:
            scan.skipped.append(res.skip)
    return scan


def find_escaping_stores(m: WasmModule, frames, include_warnings: bool = False) -> list[EscapeFinding]:
    """Constant-offset stores that reach past the frame.

    With ``include_warnings`` stores that stay inside the frame but overlap its
    top word (the guard's neighbour after hardening) are reported as well.
    """
    out: list[EscapeFinding] = []
    passthrough = _passthrough_set(m)
    for f in frames:
        found = analyze_function(m, f.function_index, f.sp_global, passthrough).findings
        out.extend(e for e in found if include_warnings or e.severity == ESCAPES_FRAME)
    return out


def unresolved_store_counts(m: WasmModule, frames) -> dict[int, int]:
    """Per framed function, the number of stores whose address could not be folded."""
    passthrough = _passthrough_set(m)
    return {f.function_index: analyze_function(m, f.function_index, f.sp_global,
                                               passthrough).unresolved_stores
            for f in frames}
