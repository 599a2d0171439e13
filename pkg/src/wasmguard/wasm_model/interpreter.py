"""Small reference interpreter used as a verification oracle.

It executes one exported function with a fuel budget and a handful of WASI
stubs, and records every write to linear memory.  It is deliberately simple
and slow; the harness runs real programs under an external runtime and only
uses this for checks where seeing every store matters.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field
from typing import Callable

from .errors import MissingExport, UnstubbedImport
from .opcodes import LOAD_WIDTH, STORE_WIDTH
from .types import PAGE_SIZE, FuncType, Instr, WasmModule

M32 = 0xFFFFFFFF
M64 = 0xFFFFFFFFFFFFFFFF
MAX_PAGES = 1024  # 64 MiB is plenty for an oracle
MAX_CALL_DEPTH = 400

COMPLETED = "completed"
TRAPPED = "trapped"
FUEL_EXHAUSTED = "fuel-exhausted"

WASI_MODULES = ("wasi_snapshot_preview1", "wasi_unstable")


@dataclass(frozen=True)
class StoreEvent:
    address: int
    width: int
    func: int
    pc: int
    activation: int


@dataclass(frozen=True)
class Activation:
    id: int
    func: int
    caller: int | None
    depth: int
    sp_at_entry: int | None = None


@dataclass
class ExecutionTrace:
    status: str
    reason: str | None = None
    results: tuple = ()
    exit_code: int | None = None
    memory: bytes = b""
    initial_memory: bytes = b""
    stores: list[StoreEvent] = field(default_factory=list)
    activations: list[Activation] = field(default_factory=list)
    stdout: bytes = b""
    stderr: bytes = b""
    steps: int = 0

    @property
    def trapped(self) -> bool:
        return self.status == TRAPPED

    def output(self) -> tuple[bytes, bytes]:
        return self.stdout, self.stderr


class Trap(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class _FuelOut(Exception):
    pass


class _Exit(Exception):
    def __init__(self, code: int):
        self.code = code


# ------------------------------------------------------------ numeric helpers

def _s32(x: int) -> int:
    return x - (1 << 32) if x & 0x80000000 else x


def _s64(x: int) -> int:
    return x - (1 << 64) if x & 0x8000000000000000 else x


def _f32(x: float) -> float:
    try:
        return struct.unpack("<f", struct.pack("<f", x))[0]
    except OverflowError:
        return math.copysign(math.inf, x)


def _f32_from_bits(b: int) -> float:
    return struct.unpack("<f", struct.pack("<I", b & M32))[0]


def _f64_from_bits(b: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", b & M64))[0]


def _f32_bits(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def _f64_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def _idiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _irem(a: int, b: int) -> int:
    return a - b * _idiv(a, b)


def _div_s(bits: int):
    lo = -(1 << (bits - 1))
    mask = (1 << bits) - 1
    sx = _s32 if bits == 32 else _s64

    def f(a, b):
        if b == 0:
            raise Trap("integer divide by zero")
        a, b = sx(a), sx(b)
        if a == lo and b == -1:
            raise Trap("integer overflow")
        return _idiv(a, b) & mask
    return f


def _rem_s(bits: int):
    mask = (1 << bits) - 1
    sx = _s32 if bits == 32 else _s64

    def f(a, b):
        if b == 0:
            raise Trap("integer divide by zero")
        return _irem(sx(a), sx(b)) & mask
    return f


def _div_u(a, b):
    if b == 0:
        raise Trap("integer divide by zero")
    return a // b


def _rem_u(a, b):
    if b == 0:
        raise Trap("integer divide by zero")
    return a % b


def _clz(bits):
    return lambda a: bits - a.bit_length()


def _ctz(bits):
    return lambda a: bits if a == 0 else (a & -a).bit_length() - 1


def _rotl(bits):
    mask = (1 << bits) - 1
    return lambda a, b: ((a << (b % bits)) | (a >> ((bits - b % bits) % bits))) & mask


def _rotr(bits):
    mask = (1 << bits) - 1
    return lambda a, b: ((a >> (b % bits)) | (a << ((bits - b % bits) % bits))) & mask


def _fdiv(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def _fmin(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == b == 0:
        return a if math.copysign(1, a) < 0 else b
    return min(a, b)


def _fmax(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == b == 0:
        return a if math.copysign(1, a) > 0 else b
    return max(a, b)


def _fround(fn):
    def f(a):
        if math.isnan(a) or math.isinf(a) or a == 0:
            return a
        r = float(fn(a))
        return math.copysign(r, a) if r == 0 else r
    return f


def _nearest(a):
    if math.isnan(a) or math.isinf(a) or a == 0:
        return a
    r = float(round(a))
    return math.copysign(r, a) if r == 0 else r


def _sqrt(a):
    if math.isnan(a) or a < 0:
        return math.nan
    return math.sqrt(a)


def _trunc(bits: int, signed: bool, sat: bool):
    lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
    mask = (1 << bits) - 1

    def f(a):
        if math.isnan(a):
            if sat:
                return 0
            raise Trap("invalid conversion to integer")
        if math.isinf(a):
            if sat:
                return (hi if a > 0 else lo) & mask
            raise Trap("integer overflow")
        v = int(a)
        if v < lo or v > hi:
            if sat:
                return (hi if v > hi else lo) & mask
            raise Trap("integer overflow")
        return v & mask
    return f


def _b(x: bool) -> int:
    return 1 if x else 0


def _build_numeric() -> dict[str, Callable]:
    t: dict[str, Callable] = {}
    for bits, p in ((32, "i32"), (64, "i64")):
        mask = (1 << bits) - 1
        sx = _s32 if bits == 32 else _s64
        t.update({
            f"{p}.eqz": lambda a: _b(a == 0),
            f"{p}.eq": lambda a, b: _b(a == b),
            f"{p}.ne": lambda a, b: _b(a != b),
            f"{p}.lt_s": lambda a, b, sx=sx: _b(sx(a) < sx(b)),
            f"{p}.lt_u": lambda a, b: _b(a < b),
            f"{p}.gt_s": lambda a, b, sx=sx: _b(sx(a) > sx(b)),
            f"{p}.gt_u": lambda a, b: _b(a > b),
            f"{p}.le_s": lambda a, b, sx=sx: _b(sx(a) <= sx(b)),
            f"{p}.le_u": lambda a, b: _b(a <= b),
            f"{p}.ge_s": lambda a, b, sx=sx: _b(sx(a) >= sx(b)),
            f"{p}.ge_u": lambda a, b: _b(a >= b),
            f"{p}.clz": _clz(bits),
            f"{p}.ctz": _ctz(bits),
            f"{p}.popcnt": lambda a: bin(a).count("1"),
            f"{p}.add": lambda a, b, mask=mask: (a + b) & mask,
            f"{p}.sub": lambda a, b, mask=mask: (a - b) & mask,
            f"{p}.mul": lambda a, b, mask=mask: (a * b) & mask,
            f"{p}.div_s": _div_s(bits),
            f"{p}.div_u": _div_u,
            f"{p}.rem_s": _rem_s(bits),
            f"{p}.rem_u": _rem_u,
            f"{p}.and": lambda a, b: a & b,
            f"{p}.or": lambda a, b: a | b,
            f"{p}.xor": lambda a, b: a ^ b,
            f"{p}.shl": lambda a, b, bits=bits, mask=mask: (a << (b % bits)) & mask,
            f"{p}.shr_s": lambda a, b, bits=bits, mask=mask, sx=sx: (sx(a) >> (b % bits)) & mask,
            f"{p}.shr_u": lambda a, b, bits=bits: a >> (b % bits),
            f"{p}.rotl": _rotl(bits),
            f"{p}.rotr": _rotr(bits),
        })
    for p, rnd in (("f32", _f32), ("f64", float)):
        t.update({
            f"{p}.eq": lambda a, b: _b(a == b),
            f"{p}.ne": lambda a, b: _b(a != b),
            f"{p}.lt": lambda a, b: _b(a < b),
            f"{p}.gt": lambda a, b: _b(a > b),
            f"{p}.le": lambda a, b: _b(a <= b),
            f"{p}.ge": lambda a, b: _b(a >= b),
            f"{p}.abs": lambda a: abs(a),
            f"{p}.neg": lambda a: -a,
            f"{p}.ceil": _fround(math.ceil),
            f"{p}.floor": _fround(math.floor),
            f"{p}.trunc": _fround(math.trunc),
            f"{p}.nearest": _nearest,
            f"{p}.sqrt": lambda a, rnd=rnd: rnd(_sqrt(a)),
            f"{p}.add": lambda a, b, rnd=rnd: rnd(a + b),
            f"{p}.sub": lambda a, b, rnd=rnd: rnd(a - b),
            f"{p}.mul": lambda a, b, rnd=rnd: rnd(a * b),
            f"{p}.div": lambda a, b, rnd=rnd: rnd(_fdiv(a, b)),
            f"{p}.min": _fmin,
            f"{p}.max": _fmax,
            f"{p}.copysign": lambda a, b: math.copysign(a, b),
        })
    t.update({
        "i32.wrap_i64": lambda a: a & M32,
        "i64.extend_i32_s": lambda a: _s32(a) & M64,
        "i64.extend_i32_u": lambda a: a,
        "i32.extend8_s": lambda a: (((a & 0xFF) ^ 0x80) - 0x80) & M32,
        "i32.extend16_s": lambda a: (((a & 0xFFFF) ^ 0x8000) - 0x8000) & M32,
        "i64.extend8_s": lambda a: (((a & 0xFF) ^ 0x80) - 0x80) & M64,
        "i64.extend16_s": lambda a: (((a & 0xFFFF) ^ 0x8000) - 0x8000) & M64,
        "i64.extend32_s": lambda a: _s32(a & M32) & M64,
        "f32.convert_i32_s": lambda a: _f32(float(_s32(a))),
        "f32.convert_i32_u": lambda a: _f32(float(a)),
        "f32.convert_i64_s": lambda a: _f32(float(_s64(a))),
        "f32.convert_i64_u": lambda a: _f32(float(a)),
        "f64.convert_i32_s": lambda a: float(_s32(a)),
        "f64.convert_i32_u": lambda a: float(a),
        "f64.convert_i64_s": lambda a: float(_s64(a)),
        "f64.convert_i64_u": lambda a: float(a),
        "f32.demote_f64": _f32,
        "f64.promote_f32": lambda a: a,
        "i32.reinterpret_f32": _f32_bits,
        "i64.reinterpret_f64": _f64_bits,
        "f32.reinterpret_i32": _f32_from_bits,
        "f64.reinterpret_i64": _f64_from_bits,
    })
    for bits, p in ((32, "i32"), (64, "i64")):
        for fp in ("f32", "f64"):
            for sign, signed in (("s", True), ("u", False)):
                t[f"{p}.trunc_{fp}_{sign}"] = _trunc(bits, signed, False)
                t[f"{p}.trunc_sat_{fp}_{sign}"] = _trunc(bits, signed, True)
    return t


NUMERIC = _build_numeric()
_UNARY_NUMERIC = {op for op, fn in NUMERIC.items() if fn.__code__.co_argcount
                  - len(fn.__defaults__ or ()) == 1}

_LOAD_DECODE = {
    "i32.load": lambda b: int.from_bytes(b, "little"),
    "i64.load": lambda b: int.from_bytes(b, "little"),
    "f32.load": lambda b: struct.unpack("<f", b)[0],
    "f64.load": lambda b: struct.unpack("<d", b)[0],
    "i32.load8_s": lambda b: (b[0] ^ 0x80) - 0x80 & M32,
    "i32.load8_u": lambda b: b[0],
    "i32.load16_s": lambda b: (int.from_bytes(b, "little") ^ 0x8000) - 0x8000 & M32,
    "i32.load16_u": lambda b: int.from_bytes(b, "little"),
    "i64.load8_s": lambda b: (b[0] ^ 0x80) - 0x80 & M64,
    "i64.load8_u": lambda b: b[0],
    "i64.load16_s": lambda b: (int.from_bytes(b, "little") ^ 0x8000) - 0x8000 & M64,
    "i64.load16_u": lambda b: int.from_bytes(b, "little"),
    "i64.load32_s": lambda b: (int.from_bytes(b, "little") ^ 0x80000000) - 0x80000000 & M64,
    "i64.load32_u": lambda b: int.from_bytes(b, "little"),
}


def _store_encode(op: str, v) -> bytes:
    width = STORE_WIDTH[op]
    if op == "f32.store":
        return struct.pack("<f", v)
    if op == "f64.store":
        return struct.pack("<d", v)
    return (v & ((1 << (8 * width)) - 1)).to_bytes(width, "little")


# ------------------------------------------------------------ WASI stubs

class HostContext:
    """What a host function sees: memory access that keeps the trace honest."""

    def __init__(self, machine: "_Machine"):
        self._m = machine

    @property
    def memory(self) -> bytearray:
        return self._m.mem

    def read(self, addr: int, n: int) -> bytes:
        return self._m.read(addr, n)

    def write(self, addr: int, data: bytes) -> None:
        self._m.write(addr, data, -1, -1)

    def u32(self, addr: int) -> int:
        return int.from_bytes(self.read(addr, 4), "little")

    def put_u32(self, addr: int, v: int) -> None:
        self.write(addr, (v & M32).to_bytes(4, "little"))

    def put_u64(self, addr: int, v: int) -> None:
        self.write(addr, (v & M64).to_bytes(8, "little"))

    def emit(self, fd: int, data: bytes) -> None:
        self._m.out[fd] = self._m.out.get(fd, b"") + data

    @property
    def rng(self) -> random.Random:
        return self._m.rng


EBADF = 8
ESPIPE = 70


def _fd_write(ctx: HostContext, fd, iovs, n, nwritten):
    if fd not in (1, 2):
        return EBADF
    total = 0
    for i in range(n):
        ptr = ctx.u32(iovs + 8 * i)
        ln = ctx.u32(iovs + 8 * i + 4)
        ctx.emit(fd, ctx.read(ptr, ln))
        total += ln
    ctx.put_u32(nwritten, total)
    return 0


def _fd_read(ctx, fd, iovs, n, nread):
    if fd != 0:
        return EBADF
    ctx.put_u32(nread, 0)
    return 0


def _fd_fdstat_get(ctx, fd, buf):
    if fd not in (0, 1, 2):
        return EBADF
    # character device, no flags, no seek/tell rights (so stdio line-buffers)
    ctx.write(buf, bytes([2, 0]) + b"\x00" * 6 + (0).to_bytes(8, "little") * 2)
    return 0


def _proc_exit(ctx, code):
    raise _Exit(code)


def _random_get(ctx, buf, n):
    ctx.write(buf, bytes(ctx.rng.getrandbits(8) for _ in range(n)))
    return 0


def _zero_sizes(ctx, a, b):
    ctx.put_u32(a, 0)
    ctx.put_u32(b, 0)
    return 0


def _clock_time_get(ctx, clock, precision, out):
    ctx.put_u64(out, 0)
    return 0


WASI_STUBS: dict[str, Callable] = {
    "fd_write": _fd_write,
    "fd_read": _fd_read,
    "fd_fdstat_get": _fd_fdstat_get,
    "fd_seek": lambda ctx, fd, off, whence, out: ESPIPE,
    "fd_close": lambda ctx, fd: 0,
    "proc_exit": _proc_exit,
    "random_get": _random_get,
    "args_sizes_get": _zero_sizes,
    "args_get": lambda ctx, a, b: 0,
    "environ_sizes_get": _zero_sizes,
    "environ_get": lambda ctx, a, b: 0,
    "clock_time_get": _clock_time_get,
    "fd_prestat_get": lambda ctx, fd, buf: EBADF,
    "fd_prestat_dir_name": lambda ctx, fd, buf, n: EBADF,
}


# ------------------------------------------------------------ machine

def _control_map(instrs: tuple[Instr, ...]) -> dict[int, tuple[int, int | None]]:
    """For each block opener: (matching end, else position or None)."""
    out: dict[int, tuple[int, int | None]] = {}
    stack: list[list] = []
    for pc, ins in enumerate(instrs):
        if ins.op in ("block", "loop", "if"):
            stack.append([pc, None])
        elif ins.op == "else":
            stack[-1][1] = pc
        elif ins.op == "end" and stack:
            start, els = stack.pop()
            out[start] = (pc, els)
            if els is not None:
                out[els] = (pc, None)
    return out


@dataclass
class _Func:
    index: int
    type: FuncType
    host: Callable | None = None
    instrs: tuple = ()
    local_types: tuple = ()
    ctrl: dict = field(default_factory=dict)


_ZERO = {"i32": 0, "i64": 0, "f32": 0.0, "f64": 0.0, "funcref": None, "externref": None}


class _Machine:
    def __init__(self, m: WasmModule, fuel: int, seed: int, sp_global: int | None,
                 host: dict | None):
        self.m = m
        self.fuel = fuel
        self.steps = 0
        self.rng = random.Random(seed)
        self.sp_global = sp_global
        self.stores: list[StoreEvent] = []
        self.activations: list[Activation] = []
        self.out: dict[int, bytes] = {}
        self.ctx = HostContext(self)
        self.cur_act: list[int] = []

        self.funcs: list[_Func] = []
        for i, imp in enumerate(m.imported_functions):
            fn = None
            if host and (imp.module, imp.name) in host:
                fn = host[(imp.module, imp.name)]
            elif imp.module in WASI_MODULES and imp.name in WASI_STUBS:
                fn = WASI_STUBS[imp.name]
            if fn is None:
                raise UnstubbedImport(imp.module, imp.name)
            self.funcs.append(_Func(i, m.types[imp.desc], host=fn))
        base = m.num_imported_functions
        for k, body in enumerate(m.functions):
            self.funcs.append(_Func(base + k, body.signature, None, body.instructions,
                                    body.local_types, _control_map(body.instructions)))
        for imp in m.imports:
            if imp.kind in ("global", "memory", "table"):
                if not (host and (imp.module, imp.name) in host):
                    raise UnstubbedImport(imp.module, imp.name)

        mems = m.all_memories()
        self.mem_max = MAX_PAGES
        if mems:
            lim = mems[0]
            if lim.max is not None:
                self.mem_max = min(lim.max, MAX_PAGES)
            self.mem = bytearray(lim.min * PAGE_SIZE)
            imported = [i for i in m.imports if i.kind == "memory"]
            if imported:
                self.mem = bytearray(host[(imported[0].module, imported[0].name)])
        else:
            self.mem = bytearray()

        self.globals: list = []
        for imp in m.imports:
            if imp.kind == "global":
                self.globals.append(host[(imp.module, imp.name)])
        for g in m.globals:
            self.globals.append(self._const_expr(g.init))

        self.tables: list[list] = []
        for imp in m.imports:
            if imp.kind == "table":
                self.tables.append(list(host[(imp.module, imp.name)]))
        for t in m.tables:
            self.tables.append([None] * t.limits.min)
        self.dropped_elem: set[int] = set()
        for k, seg in enumerate(m.elements):
            refs = self._elem_refs(seg)
            if seg.active:
                off = self._const_expr(seg.offset)
                table = self.tables[seg.table]
                if off + len(refs) > len(table):
                    raise Trap("out of bounds table access")
                table[off:off + len(refs)] = refs
                self.dropped_elem.add(k)
            elif seg.flags & 3 == 3:
                self.dropped_elem.add(k)
        self.dropped_data: set[int] = set()
        for k, seg in enumerate(m.data_segments):
            if seg.active:
                off = self._const_expr(seg.offset)
                if off + len(seg.data) > len(self.mem):
                    raise Trap("out of bounds memory access")
                self.mem[off:off + len(seg.data)] = seg.data
                self.dropped_data.add(k)
        self.initial = bytes(self.mem)

    def _elem_refs(self, seg) -> list:
        if seg.func_indices is not None:
            return list(seg.func_indices)
        return [self._const_expr(e) for e in seg.exprs]

    def _const_expr(self, expr):
        stack: list = []
        for ins in expr:
            op = ins.op
            if op in ("i32.const", "i64.const"):
                stack.append(ins.imm[0] & (M32 if op == "i32.const" else M64))
            elif op == "f32.const":
                stack.append(_f32_from_bits(ins.imm[0]))
            elif op == "f64.const":
                stack.append(_f64_from_bits(ins.imm[0]))
            elif op == "global.get":
                stack.append(self.globals[ins.imm[0]])
            elif op == "ref.null":
                stack.append(None)
            elif op == "ref.func":
                stack.append(ins.imm[0])
            elif op in ("i32.add", "i32.sub", "i32.mul", "i64.add", "i64.sub", "i64.mul"):
                b, a = stack.pop(), stack.pop()
                stack.append(NUMERIC[op](a, b))
            elif op == "end":
                break
        return stack[-1] if stack else None

    # -- memory --------------------------------------------------------------

    def read(self, addr: int, n: int) -> bytes:
        if addr < 0 or addr + n > len(self.mem):
            raise Trap("out of bounds memory access")
        return bytes(self.mem[addr:addr + n])

    def write(self, addr: int, data: bytes, func: int, pc: int) -> None:
        n = len(data)
        if addr < 0 or addr + n > len(self.mem):
            raise Trap("out of bounds memory access")
        self.mem[addr:addr + n] = data
        if n:
            act = self.cur_act[-1] if self.cur_act else -1
            self.stores.append(StoreEvent(addr, n, func, pc, act))

    # -- calls ---------------------------------------------------------------

    def invoke(self, fidx: int, args: list, depth: int) -> list:
        f = self.funcs[fidx]
        if f.host is not None:
            r = f.host(self.ctx, *args)
            if r is None:
                return []
            if isinstance(r, (list, tuple)):
                return list(r)
            return [r & M32 if f.type.results == ("i32",) else r]
        if depth > MAX_CALL_DEPTH:
            raise Trap("call stack exhausted")
        act_id = len(self.activations)
        sp = self.globals[self.sp_global] if self.sp_global is not None else None
        caller = self.cur_act[-1] if self.cur_act else None
        self.activations.append(Activation(act_id, fidx, caller, depth, sp))
        self.cur_act.append(act_id)
        try:
            return self._run(f, args, depth)
        finally:
            self.cur_act.pop()

    def _run(self, f: _Func, args: list, depth: int) -> list:  # noqa: C901
        nparams = len(f.type.params)
        locals_ = list(args) + [_ZERO[t] for t in f.local_types[nparams:]]
        instrs = f.instrs
        ctrl = f.ctrl
        m = self.m
        stack: list = []
        # label entries: (continuation pc, stack height, arity)
        labels: list[tuple[int, int, int]] = []
        mem = self.mem
        glob = self.globals
        n = len(instrs)
        pc = 0
        fidx = f.index
        while pc < n:
            self.fuel -= 1
            if self.fuel < 0:
                raise _FuelOut()
            ins = instrs[pc]
            op = ins.op
            if op == "local.get":
                stack.append(locals_[ins.imm[0]])
            elif op == "i32.const":
                stack.append(ins.imm[0] & M32)
            elif op == "local.set":
                locals_[ins.imm[0]] = stack.pop()
            elif op == "local.tee":
                locals_[ins.imm[0]] = stack[-1]
            elif op in LOAD_WIDTH:
                addr = stack.pop() + ins.imm[1]
                w = LOAD_WIDTH[op]
                if addr + w > len(mem):
                    raise Trap("out of bounds memory access")
                stack.append(_LOAD_DECODE[op](bytes(mem[addr:addr + w])))
            elif op in STORE_WIDTH:
                v = stack.pop()
                addr = stack.pop() + ins.imm[1]
                self.write(addr, _store_encode(op, v), fidx, pc)
            elif op in NUMERIC:
                fn = NUMERIC[op]
                if op in _UNARY_NUMERIC:
                    stack.append(fn(stack.pop()))
                else:
                    b = stack.pop()
                    stack.append(fn(stack.pop(), b))
            elif op == "global.get":
                stack.append(glob[ins.imm[0]])
            elif op == "global.set":
                glob[ins.imm[0]] = stack.pop()
            elif op == "block" or op == "loop":
                np_, nr = _arity(m, ins.imm[0])
                end, _ = ctrl[pc]
                if op == "block":
                    labels.append((end + 1, len(stack) - np_, nr))
                else:
                    labels.append((pc, len(stack) - np_, np_))
            elif op == "if":
                np_, nr = _arity(m, ins.imm[0])
                end, els = ctrl[pc]
                cond = stack.pop()
                if cond:
                    labels.append((end + 1, len(stack) - np_, nr))
                elif els is not None:
                    labels.append((end + 1, len(stack) - np_, nr))
                    pc = els
                else:
                    pc = end + 1
                    continue
            elif op == "else":
                pc = ctrl[pc][0]
                continue
            elif op == "end":
                if labels:
                    labels.pop()
                else:
                    break
            elif op == "br" or op == "br_if" or op == "br_table":
                if op == "br_if":
                    if not stack.pop():
                        pc += 1
                        continue
                    depth_ = ins.imm[0]
                elif op == "br_table":
                    i = stack.pop()
                    targets, default = ins.imm
                    depth_ = targets[i] if i < len(targets) else default
                else:
                    depth_ = ins.imm[0]
                if depth_ >= len(labels):
                    break  # branch to the function body label is a return
                cont, height, arity = labels[-1 - depth_]
                if arity:
                    vals = stack[-arity:]
                    del stack[height:]
                    stack.extend(vals)
                else:
                    del stack[height:]
                del labels[len(labels) - 1 - depth_:]
                pc = cont
                continue
            elif op == "return":
                break
            elif op == "call":
                callee = ins.imm[0]
                ft = self.funcs[callee].type
                k = len(ft.params)
                args_ = stack[len(stack) - k:] if k else []
                if k:
                    del stack[len(stack) - k:]
                stack.extend(self.invoke(callee, args_, depth + 1))
                mem = self.mem
            elif op == "call_indirect":
                type_idx, table_idx = ins.imm
                i = stack.pop()
                table = self.tables[table_idx]
                if i >= len(table):
                    raise Trap("undefined element")
                callee = table[i]
                if callee is None:
                    raise Trap("uninitialized element")
                want = m.types[type_idx]
                got = self.funcs[callee].type
                if (want.params, want.results) != (got.params, got.results):
                    raise Trap("indirect call type mismatch")
                k = len(want.params)
                args_ = stack[len(stack) - k:] if k else []
                if k:
                    del stack[len(stack) - k:]
                stack.extend(self.invoke(callee, args_, depth + 1))
                mem = self.mem
            elif op == "i64.const":
                stack.append(ins.imm[0] & M64)
            elif op == "f32.const":
                stack.append(_f32_from_bits(ins.imm[0]))
            elif op == "f64.const":
                stack.append(_f64_from_bits(ins.imm[0]))
            elif op == "drop":
                stack.pop()
            elif op == "select" or op == "select_t":
                c = stack.pop()
                b = stack.pop()
                a = stack.pop()
                stack.append(a if c else b)
            elif op == "unreachable":
                raise Trap("unreachable")
            elif op == "nop":
                pass
            elif op == "memory.size":
                stack.append(len(mem) // PAGE_SIZE)
            elif op == "memory.grow":
                delta = stack.pop()
                old = len(mem) // PAGE_SIZE
                if old + delta > self.mem_max:
                    stack.append(M32)
                else:
                    mem.extend(bytes(delta * PAGE_SIZE))
                    stack.append(old)
            elif op == "memory.fill":
                cnt = stack.pop()
                val = stack.pop()
                dst = stack.pop()
                self.write(dst, bytes([val & 0xFF]) * cnt, fidx, pc)
            elif op == "memory.copy":
                cnt = stack.pop()
                src = stack.pop()
                dst = stack.pop()
                data = self.read(src, cnt)
                self.write(dst, data, fidx, pc)
            elif op == "memory.init":
                cnt = stack.pop()
                src = stack.pop()
                dst = stack.pop()
                seg_idx = ins.imm[0]
                data = b"" if seg_idx in self.dropped_data else m.data_segments[seg_idx].data
                if src + cnt > len(data):
                    raise Trap("out of bounds memory access")
                self.write(dst, data[src:src + cnt], fidx, pc)
            elif op == "data.drop":
                self.dropped_data.add(ins.imm[0])
            elif op == "ref.null":
                stack.append(None)
            elif op == "ref.is_null":
                stack.append(_b(stack.pop() is None))
            elif op == "ref.func":
                stack.append(ins.imm[0])
            elif op == "table.get":
                i = stack.pop()
                t = self.tables[ins.imm[0]]
                if i >= len(t):
                    raise Trap("out of bounds table access")
                stack.append(t[i])
            elif op == "table.set":
                v = stack.pop()
                i = stack.pop()
                t = self.tables[ins.imm[0]]
                if i >= len(t):
                    raise Trap("out of bounds table access")
                t[i] = v
            elif op == "table.size":
                stack.append(len(self.tables[ins.imm[0]]))
            else:
                raise Trap(f"unsupported instruction {op}")
            pc += 1
        nres = len(f.type.results)
        return stack[len(stack) - nres:] if nres else []


def _arity(m: WasmModule, bt) -> tuple[int, int]:
    if bt is None:
        return 0, 0
    if isinstance(bt, str):
        return 0, 1
    ft = m.types[bt]
    return len(ft.params), len(ft.results)


def _convert_arg(t: str, v):
    if t == "i32":
        return v & M32
    if t == "i64":
        return v & M64
    if t == "f32":
        return _f32(float(v))
    return float(v)


def interpret(m: WasmModule, entry: str, fuel: int = 50_000_000, args=(),
              seed: int = 0, sp_global: int | None = None,
              host: dict | None = None) -> ExecutionTrace:
    """Run export ``entry`` and return what happened.

    ``host`` maps ``(module, name)`` to Python callables (first argument a
    :class:`HostContext`) and overrides the built-in WASI stubs.  ``seed``
    drives ``random_get``.  When ``sp_global`` is given every activation
    records that global's value at entry.
    """
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    exp = m.export(entry)
    if exp is None or exp.kind != "func":
        raise MissingExport(f"no exported function named {entry!r}")
    machine = _Machine(m, fuel, seed, sp_global, host)
    ft = machine.funcs[exp.index].type
    call_args = [_convert_arg(t, a) for t, a in zip(ft.params, args)]
    if len(call_args) != len(ft.params):
        raise ValueError(f"{entry} takes {len(ft.params)} arguments")
    trace = ExecutionTrace(status=COMPLETED, initial_memory=machine.initial)
    try:
        res = machine.invoke(exp.index, call_args, 0)
        trace.results = tuple(_signed_result(t, v) for t, v in zip(ft.results, res))
    except Trap as t:
        trace.status = TRAPPED
        trace.reason = t.reason
    except _FuelOut:
        trace.status = FUEL_EXHAUSTED
    except _Exit as e:
        trace.exit_code = e.code
    except RecursionError:
        trace.status = TRAPPED
        trace.reason = "call stack exhausted"
    trace.memory = bytes(machine.mem)
    trace.stores = machine.stores
    trace.activations = machine.activations
    trace.stdout = machine.out.get(1, b"")
    trace.stderr = machine.out.get(2, b"")
    trace.steps = fuel - max(machine.fuel, 0)
    return trace


def _signed_result(t: str, v):
    if t == "i32":
        return _s32(v)
    if t == "i64":
        return _s64(v)
    return v
