"""Decoding and encoding of the wasm core binary format (version 1)."""

from __future__ import annotations

import struct

from . import opcodes as ops
from .errors import EncodingOverflow, MalformedBinary, UnsupportedFeature
from .leb128 import read_s, read_u, write_s, write_u
from .types import (
    EXTERNAL_KIND_BYTES,
    EXTERNAL_KINDS,
    VALTYPE_BYTES,
    VALTYPES,
    CustomSection,
    DataSegment,
    ElementSegment,
    Export,
    FunctionBody,
    FuncType,
    Global,
    GlobalType,
    Import,
    Instr,
    Limits,
    SectionInfo,
    TableType,
    WasmModule,
)

MAGIC = b"\x00asm"
VERSION = b"\x01\x00\x00\x00"
HEADER = MAGIC + VERSION

SECTION_NAMES = {
    0: "custom", 1: "type", 2: "import", 3: "function", 4: "table", 5: "memory",
    6: "global", 7: "export", 8: "start", 9: "element", 10: "code", 11: "data",
    12: "datacount",
}
# canonical ordering of known sections (datacount sits between element and code)
_ORDER = {1: 1, 2: 2, 3: 3, 4: 4, 5: 5, 6: 6, 7: 7, 8: 8, 9: 9, 12: 10, 10: 11, 11: 12}


class _Reader:
    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise MalformedBinary("unexpected end of data", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def u32(self) -> int:
        value, self.pos, _ = read_u(self.data, self.pos, 32)
        return value

    def u32w(self) -> tuple[int, int]:
        value, self.pos, width = read_u(self.data, self.pos, 32)
        return value, width

    def s32(self) -> int:
        value, self.pos, _ = read_s(self.data, self.pos, 32)
        return value

    def s33(self) -> int:
        value, self.pos, _ = read_s(self.data, self.pos, 33)
        return value

    def s64(self) -> int:
        value, self.pos, _ = read_s(self.data, self.pos, 64)
        return value

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MalformedBinary(f"need {n} bytes, section ends early", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def name(self) -> str:
        n = self.u32()
        at = self.pos
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedBinary("invalid UTF-8 in name", at) from exc

    def valtype(self) -> str:
        at = self.pos
        b = self.byte()
        try:
            return VALTYPES[b]
        except KeyError:
            raise MalformedBinary(f"unknown value type {b:#x}", at) from None

    def limits(self) -> Limits:
        at = self.pos
        flag = self.byte()
        if flag == 0:
            return Limits(self.u32())
        if flag == 1:
            return Limits(self.u32(), self.u32())
        if flag in (2, 3):
            raise UnsupportedFeature("shared memory (threads proposal)", at)
        if flag >= 4:
            raise UnsupportedFeature("memory64", at)
        raise MalformedBinary(f"bad limits flag {flag}", at)


# ---------------------------------------------------------------- instructions

def _read_instr(r: _Reader) -> Instr:
    start = r.pos
    b = r.byte()
    if b in ops.UNSUPPORTED_PREFIXES:
        raise UnsupportedFeature(ops.UNSUPPORTED_PREFIXES[b], start)
    if b in ops.UNSUPPORTED_OPCODES:
        raise UnsupportedFeature(ops.UNSUPPORTED_OPCODES[b], start)
    if b == 0xFD:
        sub = r.u32()
        kind = ops.simd_immediate_kind(sub)
        imm_start = r.pos
        if kind in ("memarg", "memarg_lane"):
            _read_memarg(r)
            if kind == "memarg_lane":
                r.byte()
        elif kind == "bytes16":
            r.take(16)
        elif kind == "lane":
            r.byte()
        return Instr("simd", (sub, r.data[imm_start:r.pos]), r.data[start:r.pos])
    key: int | tuple[int, int] = b
    if b == 0xFC:
        key = (0xFC, r.u32())
    try:
        name, kind = ops.OPCODES[key]
    except KeyError:
        raise MalformedBinary(f"unknown opcode {key!r}", start) from None

    if kind == ops.NONE:
        imm: tuple = ()
    elif kind in (ops.LOCAL, ops.GLOBAL, ops.FUNC, ops.LABEL, ops.TABLE, ops.DATA, ops.ELEM):
        imm = (r.u32(),)
    elif kind == ops.I32:
        imm = (r.s32(),)
    elif kind == ops.MEMARG:
        imm = _read_memarg(r)
    elif kind == ops.BLOCKTYPE:
        peek = r.data[r.pos] if r.pos < r.end else None
        if peek == 0x40:
            r.pos += 1
            imm = (None,)
        elif peek in VALTYPES:
            r.pos += 1
            imm = (VALTYPES[peek],)
        else:
            idx = r.s33()
            if idx < 0:
                raise MalformedBinary("negative block type index", start)
            imm = (idx,)
    elif kind == ops.I64:
        imm = (r.s64(),)
    elif kind == ops.BR_TABLE:
        n = r.u32()
        labels = tuple(r.u32() for _ in range(n))
        imm = (labels, r.u32())
    elif kind == ops.CALL_INDIRECT:
        imm = (r.u32(), r.u32())
    elif kind == ops.MEMIDX:
        imm = (r.byte(),)
    elif kind == ops.F32:
        imm = (struct.unpack("<I", r.take(4))[0],)
    elif kind == ops.F64:
        imm = (struct.unpack("<Q", r.take(8))[0],)
    elif kind == ops.SELECT_T:
        n = r.u32()
        imm = (tuple(r.valtype() for _ in range(n)),)
    elif kind == ops.HEAPTYPE:
        imm = (r.byte(),)
    elif kind in (ops.DATA_MEM, ops.ELEM_TABLE):
        imm = (r.u32(), r.u32() if kind == ops.ELEM_TABLE else r.byte())
    elif kind == ops.MEM_MEM:
        imm = (r.byte(), r.byte())
    elif kind == ops.TABLE_TABLE:
        imm = (r.u32(), r.u32())
    else:  # pragma: no cover - table and reader out of sync
        raise AssertionError(kind)
    return Instr(name, imm, r.data[start:r.pos])


def _read_memarg(r: _Reader) -> tuple[int, int]:
    at = r.pos
    align = r.u32()
    if align & 0x40:
        raise UnsupportedFeature("multi-memory memarg", at)
    if align >= 32:
        raise MalformedBinary(f"alignment exponent {align} too large", at)
    return align, r.u32()


def _read_expr(r: _Reader) -> tuple[Instr, ...]:
    """Constant expression terminated by ``end`` (globals, segment offsets)."""
    out = []
    depth = 0
    while True:
        ins = _read_instr(r)
        out.append(ins)
        if ins.op in ops.BLOCK_OPENERS:
            depth += 1
        elif ins.op == "end":
            if depth == 0:
                return tuple(out)
            depth -= 1


def _read_body_instrs(r: _Reader) -> tuple[Instr, ...]:
    out = []
    depth = 0
    kinds: list[str] = []
    while r.pos < r.end:
        at = r.pos
        ins = _read_instr(r)
        out.append(ins)
        op = ins.op
        if op in ops.BLOCK_OPENERS:
            kinds.append(op)
            depth += 1
        elif op == "else":
            if not kinds or kinds[-1] != "if":
                raise MalformedBinary("else outside of if", at)
            kinds[-1] = "else"
        elif op == "end":
            if depth == 0:
                if r.pos != r.end:
                    raise MalformedBinary("trailing bytes after function end", r.pos)
                return tuple(out)
            kinds.pop()
            depth -= 1
    raise MalformedBinary("function body not terminated by end", r.pos)


# ---------------------------------------------------------------- decoding

def decode_module(data: bytes) -> WasmModule:
    """Decode a wasm binary.

    Raises ``MalformedBinary`` (with byte offset) for structural damage and
    ``UnsupportedFeature`` for proposals that cannot be carried through.
    """
    data = bytes(data)
    if len(data) < 8 or data[:4] != MAGIC:
        raise MalformedBinary("missing \\0asm magic", 0)
    if data[4:8] != VERSION:
        raise MalformedBinary(f"unsupported version {data[4:8].hex()}", 4)

    m = WasmModule()
    func_type_indices: list[int] = []
    func_type_widths: list[int] = []
    pos = 8
    last_order = 0
    seen: set[int] = set()
    while pos < len(data):
        sec_start = pos
        sid = data[pos]
        size, body_start, size_width = read_u(data, pos + 1)
        end = body_start + size
        if end > len(data):
            raise MalformedBinary(f"section {sid} runs past end of file", sec_start)
        if sid not in SECTION_NAMES:
            if sid == 13:
                raise UnsupportedFeature("exception handling (tag section)", sec_start)
            raise MalformedBinary(f"unknown section id {sid}", sec_start)
        if sid != 0:
            if sid in seen:
                raise MalformedBinary(f"duplicate {SECTION_NAMES[sid]} section", sec_start)
            if _ORDER[sid] < last_order:
                raise MalformedBinary(f"{SECTION_NAMES[sid]} section out of order", sec_start)
            seen.add(sid)
            last_order = _ORDER[sid]
        info = SectionInfo(sid, size_width=size_width, raw_payload=data[body_start:end])
        r = _Reader(data, body_start, end)

        if sid == 0:
            name = r.name()
            info.custom_index = len(m.custom_sections)
            m.custom_sections.append(
                CustomSection(name, data[r.pos:end], data[body_start:end]))
            r.pos = end
        elif sid == 8:
            m.start = r.u32()
        elif sid == 12:
            m.data_count = r.u32()
        elif sid == 10:
            count, info.count_width = r.u32w()
            if count != len(func_type_indices):
                raise MalformedBinary(
                    f"code section has {count} bodies but function section "
                    f"declares {len(func_type_indices)}", body_start)
            for i in range(count):
                m.functions.append(_read_body(r, m, func_type_indices[i]))
        else:
            count, info.count_width = r.u32w()
            for _ in range(count):
                at = r.pos
                if sid == 1:
                    m.types.append(_read_functype(r, at))
                elif sid == 2:
                    m.imports.append(_read_import(r, at))
                elif sid == 3:
                    idx, width = r.u32w()
                    func_type_indices.append(idx)
                    func_type_widths.append(width)
                elif sid == 4:
                    m.tables.append(_read_tabletype(r))
                elif sid == 5:
                    m.memories.append(r.limits())
                elif sid == 6:
                    gt = GlobalType(r.valtype(), _read_mut(r))
                    m.globals.append(Global(gt, _read_expr(r), data[at:r.pos]))
                elif sid == 7:
                    name = r.name()
                    kind_at = r.pos
                    kb = r.byte()
                    if kb not in EXTERNAL_KINDS:
                        raise MalformedBinary(f"bad export kind {kb}", kind_at)
                    m.exports.append(Export(name, EXTERNAL_KINDS[kb], r.u32(), data[at:r.pos]))
                elif sid == 9:
                    m.elements.append(_read_element(r, at))
                elif sid == 11:
                    m.data_segments.append(_read_data(r, at))
        if r.pos != end:
            raise MalformedBinary(
                f"{SECTION_NAMES[sid]} section size mismatch", r.pos)
        if sid == 3 and func_type_indices and any(t >= len(m.types) for t in func_type_indices):
            raise MalformedBinary("function declares unknown type index", body_start)
        info.snapshot = _snapshot(m, sid)
        m.layout.append(info)
        pos = end

    if func_type_indices and 10 not in seen:
        raise MalformedBinary("function section without code section", len(data))
    _validate_indices(m)
    return m


def _read_mut(r: _Reader) -> bool:
    at = r.pos
    b = r.byte()
    if b not in (0, 1):
        raise MalformedBinary(f"bad mutability flag {b}", at)
    return bool(b)


def _read_functype(r: _Reader, at: int) -> FuncType:
    form = r.byte()
    if form != 0x60:
        if form in (0x5E, 0x5F, 0x4E, 0x50, 0x4F):
            raise UnsupportedFeature("gc proposal type definitions", at)
        raise MalformedBinary(f"bad function type form {form:#x}", at)
    params = tuple(r.valtype() for _ in range(r.u32()))
    results = tuple(r.valtype() for _ in range(r.u32()))
    return FuncType(params, results, r.data[at:r.pos])


def _read_tabletype(r: _Reader) -> TableType:
    return TableType(r.valtype(), r.limits())


def _read_import(r: _Reader, at: int) -> Import:
    module = r.name()
    name = r.name()
    kind_at = r.pos
    kb = r.byte()
    if kb == 0:
        desc = r.u32()
    elif kb == 1:
        desc = _read_tabletype(r)
    elif kb == 2:
        desc = r.limits()
    elif kb == 3:
        desc = GlobalType(r.valtype(), _read_mut(r))
    elif kb == 4:
        raise UnsupportedFeature("exception handling (tag import)", kind_at)
    else:
        raise MalformedBinary(f"bad import kind {kb}", kind_at)
    return Import(module, name, EXTERNAL_KINDS[kb], desc, r.data[at:r.pos])


def _read_element(r: _Reader, at: int) -> ElementSegment:
    flags = r.u32()
    if flags > 7:
        raise MalformedBinary(f"bad element segment flags {flags}", at)
    table = 0
    offset = None
    if flags & 2 and not flags & 1:
        table = r.u32()
    if not flags & 1:
        offset = _read_expr(r)
    funcs = exprs = None
    if flags & 3:
        r.byte()  # elemkind (0x00) or reftype
    if flags & 4:
        exprs = tuple(_read_expr(r) for _ in range(r.u32()))
    else:
        funcs = tuple(r.u32() for _ in range(r.u32()))
    return ElementSegment(flags, table, offset, funcs, exprs, r.data[at:r.pos])


def _read_data(r: _Reader, at: int) -> DataSegment:
    flags = r.u32()
    memory = 0
    offset = None
    if flags == 2:
        memory = r.u32()
    elif flags not in (0, 1):
        raise MalformedBinary(f"bad data segment flags {flags}", at)
    if flags != 1:
        offset = _read_expr(r)
    payload = r.take(r.u32())
    return DataSegment(flags, memory, offset, payload, r.data[at:r.pos])


def _read_body(r: _Reader, m: WasmModule, type_index: int) -> FunctionBody:
    body_at = r.pos
    size, _, size_width = read_u(r.data, r.pos)
    r.pos += size_width
    end = r.pos + size
    if end > r.end:
        raise MalformedBinary("function body runs past code section", body_at)
    br = _Reader(r.data, r.pos, end)
    locals_start = br.pos
    groups = []
    total = 0
    for _ in range(br.u32()):
        n = br.u32()
        total += n
        if total > 50000:
            raise MalformedBinary("too many locals", br.pos)
        groups.append((n, br.valtype()))
    locals_raw = r.data[locals_start:br.pos]
    instrs = _read_body_instrs(br)
    r.pos = end
    return FunctionBody(type_index, m.types[type_index], tuple(groups), instrs,
                        locals_raw=locals_raw, size_width=size_width)


def _snapshot(m: WasmModule, sid: int) -> tuple | None:
    return {
        1: lambda: tuple(m.types),
        2: lambda: tuple(m.imports),
        3: lambda: tuple(f.type_index for f in m.functions),
        4: lambda: tuple(m.tables),
        5: lambda: tuple(m.memories),
        6: lambda: tuple(m.globals),
        7: lambda: tuple(m.exports),
        8: lambda: (m.start,),
        9: lambda: tuple(m.elements),
        11: lambda: tuple(m.data_segments),
        12: lambda: (m.data_count,),
    }.get(sid, lambda: None)()


# ---------------------------------------------------------------- validation

def _validate_indices(m: WasmModule) -> None:
    n_funcs = m.num_functions
    n_globals = len(m.global_types())
    n_mems = len(m.all_memories())
    n_tables = sum(1 for i in m.imports if i.kind == "table") + len(m.tables)
    n_types = len(m.types)
    limits = {"func": n_funcs, "global": n_globals, "memory": n_mems, "table": n_tables}
    for imp in m.imports:
        if imp.kind == "func" and imp.desc >= n_types:
            raise MalformedBinary(f"import {imp.module}.{imp.name} uses unknown type {imp.desc}")
    for e in m.exports:
        if e.index >= limits[e.kind]:
            raise MalformedBinary(f"export {e.name!r} refers to missing {e.kind} {e.index}")
    if m.start is not None and m.start >= n_funcs:
        raise MalformedBinary(f"start function {m.start} out of range")
    for seg in m.elements:
        for f in seg.func_indices or ():
            if f >= n_funcs:
                raise MalformedBinary(f"element segment refers to missing function {f}")
    for fi, body in enumerate(m.functions):
        n_locals = len(body.signature.params) + sum(c for c, _ in body.local_groups)
        where = f"function {fi + m.num_imported_functions}"
        for pc, ins in enumerate(body.instructions):
            op = ins.op
            if op in ("local.get", "local.set", "local.tee"):
                bad = ins.imm[0] >= n_locals
            elif op in ("global.get", "global.set"):
                bad = ins.imm[0] >= n_globals
            elif op in ("call", "return_call", "ref.func"):
                bad = ins.imm[0] >= n_funcs
            elif op in ("call_indirect", "return_call_indirect"):
                bad = ins.imm[0] >= n_types or ins.imm[1] >= n_tables
            elif op in _MEM_OPS:
                bad = n_mems == 0
            else:
                continue
            if bad:
                raise MalformedBinary(f"{where}, instruction {pc} ({ins}): index out of range")


_MEM_OPS = frozenset(
    [name for name, kind in ops.OPCODES.values() if kind == ops.MEMARG]
    + ["memory.size", "memory.grow", "memory.fill", "memory.copy", "memory.init"])


# ---------------------------------------------------------------- encoding

def encode_instr(ins: Instr) -> bytes:
    if ins.raw is not None:
        return ins.raw
    if ins.op == "simd":
        sub, imm_bytes = ins.imm
        return b"\xfd" + write_u(sub) + imm_bytes
    try:
        key = ops.BY_NAME[ins.op]
    except KeyError:
        raise EncodingOverflow(f"unknown instruction {ins.op!r}") from None
    kind = ops.OPCODES[key][1]
    out = bytearray()
    if isinstance(key, tuple):
        out.append(key[0])
        out += write_u(key[1])
    else:
        out.append(key)
    imm = ins.imm
    if kind == ops.NONE:
        pass
    elif kind in (ops.LOCAL, ops.GLOBAL, ops.FUNC, ops.LABEL, ops.TABLE, ops.DATA, ops.ELEM):
        out += write_u(imm[0])
    elif kind == ops.I32:
        out += write_s(imm[0], bits=32)
    elif kind == ops.I64:
        out += write_s(imm[0], bits=64)
    elif kind == ops.MEMARG:
        out += write_u(imm[0]) + write_u(imm[1])
    elif kind == ops.BLOCKTYPE:
        bt = imm[0]
        if bt is None:
            out.append(0x40)
        elif isinstance(bt, str):
            out.append(VALTYPE_BYTES[bt])
        else:
            out += write_s(bt, bits=33)
    elif kind == ops.BR_TABLE:
        labels, default = imm
        out += write_u(len(labels))
        for label in labels:
            out += write_u(label)
        out += write_u(default)
    elif kind in (ops.CALL_INDIRECT, ops.TABLE_TABLE, ops.ELEM_TABLE):
        out += write_u(imm[0]) + write_u(imm[1])
    elif kind == ops.MEMIDX or kind == ops.HEAPTYPE:
        out.append(imm[0])
    elif kind == ops.F32:
        out += struct.pack("<I", imm[0])
    elif kind == ops.F64:
        out += struct.pack("<Q", imm[0])
    elif kind == ops.SELECT_T:
        out += write_u(len(imm[0])) + bytes(VALTYPE_BYTES[t] for t in imm[0])
    elif kind == ops.DATA_MEM:
        out += write_u(imm[0])
        out.append(imm[1])
    elif kind == ops.MEM_MEM:
        out += bytes(imm)
    else:  # pragma: no cover
        raise AssertionError(kind)
    return bytes(out)


def encode_instrs(instrs) -> bytes:
    return b"".join(encode_instr(i) for i in instrs)


def _name(s: str) -> bytes:
    b = s.encode("utf-8")
    return write_u(len(b)) + b


def _limits(lim: Limits) -> bytes:
    if lim.max is None:
        return b"\x00" + write_u(lim.min)
    return b"\x01" + write_u(lim.min) + write_u(lim.max)


def _encode_entry(sid: int, e) -> bytes:
    if getattr(e, "raw", None) is not None:
        return e.raw
    if sid == 1:
        return (b"\x60" + write_u(len(e.params)) + bytes(VALTYPE_BYTES[t] for t in e.params)
                + write_u(len(e.results)) + bytes(VALTYPE_BYTES[t] for t in e.results))
    if sid == 2:
        head = _name(e.module) + _name(e.name) + bytes([EXTERNAL_KIND_BYTES[e.kind]])
        if e.kind == "func":
            return head + write_u(e.desc)
        if e.kind == "table":
            return head + bytes([VALTYPE_BYTES[e.desc.reftype]]) + _limits(e.desc.limits)
        if e.kind == "memory":
            return head + _limits(e.desc)
        return head + bytes([VALTYPE_BYTES[e.desc.valtype], int(e.desc.mutable)])
    if sid == 4:
        return bytes([VALTYPE_BYTES[e.reftype]]) + _limits(e.limits)
    if sid == 5:
        return _limits(e)
    if sid == 6:
        return bytes([VALTYPE_BYTES[e.type.valtype], int(e.type.mutable)]) + encode_instrs(e.init)
    if sid == 7:
        return _name(e.name) + bytes([EXTERNAL_KIND_BYTES[e.kind]]) + write_u(e.index)
    if sid == 9:
        out = bytearray(write_u(e.flags))
        if e.flags & 2 and not e.flags & 1:
            out += write_u(e.table)
        if not e.flags & 1:
            out += encode_instrs(e.offset)
        if e.flags & 3:
            out.append(0x70 if e.flags & 4 else 0x00)
        if e.flags & 4:
            out += write_u(len(e.exprs))
            for expr in e.exprs:
                out += encode_instrs(expr)
        else:
            out += write_u(len(e.func_indices))
            for f in e.func_indices:
                out += write_u(f)
        return bytes(out)
    if sid == 11:
        out = bytearray(write_u(e.flags))
        if e.flags == 2:
            out += write_u(e.memory)
        if e.flags != 1:
            out += encode_instrs(e.offset)
        return bytes(out + write_u(len(e.data)) + e.data)
    raise AssertionError(sid)


def _encode_body(body: FunctionBody) -> bytes:
    if body.locals_raw is not None:
        locals_bytes = body.locals_raw
    else:
        locals_bytes = write_u(len(body.local_groups)) + b"".join(
            write_u(n) + bytes([VALTYPE_BYTES[t]]) for n, t in body.local_groups)
    payload = locals_bytes + encode_instrs(body.instructions)
    return _sized(payload, body.size_width)


def _sized(payload: bytes, width: int | None) -> bytes:
    n = len(payload)
    if width is not None and n >= 1 << (7 * width):
        width = None
    return write_u(n, width) + payload


def _vector(sid: int, entries, count_width: int | None) -> bytes:
    n = len(entries)
    if count_width is not None and n >= 1 << (7 * count_width):
        count_width = None
    return write_u(n, count_width) + b"".join(_encode_entry(sid, e) for e in entries)


def _section_payload(m: WasmModule, info: SectionInfo) -> bytes | None:
    sid = info.id
    if sid == 0:
        cs = m.custom_sections[info.custom_index]
        return cs.raw if cs.raw is not None else _name(cs.name) + cs.payload
    if sid == 10:
        if not m.functions:
            return None
        bodies = b"".join(_encode_body(f) for f in m.functions)
        n = len(m.functions)
        cw = info.count_width if info.count_width and n < 1 << (7 * info.count_width) else None
        return write_u(n, cw) + bodies
    snap = _snapshot(m, sid)
    if info.raw_payload is not None and info.snapshot is not None and _same(snap, info.snapshot):
        return info.raw_payload
    if sid == 1:
        return _vector(1, m.types, info.count_width) if m.types else None
    if sid == 2:
        return _vector(2, m.imports, info.count_width) if m.imports else None
    if sid == 3:
        if not m.functions:
            return None
        n = len(m.functions)
        cw = info.count_width if info.count_width and n < 1 << (7 * info.count_width) else None
        return write_u(n, cw) + b"".join(write_u(f.type_index) for f in m.functions)
    if sid == 4:
        return _vector(4, m.tables, info.count_width) if m.tables else None
    if sid == 5:
        return _vector(5, m.memories, info.count_width) if m.memories else None
    if sid == 6:
        return _vector(6, m.globals, info.count_width) if m.globals else None
    if sid == 7:
        return _vector(7, m.exports, info.count_width) if m.exports else None
    if sid == 8:
        return write_u(m.start) if m.start is not None else None
    if sid == 9:
        return _vector(9, m.elements, info.count_width) if m.elements else None
    if sid == 11:
        return _vector(11, m.data_segments, info.count_width) if m.data_segments else None
    if sid == 12:
        return write_u(m.data_count) if m.data_count is not None else None
    raise AssertionError(sid)


def _same(a: tuple | None, b: tuple) -> bool:
    if a is None or len(a) != len(b):
        return False
    return all(x is y or (type(x) is int and x == y) or (x is None and y is None)
               for x, y in zip(a, b))


def _default_layout(m: WasmModule) -> list[SectionInfo]:
    layout = [SectionInfo(sid) for sid in (1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 10, 11)]
    layout += [SectionInfo(0, custom_index=i) for i in range(len(m.custom_sections))]
    return layout


def encode_module(m: WasmModule) -> bytes:
    """Serialize ``m``; sections and entries that were not replaced keep
    their original bytes, so an unmodified module round-trips exactly."""
    layout = list(m.layout) if m.layout else _default_layout(m)
    present = {info.id for info in layout}
    # sections that were empty on input but have content now
    for sid in (1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 10, 11):
        if sid in present:
            continue
        probe = SectionInfo(sid)
        if _section_payload(m, probe) is not None:
            layout.append(probe)
    placed = {info.custom_index for info in layout if info.id == 0}
    for i in range(len(m.custom_sections)):
        if i not in placed:
            layout.append(SectionInfo(0, custom_index=i))
    layout = _stable_order(layout)

    out = bytearray(HEADER)
    for info in layout:
        payload = _section_payload(m, info)
        if payload is None:
            continue
        out.append(info.id)
        out += _sized(payload, info.size_width)
    return bytes(out)


def _stable_order(layout: list[SectionInfo]) -> list[SectionInfo]:
    """Keep the recorded order; splice newly added known sections into place."""
    result: list[SectionInfo] = []
    for info in layout:
        is_new = info.id != 0 and info.size_width is None and info.raw_payload is None
        if not is_new:
            result.append(info)
            continue
        for i, other in enumerate(result):
            if other.id != 0 and _ORDER[other.id] > _ORDER[info.id]:
                result.insert(i, info)
                break
        else:
            known = [i for i, other in enumerate(result) if other.id != 0]
            result.insert(known[-1] + 1 if known else len(result), info)
    return result
