"""In-memory representation of a decoded wasm module.

Every entry that came out of the decoder carries its original bytes in a
``raw`` field (excluded from equality).  Entries are frozen; rewriting
something means building a replacement, which starts with ``raw=None`` and is
therefore re-encoded canonically, while everything untouched is emitted
verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

VALTYPES = {0x7F: "i32", 0x7E: "i64", 0x7D: "f32", 0x7C: "f64", 0x7B: "v128",
            0x70: "funcref", 0x6F: "externref"}
VALTYPE_BYTES = {v: k for k, v in VALTYPES.items()}

EXTERNAL_KINDS = {0: "func", 1: "table", 2: "memory", 3: "global"}
EXTERNAL_KIND_BYTES = {v: k for k, v in EXTERNAL_KINDS.items()}

PAGE_SIZE = 65536


@dataclass(frozen=True, slots=True)
class Instr:
    op: str
    imm: tuple = ()
    raw: bytes | None = field(default=None, compare=False, repr=False)

    def __str__(self) -> str:
        if not self.imm:
            return self.op
        if self.op in _MEMARG_OPS:
            align, offset = self.imm
            return f"{self.op} offset={offset}" if offset else self.op
        return f"{self.op} " + " ".join(str(x) for x in self.imm)

    @property
    def is_store(self) -> bool:
        return self.op in _STORE_OPS

    @property
    def memarg_offset(self) -> int:
        return self.imm[1]


def i32_const(value: int) -> Instr:
    value = (value + (1 << 31)) % (1 << 32) - (1 << 31)
    return Instr("i32.const", (value,))


def i64_const(value: int) -> Instr:
    value = (value + (1 << 63)) % (1 << 64) - (1 << 63)
    return Instr("i64.const", (value,))


@dataclass(frozen=True, slots=True)
class FuncType:
    params: tuple[str, ...]
    results: tuple[str, ...]
    raw: bytes | None = field(default=None, compare=False, repr=False)

    def __str__(self) -> str:
        return f"({', '.join(self.params)}) -> ({', '.join(self.results)})"


@dataclass(frozen=True, slots=True)
class Limits:
    min: int
    max: int | None = None


@dataclass(frozen=True, slots=True)
class TableType:
    reftype: str
    limits: Limits


@dataclass(frozen=True, slots=True)
class GlobalType:
    valtype: str
    mutable: bool


@dataclass(frozen=True, slots=True)
class Import:
    module: str
    name: str
    kind: str
    desc: Any  # type index (func), TableType, Limits (memory) or GlobalType
    raw: bytes | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class Global:
    type: GlobalType
    init: tuple[Instr, ...]
    raw: bytes | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class Export:
    name: str
    kind: str
    index: int
    raw: bytes | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class ElementSegment:
    flags: int
    table: int
    offset: tuple[Instr, ...] | None
    func_indices: tuple[int, ...] | None
    exprs: tuple[tuple[Instr, ...], ...] | None = None
    raw: bytes | None = field(default=None, compare=False, repr=False)

    @property
    def active(self) -> bool:
        return not self.flags & 1


@dataclass(frozen=True, slots=True)
class DataSegment:
    flags: int
    memory: int
    offset: tuple[Instr, ...] | None
    data: bytes
    raw: bytes | None = field(default=None, compare=False, repr=False)

    @property
    def active(self) -> bool:
        return self.flags != 1


@dataclass(frozen=True, slots=True)
class CustomSection:
    name: str
    payload: bytes
    raw: bytes | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class FunctionBody:
    type_index: int
    signature: FuncType
    local_groups: tuple[tuple[int, str], ...]
    instructions: tuple[Instr, ...]
    locals_raw: bytes | None = field(default=None, compare=False, repr=False)
    size_width: int | None = field(default=None, compare=False, repr=False)

    @property
    def locals(self) -> tuple[str, ...]:
        """Declared local types beyond the parameters."""
        return tuple(t for count, t in self.local_groups for _ in range(count))

    @property
    def local_types(self) -> tuple[str, ...]:
        return self.signature.params + self.locals


@dataclass(slots=True)
class SectionInfo:
    """Position and encoding widths of one section as it appeared on disk."""

    id: int
    size_width: int | None = None
    count_width: int | None = None
    custom_index: int | None = None
    raw_payload: bytes | None = None
    snapshot: tuple | None = None


@dataclass
class WasmModule:
    types: list[FuncType] = field(default_factory=list)
    imports: list[Import] = field(default_factory=list)
    functions: list[FunctionBody] = field(default_factory=list)
    tables: list[TableType] = field(default_factory=list)
    memories: list[Limits] = field(default_factory=list)
    globals: list[Global] = field(default_factory=list)
    exports: list[Export] = field(default_factory=list)
    start: int | None = None
    elements: list[ElementSegment] = field(default_factory=list)
    data_segments: list[DataSegment] = field(default_factory=list)
    custom_sections: list[CustomSection] = field(default_factory=list)
    data_count: int | None = None
    layout: list[SectionInfo] = field(default_factory=list, repr=False)

    # index spaces

    @property
    def imported_functions(self) -> list[Import]:
        return [i for i in self.imports if i.kind == "func"]

    @property
    def num_imported_functions(self) -> int:
        return sum(1 for i in self.imports if i.kind == "func")

    @property
    def num_imported_globals(self) -> int:
        return sum(1 for i in self.imports if i.kind == "global")

    @property
    def num_functions(self) -> int:
        return self.num_imported_functions + len(self.functions)

    def function_type(self, func_index: int) -> FuncType:
        n_imp = self.num_imported_functions
        if func_index < n_imp:
            return self.types[self.imported_functions[func_index].desc]
        return self.functions[func_index - n_imp].signature

    def body(self, func_index: int) -> FunctionBody:
        return self.functions[func_index - self.num_imported_functions]

    def global_types(self) -> list[GlobalType]:
        imported = [i.desc for i in self.imports if i.kind == "global"]
        return imported + [g.type for g in self.globals]

    def all_memories(self) -> list[Limits]:
        return [i.desc for i in self.imports if i.kind == "memory"] + list(self.memories)

    def export(self, name: str) -> Export | None:
        for e in self.exports:
            if e.name == name:
                return e
        return None

    def function_names(self) -> dict[int, str]:
        """Names from the ``name`` custom section plus import field names."""
        from .names import parse_function_names

        names = {i: imp.name for i, imp in enumerate(self.imported_functions)}
        for section in self.custom_sections:
            if section.name == "name":
                names.update(parse_function_names(section.payload))
        return names


_STORE_OPS = frozenset({
    "i32.store", "i64.store", "f32.store", "f64.store", "i32.store8",
    "i32.store16", "i64.store8", "i64.store16", "i64.store32",
})
_MEMARG_OPS = _STORE_OPS | frozenset({
    "i32.load", "i64.load", "f32.load", "f64.load", "i32.load8_s", "i32.load8_u",
    "i32.load16_s", "i32.load16_u", "i64.load8_s", "i64.load8_u", "i64.load16_s",
    "i64.load16_u", "i64.load32_s", "i64.load32_u",
})
