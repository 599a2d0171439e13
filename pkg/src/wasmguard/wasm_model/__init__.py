"""Wasm binary model: decoding, encoding and a reference interpreter."""

from .binary import HEADER, decode_module, encode_instr, encode_module
from .errors import (
    EncodingOverflow,
    MalformedBinary,
    MissingExport,
    UnstubbedImport,
    UnsupportedFeature,
    WasmError,
)
from .types import (
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
    TableType,
    WasmModule,
    i32_const,
    i64_const,
)
