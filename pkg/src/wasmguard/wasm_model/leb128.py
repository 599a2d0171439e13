"""LEB128 variable-length integers as used by the wasm binary format.

Readers return ``(value, new_position, width)`` so callers can keep the
original encoding width; linkers routinely pad relocatable LEBs to five
bytes and a faithful round-trip has to reproduce that padding.
"""

from __future__ import annotations

from .errors import EncodingOverflow, MalformedBinary


def read_u(data: bytes, pos: int, bits: int = 32) -> tuple[int, int, int]:
    start = pos
    result = shift = 0
    max_bytes = (bits + 6) // 7
    while True:
        if pos >= len(data):
            raise MalformedBinary("unexpected end of data inside LEB128", start)
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            break
        if pos - start >= max_bytes:
            raise MalformedBinary(f"LEB128 longer than {max_bytes} bytes", start)
    if result >> bits:
        raise MalformedBinary(f"unsigned LEB128 exceeds {bits} bits", start)
    return result, pos, pos - start


def read_s(data: bytes, pos: int, bits: int = 32) -> tuple[int, int, int]:
    start = pos
    result = shift = 0
    max_bytes = (bits + 6) // 7
    while True:
        if pos >= len(data):
            raise MalformedBinary("unexpected end of data inside LEB128", start)
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            break
        if pos - start >= max_bytes:
            raise MalformedBinary(f"LEB128 longer than {max_bytes} bytes", start)
    if b & 0x40:
        result -= 1 << shift
    if not -(1 << (bits - 1)) <= result < (1 << (bits - 1)):
        raise MalformedBinary(f"signed LEB128 exceeds {bits} bits", start)
    return result, pos, pos - start


def write_u(value: int, width: int | None = None, bits: int = 32) -> bytes:
    """Encode ``value``; ``width`` pads with continuation bytes when it fits."""
    if value < 0 or value >> bits:
        raise EncodingOverflow(f"{value} does not fit in u{bits}")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            break
    return _pad(out, width, 0x00)


def write_s(value: int, width: int | None = None, bits: int = 32) -> bytes:
    if not -(1 << (bits - 1)) <= value < (1 << (bits - 1)):
        raise EncodingOverflow(f"{value} does not fit in s{bits}")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        done = (value == 0 and not b & 0x40) or (value == -1 and b & 0x40)
        if done:
            out.append(b)
            break
        out.append(b | 0x80)
    return _pad(out, width, 0x7F if value == -1 else 0x00)


def _pad(out: bytearray, width: int | None, fill: int) -> bytes:
    if width is None or width <= len(out):
        return bytes(out)
    out[-1] |= 0x80
    out.extend([fill | 0x80] * (width - len(out) - 1))
    out.append(fill)
    return bytes(out)
