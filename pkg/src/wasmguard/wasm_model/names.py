from __future__ import annotations

from .errors import MalformedBinary
from .leb128 import read_u


def parse_function_names(payload: bytes) -> dict[int, str]:
    """Function-name subsection (id 1) of a ``name`` custom section."""
    names: dict[int, str] = {}
    pos = 0
    try:
        while pos < len(payload):
            sub_id = payload[pos]
            size, pos, _ = read_u(payload, pos + 1)
            end = pos + size
            if sub_id == 1:
                count, p, _ = read_u(payload, pos)
                for _ in range(count):
                    idx, p, _ = read_u(payload, p)
                    n, p, _ = read_u(payload, p)
                    names[idx] = payload[p:p + n].decode("utf-8", "replace")
                    p += n
            pos = end
    except (MalformedBinary, IndexError):
        # name section is advisory; a damaged one just yields fewer names
        pass
    return names
