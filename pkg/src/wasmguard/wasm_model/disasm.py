from __future__ import annotations

from .types import WasmModule


def format_function(m: WasmModule, func_index: int, limit: int | None = None) -> str:
    """Flat, indented listing of one defined function (text-format flavoured)."""
    body = m.body(func_index)
    name = m.function_names().get(func_index)
    head = f"(func {func_index}" + (f" ${name}" if name else "") + f" {body.signature}"
    lines = [head]
    if body.locals:
        lines.append(f"  (local {' '.join(body.locals)})")
    depth = 1
    instrs = body.instructions if limit is None else body.instructions[:limit]
    for pc, ins in enumerate(instrs):
        if ins.op in ("end", "else"):
            depth -= 1
        lines.append(f"{pc:5d}  " + "  " * depth + str(ins))
        if ins.op in ("block", "loop", "if", "else"):
            depth += 1
    return "\n".join(lines)
