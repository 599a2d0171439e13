"""Independent reference computations the library is checked against."""

from __future__ import annotations


def prologue_oracle(m, func_index: int, sp: int) -> int | None:
    """Frame size from symbolic evaluation of the straight-line code before the first
    write to the stack pointer; None when that write is not ``sp - constant``."""
    body = m.functions[func_index - m.num_imported_functions]
    locals_: dict[int, tuple] = {}
    stack: list[tuple] = []
    for ins in body.instructions:
        op = ins.op
        if op == "global.get" and ins.imm[0] == sp:
            stack.append(("sp", 0))
        elif op == "i32.const":
            stack.append(("c", ins.imm[0]))
        elif op == "local.get":
            stack.append(locals_.get(ins.imm[0], ("?",)))
        elif op in ("local.set", "local.tee"):
            v = stack.pop()
            locals_[ins.imm[0]] = v
            if op == "local.tee":
                stack.append(v)
        elif op in ("i32.sub", "i32.add"):
            b, a = stack.pop(), stack.pop()
            if a[0] == "sp" and b[0] == "c":
                stack.append(("sp", a[1] - b[1] if op == "i32.sub" else a[1] + b[1]))
            elif a[0] == "c" and b[0] == "c":
                stack.append(("c", a[1] - b[1] if op == "i32.sub" else a[1] + b[1]))
            else:
                stack.append(("?",))
        elif op == "global.set" and ins.imm[0] == sp:
            v = stack.pop()
            return -v[1] if v[0] == "sp" and v[1] < 0 else None
        else:
            return None
    return None


def frame_crossings(trace, framed: set[int]) -> list[tuple[int, int]]:
    """Activations of framed functions whose subtree wrote both the last byte of
    the frame and the first byte above it.

    Returns (function index, entry stack pointer) pairs.  A write run that
    straddles the frame top shows up as writes to ``sp - 1`` and ``sp``.
    """
    children: dict[int, list[int]] = {}
    for a in trace.activations:
        if a.caller is not None:
            children.setdefault(a.caller, []).append(a.id)
    written_by: dict[int, set[int]] = {}
    for s in trace.stores:
        if s.activation is not None:
            written_by.setdefault(s.activation, set()).update(range(s.address, s.address + s.width))
    out = []
    for a in trace.activations:
        if a.func not in framed or a.sp_at_entry is None:
            continue
        todo, written = [a.id], set()
        while todo:
            x = todo.pop()
            written |= written_by.get(x, set())
            todo.extend(children.get(x, ()))
        if a.sp_at_entry - 1 in written and a.sp_at_entry in written:
            out.append((a.func, a.sp_at_entry))
    return out
