"""Host toolchain discovery: compilers, the WASI sysroot, version strings."""
from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

SYSROOT_ENV = "WASMGUARD_WASI_SYSROOT"
DEFAULT_SYSROOT = Path.home() / ".cache" / "wasmguard" / "wasi-sysroot"

# Archives wasm-ld receives when zig links a trivial wasm32-wasi program.
_SYSROOT_LIBS = ("crt1-command.o", "libc.a", "libzigc.a", "libcompiler_rt.a")


class ToolchainMissing(RuntimeError):
    """A compiler, linker or runtime named by a command template is absent."""

    def __init__(self, tool: str, detail: str = ""):
        self.tool = tool
        self.detail = detail
        msg = f"toolchain component not found: {tool}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


def resolve_executable(name: str) -> str:
    path = shutil.which(name)
    if path is None:
        raise ToolchainMissing(name)
    return path


def tool_version(command: str) -> str:
    """First line of `<tool> --version`, or "" when the tool cannot say."""
    argv = shlex.split(command)
    if not argv:
        return ""
    exe = sys.executable if argv[0] == "{python}" else argv[0]
    try:
        out = subprocess.run([exe, "--version"], capture_output=True, text=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired):
        return ""
    text = (out.stdout or out.stderr).strip()
    return text.splitlines()[0] if text else ""


def sysroot_ready(root: Path) -> bool:
    lib = root / "lib" / "wasm32-wasi"
    return (root / "include" / "stdio.h").is_file() and all(
        (lib / name).is_file() for name in _SYSROOT_LIBS + ("crt1.o",)
    )


def _zig_headers() -> list[Path]:
    try:
        import ziglang
    except ImportError as exc:
        raise ToolchainMissing("ziglang", "pip install ziglang") from exc
    base = Path(ziglang.__file__).parent / "lib" / "libc" / "include"
    # Generic musl first; the WASI-specific tree overrides it.
    dirs = [base / "generic-musl", base / "wasm-wasi-musl"]
    missing = [str(d) for d in dirs if not d.is_dir()]
    if missing:
        raise ToolchainMissing("zig libc headers", ", ".join(missing))
    return dirs


def _zig_link_inputs(work: Path) -> dict[str, Path]:
    src = work / "probe.c"
    src.write_text("int main(void) { return 0; }\n")
    env = dict(os.environ, ZIG_VERBOSE_LINK="1")
    cmd = [sys.executable, "-m", "ziglang", "cc", "-target", "wasm32-wasi",
           "-O1", "-g0", "-s", str(src), "-o", str(work / "probe.wasm")]
    try:
        out = subprocess.run(cmd, capture_output=True, text=True, env=env, timeout=600)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise ToolchainMissing("zig", str(exc)) from exc
    if out.returncode != 0:
        raise ToolchainMissing("zig", out.stderr.strip()[-400:])
    found: dict[str, Path] = {}
    for line in (out.stderr + out.stdout).splitlines():
        if "wasm-ld" not in line:
            continue
        for tok in shlex.split(line):
            name = Path(tok).name
            if name in _SYSROOT_LIBS:
                found[name] = Path(tok)
    missing = sorted(set(_SYSROOT_LIBS) - set(found))
    if missing:
        raise ToolchainMissing("zig wasm32-wasi libraries", ", ".join(missing))
    return found


def ensure_wasi_sysroot(root: str | Path | None = None) -> Path:
    """Return a usable wasm32-wasi sysroot, assembling one from zig's libc.

    Resolution order: explicit argument, $WASMGUARD_WASI_SYSROOT, then a
    per-user cache.  A fresh sysroot is staged in a temp dir and renamed
    into place so concurrent callers never observe a half-built tree.
    """
    if root is None:
        root = os.environ.get(SYSROOT_ENV) or DEFAULT_SYSROOT
    root = Path(root)
    if sysroot_ready(root):
        return root
    root.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="wasi-sysroot-", dir=root.parent) as tmp:
        work = Path(tmp)
        stage = work / "sysroot"
        libdir = stage / "lib" / "wasm32-wasi"
        libdir.mkdir(parents=True)
        for name, path in _zig_link_inputs(work).items():
            shutil.copy2(path, libdir / name)
        shutil.copy2(libdir / "crt1-command.o", libdir / "crt1.o")
        for hdr in _zig_headers():
            shutil.copytree(hdr, stage / "include", dirs_exist_ok=True)
        try:
            os.rename(stage, root)
        except OSError:
            # Another process won the race or a stale partial tree exists.
            if not sysroot_ready(root):
                shutil.rmtree(root, ignore_errors=True)
                os.rename(stage, root)
    return root
