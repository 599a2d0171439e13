from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).resolve().parent))

from wasmguard.corpus import iter_prebuilt, load_manifest  # noqa: E402
from wasmguard.toolchain import ToolchainMissing, ensure_wasi_sysroot  # noqa: E402

MANIFEST = ROOT / "corpus" / "manifest.yaml"
PREBUILT = ROOT / "corpus" / "prebuilt"


def prebuilt(opt: str | None = None):
    return list(iter_prebuilt(PREBUILT, opt))


_toolchain_state: dict[str, object] = {}


def toolchain_problem() -> str | None:
    """Why the corpus cannot be compiled on this host, or None."""
    if "problem" not in _toolchain_state:
        problem = None
        for exe in ("clang", "wasm-ld"):
            if shutil.which(exe) is None and shutil.which(f"{exe}-14") is None:
                problem = f"{exe} not on PATH"
        if problem is None:
            try:
                ensure_wasi_sysroot()
            except ToolchainMissing as exc:
                problem = str(exc)
        _toolchain_state["problem"] = problem
    return _toolchain_state["problem"]


def pytest_collection_modifyitems(config, items):
    problem = None
    for item in items:
        if "toolchain" in item.keywords:
            problem = problem or toolchain_problem()
            if problem:
                item.add_marker(pytest.mark.skip(reason=f"toolchain unavailable: {problem}"))


@pytest.fixture(scope="session")
def manifest():
    return load_manifest(MANIFEST)


@pytest.fixture(scope="session")
def corpus_build_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("corpus-build")


# acceptance criteria record one line each; printed after the run
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  ({detail})")
