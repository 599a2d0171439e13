from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import prebuilt
from wat_fixtures import CHAR_DECLARE_LOOP, FRAMELESS, SAFE_FRAME, assemble
from wasmguard.cli import main, validate_document
from wasmguard.diff_harness import (
    BOTH_CRASH,
    NATIVE_ONLY,
    STACK_SMASH_MARKER,
    CellRecord,
    DivergenceClass,
    Report,
    RunOutcome,
)

SMASH = RunOutcome("n", 0, "signal", None, "SIGABRT", frozenset({STACK_SMASH_MARKER}))
CLEAN = RunOutcome("w", 0, "exit", 0)


@pytest.fixture
def wasm_file(tmp_path):
    def write(text: str, name: str = "m.wasm"):
        p = tmp_path / name
        p.write_bytes(assemble(text))
        return p
    return write


def _json(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


# ------------------------------------------------------------ analyze

def test_analyze_reports_escape_with_exit_3(wasm_file, capsys):
    rc = main(["analyze", str(wasm_file(CHAR_DECLARE_LOOP)), "--json", "-"])
    doc = _json(capsys)
    assert rc == 3
    validate_document(doc, "analyze")
    assert doc["sp_global"] == 0
    assert [(f["function_index"], f["frame_size"]) for f in doc["frames"]] == [(1, 64)]
    assert [(e["effective_offset"], e["store_width"], e["severity"]) for e in doc["findings"]] == \
        [(99, 1, "escapes-frame")]


def test_analyze_safe_module_exits_0(wasm_file, capsys):
    assert main(["analyze", str(wasm_file(SAFE_FRAME))]) == 0
    assert "stack pointer global: 0" in capsys.readouterr().out


def test_analyze_bad_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.wasm"
    bad.write_bytes(b"\x00asx\x01\x00\x00\x00")
    assert main(["analyze", str(bad)]) == 2
    assert "wasmguard:" in capsys.readouterr().err
    assert main(["analyze", str(tmp_path / "absent.wasm")]) == 2


def test_analyze_is_repeatable(wasm_file, capsys):
    path = str(wasm_file(CHAR_DECLARE_LOOP))
    main(["analyze", path, "--json", "-"])
    first = capsys.readouterr().out
    main(["analyze", path, "--json", "-"])
    assert capsys.readouterr().out == first


# ------------------------------------------------------------ harden

def test_harden_writes_verified_module(wasm_file, tmp_path, capsys):
    out = tmp_path / "out" / "h.wasm"
    rc = main(["harden", str(wasm_file(CHAR_DECLARE_LOOP)), "-o", str(out), "--json", "-"])
    doc = _json(capsys)
    assert rc == 0 and out.is_file()
    validate_document(doc, "harden")
    assert doc["verified"] is True and doc["output"] == str(out)
    hardened = [f for f in doc["functions"] if f["action"] == "hardened"]
    assert [(f["old_frame_size"], f["new_frame_size"]) for f in hardened] == [(64, 72)]


def test_harden_is_deterministic(wasm_file, tmp_path):
    src = str(wasm_file(CHAR_DECLARE_LOOP))
    a, b = tmp_path / "a.wasm", tmp_path / "b.wasm"
    assert main(["harden", src, "-o", str(a)]) == 0
    assert main(["harden", src, "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_harden_frameless_exits_4_without_output(wasm_file, tmp_path, capsys):
    out = tmp_path / "never.wasm"
    assert main(["harden", str(wasm_file(FRAMELESS)), "-o", str(out), "--show-skipped"]) == 4
    assert not out.exists()
    assert "no-frame" in capsys.readouterr().out


@pytest.mark.parametrize("k, rc", [("12", 0), ("16", 0), ("4", 0)])
def test_harden_guard_sizes(wasm_file, tmp_path, k, rc):
    out = tmp_path / "h.wasm"
    assert main(["harden", str(wasm_file(CHAR_DECLARE_LOOP)), "-o", str(out), "--guard-size", k]) == rc


@pytest.mark.parametrize("flags", [["--guard-size", "10"], ["--guard-value", "0x0100000000000000"],
                                   ["--guard-mode", "sometimes"]])
def test_harden_rejects_bad_guard_flags(wasm_file, tmp_path, flags):
    with pytest.raises(SystemExit) as exc:
        main(["harden", str(wasm_file(CHAR_DECLARE_LOOP)), "-o", str(tmp_path / "h.wasm"), *flags])
    assert exc.value.code == 2


def test_harden_random_mode_without_import_fails(wasm_file, tmp_path, capsys):
    rc = main(["harden", str(wasm_file(CHAR_DECLARE_LOOP)), "-o", str(tmp_path / "h.wasm"),
               "--guard-mode", "random"])
    assert rc == 2
    assert "random_get" in capsys.readouterr().err


def test_harden_corpus_module(tmp_path, capsys):
    art = next(a for a in prebuilt("O1") if a.case_id == "cwe121-char-declare-loop")
    out = tmp_path / "h.wasm"
    assert main(["harden", str(art.path), "-o", str(out), "--json", "-"]) == 0
    doc = _json(capsys)
    assert doc["size_delta_bytes"] < 0.15 * doc["original_size"]


# ------------------------------------------------------------ report

def _sample_report() -> Report:
    toolchain = {"native": "cc", "wasm": "cc", "native_second": None, "runtime": "rt",
                 "native_version": "1", "wasm_version": "1", "native_second_version": None,
                 "python": "3"}
    config = {"runs": 1, "timeout_seconds": None, "default_timeout_seconds": 5.0,
              "opt_levels": ["O1"], "markers": [STACK_SMASH_MARKER],
              "nonzero_exit_is_crash": False, "timeout_is_crash": False,
              "guard_size": 8, "guard_mode": "fixed-constant"}
    rep = Report("corpus/manifest.yaml", toolchain, config, generated_at="2026-01-01T00:00:00+00:00")
    rep.pre.append(CellRecord("c1", "O1", [SMASH], [CLEAN],
                              DivergenceClass.from_rates("c1", "O1", 1.0, 0.0)))
    rep.post.append(CellRecord("c1", "O1", [SMASH], [SMASH],
                               DivergenceClass.from_rates("c1", "O1", 1.0, 1.0)))
    return rep


def test_report_command(tmp_path, capsys):
    path = _sample_report().write(tmp_path / "report.json")
    doc = json.loads(path.read_text())
    validate_document(doc, "report")
    assert main(["report", str(path), "--cases", "--json", "-"]) == 0
    summary = _json(capsys)
    validate_document(summary, "summary")
    assert summary["pre_hardening"][NATIVE_ONLY] == 1
    assert summary["post_hardening"][BOTH_CRASH] == 1
    assert summary["native_only_to_both_crash"] == 1


def test_report_rejects_garbage(tmp_path, capsys):
    p = tmp_path / "r.json"
    p.write_text('{"schema_version": 1}')
    assert main(["report", str(p)]) == 2


def test_entry_point_runs_as_module(wasm_file):
    proc = subprocess.run([sys.executable, "-m", "wasmguard.cli", "analyze",
                           str(wasm_file(CHAR_DECLARE_LOOP))], capture_output=True, text=True)
    assert proc.returncode == 3
    assert "+99/1B" in proc.stdout


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("wasmguard ")
