from __future__ import annotations

import copy
import json
import subprocess

import pytest
import yaml

from conftest import MANIFEST, prebuilt
from wasmguard.corpus import (
    NATIVE,
    WASM,
    CorpusCase,
    ExpectedOutcome,
    MissingSource,
    SchemaError,
    compile_case,
    expand_template,
    load_manifest,
    parse_manifest,
)
from wasmguard.frame_analysis import detect_frames, detect_sp_global, find_escaping_stores
from wasmguard.wasm_model import decode_module


@pytest.fixture
def raw():
    return yaml.safe_load(MANIFEST.read_text())


def test_bundled_manifest_loads(manifest):
    assert len(manifest.cases) == 15
    assert manifest.schema_version == 1
    d = manifest.defaults
    assert (d.optimization, d.runs_per_case, d.timeout_seconds) == ("O1", 100, 5.0)
    assert "-fstack-protector-strong" in manifest.toolchain.native


def test_every_case_covers_both_targets_at_all_levels(manifest):
    for case in manifest.cases:
        assert isinstance(case, CorpusCase)
        assert case.provenance
        for opt in ("O0", "O1", "O2", "O3"):
            assert (NATIVE, opt) in case.compile_matrix and (WASM, opt) in case.compile_matrix
            assert (NATIVE, opt) in case.expected and (WASM, opt) in case.expected


def test_category_mix(manifest):
    cats = {c.category for c in manifest.cases}
    assert {"stack-overflow", "optimization-sensitive", "safe"} <= cats
    safe = [c.id for c in manifest.cases if c.category == "safe"]
    assert sorted(safe) == ["safe-char-declare-loop", "safe-memcpy"]


def test_native_only_expectations_at_default_level(manifest):
    smash = [c.id for c in manifest.cases
             if c.expected[(NATIVE, "O1")] == ExpectedOutcome("crashes", "stack smashing detected")
             and not c.expected[(WASM, "O1")].crashes]
    assert len(smash) >= 5


@pytest.mark.parametrize("text, kind, marker", [
    ("completes", "completes", None),
    ("hangs", "hangs", None),
    ("crashes(SIGSEGV)", "crashes", "SIGSEGV"),
    ("crashes", "crashes", None),
])
def test_outcome_parse(text, kind, marker):
    o = ExpectedOutcome.parse(text)
    assert (o.kind, o.marker) == (kind, marker)
    assert str(o) == text


@pytest.mark.parametrize("text", ["explodes", "completes(x)", ""])
def test_outcome_parse_rejects(text):
    with pytest.raises(ValueError):
        ExpectedOutcome.parse(text)


def test_empty_case_list_rejected(raw):
    raw["cases"] = []
    with pytest.raises(SchemaError) as exc:
        parse_manifest(raw, MANIFEST)
    assert exc.value.path == "cases"


def test_duplicate_id_rejected(raw):
    raw["cases"].append(copy.deepcopy(raw["cases"][0]))
    with pytest.raises(SchemaError, match="cwe121-char-declare-loop"):
        parse_manifest(raw, MANIFEST)


def test_bad_field_reports_path(raw):
    raw["cases"][2]["category"] = "mystery"
    with pytest.raises(SchemaError) as exc:
        parse_manifest(raw, MANIFEST)
    assert exc.value.path == "cases[2].category"


def test_expected_cell_outside_matrix_rejected(raw):
    raw["cases"][0]["compile_matrix"]["wasm32-wasi"] = ["O1"]
    with pytest.raises(SchemaError, match="compile_matrix"):
        parse_manifest(raw, MANIFEST)


def test_missing_protector_flag_rejected(raw):
    raw["toolchain"]["native"] = raw["toolchain"]["native"].replace(" -fstack-protector-strong", "")
    with pytest.raises(SchemaError, match="fstack-protector-strong"):
        parse_manifest(raw, MANIFEST)


def test_missing_source_reported(raw, tmp_path):
    with pytest.raises(MissingSource) as exc:
        parse_manifest(raw, tmp_path / "manifest.yaml")
    assert any("cwe121_char_declare_loop.c" in f for f in exc.value.files)


def test_invalid_yaml_is_a_schema_error(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("cases: [unclosed")
    with pytest.raises(SchemaError):
        load_manifest(p)


def test_select(manifest):
    sub = manifest.select(ids=["safe-memcpy"])
    assert [c.id for c in sub.cases] == ["safe-memcpy"]
    assert len(manifest.select(categories=["safe"]).cases) == 2
    with pytest.raises(KeyError, match="nope"):
        manifest.select(ids=["nope"])


def test_expand_template_splits_list_placeholders():
    argv = expand_template("cc -{opt} {includes} {sources} -o {output}",
                           {"opt": "O2", "output": "out dir/a.out"},
                           {"includes": ["-Ia", "-Ib"], "sources": ["x.c", "y.c"]})
    assert argv == ["cc", "-O2", "-Ia", "-Ib", "x.c", "y.c", "-o", "out dir/a.out"]


def test_toolchain_overrides_precedence(manifest):
    tc = manifest.toolchain
    env = {"WASMGUARD_CC_NATIVE": "envcc -{opt}", "WASMGUARD_RUNTIME_CMD": "envrt {artifact}"}
    got = tc.with_overrides(environ=env)
    assert (got.native, got.runtime, got.wasm) == ("envcc -{opt}", "envrt {artifact}", tc.wasm)
    assert tc.with_overrides(native="argcc", environ=env).native == "argcc"


def test_prebuilt_tree_matches_manifest(manifest):
    arts = prebuilt()
    assert len(arts) == 60
    assert {a.case_id for a in arts} == {c.id for c in manifest.cases}
    for a in arts:
        assert a.metadata["target"] == WASM and a.path.is_file()


@pytest.mark.toolchain
def test_compile_case_writes_sidecar_and_reuses(manifest, corpus_build_dir):
    case = manifest.case("safe-memcpy")
    art = compile_case(case, (WASM, "O1"), manifest.toolchain, corpus_build_dir)
    meta = json.loads((art.path.parent / "metadata.json").read_text())
    assert meta["case_id"] == "safe-memcpy" and meta["optimization"] == "O1"
    assert meta["compiler_version"] and meta["artifact_sha256"]
    assert set(meta["inputs"]) == {str(p) for p in (*case.source_files,
                                                      *manifest.toolchain.support_sources)}
    mtime = art.path.stat().st_mtime_ns
    again = compile_case(case, (WASM, "O1"), manifest.toolchain, corpus_build_dir)
    assert again.path.stat().st_mtime_ns == mtime


@pytest.mark.toolchain
def test_fresh_build_matches_prebuilt_analysis(manifest, corpus_build_dir):
    case = manifest.case("cwe121-char-declare-loop")
    art = compile_case(case, (WASM, "O1"), manifest.toolchain, corpus_build_dir)
    ref = next(a for a in prebuilt("O1") if a.case_id == case.id)

    def summary(path):
        m = decode_module(path.read_bytes())
        scan = detect_frames(m, detect_sp_global(m))
        return ([(f.function_index, f.frame_size) for f in scan],
                [(e.function_index, e.effective_offset, e.store_width)
                 for e in find_escaping_stores(m, scan)])

    assert summary(art.path) == summary(ref.path)


@pytest.mark.toolchain
def test_native_build_smashes_at_default_level(manifest, corpus_build_dir):
    case = manifest.case("cwe121-char-declare-loop")
    art = compile_case(case, (NATIVE, "O1"), manifest.toolchain, corpus_build_dir)
    proc = subprocess.run([str(art.path)], capture_output=True, timeout=30)
    assert proc.returncode < 0
    assert b"stack smashing detected" in proc.stderr
