"""Test-case corpus: manifest loading, validation and per-cell compilation."""
from __future__ import annotations

import hashlib
import json
import os
import re
import shlex
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

import jsonschema
import yaml

from .toolchain import ToolchainMissing, ensure_wasi_sysroot, resolve_executable, tool_version

NATIVE = "native-x86-64"
WASM = "wasm32-wasi"
TARGETS = (NATIVE, WASM)
OPT_LEVELS = ("O0", "O1", "O2", "O3")
CATEGORIES = (
    "stack-overflow",
    "heap-labeled-stack-overflow",
    "safe",
    "optimization-sensitive",
    "variant-conditional",
    "variant-cross-function",
)

# Environment overrides for toolchain templates.
ENV_CC_NATIVE = "WASMGUARD_CC_NATIVE"
ENV_CC_WASM = "WASMGUARD_CC_WASM"
ENV_CC_NATIVE2 = "WASMGUARD_CC_NATIVE2"
ENV_RUNTIME = "WASMGUARD_RUNTIME_CMD"
ENV_MANIFEST = "WASMGUARD_MANIFEST"

SIDECAR = "metadata.json"
Cell = tuple[str, str]


class CorpusError(Exception):
    pass


class SchemaError(CorpusError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path or '<root>'}: {message}")


class MissingSource(CorpusError, FileNotFoundError):
    def __init__(self, files: list[str]):
        self.files = list(files)
        super().__init__("missing source files: " + ", ".join(self.files))


class CompileFailure(CorpusError):
    def __init__(self, case_id: str, cell: Cell, command: list[str], returncode: int, stderr: str):
        self.case_id = case_id
        self.cell = cell
        self.command = command
        self.returncode = returncode
        self.stderr = stderr
        super().__init__(
            f"{case_id} {cell[0]}-{cell[1]}: compiler exited {returncode}\n{stderr.strip()}"
        )


_OUTCOME_RE = re.compile(r"^(completes|hangs|crashes)(?:\((.+)\))?$")


@dataclass(frozen=True)
class ExpectedOutcome:
    kind: str  # completes | crashes | hangs
    marker: str | None = None

    @classmethod
    def parse(cls, text: str) -> "ExpectedOutcome":
        m = _OUTCOME_RE.match(text.strip())
        if not m or (m.group(2) and m.group(1) != "crashes"):
            raise ValueError(f"bad outcome {text!r}")
        return cls(m.group(1), m.group(2))

    @property
    def crashes(self) -> bool:
        return self.kind == "crashes"

    def __str__(self) -> str:
        return f"{self.kind}({self.marker})" if self.marker else self.kind


@dataclass(frozen=True)
class CorpusCase:
    id: str
    source_files: tuple[Path, ...]
    category: str
    compile_matrix: tuple[Cell, ...]
    expected: dict[Cell, ExpectedOutcome]
    provenance: str
    reference_expected: dict[Cell, ExpectedOutcome] = field(default_factory=dict)
    # wasm outcome after hardening, per optimization level, where it departs
    # from the default rule (native-only-crash cells must start crashing)
    hardened_expected: dict[str, ExpectedOutcome] = field(default_factory=dict)
    description: str = ""
    timeout_seconds: float | None = None
    args: tuple[str, ...] = ()

    def cells(self, target: str | None = None, opt: str | None = None) -> list[Cell]:
        return [
            c for c in self.compile_matrix
            if (target is None or c[0] == target) and (opt is None or c[1] == opt)
        ]

    def opt_levels(self) -> list[str]:
        return [o for o in OPT_LEVELS if any(c[1] == o for c in self.compile_matrix)]


@dataclass(frozen=True)
class Toolchain:
    native: str
    wasm: str
    runtime: str
    native_second: str | None = None
    native_runtime: str = "{artifact} {args}"
    required_flags: tuple[str, ...] = ()
    include_dirs: tuple[Path, ...] = ()
    support_sources: tuple[Path, ...] = ()

    def compiler(self, target: str, second: bool = False) -> str:
        if target == WASM:
            return self.wasm
        if second:
            if not self.native_second:
                raise ToolchainMissing("second native compiler", "no native_second template")
            return self.native_second
        return self.native

    def runner(self, target: str) -> str:
        return self.runtime if target == WASM else self.native_runtime

    def with_overrides(
        self,
        native: str | None = None,
        wasm: str | None = None,
        native_second: str | None = None,
        runtime: str | None = None,
        environ: dict[str, str] | None = None,
    ) -> "Toolchain":
        """Explicit arguments beat environment variables, which beat the manifest."""
        env = os.environ if environ is None else environ
        return replace(
            self,
            native=native or env.get(ENV_CC_NATIVE) or self.native,
            wasm=wasm or env.get(ENV_CC_WASM) or self.wasm,
            native_second=native_second or env.get(ENV_CC_NATIVE2) or self.native_second,
            runtime=runtime or env.get(ENV_RUNTIME) or self.runtime,
        )


@dataclass(frozen=True)
class Defaults:
    optimization: str = "O1"
    runs_per_case: int = 100
    timeout_seconds: float = 5.0


@dataclass(frozen=True)
class CorpusManifest:
    path: Path
    schema_version: int
    toolchain: Toolchain
    defaults: Defaults
    cases: tuple[CorpusCase, ...]

    @property
    def root(self) -> Path:
        return self.path.parent

    def case(self, case_id: str) -> CorpusCase:
        for c in self.cases:
            if c.id == case_id:
                return c
        raise KeyError(case_id)

    def select(self, ids: Iterable[str] | None = None, categories: Iterable[str] | None = None) -> "CorpusManifest":
        ids = None if ids is None else list(ids)
        cats = None if categories is None else set(categories)
        if ids is not None:
            unknown = [i for i in ids if i not in {c.id for c in self.cases}]
            if unknown:
                raise KeyError(", ".join(unknown))
        keep = tuple(
            c for c in self.cases
            if (ids is None or c.id in ids) and (cats is None or c.category in cats)
        )
        return replace(self, cases=keep)


@dataclass(frozen=True)
class Artifact:
    case_id: str
    target: str
    opt: str
    path: Path
    metadata: dict
    variant: str = ""

    @property
    def cell(self) -> Cell:
        return (self.target, self.opt)

    @property
    def id(self) -> str:
        tail = f"-{self.variant}" if self.variant else ""
        return f"{self.case_id}/{self.target}-{self.opt}{tail}"


def manifest_schema() -> dict:
    text = resources.files("wasmguard").joinpath("schemas/manifest.schema.json").read_text()
    return json.loads(text)


def default_manifest_path() -> Path:
    """Locate the bundled manifest: $WASMGUARD_MANIFEST, ./corpus, then the source checkout."""
    env = os.environ.get(ENV_MANIFEST)
    if env:
        return Path(env)
    candidates = [Path.cwd() / "corpus" / "manifest.yaml",
                  Path(__file__).resolve().parents[2] / "corpus" / "manifest.yaml"]
    for p in candidates:
        if p.is_file():
            return p
    return candidates[-1]


def _fmt_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _cellmap(raw: dict | None) -> dict[Cell, ExpectedOutcome]:
    out: dict[Cell, ExpectedOutcome] = {}
    for target, by_opt in (raw or {}).items():
        for opt, text in by_opt.items():
            out[(target, opt)] = ExpectedOutcome.parse(text)
    return out


def parse_manifest(data, path: str | Path = "manifest.yaml") -> CorpusManifest:
    path = Path(path)
    validator = jsonschema.Draft202012Validator(manifest_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(_fmt_path(e.absolute_path), e.message)
    root = path.parent
    tc = data["toolchain"]
    toolchain = Toolchain(
        native=tc["native"],
        wasm=tc["wasm"],
        runtime=tc["runtime"],
        native_second=tc.get("native_second"),
        native_runtime=tc.get("native_runtime", "{artifact} {args}"),
        required_flags=tuple(tc.get("required_flags", ())),
        include_dirs=tuple(root / d for d in tc.get("include_dirs", ())),
        support_sources=tuple(root / s for s in tc.get("support_sources", ())),
    )
    for flag in toolchain.required_flags:
        if flag not in shlex.split(toolchain.native):
            raise SchemaError("toolchain.native", f"required flag {flag} missing")
    d = data["defaults"]
    defaults = Defaults(d["optimization"], d["runs_per_case"], float(d["timeout_seconds"]))

    cases = []
    seen: set[str] = set()
    for i, raw in enumerate(data["cases"]):
        where = f"cases[{i}]"
        if raw["id"] in seen:
            raise SchemaError(f"{where}.id", f"duplicate case id {raw['id']!r}")
        seen.add(raw["id"])
        matrix = tuple(
            (t, o) for t in TARGETS for o in OPT_LEVELS
            if o in raw["compile_matrix"].get(t, ())
        )
        if not any(t == NATIVE for t, _ in matrix) or not any(t == WASM for t, _ in matrix):
            raise SchemaError(f"{where}.compile_matrix", "needs at least one native and one wasm cell")
        expected = _cellmap(raw["expected"])
        reference = _cellmap(raw.get("reference_expected"))
        for name, cm in (("expected", expected), ("reference_expected", reference)):
            for cell in cm:
                if cell not in matrix:
                    raise SchemaError(f"{where}.{name}.{cell[0]}.{cell[1]}", "cell not in compile_matrix")
        hardened = {o: ExpectedOutcome.parse(t) for o, t in raw.get("hardened_expected", {}).items()}
        for opt in hardened:
            if (WASM, opt) not in matrix:
                raise SchemaError(f"{where}.hardened_expected.{opt}", "cell not in compile_matrix")
        cases.append(CorpusCase(
            id=raw["id"],
            source_files=tuple(root / s for s in raw["source_files"]),
            category=raw["category"],
            compile_matrix=matrix,
            expected=expected,
            provenance=raw["provenance"],
            reference_expected=reference,
            hardened_expected=hardened,
            description=raw.get("description", ""),
            timeout_seconds=raw.get("timeout_seconds"),
            args=tuple(raw.get("args", ())),
        ))

    needed = [p for c in cases for p in c.source_files] + list(toolchain.support_sources)
    missing = sorted({str(p) for p in needed if not p.is_file()})
    missing += sorted(str(p) for p in toolchain.include_dirs if not p.is_dir())
    if missing:
        raise MissingSource(missing)
    return CorpusManifest(path, data["schema_version"], toolchain, defaults, tuple(cases))


def load_manifest(path: str | Path | None = None) -> CorpusManifest:
    path = Path(path) if path is not None else default_manifest_path()
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise SchemaError("", f"not valid YAML: {exc}") from exc
    return parse_manifest(data, path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def expand_template(template: str, scalars: dict[str, str], lists: dict[str, list[str]]) -> list[str]:
    """Split a command template into argv; a token that is exactly {name} for a
    list placeholder expands to several arguments, other tokens are formatted."""
    argv: list[str] = []
    for tok in shlex.split(template):
        key = tok[1:-1] if tok.startswith("{") and tok.endswith("}") else None
        if key in lists:
            argv.extend(lists[key])
        else:
            argv.append(tok.format(**scalars))
    return argv


def artifact_dir(out_root: Path, case_id: str, cell: Cell, variant: str = "") -> Path:
    tail = f"-{variant}" if variant else ""
    return Path(out_root) / case_id / f"{cell[0]}-{cell[1]}{tail}"


def artifact_name(target: str) -> str:
    return "program.wasm" if target == WASM else "program"


def compile_case(
    case: CorpusCase,
    cell: Cell,
    toolchain: Toolchain,
    out_root: str | Path,
    second: bool = False,
    reuse: bool = True,
) -> Artifact:
    """Compile one (target, optimization) cell into out_root/<case>/<target>-<opt>/.

    The sidecar records compiler version, argv and input/output hashes.  With
    reuse, an existing artifact whose recorded inputs match is returned as is.
    """
    target, opt = cell
    if target not in TARGETS or opt not in OPT_LEVELS:
        raise ValueError(f"bad cell {cell}")
    variant = "second" if second else ""
    outdir = artifact_dir(Path(out_root), case.id, cell, variant)
    out = outdir / artifact_name(target)
    template = toolchain.compiler(target, second)
    sources = [*case.source_files, *toolchain.support_sources]
    scalars = {"opt": opt, "output": str(out), "python": sys.executable}
    if "{wasi_sysroot}" in template:
        scalars["wasi_sysroot"] = str(ensure_wasi_sysroot())
    lists = {
        "sources": [str(s) for s in sources],
        "includes": [f"-I{d}" for d in toolchain.include_dirs],
    }
    argv = expand_template(template, scalars, lists)
    inputs = {str(s): _sha256(s) for s in sources}
    digest = hashlib.sha256(json.dumps([argv, inputs], sort_keys=True).encode()).hexdigest()

    sidecar = outdir / SIDECAR
    if reuse and out.is_file() and sidecar.is_file():
        try:
            meta = json.loads(sidecar.read_text())
        except ValueError:
            meta = {}
        if meta.get("inputs_digest") == digest and meta.get("artifact_sha256") == _sha256(out):
            return Artifact(case.id, target, opt, out, meta, variant)

    exe = argv[0] if argv[0] != sys.executable else None
    if exe is not None:
        resolve_executable(exe)
    outdir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix=".build-", dir=outdir) as tmp:
        tmp_out = Path(tmp) / out.name
        real_argv = [tmp_out.as_posix() if a == str(out) else a for a in argv]
        start = time.monotonic()
        try:
            proc = subprocess.run(real_argv, capture_output=True, text=True, timeout=600)
        except FileNotFoundError as exc:
            raise ToolchainMissing(argv[0], str(exc)) from exc
        if proc.returncode != 0 or not tmp_out.is_file():
            raise CompileFailure(case.id, cell, argv, proc.returncode, proc.stderr)
        meta = {
            "case_id": case.id,
            "target": target,
            "optimization": opt,
            "variant": variant or None,
            "compiler_version": tool_version(template),
            "command": argv,
            "inputs": inputs,
            "inputs_digest": digest,
            "artifact": out.name,
            "artifact_sha256": _sha256(tmp_out),
            "compile_seconds": round(time.monotonic() - start, 3),
        }
        os.replace(tmp_out, out)
        _atomic_write(sidecar, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return Artifact(case.id, target, opt, out, meta, variant)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass
class BuildResult:
    artifacts: dict[tuple[str, Cell], Artifact] = field(default_factory=dict)
    failures: list[CompileFailure] = field(default_factory=list)

    def get(self, case_id: str, cell: Cell) -> Artifact | None:
        return self.artifacts.get((case_id, cell))


def build_corpus(
    manifest: CorpusManifest,
    out_root: str | Path,
    cells: Iterable[tuple[str, Cell]] | None = None,
    toolchain: Toolchain | None = None,
    workers: int | None = None,
    reuse: bool = True,
) -> BuildResult:
    """Compile many cells with a bounded thread pool.  Compile failures are
    collected per cell; a missing toolchain aborts the whole build."""
    tc = toolchain or manifest.toolchain
    if cells is None:
        cells = [(c.id, cell) for c in manifest.cases for cell in c.compile_matrix]
    jobs = list(cells)
    if any(cell[0] == WASM for _, cell in jobs) and "{wasi_sysroot}" in tc.wasm:
        ensure_wasi_sysroot()  # build once before the pool fans out
    workers = workers or min(4, os.cpu_count() or 1)
    result = BuildResult()

    def one(job):
        cid, cell = job
        return job, compile_case(manifest.case(cid), cell, tc, out_root, reuse=reuse)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(one, j) for j in jobs]
        for fut in futures:
            try:
                job, art = fut.result()
            except CompileFailure as exc:
                result.failures.append(exc)
                continue
            result.artifacts[job] = art
    return result


def prebuilt_root(manifest: CorpusManifest) -> Path:
    return manifest.root / "prebuilt"


def iter_prebuilt(root: str | Path, opt: str | None = None) -> Iterator[Artifact]:
    """Bundled wasm artifacts under root/<case>/wasm32-wasi-<opt>/."""
    root = Path(root)
    for sidecar in sorted(root.glob(f"*/{WASM}-*/{SIDECAR}")):
        meta = json.loads(sidecar.read_text())
        if opt is not None and meta["optimization"] != opt:
            continue
        yield Artifact(meta["case_id"], WASM, meta["optimization"],
                       sidecar.parent / meta["artifact"], meta)
