"""Differential execution of native and wasm builds, before and after hardening."""
from __future__ import annotations

import datetime as _dt
import json
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .canary_injector import CanaryConfig, HardenError, harden, verify_hardening
from .corpus import (
    NATIVE, WASM, Artifact, CompileFailure, CorpusCase, CorpusManifest, ExpectedOutcome,
    Toolchain, build_corpus, compile_case, expand_template,
)
from .frame_analysis import AmbiguousStackPointer, detect_frames, detect_sp_global, find_escaping_stores
from .toolchain import ToolchainMissing, tool_version
from .wasm_model import WasmError, decode_module, encode_module

REPORT_SCHEMA_VERSION = 1

STACK_SMASH_MARKER = "stack smashing detected"
DEFAULT_MARKERS = (STACK_SMASH_MARKER, "SIGSEGV", "unreachable")
# How a WASI runtime announces a trap; counted as a runtime trap report.
TRAP_REPORT_MARKERS = ("wasm trap",)

EXIT = "exit"
SIGNAL = "signal"
TIMEOUT = "timeout"

NO_CRASH = "no-crash"
BOTH_CRASH = "both-crash"
WASM_ONLY = "wasm-only-crash"
NATIVE_ONLY = "native-only-crash"
CLASSES = (NO_CRASH, BOTH_CRASH, WASM_ONLY, NATIVE_ONLY)

DIVERGENCE_REPRODUCED = "divergence reproduced"
DIVERGENCE_CLOSED = "divergence closed by toolchain"

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_INFRA = 2


class HarnessError(Exception):
    pass


class RuntimeMissing(HarnessError):
    pass


class SpawnFailure(HarnessError):
    pass


class SecondCompilerMissing(HarnessError):
    pass


@dataclass(frozen=True)
class RunOutcome:
    artifact_id: str
    run_index: int
    status: str  # exit | signal | timeout
    code: int | None = None
    signal_name: str | None = None
    markers: frozenset[str] = frozenset()
    wall_time: float = 0.0
    trap_report: bool = False
    stderr_tail: str = field(default="", compare=False)

    @property
    def label(self) -> str:
        if self.status == EXIT:
            return f"exit({self.code})"
        if self.status == SIGNAL:
            return f"signal({self.signal_name})"
        return TIMEOUT

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "status": self.label,
            "markers": sorted(self.markers),
            "wall_time": round(self.wall_time, 4),
        }


@dataclass(frozen=True)
class CrashPolicy:
    """Which outcomes count as a crash.

    Default: a fatal signal, a runtime trap report, or a nonzero exit carrying
    a recognised marker.  Plain nonzero exits and timeouts are not crashes
    unless the corresponding switch is set.
    """

    markers: tuple[str, ...] = DEFAULT_MARKERS
    nonzero_exit_is_crash: bool = False
    timeout_is_crash: bool = False

    def is_crash(self, o: RunOutcome) -> bool:
        if o.status == SIGNAL:
            return True
        if o.status == TIMEOUT:
            return self.timeout_is_crash
        if o.code == 0:
            return False
        return bool(o.markers) or o.trap_report or self.nonzero_exit_is_crash


DEFAULT_POLICY = CrashPolicy()


def scan_markers(stderr: str, markers: Sequence[str], signal_name: str | None = None) -> frozenset[str]:
    found = {m for m in markers if m in stderr}
    if signal_name and signal_name in markers:
        found.add(signal_name)
    return frozenset(found)


def _signal_name(num: int) -> str:
    try:
        return signal.Signals(num).name
    except ValueError:
        return f"SIG{num}"


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _argv_for(artifact: Path, runtime: str, args: Sequence[str]) -> list[str]:
    return expand_template(
        runtime,
        {"artifact": str(artifact), "python": sys.executable},
        {"args": list(args), "artifact": [str(artifact)]},
    )


def run_once(argv: list[str], timeout: float, artifact_id: str, run_index: int,
             markers: Sequence[str] = DEFAULT_MARKERS) -> RunOutcome:
    """One isolated run: fresh process group, private working directory."""
    with tempfile.TemporaryDirectory(prefix="wasmguard-run-") as cwd:
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                argv, cwd=cwd, stdin=subprocess.DEVNULL, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, start_new_session=True,
            )
        except FileNotFoundError as exc:
            raise RuntimeMissing(f"{argv[0]}: {exc}") from exc
        except OSError as exc:
            raise SpawnFailure(f"{argv[0]}: {exc}") from exc
        try:
            _, err = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            _, err = proc.communicate()
            wall = max(time.monotonic() - start, timeout)
            text = err.decode(errors="replace")
            return RunOutcome(artifact_id, run_index, TIMEOUT, None, None,
                              scan_markers(text, markers), wall, False, text[-400:])
        wall = time.monotonic() - start
        # Reap anything the child left behind in its group.
        _kill_group(proc)
    text = err.decode(errors="replace")
    rc = proc.returncode
    trap = any(t in text for t in TRAP_REPORT_MARKERS)
    if rc < 0:
        name = _signal_name(-rc)
        return RunOutcome(artifact_id, run_index, SIGNAL, None, name,
                          scan_markers(text, markers, name), wall, trap, text[-400:])
    return RunOutcome(artifact_id, run_index, EXIT, rc, None,
                      scan_markers(text, markers), wall, trap, text[-400:])


# (module (memory (export "memory") 1) (func (export "_start")))
PROBE_MODULE = bytes.fromhex(
    "0061736d01000000" "010401600000" "03020100" "050301" "0001"
    "071302066d656d6f7279020006" "5f737461727400" "00" "0a040102000b"
)


def probe_runtime(runtime: str, timeout: float = 30.0) -> RunOutcome:
    """Run an empty WASI module; anything but exit(0) means the runtime is broken."""
    with tempfile.TemporaryDirectory(prefix="wasmguard-probe-") as tmp:
        path = Path(tmp) / "probe.wasm"
        path.write_bytes(PROBE_MODULE)
        argv = _argv_for(path, runtime, ())
        if shutil.which(argv[0]) is None:
            raise RuntimeMissing(argv[0])
        out = run_once(argv, timeout, "runtime-probe", 0)
    if out.status != EXIT or out.code != 0:
        raise RuntimeMissing(f"runtime probe ended with {out.label}: {out.stderr_tail.strip()[-300:]}")
    return out


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))


def run_artifact(
    artifact: Artifact | str | Path,
    runs: int,
    timeout: float,
    runtime: str = "{artifact} {args}",
    args: Sequence[str] = (),
    markers: Sequence[str] = DEFAULT_MARKERS,
    workers: int | None = None,
) -> list[RunOutcome]:
    """Run an artifact `runs` times, each in a fresh process, and collect outcomes."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if timeout <= 0:
        raise ValueError("timeout must be > 0")
    if isinstance(artifact, Artifact):
        path, aid = artifact.path, artifact.id
    else:
        path = Path(artifact)
        aid = str(path)
    if not path.is_file():
        raise SpawnFailure(f"artifact not found: {path}")
    argv = _argv_for(path.resolve(), runtime, args)
    if shutil.which(argv[0]) is None:
        raise RuntimeMissing(argv[0])
    with ThreadPoolExecutor(max_workers=workers or default_workers()) as pool:
        futs = [pool.submit(run_once, argv, timeout, aid, i, markers) for i in range(runs)]
        return [f.result() for f in futs]


@dataclass(frozen=True)
class DivergenceClass:
    case_id: str
    opt: str
    cls: str
    native_crash_rate: float
    wasm_crash_rate: float

    @staticmethod
    def from_rates(case_id: str, opt: str, native_rate: float, wasm_rate: float) -> "DivergenceClass":
        if native_rate > 0 and wasm_rate > 0:
            cls = BOTH_CRASH
        elif native_rate > 0:
            cls = NATIVE_ONLY
        elif wasm_rate > 0:
            cls = WASM_ONLY
        else:
            cls = NO_CRASH
        return DivergenceClass(case_id, opt, cls, native_rate, wasm_rate)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "opt": self.opt,
            "class": self.cls,
            "native_crash_rate": self.native_crash_rate,
            "wasm_crash_rate": self.wasm_crash_rate,
        }


def crash_rate(outcomes: Sequence[RunOutcome], policy: CrashPolicy = DEFAULT_POLICY) -> float:
    if not outcomes:
        raise ValueError("no outcomes")
    return sum(policy.is_crash(o) for o in outcomes) / len(outcomes)


def classify(native: Sequence[RunOutcome], wasm: Sequence[RunOutcome],
             policy: CrashPolicy = DEFAULT_POLICY, case_id: str = "", opt: str = "") -> DivergenceClass:
    """Divergence class by the rate rule: any crash in a side counts for that side."""
    return DivergenceClass.from_rates(case_id, opt, crash_rate(native, policy), crash_rate(wasm, policy))


def observed_outcome(outcomes: Sequence[RunOutcome], policy: CrashPolicy = DEFAULT_POLICY) -> ExpectedOutcome:
    """Summarise a cell's runs in the manifest's outcome vocabulary."""
    crashing = [o for o in outcomes if policy.is_crash(o)]
    if crashing:
        marks = set().union(*(o.markers for o in crashing))
        marker = STACK_SMASH_MARKER if STACK_SMASH_MARKER in marks else (min(marks) if marks else None)
        return ExpectedOutcome("crashes", marker)
    if any(o.status == TIMEOUT for o in outcomes):
        return ExpectedOutcome("hangs")
    codes = sorted({o.code for o in outcomes if o.code})
    if codes:
        # Nonzero exits that are not crashes fit no manifest outcome.
        return ExpectedOutcome("fails", ",".join(f"exit {c}" for c in codes))
    return ExpectedOutcome("completes")


def outcome_matches(expected: ExpectedOutcome, outcomes: Sequence[RunOutcome],
                    policy: CrashPolicy = DEFAULT_POLICY) -> bool:
    if expected.crashes:
        crashing = [o for o in outcomes if policy.is_crash(o)]
        if not crashing:
            return False
        return expected.marker is None or any(expected.marker in o.markers for o in crashing)
    return observed_outcome(outcomes, policy) == expected


@dataclass
class SanityResult:
    case_id: str
    opt: str
    crash_report: str  # pass | fail
    compiler_dependence: str  # pass | fail | skipped
    second_compiler: str = ""
    second_class: str | None = None
    detail: str = ""

    @property
    def needs_inspection(self) -> bool:
        return self.crash_report == "fail"

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "opt": self.opt,
            "crash_report": self.crash_report,
            "compiler_dependence": self.compiler_dependence,
            "second_compiler": self.second_compiler,
            "second_class": self.second_class,
            "detail": self.detail,
        }


def sanity_check(
    case: CorpusCase,
    outcomes: Sequence[RunOutcome],
    opt: str = "O1",
    second: Callable[[], Sequence[RunOutcome]] | None = None,
    second_compiler: str = "",
    policy: CrashPolicy = DEFAULT_POLICY,
) -> SanityResult:
    """Crash-report check on native stderr, then optional second-compiler check.

    `second` builds and runs the case with another native compiler; raising
    SecondCompilerMissing (or ToolchainMissing) marks check 2 as skipped.
    """
    smash = any(STACK_SMASH_MARKER in o.markers for o in outcomes if policy.is_crash(o))
    res = SanityResult(case.id, opt, "pass" if smash else "fail", "skipped", second_compiler)
    if not smash:
        res.detail = "native crash lacks the stack-smash marker; inspect manually"
    if second is None:
        return res
    try:
        runs = second()
    except (SecondCompilerMissing, ToolchainMissing) as exc:
        res.detail = (res.detail + "; " if res.detail else "") + f"second compiler unavailable: {exc}"
        return res
    except CompileFailure as exc:
        res.compiler_dependence = "fail"
        res.detail = (res.detail + "; " if res.detail else "") + f"second compiler failed: {exc.returncode}"
        return res
    rate = crash_rate(runs, policy)
    res.second_class = observed_outcome(runs, policy).__str__()
    res.compiler_dependence = "pass" if rate > 0 else "fail"
    return res


@dataclass
class HarnessConfig:
    runs: int | None = None
    timeout: float | None = None
    opt_levels: tuple[str, ...] | None = None
    policy: CrashPolicy = DEFAULT_POLICY
    guard: CanaryConfig = field(default_factory=CanaryConfig)
    workers: int | None = None
    second_compiler: bool = True
    out_root: Path = Path("build/corpus")

    def resolve(self, manifest: CorpusManifest) -> "HarnessConfig":
        runs = self.runs if self.runs is not None else manifest.defaults.runs_per_case
        if runs < 1:
            raise ValueError("runs must be >= 1")
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        opts = self.opt_levels or (manifest.defaults.optimization,)
        return HarnessConfig(runs, self.timeout, tuple(opts), self.policy, self.guard,
                             self.workers or default_workers(), self.second_compiler,
                             Path(self.out_root))

    def timeout_for(self, manifest: CorpusManifest, case: CorpusCase) -> float:
        if self.timeout is not None:
            return self.timeout
        return case.timeout_seconds or manifest.defaults.timeout_seconds


@dataclass
class CellRecord:
    case_id: str
    opt: str
    native: list[RunOutcome]
    wasm: list[RunOutcome]
    divergence: DivergenceClass

    def to_dict(self, policy: CrashPolicy) -> dict:
        d = self.divergence.to_dict()
        for side, runs in (("native", self.native), ("wasm", self.wasm)):
            d[f"{side}_statuses"] = dict(Counter(o.label for o in runs))
            d[f"{side}_markers"] = sorted(set().union(*(o.markers for o in runs)) if runs else ())
            d[f"{side}_outcome"] = str(observed_outcome(runs, policy)) if runs else None
        return d


@dataclass
class Report:
    manifest_path: str
    toolchain: dict
    config: dict
    cases: list[dict] = field(default_factory=list)
    pre: list[CellRecord] = field(default_factory=list)
    post: list[CellRecord] = field(default_factory=list)
    findings: list[dict] = field(default_factory=list)
    harden_reports: list[dict] = field(default_factory=list)
    sanity: list[SanityResult] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)
    drift: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    generated_at: str = ""
    # live state for evaluate_hardening; never serialised
    artifacts: dict = field(default_factory=dict, repr=False)
    hardened_artifacts: dict = field(default_factory=dict, repr=False)
    policy: CrashPolicy = field(default=DEFAULT_POLICY, repr=False)

    def pre_class(self, case_id: str, opt: str) -> str | None:
        for r in self.pre:
            if r.case_id == case_id and r.opt == opt:
                return r.divergence.cls
        return None

    def post_class(self, case_id: str, opt: str) -> str | None:
        for r in self.post:
            if r.case_id == case_id and r.opt == opt:
                return r.divergence.cls
        return None

    def transitions(self) -> list[dict]:
        post = {(r.case_id, r.opt): r.divergence.cls for r in self.post}
        return [
            {"case_id": r.case_id, "opt": r.opt, "before": r.divergence.cls,
             "after": post.get((r.case_id, r.opt))}
            for r in self.pre
        ]

    def summary(self) -> dict:
        def counts(rows):
            c = Counter(r.divergence.cls for r in rows)
            out = {k: c.get(k, 0) for k in CLASSES}
            out["total"] = len(rows)
            return out

        pre = counts(self.pre)
        fixed = sum(1 for t in self.transitions()
                    if t["before"] == NATIVE_ONLY and t["after"] == BOTH_CRASH)
        return {
            "pre_hardening": pre,
            "post_hardening": counts(self.post),
            "native_only_to_both_crash": fixed,
            "divergence_status": DIVERGENCE_REPRODUCED if pre[NATIVE_ONLY] else DIVERGENCE_CLOSED,
        }

    @property
    def infrastructure_failed(self) -> bool:
        return bool(self.errors)

    @property
    def exit_code(self) -> int:
        if self.errors:
            return EXIT_INFRA
        return EXIT_VIOLATED if self.violations else EXIT_OK

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "generated_at": self.generated_at,
            "manifest": self.manifest_path,
            "toolchain": self.toolchain,
            "config": self.config,
            "cases": self.cases,
            "pre_hardening": [r.to_dict(self.policy) for r in self.pre],
            "post_hardening": [r.to_dict(self.policy) for r in self.post],
            "transitions": self.transitions(),
            "findings": self.findings,
            "harden_reports": self.harden_reports,
            "sanity_checks": [s.to_dict() for s in self.sanity],
            "expectation_violations": self.violations,
            "drift": self.drift,
            "errors": self.errors,
            "summary": self.summary(),
        }

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".report-", dir=path.parent)
        with os.fdopen(fd, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=False)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def format_summary(report: Report | dict) -> str:
    """Divergence counts per phase as a small fixed-width table."""
    d = report.to_dict() if isinstance(report, Report) else report
    s = d["summary"]
    head = ["phase", "No crash", "Both crash", "Wasm crash", "Native crash", "total"]
    rows = [head]
    for phase, key in (("before hardening", "pre_hardening"), ("after hardening", "post_hardening")):
        c = s[key]
        if not c["total"]:
            continue
        rows.append([phase, c[NO_CRASH], c[BOTH_CRASH], c[WASM_ONLY], c[NATIVE_ONLY], c["total"]])
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(head))]
    lines = ["  ".join(str(v).rjust(w) if i else str(v).ljust(w) for i, (v, w) in enumerate(zip(r, widths)))
             for r in rows]
    lines.append(f"native-only -> both-crash after hardening: {s['native_only_to_both_crash']}")
    lines.append(f"status: {s['divergence_status']}")
    if d.get("expectation_violations"):
        lines.append(f"expectation violations: {len(d['expectation_violations'])}")
    if d.get("errors"):
        lines.append(f"infrastructure errors: {len(d['errors'])}")
    return "\n".join(lines)


def _toolchain_info(tc: Toolchain) -> dict:
    return {
        "native": tc.native,
        "wasm": tc.wasm,
        "native_second": tc.native_second,
        "runtime": tc.runtime,
        "native_version": tool_version(tc.native),
        "wasm_version": tool_version(tc.wasm),
        "native_second_version": tool_version(tc.native_second) if tc.native_second else None,
        "python": sys.version.split()[0],
    }


def harden_artifact(art: Artifact, guard: CanaryConfig) -> tuple[Path, dict, list[dict]]:
    """Harden a wasm artifact next to itself; returns (path, report dict, findings)."""
    data = art.path.read_bytes()
    m = decode_module(data)
    sp = detect_sp_global(m)
    scan = detect_frames(m, sp)
    findings = [
        {"function_index": f.function_index, "store_index": f.store_index,
         "store_width": f.store_width, "effective_offset": f.effective_offset,
         "frame_size": f.frame_size, "severity": f.severity}
        for f in find_escaping_stores(m, scan.frames, include_warnings=True)
    ]
    hm, rep = harden(m, scan, guard)
    if hm is m:
        return art.path, rep.to_dict(), findings
    verify_hardening(m, hm, rep).raise_for_failures()
    out = art.path.with_name("hardened.wasm")
    fd, tmp = tempfile.mkstemp(prefix=".hardened-", dir=out.parent)
    with os.fdopen(fd, "wb") as fh:
        fh.write(encode_module(hm))
    os.replace(tmp, out)
    return out, rep.to_dict(), findings


def _check_cell(report: Report, case: CorpusCase, target: str, opt: str,
                outcomes: Sequence[RunOutcome]) -> None:
    exp = case.expected.get((target, opt))
    if exp is not None and not outcome_matches(exp, outcomes, report.policy):
        report.violations.append({
            "case_id": case.id, "target": target, "opt": opt, "phase": "pre-hardening",
            "expected": str(exp), "observed": str(observed_outcome(outcomes, report.policy)),
        })
    ref = case.reference_expected.get((target, opt))
    if ref is not None and not outcome_matches(ref, outcomes, report.policy):
        report.drift.append({
            "case_id": case.id, "target": target, "opt": opt,
            "reference": str(ref), "observed": str(observed_outcome(outcomes, report.policy)),
        })


Progress = Callable[[str], None]


def run_pre_hardening(
    manifest: CorpusManifest,
    config: HarnessConfig | None = None,
    toolchain: Toolchain | None = None,
    progress: Progress | None = None,
) -> Report:
    """Compile the selected cells, run both targets and classify each (case, opt)."""
    cfg = (config or HarnessConfig()).resolve(manifest)
    tc = toolchain or manifest.toolchain
    say = progress or (lambda _msg: None)
    report = Report(
        manifest_path=str(manifest.path),
        toolchain=_toolchain_info(tc),
        config={
            "runs": cfg.runs,
            "timeout_seconds": cfg.timeout,
            "default_timeout_seconds": manifest.defaults.timeout_seconds,
            "opt_levels": list(cfg.opt_levels),
            "markers": list(cfg.policy.markers),
            "nonzero_exit_is_crash": cfg.policy.nonzero_exit_is_crash,
            "timeout_is_crash": cfg.policy.timeout_is_crash,
            "guard_size": cfg.guard.guard_size,
            "guard_mode": cfg.guard.guard_mode,
        },
        generated_at=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        policy=cfg.policy,
    )
    report.cases = [{"id": c.id, "category": c.category, "provenance": c.provenance}
                    for c in manifest.cases]
    jobs = [(c.id, (t, o)) for c in manifest.cases for o in cfg.opt_levels
            for t in (NATIVE, WASM) if (t, o) in c.compile_matrix]
    try:
        probe_runtime(tc.runtime)
    except HarnessError as exc:
        report.errors.append({"stage": "runtime-probe", "error": str(exc)})
        return report
    try:
        built = build_corpus(manifest, cfg.out_root, jobs, tc, workers=cfg.workers)
    except ToolchainMissing as exc:
        report.errors.append({"stage": "compile", "error": str(exc)})
        return report
    for f in built.failures:
        report.errors.append({"stage": "compile", "case_id": f.case_id,
                              "cell": f"{f.cell[0]}-{f.cell[1]}", "error": f.stderr[-2000:]})
    report.artifacts = built.artifacts

    for case in manifest.cases:
        timeout = cfg.timeout_for(manifest, case)
        for opt in cfg.opt_levels:
            n_art = built.get(case.id, (NATIVE, opt))
            w_art = built.get(case.id, (WASM, opt))
            if n_art is None or w_art is None:
                continue
            say(f"run {case.id} {opt}")
            try:
                native = run_artifact(n_art, cfg.runs, timeout, tc.native_runtime, case.args,
                                      cfg.policy.markers, cfg.workers)
                wasm = run_artifact(w_art, cfg.runs, timeout, tc.runtime, case.args,
                                    cfg.policy.markers, cfg.workers)
            except HarnessError as exc:
                report.errors.append({"stage": "run", "case_id": case.id, "opt": opt, "error": str(exc)})
                continue
            div = classify(native, wasm, cfg.policy, case.id, opt)
            report.pre.append(CellRecord(case.id, opt, native, wasm, div))
            _check_cell(report, case, NATIVE, opt, native)
            _check_cell(report, case, WASM, opt, wasm)
            if div.cls == NATIVE_ONLY:
                second = None
                if cfg.second_compiler:
                    second = _second_runner(case, opt, tc, cfg, timeout)
                report.sanity.append(sanity_check(
                    case, native, opt, second,
                    tc.native_second.split()[0] if tc.native_second else "", cfg.policy))
    return report


def _second_runner(case, opt, tc: Toolchain, cfg: HarnessConfig, timeout: float):
    def go():
        if not tc.native_second:
            raise SecondCompilerMissing("no second native compiler configured")
        exe = tc.native_second.split()[0]
        if shutil.which(exe) is None:
            raise SecondCompilerMissing(exe)
        art = compile_case(case, (NATIVE, opt), tc, cfg.out_root, second=True)
        return run_artifact(art, cfg.runs, timeout, tc.native_runtime, case.args,
                            cfg.policy.markers, cfg.workers)
    return go


def evaluate_hardening(
    report: Report,
    manifest: CorpusManifest,
    config: HarnessConfig | None = None,
    toolchain: Toolchain | None = None,
    progress: Progress | None = None,
) -> Report:
    """Harden every wasm cell of the pre-hardening phase and re-run it.

    Native outcomes are reused; the post phase pairs them with the hardened
    wasm outcomes.  Cases that were native-only-crash must become both-crash
    and cases whose wasm never crashed must not start crashing, unless the
    static analysis flagged an escaping store in the module.
    """
    cfg = (config or HarnessConfig()).resolve(manifest)
    tc = toolchain or manifest.toolchain
    say = progress or (lambda _msg: None)
    for rec in report.pre:
        case = manifest.case(rec.case_id)
        art = report.artifacts.get((case.id, (WASM, rec.opt)))
        if art is None:
            continue
        try:
            path, hrep, findings = harden_artifact(art, cfg.guard)
        except (WasmError, HardenError, AmbiguousStackPointer) as exc:
            report.errors.append({"stage": "harden", "case_id": case.id, "opt": rec.opt, "error": str(exc)})
            continue
        report.harden_reports.append({"case_id": case.id, "opt": rec.opt, **hrep})
        report.findings.extend({"case_id": case.id, "opt": rec.opt, **f} for f in findings)
        report.hardened_artifacts[(case.id, rec.opt)] = path
        say(f"run hardened {case.id} {rec.opt}")
        try:
            wasm = run_artifact(Artifact(case.id, WASM, rec.opt, path, {}, "hardened"), cfg.runs,
                                cfg.timeout_for(manifest, case), tc.runtime, case.args,
                                cfg.policy.markers, cfg.workers)
        except HarnessError as exc:
            report.errors.append({"stage": "run-hardened", "case_id": case.id, "opt": rec.opt,
                                  "error": str(exc)})
            continue
        div = classify(rec.native, wasm, cfg.policy, case.id, rec.opt)
        report.post.append(CellRecord(case.id, rec.opt, rec.native, wasm, div))
        before = rec.divergence
        flagged = any(f["severity"] == "escapes-frame" for f in findings)
        declared = case.hardened_expected.get(rec.opt)
        if declared is not None:
            if not outcome_matches(declared, wasm, cfg.policy):
                report.violations.append({
                    "case_id": case.id, "opt": rec.opt, "phase": "post-hardening",
                    "expected": f"wasm {declared}", "observed": f"wasm {observed_outcome(wasm, cfg.policy)}"})
        elif before.cls == NATIVE_ONLY and div.cls != BOTH_CRASH:
            report.violations.append({"case_id": case.id, "opt": rec.opt, "phase": "post-hardening",
                                      "expected": BOTH_CRASH, "observed": div.cls})
        if before.cls == NO_CRASH and div.wasm_crash_rate > 0 and not flagged:
            report.violations.append({"case_id": case.id, "opt": rec.opt, "phase": "post-hardening",
                                      "expected": before.cls, "observed": div.cls})
    return report


def run_diff(
    manifest: CorpusManifest,
    config: HarnessConfig | None = None,
    toolchain: Toolchain | None = None,
    progress: Progress | None = None,
    hardening: bool = True,
) -> Report:
    report = run_pre_hardening(manifest, config, toolchain, progress)
    if hardening and not report.errors:
        evaluate_hardening(report, manifest, config, toolchain, progress)
    return report


def load_report(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {data.get('schema_version')!r}")
    return data


def optimization_flip(report: Report | dict, case_id: str, low: str = "O0", high: str = "O1") -> dict:
    """Class pattern of one case across two optimization levels.

    The expected shape is no-crash at `low` and native-only-crash at `high`.
    When the host compiler no longer crashes natively at `high`, the flip is
    reported as closed by the toolchain instead of as a harness failure.
    """
    d = report.to_dict() if isinstance(report, Report) else report
    classes = {r["opt"]: r for r in d["pre_hardening"] if r["case_id"] == case_id}
    lo, hi = classes.get(low), classes.get(high)
    if lo is None or hi is None:
        raise KeyError(f"{case_id} lacks {low} or {high} results")
    wasm_quiet = lo["wasm_crash_rate"] == 0 and hi["wasm_crash_rate"] == 0
    native_low_quiet = lo["native_crash_rate"] == 0
    if native_low_quiet and wasm_quiet and hi["class"] == NATIVE_ONLY:
        status = "flip reproduced"
    elif native_low_quiet and wasm_quiet and hi["native_crash_rate"] == 0:
        status = "flip closed by toolchain"
    else:
        status = "flip violated"
    return {"case_id": case_id, low: lo["class"], high: hi["class"], "status": status}
