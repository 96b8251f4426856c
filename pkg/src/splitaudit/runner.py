"""Execute the train/evaluate cycle per materialized split.

Real detectors plug in through a subprocess adapter contract: the command
template receives a split manifest path and must write a metrics JSON.
The built-in mock detector stands in for desk-scale validation: it maps
the injected leakage fraction through a concave response curve so the
whole audit pipeline can be exercised in milliseconds.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset import DatasetManifest, SplitSpec
from .detmetrics import EvalMetrics, metrics_from_json_dict, metrics_to_json_dict
from .errors import (
    AdapterTimeoutError,
    ConfigError,
    ExternalCommandError,
    MalformedMetricsError,
    RunError,
)
from .leakage import (
    LeakagePlan,
    MaterializedSplit,
    MaterializeMode,
    apply_step,
    materialize_to_disk,
    steps_sorted,
)
from .seeds import SeedStream, stable_mix

log = logging.getLogger(__name__)

METRIC_NAMES = ("precision", "recall", "map50", "f1")

SOURCE_EXTERNAL = "external"
SOURCE_MOCK = "mock"

_STDERR_TAIL = 2000


@dataclass(frozen=True)
class AdapterConfig:
    command: str
    timeout: float = 3600.0
    working_dir: Path | None = None
    env: dict[str, str] = field(default_factory=dict)
    parallel_safe: bool = False

    def __post_init__(self) -> None:
        if "{split_manifest}" not in self.command or "{out_metrics}" not in self.command:
            raise ConfigError(
                "adapter command must contain {split_manifest} and {out_metrics}"
            )
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")


@dataclass(frozen=True)
class MockParams:
    """Shape of the synthetic detector response.

    For injected leakage fraction f the effective exposure is
    e = preexisting_leak + (1 - preexisting_leak) * f, and each metric
    rises from its baseline toward its ceiling as e ** curve_exponent,
    plus bounded seeded jitter. F1 is recomputed from the jittered
    precision and recall so records stay internally consistent.
    """

    baseline: dict[str, float]
    ceiling: dict[str, float]
    curve_exponent: float = 0.45
    preexisting_leak: float = 0.0
    noise_eps: float = 0.005
    seed: int = 42

    def __post_init__(self) -> None:
        for table, label in ((self.baseline, "baseline"), (self.ceiling, "ceiling")):
            missing = set(METRIC_NAMES) - set(table)
            if missing:
                raise ConfigError(f"{label} missing metrics: {sorted(missing)}")
            for name, value in table.items():
                if not 0.0 <= value <= 1.0:
                    raise ConfigError(f"{label}[{name}]={value} outside [0, 1]")
        for name in METRIC_NAMES:
            if self.baseline[name] > self.ceiling[name]:
                raise ConfigError(f"baseline[{name}] exceeds ceiling[{name}]")
        if self.curve_exponent <= 0:
            raise ConfigError("curve_exponent must be positive")
        if not 0.0 <= self.preexisting_leak <= 1.0:
            raise ConfigError("preexisting_leak must be in [0, 1]")
        if self.noise_eps < 0:
            raise ConfigError("noise_eps must be >= 0")


_DEFAULT_BASELINE = {"precision": 0.55, "recall": 0.47, "map50": 0.49, "f1": 0.49}
_DEFAULT_CEILING = {"precision": 0.83, "recall": 0.80, "map50": 0.84, "f1": 0.80}


def clean_profile(seed: int = 42) -> MockParams:
    """Leakage-free synthetic detector: steep early response to injection."""
    return MockParams(baseline=dict(_DEFAULT_BASELINE), ceiling=dict(_DEFAULT_CEILING), seed=seed)


def leaky_profile(seed: int = 42, preexisting_leak: float = 0.6) -> MockParams:
    """Synthetic detector whose split already leaks: response saturated."""
    return MockParams(
        baseline=dict(_DEFAULT_BASELINE),
        ceiling=dict(_DEFAULT_CEILING),
        preexisting_leak=preexisting_leak,
        seed=seed,
    )


MOCK_PROFILES = {"clean": clean_profile, "leaky": leaky_profile}


@dataclass(frozen=True)
class RunRecord:
    percent: int
    repetition: int
    metrics: EvalMetrics
    source: str
    wall_time: float
    base_split_hash: str | None = None


@dataclass(frozen=True)
class RunFailure:
    percent: int
    repetition: int
    error: str
    source: str
    base_split_hash: str | None = None


@dataclass
class RunOutcome:
    records: list[RunRecord]
    failures: list[RunFailure]


def mock_evaluate(
    msplit: MaterializedSplit, base_split: SplitSpec, params: MockParams
) -> RunRecord:
    """Deterministic synthetic evaluation of one materialized split.

    Reports zero wall time so journals replay byte-identically.
    """
    overlap = len(msplit.train_ids & msplit.test_ids)
    injected = overlap / len(msplit.test_ids)
    exposure = min(1.0, max(0.0, params.preexisting_leak + (1.0 - params.preexisting_leak) * injected))
    gain = exposure**params.curve_exponent

    step = msplit.provenance
    stream = SeedStream(stable_mix(params.seed, step.percent, step.repetition))
    values: dict[str, float] = {}
    for name in METRIC_NAMES:
        value = params.baseline[name] + (params.ceiling[name] - params.baseline[name]) * gain
        if params.noise_eps > 0:
            value += stream.uniform(-params.noise_eps, params.noise_eps)
        values[name] = min(1.0, max(0.0, value))
    metrics = EvalMetrics(
        precision=values["precision"],
        recall=values["recall"],
        map50=values["map50"],
        f1=EvalMetrics.f1_from(values["precision"], values["recall"]),
    )
    metrics.validate()
    return RunRecord(
        percent=step.percent,
        repetition=step.repetition,
        metrics=metrics,
        source=SOURCE_MOCK,
        wall_time=0.0,
    )


def _substitute(command: str, split_manifest: Path, out_metrics: Path) -> list[str]:
    tokens = shlex.split(command)
    return [
        token.replace("{split_manifest}", str(split_manifest)).replace(
            "{out_metrics}", str(out_metrics)
        )
        for token in tokens
    ]


def run_external(
    msplit: MaterializedSplit,
    manifest: DatasetManifest | None,
    adapter: AdapterConfig,
    run_dir: Path | str,
    *,
    base_split: SplitSpec | None = None,
) -> RunRecord:
    """Materialize the split, invoke the adapter, parse its metrics file."""
    run_path = Path(run_dir)
    split_manifest = materialize_to_disk(
        msplit, manifest, run_path, MaterializeMode.MANIFEST_ONLY,
        base_split=base_split, force=True,
    )
    out_metrics = run_path / "metrics.json"
    argv = _substitute(adapter.command, split_manifest, out_metrics)
    env = {**os.environ, **adapter.env} if adapter.env else None

    started = time.monotonic()
    try:
        proc = subprocess.run(
            argv,
            cwd=adapter.working_dir,
            env=env,
            capture_output=True,
            text=True,
            timeout=adapter.timeout,
        )
    except subprocess.TimeoutExpired as exc:
        tail = (exc.stderr or b"")
        if isinstance(tail, bytes):
            tail = tail.decode(errors="replace")
        raise AdapterTimeoutError(
            f"adapter timed out after {adapter.timeout}s: {tail[-_STDERR_TAIL:]}"
        ) from exc
    except OSError as exc:
        raise ExternalCommandError(f"adapter could not start: {exc}") from exc
    wall_time = time.monotonic() - started

    if proc.returncode != 0:
        raise ExternalCommandError(
            f"adapter exited {proc.returncode}: {proc.stderr[-_STDERR_TAIL:]}"
        )
    if not out_metrics.is_file():
        raise MalformedMetricsError(f"adapter wrote no metrics file at {out_metrics}")
    try:
        doc = json.loads(out_metrics.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedMetricsError(f"metrics file is not valid JSON: {exc}") from exc
    metrics = metrics_from_json_dict(doc)

    step = msplit.provenance
    return RunRecord(
        percent=step.percent,
        repetition=step.repetition,
        metrics=metrics,
        source=SOURCE_EXTERNAL,
        wall_time=wall_time,
    )


def _record_to_journal_dict(record: RunRecord) -> dict:
    return {
        "percent": record.percent,
        "repetition": record.repetition,
        "status": "ok",
        "source": record.source,
        "wall_time": record.wall_time,
        "base_split_hash": record.base_split_hash,
        "metrics": metrics_to_json_dict(record.metrics),
    }


def _failure_to_journal_dict(failure: RunFailure) -> dict:
    return {
        "percent": failure.percent,
        "repetition": failure.repetition,
        "status": "failed",
        "source": failure.source,
        "base_split_hash": failure.base_split_hash,
        "error": failure.error,
    }


def _entry_from_journal_dict(doc: dict) -> RunRecord | RunFailure:
    if doc.get("status") == "failed":
        return RunFailure(
            percent=int(doc["percent"]),
            repetition=int(doc["repetition"]),
            error=str(doc.get("error", "")),
            source=str(doc.get("source", "")),
            base_split_hash=doc.get("base_split_hash"),
        )
    return RunRecord(
        percent=int(doc["percent"]),
        repetition=int(doc["repetition"]),
        metrics=metrics_from_json_dict(doc["metrics"]),
        source=str(doc.get("source", "")),
        wall_time=float(doc.get("wall_time", 0.0)),
        base_split_hash=doc.get("base_split_hash"),
    )


def read_journal(path: Path | str) -> list[RunRecord | RunFailure]:
    entries: list[RunRecord | RunFailure] = []
    journal = Path(path)
    if not journal.is_file():
        return entries
    for line_no, raw in enumerate(journal.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            entries.append(_entry_from_journal_dict(json.loads(line)))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise RunError(f"{journal}:{line_no}: bad journal line: {exc}") from exc
    return entries


def run_plan(
    plan: LeakagePlan,
    mode: str,
    *,
    adapter: AdapterConfig | None = None,
    mock: MockParams | None = None,
    manifest: DatasetManifest | None = None,
    journal_path: Path | str | None = None,
    work_dir: Path | str | None = None,
    jobs: int | None = None,
) -> RunOutcome:
    """One record per (percent, repetition), resumable through the journal.

    Already-journaled steps are skipped; a failed step stays recorded and
    is excluded from downstream means. The returned lists are sorted by
    (percent, repetition) regardless of scheduling.
    """
    if mode == SOURCE_MOCK:
        params = mock or clean_profile()
        worker_count = jobs or (os.cpu_count() or 1)
    elif mode == SOURCE_EXTERNAL:
        if adapter is None:
            raise ConfigError("external mode needs an AdapterConfig")
        params = None
        worker_count = jobs if (jobs and adapter.parallel_safe) else 1
    else:
        raise ConfigError(f"unknown run mode {mode!r}")

    split_hash = plan.base_split_hash
    done: dict[tuple[int, int], RunRecord | RunFailure] = {}
    if journal_path is not None:
        for entry in read_journal(journal_path):
            if entry.base_split_hash and entry.base_split_hash != split_hash:
                raise RunError(
                    f"journal {journal_path} belongs to split "
                    f"{entry.base_split_hash[:12]}, plan is {split_hash[:12]}"
                )
            done[(entry.percent, entry.repetition)] = entry

    pending = [
        step for step in steps_sorted(plan.steps) if (step.percent, step.repetition) not in done
    ]

    journal_lock = threading.Lock()
    journal_file = None
    if journal_path is not None:
        Path(journal_path).parent.mkdir(parents=True, exist_ok=True)
        journal_file = open(journal_path, "a")

    base_work = Path(work_dir) if work_dir is not None else None

    def execute(step) -> RunRecord | RunFailure:
        msplit = apply_step(plan.base_split, step)
        try:
            if mode == SOURCE_MOCK:
                record = mock_evaluate(msplit, plan.base_split, params)
            else:
                if base_work is None:
                    raise ConfigError("external mode needs a work_dir")
                run_dir = base_work / f"p{step.percent:03d}_r{step.repetition:02d}"
                record = run_external(
                    msplit, manifest, adapter, run_dir, base_split=plan.base_split
                )
            entry: RunRecord | RunFailure = replace(record, base_split_hash=split_hash)
        except RunError as exc:
            log.warning(
                "step %d%% repetition %d failed: %s", step.percent, step.repetition, exc
            )
            entry = RunFailure(
                percent=step.percent,
                repetition=step.repetition,
                error=f"{type(exc).__name__}: {exc}",
                source=mode,
                base_split_hash=split_hash,
            )
        if journal_file is not None:
            payload = (
                _record_to_journal_dict(entry)
                if isinstance(entry, RunRecord)
                else _failure_to_journal_dict(entry)
            )
            with journal_lock:
                journal_file.write(json.dumps(payload) + "\n")
                journal_file.flush()
        return entry

    try:
        if worker_count > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=worker_count) as pool:
                fresh = list(pool.map(execute, pending))
        else:
            fresh = [execute(step) for step in pending]
    finally:
        if journal_file is not None:
            journal_file.close()

    for entry in fresh:
        done[(entry.percent, entry.repetition)] = entry

    records = sorted(
        (e for e in done.values() if isinstance(e, RunRecord)),
        key=lambda r: (r.percent, r.repetition),
    )
    failures = sorted(
        (e for e in done.values() if isinstance(e, RunFailure)),
        key=lambda f: (f.percent, f.repetition),
    )
    return RunOutcome(records=records, failures=failures)


def mock_params_from_json_dict(doc: dict) -> MockParams:
    try:
        return MockParams(
            baseline={k: float(v) for k, v in doc["baseline"].items()},
            ceiling={k: float(v) for k, v in doc["ceiling"].items()},
            curve_exponent=float(doc.get("curve_exponent", 0.45)),
            preexisting_leak=float(doc.get("preexisting_leak", 0.0)),
            noise_eps=float(doc.get("noise_eps", 0.005)),
            seed=int(doc.get("seed", 42)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"mock params JSON invalid: {exc}") from exc
