"""Aggregate run records, compute relative-increase rates, decide leakage.

The decision rule: after injecting the watched leakage percents (10% and
20% by default), a watched metric whose relative increase over the
previous step is at or below the threshold (5% by default) indicates the
split already leaked before injection. Negative rates count as triggers
too and are flagged as drops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .detmetrics import EvalMetrics
from .errors import (
    DegenerateBaselineError,
    MissingStepsError,
    ProvenanceMismatchError,
    StepInvalidError,
)
from .leakage import LeakagePlan
from .runner import METRIC_NAMES, RunRecord
from .simindex import SimilarityReport

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_DETECTED = 3

DEFAULT_THRESHOLD = 0.05
DEFAULT_WATCHED_PERCENTS = (10, 20)
DEFAULT_WATCHED_METRICS = ("map50", "f1")
DEFAULT_QUORUM_FRACTION = 0.8


class Combination(str, Enum):
    # how watched (percent, metric) cells combine into a detection
    ANY_STEP_ANY_METRIC = "any-step-any-metric"
    ANY_STEP_ALL_METRICS = "any-step-all-metrics"
    ALL_STEPS = "all-steps"


@dataclass(frozen=True)
class VerdictRule:
    threshold: float = DEFAULT_THRESHOLD
    watched_percents: tuple[int, ...] = DEFAULT_WATCHED_PERCENTS
    watched_metrics: tuple[str, ...] = DEFAULT_WATCHED_METRICS
    combination: Combination = Combination.ANY_STEP_ANY_METRIC

    def __post_init__(self) -> None:
        if not self.watched_percents or not self.watched_metrics:
            raise MissingStepsError("rule needs at least one watched percent and metric")
        unknown = set(self.watched_metrics) - set(METRIC_NAMES)
        if unknown:
            raise MissingStepsError(f"unknown watched metrics: {sorted(unknown)}")


@dataclass(frozen=True)
class TriggeredRate:
    percent: int
    metric: str
    rate: float
    is_drop: bool


@dataclass
class Verdict:
    detected: bool
    triggering: list[TriggeredRate]
    rule: VerdictRule


@dataclass
class StepSummary:
    percent: int
    mean_metrics: EvalMetrics
    n_repetitions: int
    rel_increase: dict[str, float] = field(default_factory=dict)


def relative_increase(current: float, previous: float) -> float:
    """(current - previous) / previous; the baseline must be positive."""
    if previous <= 0.0 or not math.isfinite(previous):
        raise DegenerateBaselineError(f"baseline {previous} is not a positive number")
    return (current - previous) / previous


def quorum_for(repetitions: int, fraction: float = DEFAULT_QUORUM_FRACTION) -> int:
    return max(1, math.ceil(repetitions * fraction))


def aggregate_step(records: Sequence[RunRecord], quorum: int = 1) -> StepSummary:
    """Arithmetic per-metric mean over one step's successful repetitions."""
    if not records:
        raise StepInvalidError("no records for step")
    percents = {record.percent for record in records}
    if len(percents) != 1:
        raise StepInvalidError(f"records mix percents {sorted(percents)}")
    if len(records) < quorum:
        raise StepInvalidError(
            f"step {records[0].percent}%: {len(records)} successful repetitions "
            f"< quorum {quorum}"
        )
    # fold in repetition order so the mean is bit-identical no matter how
    # the journal lines were interleaved
    ordered = sorted(records, key=lambda record: record.repetition)
    n = len(ordered)
    means = {
        name: sum(getattr(record.metrics, name) for record in ordered) / n
        for name in METRIC_NAMES
    }
    # means of per-run ratios: the f1 column is averaged like the paper
    # tables, not recomputed from mean precision/recall
    return StepSummary(
        percent=records[0].percent,
        mean_metrics=EvalMetrics(**means),
        n_repetitions=n,
    )


def fill_relative_increases(summaries: Sequence[StepSummary]) -> None:
    """Chain consecutive summaries; the first step records zero rates.

    Metrics whose previous mean is not positive get no rate entry; the
    decision rule rejects such series if it actually watches them.
    """
    for index, summary in enumerate(summaries):
        if index == 0:
            summary.rel_increase = {name: 0.0 for name in METRIC_NAMES}
            continue
        previous = summaries[index - 1]
        rates: dict[str, float] = {}
        for name in METRIC_NAMES:
            baseline = getattr(previous.mean_metrics, name)
            if baseline > 0.0:
                rates[name] = relative_increase(getattr(summary.mean_metrics, name), baseline)
        summary.rel_increase = rates


def summarize_runs(
    records: Iterable[RunRecord], *, quorum: int = 1
) -> tuple[list[StepSummary], list[int]]:
    """Group records by percent and aggregate; under-quorum steps are dropped
    and reported back by percent."""
    grouped: dict[int, list[RunRecord]] = {}
    for record in records:
        grouped.setdefault(record.percent, []).append(record)
    summaries: list[StepSummary] = []
    invalid: list[int] = []
    for percent in sorted(grouped):
        try:
            summaries.append(aggregate_step(grouped[percent], quorum))
        except StepInvalidError:
            invalid.append(percent)
    fill_relative_increases(summaries)
    return summaries, invalid


def summaries_from_means(
    percents: Sequence[int], means_by_metric: dict[str, Sequence[float]]
) -> list[StepSummary]:
    """Build summaries straight from per-step mean series (golden replays)."""
    summaries = []
    for index, percent in enumerate(percents):
        values = {name: 0.0 for name in METRIC_NAMES}
        for name, series in means_by_metric.items():
            values[name] = series[index]
        summaries.append(
            StepSummary(percent=percent, mean_metrics=EvalMetrics(**values), n_repetitions=1)
        )
    fill_relative_increases(summaries)
    return summaries


def detect_leakage(summaries: Sequence[StepSummary], rule: VerdictRule | None = None) -> Verdict:
    """Apply the decision rule to ordered step summaries.

    A cell triggers when its relative increase is <= the threshold
    (inclusive); how cells combine is set by ``rule.combination``:
    any single cell (default), all watched metrics at some step, or a
    trigger at every watched step.
    """
    rule = rule or VerdictRule()
    by_percent = {summary.percent: summary for summary in summaries}
    needed = {0, *rule.watched_percents}
    missing = sorted(needed - set(by_percent))
    if missing:
        raise MissingStepsError(f"summaries lack required percents: {missing}")
    baseline = by_percent[0]
    for name in rule.watched_metrics:
        if getattr(baseline.mean_metrics, name) <= 0.0:
            raise DegenerateBaselineError(f"baseline {name} is not positive")

    triggering: list[TriggeredRate] = []
    per_step_hits: dict[int, list[bool]] = {}
    for percent in rule.watched_percents:
        summary = by_percent[percent]
        hits = []
        for name in rule.watched_metrics:
            if name not in summary.rel_increase:
                raise MissingStepsError(f"step {percent}% lacks a rate for {name}")
            rate = summary.rel_increase[name]
            hit = rate <= rule.threshold
            hits.append(hit)
            if hit:
                triggering.append(
                    TriggeredRate(percent=percent, metric=name, rate=rate, is_drop=rate < 0.0)
                )
        per_step_hits[percent] = hits

    if rule.combination is Combination.ANY_STEP_ANY_METRIC:
        detected = any(any(hits) for hits in per_step_hits.values())
    elif rule.combination is Combination.ANY_STEP_ALL_METRICS:
        detected = any(all(hits) for hits in per_step_hits.values())
    else:  # ALL_STEPS: every watched percent must trigger on some metric
        detected = all(any(hits) for hits in per_step_hits.values())
    return Verdict(detected=detected, triggering=triggering, rule=rule)


@dataclass
class AuditReport:
    dataset_name: str
    base_split_hash: str
    train_count: int
    test_count: int
    repetitions: int
    quorum: int
    steps: list[StepSummary]
    invalid_steps: list[int]
    verdict: Verdict
    similarity: SimilarityReport | None = None
    tool_version: str = ""


def build_report(
    plan: LeakagePlan,
    records: Sequence[RunRecord],
    verdict: Verdict,
    similarity: SimilarityReport | None = None,
    *,
    summaries: Sequence[StepSummary] | None = None,
    invalid_steps: Sequence[int] = (),
    quorum: int | None = None,
    dataset_name: str = "",
) -> AuditReport:
    """Assemble the self-contained audit report for one plan's runs."""
    from . import __version__

    split_hash = plan.base_split_hash
    for record in records:
        if record.base_split_hash and record.base_split_hash != split_hash:
            raise ProvenanceMismatchError(
                f"record {record.percent}%/{record.repetition} belongs to split "
                f"{record.base_split_hash[:12]}, plan is {split_hash[:12]}"
            )
    effective_quorum = quorum if quorum is not None else quorum_for(plan.repetitions)
    if summaries is None:
        summaries_list, invalid = summarize_runs(records, quorum=effective_quorum)
    else:
        summaries_list, invalid = list(summaries), list(invalid_steps)
    return AuditReport(
        dataset_name=dataset_name,
        base_split_hash=split_hash,
        train_count=len(plan.base_split.train_ids),
        test_count=len(plan.base_split.test_ids),
        repetitions=plan.repetitions,
        quorum=effective_quorum,
        steps=summaries_list,
        invalid_steps=invalid,
        verdict=verdict,
        similarity=similarity,
        tool_version=__version__,
    )
