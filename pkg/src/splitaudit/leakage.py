"""Incremental leakage schedules: leak k% of test into train, evict to keep size.

Each (percent, repetition) step is derived independently from the base
split with its own seed, so the whole schedule replays bit-for-bit from
(split, percents, repetitions, master seed) alone.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .dataset import (
    DatasetManifest,
    SplitSpec,
    check_split,
    split_content_hash,
    split_from_json_dict,
    split_to_json_dict,
)
from .errors import InconsistentStepError, OutputDirError, PlanError, SplitError
from .seeds import SeedStream, sample_without_replacement, stable_mix

DEFAULT_STEP_PERCENTS = tuple(range(0, 101, 10))
DEFAULT_REPETITIONS = 10
DEFAULT_MASTER_SEED = 42


def leak_count(test_size: int, percent: int) -> int:
    """Images leaked at a step: round-half-up of test_size * percent / 100."""
    if not 0 <= percent <= 100:
        raise PlanError(f"percent must be in [0, 100], got {percent}")
    return (test_size * percent + 50) // 100


@dataclass(frozen=True)
class LeakageStep:
    percent: int
    repetition: int
    leaked_test_ids: tuple[str, ...]
    evicted_train_ids: tuple[str, ...]
    derived_seed: int

    def __post_init__(self) -> None:
        if len(self.leaked_test_ids) != len(self.evicted_train_ids):
            raise InconsistentStepError(
                f"leaked {len(self.leaked_test_ids)} != evicted {len(self.evicted_train_ids)}"
            )
        if len(set(self.leaked_test_ids)) != len(self.leaked_test_ids):
            raise InconsistentStepError("duplicate leaked ids")
        if len(set(self.evicted_train_ids)) != len(self.evicted_train_ids):
            raise InconsistentStepError("duplicate evicted ids")


@dataclass(frozen=True)
class LeakagePlan:
    base_split: SplitSpec
    step_percents: tuple[int, ...]
    repetitions: int
    master_seed: int
    steps: tuple[LeakageStep, ...]

    @property
    def base_split_hash(self) -> str:
        return split_content_hash(self.base_split)


@dataclass(frozen=True)
class MaterializedSplit:
    train_ids: frozenset[str]
    test_ids: frozenset[str]
    provenance: LeakageStep


class MaterializeMode(str, Enum):
    MANIFEST_ONLY = "manifest"
    SYMLINK_OR_COPY = "tree"


def _validate_percents(step_percents: Iterable[int]) -> tuple[int, ...]:
    percents = tuple(int(p) for p in step_percents)
    if not percents:
        raise PlanError("step_percents must be non-empty")
    for p in percents:
        if not 0 <= p <= 100:
            raise PlanError(f"percent {p} outside [0, 100]")
    if any(b <= a for a, b in zip(percents, percents[1:])):
        raise PlanError(f"step percents must be strictly increasing, got {percents}")
    return percents


def make_leakage_plan(
    split: SplitSpec,
    step_percents: Iterable[int] = DEFAULT_STEP_PERCENTS,
    repetitions: int = DEFAULT_REPETITIONS,
    master_seed: int = DEFAULT_MASTER_SEED,
) -> LeakagePlan:
    """Sample the full (percent x repetition) schedule from the master seed.

    At 100% the leaked set is the whole test side, no sampling involved.
    Eviction always draws from the original train side only.
    """
    percents = _validate_percents(step_percents)
    if repetitions < 1:
        raise PlanError(f"repetitions must be >= 1, got {repetitions}")
    try:
        check_split(split)
    except SplitError as exc:
        raise PlanError(f"base split is invalid: {exc}") from exc
    test_sorted = sorted(split.test_ids)
    train_sorted = sorted(split.train_ids)
    worst = leak_count(len(test_sorted), percents[-1])
    if worst > len(train_sorted):
        raise PlanError(
            f"cannot evict {worst} images from a train side of {len(train_sorted)}"
        )

    steps = []
    for percent in percents:
        count = leak_count(len(test_sorted), percent)
        for repetition in range(1, repetitions + 1):
            seed = stable_mix(master_seed, percent, repetition)
            stream = SeedStream(seed)
            if count == len(test_sorted):
                leaked = list(test_sorted)
            else:
                leaked = sample_without_replacement(test_sorted, count, stream)
            evicted = sample_without_replacement(train_sorted, count, stream)
            steps.append(
                LeakageStep(
                    percent=percent,
                    repetition=repetition,
                    leaked_test_ids=tuple(leaked),
                    evicted_train_ids=tuple(evicted),
                    derived_seed=seed,
                )
            )
    return LeakagePlan(
        base_split=split,
        step_percents=percents,
        repetitions=repetitions,
        master_seed=master_seed,
        steps=tuple(steps),
    )


def apply_step(split: SplitSpec, step: LeakageStep) -> MaterializedSplit:
    """Swap the step's leaked images in and its evicted images out.

    Pure and idempotent; the resulting train side keeps the base size and
    overlaps the test side on exactly the leaked ids.
    """
    leaked = set(step.leaked_test_ids)
    evicted = set(step.evicted_train_ids)
    if not leaked <= split.test_ids:
        raise InconsistentStepError("leaked ids are not a subset of the base test side")
    if not evicted <= split.train_ids:
        raise InconsistentStepError("evicted ids are not a subset of the base train side")
    expected = leak_count(len(split.test_ids), step.percent)
    if len(leaked) != expected:
        raise InconsistentStepError(
            f"step leaks {len(leaked)} ids but {step.percent}% of "
            f"{len(split.test_ids)} is {expected}"
        )
    train = (split.train_ids - evicted) | leaked
    return MaterializedSplit(
        train_ids=frozenset(train),
        test_ids=split.test_ids,
        provenance=step,
    )


def split_manifest_dict(
    msplit: MaterializedSplit,
    manifest: DatasetManifest | None = None,
    base_split: SplitSpec | None = None,
) -> dict:
    doc: dict = {
        "train_ids": sorted(msplit.train_ids),
        "test_ids": sorted(msplit.test_ids),
        "provenance": {
            "percent": msplit.provenance.percent,
            "repetition": msplit.provenance.repetition,
            "derived_seed": msplit.provenance.derived_seed,
            "leaked_ids": sorted(msplit.provenance.leaked_test_ids),
        },
    }
    if base_split is not None:
        doc["base_split_hash"] = split_content_hash(base_split)
    if manifest is not None:
        doc["dataset"] = manifest.name
        doc["class_names"] = list(manifest.class_names)
        if manifest.root is not None:
            doc["root"] = str(manifest.root)
    return doc


def materialize_to_disk(
    msplit: MaterializedSplit,
    manifest: DatasetManifest | None,
    out_dir: Path | str,
    mode: MaterializeMode = MaterializeMode.MANIFEST_ONLY,
    *,
    base_split: SplitSpec | None = None,
    force: bool = False,
) -> Path:
    """Write the split where a detector adapter can consume it.

    Returns the path of the split manifest JSON. ``SYMLINK_OR_COPY``
    additionally lays out train/ and test/ image (and label) trees,
    falling back to copies where symlinks are unavailable.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise OutputDirError(f"{out} exists and is not empty (use force)")
    out.mkdir(parents=True, exist_ok=True)

    manifest_path = out / "split.json"
    manifest_path.write_text(
        json.dumps(split_manifest_dict(msplit, manifest, base_split), indent=2) + "\n"
    )
    if mode is MaterializeMode.MANIFEST_ONLY:
        return manifest_path

    if manifest is None or manifest.root is None:
        raise OutputDirError("tree materialization needs a manifest with a filesystem root")
    by_id = manifest.by_id()
    for side, ids in (("train", msplit.train_ids), ("test", msplit.test_ids)):
        for image_id in sorted(ids):
            record = by_id[image_id]
            _place(manifest.root / image_id, out / side / image_id)
            if record.labels_path:
                _place(manifest.root / record.labels_path, out / side / record.labels_path)
    return manifest_path


def _place(source: Path, target: Path) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    try:
        os.symlink(source, target)
    except OSError:
        shutil.copy2(source, target)


def plan_to_json_dict(plan: LeakagePlan) -> dict:
    return {
        "base_split_ref": plan.base_split_hash,
        "base_split": split_to_json_dict(plan.base_split),
        "master_seed": plan.master_seed,
        "repetitions": plan.repetitions,
        "step_percents": list(plan.step_percents),
        "steps": [
            {
                "percent": step.percent,
                "repetition": step.repetition,
                "derived_seed": step.derived_seed,
                "leaked": list(step.leaked_test_ids),
                "evicted": list(step.evicted_train_ids),
            }
            for step in plan.steps
        ],
    }


def plan_from_json_dict(doc: dict) -> LeakagePlan:
    try:
        split = split_from_json_dict(doc["base_split"])
        steps = tuple(
            LeakageStep(
                percent=int(entry["percent"]),
                repetition=int(entry["repetition"]),
                leaked_test_ids=tuple(entry["leaked"]),
                evicted_train_ids=tuple(entry["evicted"]),
                derived_seed=int(entry["derived_seed"]),
            )
            for entry in doc["steps"]
        )
        plan = LeakagePlan(
            base_split=split,
            step_percents=tuple(int(p) for p in doc["step_percents"]),
            repetitions=int(doc["repetitions"]),
            master_seed=int(doc["master_seed"]),
            steps=steps,
        )
    except KeyError as exc:
        raise PlanError(f"plan JSON missing field {exc}") from exc
    ref = doc.get("base_split_ref")
    if ref and ref != plan.base_split_hash:
        raise PlanError("plan base_split_ref does not match the embedded split")
    return plan


def save_plan(plan: LeakagePlan, path: Path | str) -> None:
    Path(path).write_text(json.dumps(plan_to_json_dict(plan), indent=2) + "\n")


def load_plan(path: Path | str) -> LeakagePlan:
    return plan_from_json_dict(json.loads(Path(path).read_text()))


def plan_overlap_counts(plan: LeakagePlan) -> dict[int, int]:
    """Leaked-image count per percent, i.e. the train/test overlap size."""
    return {p: leak_count(len(plan.base_split.test_ids), p) for p in plan.step_percents}


def steps_sorted(steps: Sequence[LeakageStep]) -> list[LeakageStep]:
    return sorted(steps, key=lambda s: (s.percent, s.repetition))
