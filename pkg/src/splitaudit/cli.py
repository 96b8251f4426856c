"""Command-line front end binding the audit workflow together.

Subcommands: split, hash, scan, plan, run, audit, report. All state lives
on disk under user-chosen paths so long runs are resumable and
inspectable. Exit codes: 0 = no leakage detected / success, 3 = leakage
detected, 1 = error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .audit import (
    EXIT_CLEAN,
    EXIT_DETECTED,
    EXIT_ERROR,
    Combination,
    VerdictRule,
    build_report,
    detect_leakage,
    quorum_for,
    summarize_runs,
)
from .dataset import (
    ManifestFormat,
    SplitStrategy,
    load_manifest,
    load_split,
    make_split,
    save_split,
    validate_split,
)
from .errors import ConfigError, SplitAuditError
from .leakage import (
    DEFAULT_MASTER_SEED,
    DEFAULT_REPETITIONS,
    load_plan,
    make_leakage_plan,
    plan_overlap_counts,
    save_plan,
)
from .phash import hash_corpus, read_hashes_csv, write_hashes_csv
from .report import load_report_file, write_report_files
from .runner import (
    MOCK_PROFILES,
    AdapterConfig,
    RunRecord,
    mock_params_from_json_dict,
    read_journal,
    run_plan,
)
from .simindex import DEFAULT_MAX_DIST, DEFAULT_PAIR_CAP, cross_split_scan, load_report, save_report

log = logging.getLogger("splitaudit")


def _load_config(ns: argparse.Namespace) -> dict:
    """Config file values fill in flags the user left unset (flags win)."""
    if not getattr(ns, "config", None):
        return {}
    doc = json.loads(Path(ns.config).read_text())
    if not isinstance(doc, dict):
        raise ConfigError(f"config {ns.config} must be a JSON object")
    section = doc.get(ns.command)
    merged = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    if isinstance(section, dict):
        merged.update(section)
    return {k.replace("-", "_"): v for k, v in merged.items()}


def _setting(ns: argparse.Namespace, config: dict, key: str, default=None):
    value = getattr(ns, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _manifest_from(ns, config):
    root = _setting(ns, config, "root")
    if root is None:
        raise ConfigError("--root is required")
    fmt = ManifestFormat(_setting(ns, config, "format", "kitti"))
    return load_manifest(root, fmt)


def _parse_percents(text: str) -> list[int]:
    return [int(part) for part in text.replace(" ", "").split(",") if part]


def cmd_split(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    manifest = _manifest_from(ns, config)
    strategy = SplitStrategy(_setting(ns, config, "strategy", "ratio"))
    train_sequences = _setting(ns, config, "train_seq")
    kwargs = {}
    if strategy is SplitStrategy.BY_RATIO:
        kwargs["ratio"] = float(_setting(ns, config, "ratio", 0.7))
    elif strategy is SplitStrategy.BY_SEQUENCE:
        kwargs["train_sequences"] = set(train_sequences or [])
    else:
        train_file = _setting(ns, config, "train_ids")
        test_file = _setting(ns, config, "test_ids")
        if not train_file or not test_file:
            raise ConfigError("explicit strategy needs --train-ids and --test-ids files")
        kwargs["train_ids"] = set(Path(train_file).read_text().split())
        kwargs["test_ids"] = set(Path(test_file).read_text().split())
    split = make_split(manifest, strategy, **kwargs)
    validation = validate_split(manifest, split)
    if not validation.valid:
        raise ConfigError(f"constructed split failed validation: {validation.issues}")
    out = Path(_setting(ns, config, "out", "split.json"))
    save_split(split, out)
    print(
        f"split written to {out}: {validation.train_count} train / "
        f"{validation.test_count} test ({strategy.value})"
    )
    return EXIT_CLEAN


def cmd_hash(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    manifest = _manifest_from(ns, config)
    split_path = _setting(ns, config, "split")
    side = _setting(ns, config, "side")
    if split_path or side:
        if not split_path or side not in ("train", "test"):
            raise ConfigError("--split and --side train|test go together")
        split = load_split(split_path)
        ids = split.train_ids if side == "train" else split.test_ids
    else:
        ids = manifest.ids()
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    batch = hash_corpus(manifest, ids, jobs=_setting(ns, config, "jobs"))
    out = Path(_setting(ns, config, "out", "hashes.csv"))
    write_hashes_csv(batch.hashes, out)
    for image_id, error in sorted(batch.failures.items()):
        print(f"warning: {image_id} skipped ({error})", file=sys.stderr)
    print(f"{len(batch.hashes)} hashes written to {out}")
    return EXIT_CLEAN


def cmd_scan(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    train = read_hashes_csv(_required(ns, config, "train_hashes"))
    test = read_hashes_csv(_required(ns, config, "test_hashes"))
    report = cross_split_scan(
        train,
        test,
        max_dist=int(_setting(ns, config, "max_dist", DEFAULT_MAX_DIST)),
        pair_cap=int(_setting(ns, config, "pair_cap", DEFAULT_PAIR_CAP)),
        jobs=_setting(ns, config, "jobs"),
    )
    out = _setting(ns, config, "out")
    if out:
        save_report(report, out)
        print(f"similarity report written to {out}")
    md_path = _setting(ns, config, "md")
    if md_path:
        from .simindex import report_to_markdown

        Path(md_path).write_text(
            report_to_markdown(report, even_buckets=bool(getattr(ns, "even_buckets", False)))
        )
    nonzero = {d: n for d, n in report.histogram.items() if n}
    print(
        f"{report.total} pairs at distance <= {report.max_dist}; "
        f"histogram {nonzero or '{}'}"
    )
    return EXIT_CLEAN


def cmd_plan(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    split = load_split(_required(ns, config, "split"))
    percents_text = _setting(ns, config, "percents")
    if percents_text:
        percents = (
            _parse_percents(percents_text)
            if isinstance(percents_text, str)
            else [int(p) for p in percents_text]
        )
    else:
        step = int(_setting(ns, config, "step", 10))
        if not 1 <= step <= 100:
            raise ConfigError(f"--step must be in [1, 100], got {step}")
        percents = list(range(0, 101, step))
    plan = make_leakage_plan(
        split,
        step_percents=percents,
        repetitions=int(_setting(ns, config, "reps", DEFAULT_REPETITIONS)),
        master_seed=int(_setting(ns, config, "seed", DEFAULT_MASTER_SEED)),
    )
    out = Path(_setting(ns, config, "out", "plan.json"))
    save_plan(plan, out)
    counts = plan_overlap_counts(plan)
    print(
        f"plan written to {out}: {len(plan.steps)} steps "
        f"({len(plan.step_percents)} percents x {plan.repetitions} repetitions)"
    )
    print("leaked images per step: " + ", ".join(f"{p}%={n}" for p, n in counts.items()))
    return EXIT_CLEAN


def cmd_run(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    plan = load_plan(_required(ns, config, "plan"))
    work_dir = Path(_setting(ns, config, "work_dir", "splitaudit_work"))
    journal = Path(_setting(ns, config, "journal", work_dir / "runs.jsonl"))
    jobs = _setting(ns, config, "jobs")
    adapter_template = _setting(ns, config, "adapter")
    mock_profile = _setting(ns, config, "mock")
    mock_params_path = _setting(ns, config, "mock_params")

    if adapter_template:
        adapter = AdapterConfig(
            command=adapter_template,
            timeout=float(_setting(ns, config, "timeout", 3600.0)),
            parallel_safe=bool(getattr(ns, "parallel_safe", False)),
        )
        manifest = None
        root = _setting(ns, config, "root")
        if root:
            manifest = load_manifest(root, ManifestFormat(_setting(ns, config, "format", "kitti")))
        outcome = run_plan(
            plan,
            "external",
            adapter=adapter,
            manifest=manifest,
            journal_path=journal,
            work_dir=work_dir,
            jobs=int(jobs) if jobs else None,
        )
    else:
        if mock_params_path:
            params = mock_params_from_json_dict(json.loads(Path(mock_params_path).read_text()))
        else:
            profile = MOCK_PROFILES.get(mock_profile or "clean")
            if profile is None:
                raise ConfigError(f"unknown mock profile {mock_profile!r}")
            seed = _setting(ns, config, "mock_seed")
            params = profile(seed=int(seed)) if seed is not None else profile()
        outcome = run_plan(
            plan,
            "mock",
            mock=params,
            journal_path=journal,
            jobs=int(jobs) if jobs else None,
        )
    print(
        f"{len(outcome.records)} runs recorded, {len(outcome.failures)} failures; "
        f"journal at {journal}"
    )
    for failure in outcome.failures:
        print(
            f"warning: step {failure.percent}% repetition {failure.repetition} "
            f"failed: {failure.error}",
            file=sys.stderr,
        )
    return EXIT_CLEAN


def _rule_from(ns, config) -> VerdictRule:
    percents = _setting(ns, config, "watch_percents")
    metrics = _setting(ns, config, "watch_metrics")
    if isinstance(percents, str):
        percents = _parse_percents(percents)
    if isinstance(metrics, str):
        metrics = [m for m in metrics.replace(" ", "").split(",") if m]
    return VerdictRule(
        threshold=float(_setting(ns, config, "threshold", 0.05)),
        watched_percents=tuple(percents) if percents else VerdictRule().watched_percents,
        watched_metrics=tuple(metrics) if metrics else VerdictRule().watched_metrics,
        combination=Combination(_setting(ns, config, "combination", "any-step-any-metric")),
    )


def cmd_audit(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    plan = load_plan(_required(ns, config, "plan"))
    journal = _required(ns, config, "journal")
    records = [entry for entry in read_journal(journal) if isinstance(entry, RunRecord)]
    quorum = quorum_for(
        plan.repetitions, float(_setting(ns, config, "quorum_frac", 0.8))
    )
    summaries, invalid = summarize_runs(records, quorum=quorum)
    rule = _rule_from(ns, config)
    verdict = detect_leakage(summaries, rule)

    similarity = None
    similarity_path = _setting(ns, config, "similarity")
    if similarity_path:
        similarity = load_report(similarity_path)

    report = build_report(
        plan,
        records,
        verdict,
        similarity,
        summaries=summaries,
        invalid_steps=invalid,
        quorum=quorum,
        dataset_name=_setting(ns, config, "dataset_name", ""),
    )
    out_dir = Path(_setting(ns, config, "out_dir", "audit_out"))
    paths = write_report_files(report, out_dir, figures=not getattr(ns, "no_figures", False))
    print(f"audit artifacts written to {out_dir}: {', '.join(sorted(paths))}")
    if verdict.detected:
        hits = ", ".join(
            f"{hit.percent}% {hit.metric} {hit.rate * 100:+.2f}%" for hit in verdict.triggering
        )
        print(f"LEAKAGE DETECTED ({hits})")
        return EXIT_DETECTED
    print("no leakage detected")
    return EXIT_CLEAN


def cmd_report(ns: argparse.Namespace) -> int:
    config = _load_config(ns)
    report = load_report_file(_required(ns, config, "audit"))
    out_dir = Path(_setting(ns, config, "out_dir", "audit_out"))
    paths = write_report_files(report, out_dir, figures=not getattr(ns, "no_figures", False))
    print(f"report rendered to {out_dir}: {', '.join(sorted(paths))}")
    return EXIT_CLEAN


def _required(ns, config, key: str):
    value = _setting(ns, config, key)
    if value is None:
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitaudit",
        description="Audit object-detection train/test splits for data leakage.",
    )
    parser.add_argument("--version", action="version", version=f"splitaudit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; explicit flags win")

    p = sub.add_parser("split", help="construct and save a train/test split")
    add_common(p)
    p.add_argument("--root", help="dataset root (KITTI layout) or manifest JSON")
    p.add_argument("--format", choices=[f.value for f in ManifestFormat])
    p.add_argument("--strategy", choices=[s.value for s in SplitStrategy])
    p.add_argument("--ratio", type=float, help="train fraction for the ratio strategy")
    p.add_argument("--train-seq", nargs="+", help="sequences forming the train side")
    p.add_argument("--train-ids", help="file of train ids (explicit strategy)")
    p.add_argument("--test-ids", help="file of test ids (explicit strategy)")
    p.add_argument("--out", help="output split JSON path")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("hash", help="hash a corpus side to id,hash_hex CSV")
    add_common(p)
    p.add_argument("--root")
    p.add_argument("--format", choices=[f.value for f in ManifestFormat])
    p.add_argument("--split", help="split JSON to pick a side from")
    p.add_argument("--side", choices=["train", "test"])
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.set_defaults(handler=cmd_hash)

    p = sub.add_parser("scan", help="cross-split near-duplicate scan")
    add_common(p)
    p.add_argument("--train-hashes", help="CSV from `splitaudit hash --side train`")
    p.add_argument("--test-hashes", help="CSV from `splitaudit hash --side test`")
    p.add_argument("--max-dist", type=int)
    p.add_argument("--pair-cap", type=int)
    p.add_argument("--out", help="similarity report JSON path")
    p.add_argument("--md", help="also render a Markdown distance table")
    p.add_argument("--even-buckets", action="store_true")
    p.add_argument("--jobs", type=int)
    p.set_defaults(handler=cmd_scan)

    p = sub.add_parser("plan", help="generate the incremental-leakage schedule")
    add_common(p)
    p.add_argument("--split", help="base split JSON")
    p.add_argument("--step", type=int, help="percent step size (default 10)")
    p.add_argument("--percents", help="explicit comma-separated percents")
    p.add_argument("--reps", type=int, help="repetitions per step (default 10)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("run", help="execute the plan with the mock or an adapter")
    add_common(p)
    p.add_argument("--plan")
    p.add_argument("--mock", choices=sorted(MOCK_PROFILES))
    p.add_argument("--mock-params", help="JSON file with custom mock parameters")
    p.add_argument("--mock-seed", type=int)
    p.add_argument(
        "--adapter",
        help="command template with {split_manifest} and {out_metrics} placeholders",
    )
    p.add_argument("--timeout", type=float, help="adapter timeout in seconds")
    p.add_argument("--parallel-safe", action="store_true")
    p.add_argument("--root", help="dataset root, passed through to the adapter manifest")
    p.add_argument("--format", choices=[f.value for f in ManifestFormat])
    p.add_argument("--work-dir")
    p.add_argument("--journal")
    p.add_argument("--jobs", type=int)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("audit", help="aggregate runs, apply the rule, write the report")
    add_common(p)
    p.add_argument("--plan")
    p.add_argument("--journal")
    p.add_argument("--similarity", help="similarity report JSON to embed")
    p.add_argument("--threshold", type=float, help="trigger threshold (default 0.05)")
    p.add_argument("--watch-percents", help="comma-separated percents (default 10,20)")
    p.add_argument("--watch-metrics", help="comma-separated metrics (default map50,f1)")
    p.add_argument("--combination", choices=[c.value for c in Combination])
    p.add_argument("--quorum-frac", type=float, help="min successful fraction per step")
    p.add_argument("--dataset-name")
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("report", help="re-render artifacts from an audit.json")
    add_common(p)
    p.add_argument("--audit")
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if ns.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return ns.handler(ns)
    except SplitAuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
