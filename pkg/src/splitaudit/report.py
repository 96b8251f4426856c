"""Render audit reports to JSON, CSV, Markdown and figure files."""

from __future__ import annotations

import json
from pathlib import Path

from .audit import (
    AuditReport,
    Combination,
    StepSummary,
    TriggeredRate,
    Verdict,
    VerdictRule,
)
from .detmetrics import EvalMetrics
from .runner import METRIC_NAMES
from .simindex import (
    SimilarityReport,
    report_from_json_dict,
    report_to_json_dict,
    report_to_markdown,
)

STEPS_CSV_HEADER = (
    "percent,precision,recall,map50,f1,rel_precision,rel_recall,rel_map50,rel_f1"
)


def report_to_json(report: AuditReport) -> dict:
    verdict = report.verdict
    return {
        "tool": {"name": "splitaudit", "version": report.tool_version},
        "dataset": report.dataset_name,
        "base_split_hash": report.base_split_hash,
        "train_count": report.train_count,
        "test_count": report.test_count,
        "repetitions": report.repetitions,
        "quorum": report.quorum,
        "invalid_steps": list(report.invalid_steps),
        "steps": [
            {
                "percent": step.percent,
                "n_repetitions": step.n_repetitions,
                "means": {name: getattr(step.mean_metrics, name) for name in METRIC_NAMES},
                "rel_increase": dict(step.rel_increase),
            }
            for step in report.steps
        ],
        "verdict": {
            "detected": verdict.detected,
            "triggering": [
                {
                    "percent": hit.percent,
                    "metric": hit.metric,
                    "rate": hit.rate,
                    "is_drop": hit.is_drop,
                }
                for hit in verdict.triggering
            ],
            "rule": {
                "threshold": verdict.rule.threshold,
                "watched_percents": list(verdict.rule.watched_percents),
                "watched_metrics": list(verdict.rule.watched_metrics),
                "combination": verdict.rule.combination.value,
            },
        },
        "similarity": report_to_json_dict(report.similarity) if report.similarity else None,
    }


def report_from_json(doc: dict) -> AuditReport:
    rule_doc = doc["verdict"]["rule"]
    rule = VerdictRule(
        threshold=float(rule_doc["threshold"]),
        watched_percents=tuple(int(p) for p in rule_doc["watched_percents"]),
        watched_metrics=tuple(rule_doc["watched_metrics"]),
        combination=Combination(rule_doc["combination"]),
    )
    verdict = Verdict(
        detected=bool(doc["verdict"]["detected"]),
        triggering=[
            TriggeredRate(
                percent=int(hit["percent"]),
                metric=hit["metric"],
                rate=float(hit["rate"]),
                is_drop=bool(hit["is_drop"]),
            )
            for hit in doc["verdict"]["triggering"]
        ],
        rule=rule,
    )
    steps = []
    for entry in doc["steps"]:
        steps.append(
            StepSummary(
                percent=int(entry["percent"]),
                mean_metrics=EvalMetrics(**entry["means"]),
                n_repetitions=int(entry["n_repetitions"]),
                rel_increase={k: float(v) for k, v in entry["rel_increase"].items()},
            )
        )
    similarity = doc.get("similarity")
    return AuditReport(
        dataset_name=doc.get("dataset", ""),
        base_split_hash=doc["base_split_hash"],
        train_count=int(doc["train_count"]),
        test_count=int(doc["test_count"]),
        repetitions=int(doc["repetitions"]),
        quorum=int(doc["quorum"]),
        steps=steps,
        invalid_steps=[int(p) for p in doc.get("invalid_steps", [])],
        verdict=verdict,
        similarity=report_from_json_dict(similarity) if similarity else None,
        tool_version=doc.get("tool", {}).get("version", ""),
    )


def steps_csv_text(report: AuditReport) -> str:
    lines = [STEPS_CSV_HEADER]
    for step in report.steps:
        means = [f"{getattr(step.mean_metrics, name):.6f}" for name in METRIC_NAMES]
        rates = [f"{step.rel_increase.get(name, 0.0):.6f}" for name in METRIC_NAMES]
        lines.append(",".join([str(step.percent), *means, *rates]))
    return "\n".join(lines) + "\n"


def _verdict_markdown(verdict: Verdict) -> list[str]:
    rule = verdict.rule
    lines = [
        "## Verdict",
        "",
        f"**{'LEAKAGE DETECTED' if verdict.detected else 'No leakage detected'}**",
        "",
        f"- threshold: relative increase <= {rule.threshold * 100:.1f}%",
        f"- watched steps: {', '.join(f'{p}%' for p in rule.watched_percents)}",
        f"- watched metrics: {', '.join(rule.watched_metrics)}",
        f"- combination: {rule.combination.value}",
        "",
    ]
    if verdict.triggering:
        lines += ["| step | metric | relative increase | note |", "| --- | --- | --- | --- |"]
        for hit in verdict.triggering:
            note = "performance drop" if hit.is_drop else ""
            lines.append(f"| {hit.percent}% | {hit.metric} | {hit.rate * 100:.2f}% | {note} |")
        lines.append("")
    return lines


def report_to_markdown_text(
    report: AuditReport, figure_paths: dict[str, str] | None = None
) -> str:
    lines = [
        f"# Split audit report: {report.dataset_name or 'unnamed dataset'}",
        "",
        f"- tool: splitaudit {report.tool_version}",
        f"- base split: {report.train_count} train / {report.test_count} test "
        f"(hash `{report.base_split_hash[:16]}`)",
        f"- repetitions per step: {report.repetitions} (quorum {report.quorum})",
    ]
    if report.invalid_steps:
        lines.append(
            f"- steps below quorum, excluded: "
            f"{', '.join(f'{p}%' for p in report.invalid_steps)}"
        )
    lines.append("")
    lines += _verdict_markdown(report.verdict)

    lines += [
        "## Mean metrics per leakage step",
        "",
        "| leaked | precision | recall | mAP@0.5 | F1 | Δ mAP | Δ F1 |",
        "| --- | --- | --- | --- | --- | --- | --- |",
    ]
    for step in report.steps:
        m = step.mean_metrics
        rel_map = step.rel_increase.get("map50", 0.0) * 100
        rel_f1 = step.rel_increase.get("f1", 0.0) * 100
        lines.append(
            f"| {step.percent}% | {m.precision:.3f} | {m.recall:.3f} | {m.map50:.3f} "
            f"| {m.f1:.3f} | {rel_map:.1f}% | {rel_f1:.1f}% |"
        )
    lines.append("")

    if figure_paths:
        lines.append("## Figures")
        lines.append("")
        for title, path in figure_paths.items():
            lines.append(f"![{title}]({path})")
        lines.append("")

    if report.similarity is not None:
        sim = report.similarity
        lines += [
            "## Cross-split similarity",
            "",
            f"{sim.total} train/test pairs at Hamming distance <= {sim.max_dist}"
            + (" (pair list truncated)" if sim.truncated else ""),
            "",
            report_to_markdown(sim),
        ]
    return "\n".join(lines) + "\n"


def render_figures(report: AuditReport, out_dir: Path) -> dict[str, str]:
    """Write PNG figures next to the delimited output; returns title -> relpath."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figures: dict[str, str] = {}
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    percents = [step.percent for step in report.steps]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, label in (
        ("precision", "precision"),
        ("recall", "recall"),
        ("map50", "mAP@0.5"),
        ("f1", "F1"),
    ):
        ax.plot(
            percents,
            [getattr(step.mean_metrics, name) for step in report.steps],
            marker="o",
            label=label,
        )
    ax.set_xlabel("leaked test images (%)")
    ax.set_ylabel("mean score")
    ax.set_title("Detector performance vs. injected leakage")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_dir / "metrics_curve.png", dpi=120)
    plt.close(fig)
    figures["metrics vs leakage"] = "figures/metrics_curve.png"

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in report.verdict.rule.watched_metrics:
        ax.plot(
            percents[1:],
            [step.rel_increase.get(name, 0.0) * 100 for step in report.steps[1:]],
            marker="o",
            label=name,
        )
    ax.axhline(
        report.verdict.rule.threshold * 100,
        color="crimson",
        linestyle="--",
        label=f"threshold {report.verdict.rule.threshold * 100:.0f}%",
    )
    ax.set_xlabel("leaked test images (%)")
    ax.set_ylabel("relative increase (%)")
    ax.set_title("Relative performance increase per step")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_dir / "relative_increase.png", dpi=120)
    plt.close(fig)
    figures["relative increase per step"] = "figures/relative_increase.png"

    if report.similarity is not None:
        sim = report.similarity
        fig, ax = plt.subplots(figsize=(7, 4.5))
        distances = sorted(sim.histogram)
        ax.bar(distances, [sim.histogram[d] for d in distances], color="steelblue")
        ax.set_xlabel("Hamming distance")
        ax.set_ylabel("train/test pairs")
        ax.set_title(f"Near-duplicate pairs at distance <= {sim.max_dist}")
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        fig.savefig(fig_dir / "similarity_histogram.png", dpi=120)
        plt.close(fig)
        figures["similarity histogram"] = "figures/similarity_histogram.png"
    return figures


def write_report_files(
    report: AuditReport, out_dir: Path | str, *, figures: bool = True
) -> dict[str, Path]:
    """Write audit.json, steps.csv, report.md and (optionally) figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    audit_json = out / "audit.json"
    audit_json.write_text(json.dumps(report_to_json(report), indent=2) + "\n")
    paths["audit.json"] = audit_json

    steps_csv = out / "steps.csv"
    steps_csv.write_text(steps_csv_text(report))
    paths["steps.csv"] = steps_csv

    figure_paths = render_figures(report, out) if figures else None
    report_md = out / "report.md"
    report_md.write_text(report_to_markdown_text(report, figure_paths))
    paths["report.md"] = report_md
    if figure_paths:
        for rel in figure_paths.values():
            paths[rel] = out / rel
    return paths


def load_report_file(path: Path | str) -> AuditReport:
    return report_from_json(json.loads(Path(path).read_text()))


def render_similarity_markdown(sim: SimilarityReport, even_buckets: bool = False) -> str:
    return report_to_markdown(sim, even_buckets=even_buckets)
