"""Object-detection metrics computed natively from predictions and ground truth.

Matching is greedy in descending confidence with one-to-one GT use; AP is
the area under the monotone precision envelope (all-point interpolation,
101-point sampling available); mAP averages AP over classes that have at
least one ground-truth instance. Precision/recall/F1 are reported at the
confidence threshold that maximizes F1 over the pooled evaluation set
unless a fixed threshold is requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Annotation, Bbox, DatasetManifest
from .errors import EmptySideError, MalformedMetricsError, UnknownImageError

DEFAULT_IOU_THRESHOLD = 0.5
IGNORE_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_index: int
    bbox: Bbox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        x_min, y_min, x_max, y_max = self.bbox
        if x_min >= x_max or y_min >= y_max:
            raise ValueError(f"degenerate detection bbox {self.bbox}")


@dataclass
class EvalMetrics:
    precision: float
    recall: float
    map50: float
    f1: float
    per_class_ap: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("precision", "recall", "map50", "f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise MalformedMetricsError(f"{name}={value} outside [0, 1]")
        for cls, ap in self.per_class_ap.items():
            if not 0.0 <= ap <= 1.0:
                raise MalformedMetricsError(f"AP[{cls}]={ap} outside [0, 1]")

    @staticmethod
    def f1_from(precision: float, recall: float) -> float:
        if precision + recall <= 0.0:
            return 0.0
        return 2.0 * precision * recall / (precision + recall)


@dataclass
class MatchResult:
    order: list[int]        # detection indices, descending confidence
    tp: list[bool]          # aligned with ``order``
    ignored: list[bool]     # aligned with ``order``; neither TP nor FP
    fn_count: int


def iou(a: Bbox, b: Bbox) -> float:
    """Intersection over union; zero for disjoint or degenerate boxes."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = max(a[2] - a[0], 0.0) * max(a[3] - a[1], 0.0)
    area_b = max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    ignore_regions: Sequence[Bbox] = (),
) -> MatchResult:
    """Greedy per-image matching.

    Detections are visited in descending confidence; each ground-truth box
    can be claimed once. A detection is a true positive iff its best still
    unmatched same-class GT reaches the IoU threshold. Unmatched detections
    that overlap an ignore region (IoU >= 0.5) are excluded from scoring.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    claimed: set[int] = set()
    tp: list[bool] = []
    ignored: list[bool] = []
    for det_idx in order:
        det = preds[det_idx]
        best_iou = 0.0
        best_gt = -1
        for gt_idx, gt in enumerate(gts):
            if gt_idx in claimed or gt.class_index != det.class_index:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap > best_iou:
                best_iou = overlap
                best_gt = gt_idx
        if best_gt >= 0 and best_iou >= iou_threshold:
            claimed.add(best_gt)
            tp.append(True)
            ignored.append(False)
            continue
        tp.append(False)
        ignored.append(
            any(iou(det.bbox, region) >= IGNORE_IOU_THRESHOLD for region in ignore_regions)
        )
    return MatchResult(order=order, tp=tp, ignored=ignored, fn_count=len(gts) - len(claimed))


def average_precision(
    flags: Sequence[bool], num_gt: int, mode: str = "all_point"
) -> float:
    """AP of a ranked TP/FP flag list against ``num_gt`` ground truths."""
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if num_gt == 0 or not flags:
        return 0.0
    tp_cum = np.cumsum(np.asarray(flags, dtype=np.float64))
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    precision = tp_cum / ranks
    recall = tp_cum / num_gt

    if mode == "101_point":
        samples = np.linspace(0.0, 1.0, 101)
        total = 0.0
        for r in samples:
            reachable = precision[recall >= r]
            total += float(reachable.max()) if reachable.size else 0.0
        return total / 101.0
    if mode != "all_point":
        raise ValueError(f"unknown AP mode {mode!r}")

    mpre = np.concatenate(([0.0], precision, [0.0]))
    mrec = np.concatenate(([0.0], recall, [1.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def evaluate(
    preds: Sequence[Detection],
    manifest: DatasetManifest,
    ids: Iterable[str],
    *,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    conf_threshold: float | None = None,
    ap_mode: str = "all_point",
) -> EvalMetrics:
    """Score predictions over one split side against the manifest GT."""
    side = sorted(ids)
    if not side:
        raise EmptySideError("evaluation side is empty")
    by_id = manifest.by_id()
    for image_id in side:
        if image_id not in by_id:
            raise UnknownImageError(f"split references unknown image {image_id!r}")
    side_set = set(side)
    grouped: dict[str, list[Detection]] = {image_id: [] for image_id in side}
    for det in preds:
        if det.image_id not in by_id:
            raise UnknownImageError(f"prediction references unknown image {det.image_id!r}")
        if det.image_id in side_set:
            grouped[det.image_id].append(det)

    # (neg confidence, image id, original index) gives a deterministic global rank
    pooled: list[tuple[float, str, int, bool, int]] = []
    gt_per_class: dict[int, int] = {}
    for image_id in side:
        record = by_id[image_id]
        for ann in record.annotations:
            gt_per_class[ann.class_index] = gt_per_class.get(ann.class_index, 0) + 1
        dets = grouped[image_id]
        result = match_detections(
            dets, record.annotations, iou_threshold, record.ignore_regions
        )
        for rank, det_idx in enumerate(result.order):
            if result.ignored[rank]:
                continue
            det = dets[det_idx]
            pooled.append((-det.confidence, image_id, det_idx, result.tp[rank], det.class_index))
    pooled.sort()

    per_class_ap: dict[str, float] = {}
    for class_index, num_gt in sorted(gt_per_class.items()):
        flags = [tp for _, _, _, tp, cls in pooled if cls == class_index]
        per_class_ap[manifest.class_names[class_index]] = average_precision(
            flags, num_gt, mode=ap_mode
        )
    map50 = (
        sum(per_class_ap.values()) / len(per_class_ap) if per_class_ap else 0.0
    )

    total_gt = sum(gt_per_class.values())
    flags = [tp for _, _, _, tp, _ in pooled]
    confidences = [-neg for neg, _, _, _, _ in pooled]
    precision, recall = _prf_at_threshold(flags, confidences, total_gt, conf_threshold)
    metrics = EvalMetrics(
        precision=precision,
        recall=recall,
        map50=map50,
        f1=EvalMetrics.f1_from(precision, recall),
        per_class_ap=per_class_ap,
    )
    metrics.validate()
    return metrics


def _prf_at_threshold(
    flags: Sequence[bool],
    confidences: Sequence[float],
    total_gt: int,
    conf_threshold: float | None,
) -> tuple[float, float]:
    if not flags:
        return 0.0, 0.0
    if conf_threshold is not None:
        kept = [tp for tp, conf in zip(flags, confidences) if conf >= conf_threshold]
        if not kept:
            return 0.0, 0.0
        tp = sum(kept)
        return tp / len(kept), (tp / total_gt if total_gt else 0.0)
    # sweep every prefix of the ranked list; ties keep the higher threshold
    best = (0.0, 0.0, 0.0)
    tp = 0
    for k, flag in enumerate(flags, start=1):
        tp += bool(flag)
        precision = tp / k
        recall = tp / total_gt if total_gt else 0.0
        f1 = EvalMetrics.f1_from(precision, recall)
        if f1 > best[0]:
            best = (f1, precision, recall)
    return best[1], best[2]


def read_predictions_jsonl(path: Path | str) -> list[Detection]:
    """One detection per line: {image_id, class, conf, bbox:[x0,y0,x1,y1]}."""
    detections = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            detections.append(
                Detection(
                    image_id=doc["image_id"],
                    class_index=int(doc["class"]),
                    bbox=tuple(float(v) for v in doc["bbox"]),
                    confidence=float(doc["conf"]),
                )
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise MalformedMetricsError(f"{path}:{line_no}: bad prediction line: {exc}") from exc
    return detections


def read_predictions_dir(pred_dir: Path | str, manifest: DatasetManifest) -> list[Detection]:
    """Per-image text files paired to ids by stem.

    Lines are ``class_index confidence x_min y_min x_max y_max`` in pixels.
    """
    stems: dict[str, str] = {}
    for record in manifest.images:
        stem = Path(record.id).stem
        if stem in stems:
            raise MalformedMetricsError(
                f"image stem {stem!r} is ambiguous; use the JSONL prediction format"
            )
        stems[stem] = record.id
    detections = []
    for path in sorted(Path(pred_dir).glob("*.txt")):
        image_id = stems.get(path.stem)
        if image_id is None:
            raise UnknownImageError(f"prediction file {path.name} matches no image")
        for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 6:
                raise MalformedMetricsError(f"{path}:{line_no}: expected 6 fields")
            detections.append(
                Detection(
                    image_id=image_id,
                    class_index=int(fields[0]),
                    confidence=float(fields[1]),
                    bbox=tuple(float(v) for v in fields[2:6]),
                )
            )
    return detections


def metrics_to_json_dict(metrics: EvalMetrics) -> dict:
    return {
        "precision": metrics.precision,
        "recall": metrics.recall,
        "map50": metrics.map50,
        "f1": metrics.f1,
        "per_class_ap": dict(sorted(metrics.per_class_ap.items())),
    }


def metrics_from_json_dict(doc: dict) -> EvalMetrics:
    try:
        metrics = EvalMetrics(
            precision=float(doc["precision"]),
            recall=float(doc["recall"]),
            map50=float(doc["map50"]),
            f1=float(doc["f1"]),
            per_class_ap={str(k): float(v) for k, v in doc.get("per_class_ap", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMetricsError(f"metrics JSON invalid: {exc}") from exc
    metrics.validate()
    return metrics
