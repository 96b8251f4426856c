"""Independent brute-force reference implementations used as test oracles.

Everything here is written from the contract alone, in plain Python,
without reusing the production code paths it checks.
"""

from __future__ import annotations

from splitaudit.dataset import Annotation, DatasetManifest
from splitaudit.detmetrics import Detection


def oracle_hamming(a: int, b: int) -> int:
    count = 0
    diff = a ^ b
    while diff:
        count += diff & 1
        diff >>= 1
    return count


def oracle_scan_histogram(
    train: dict[str, int], test: dict[str, int], max_dist: int
) -> dict[int, int]:
    """All-pairs double loop over raw 64-bit values."""
    histogram = {d: 0 for d in range(max_dist + 1)}
    for a in train.values():
        for b in test.values():
            d = oracle_hamming(a, b)
            if d <= max_dist:
                histogram[d] += 1
    return histogram


def oracle_radius_query(
    corpus: dict[str, int], probe: int, radius: int
) -> list[tuple[str, int]]:
    hits = [
        (key, oracle_hamming(value, probe))
        for key, value in corpus.items()
        if oracle_hamming(value, probe) <= radius
    ]
    return sorted(hits, key=lambda item: (item[1], item[0]))


def _overlap(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def oracle_match(
    preds: list[Detection],
    gts: list[Annotation],
    iou_threshold: float,
    ignore_regions=(),
) -> list[tuple[Detection, str]]:
    """Greedy confidence-descending matching; returns (det, 'tp'|'fp'|'ignored')
    in rank order."""
    ranked = sorted(enumerate(preds), key=lambda pair: (-pair[1].confidence, pair[0]))
    used: set[int] = set()
    outcomes = []
    for _, det in ranked:
        candidates = [
            (gi, _overlap(det.bbox, gt.bbox))
            for gi, gt in enumerate(gts)
            if gi not in used and gt.class_index == det.class_index
        ]
        best = max(candidates, key=lambda item: item[1], default=(-1, 0.0))
        if best[0] >= 0 and best[1] >= iou_threshold:
            used.add(best[0])
            outcomes.append((det, "tp"))
        elif any(_overlap(det.bbox, region) >= 0.5 for region in ignore_regions):
            outcomes.append((det, "ignored"))
        else:
            outcomes.append((det, "fp"))
    return outcomes


def oracle_ap(flags: list[bool], num_gt: int) -> float:
    """Area under the monotone precision envelope, integrated point by point."""
    if num_gt == 0 or not flags:
        return 0.0
    points = []
    tp = fp = 0
    for flag in flags:
        tp += 1 if flag else 0
        fp += 0 if flag else 1
        points.append((tp / num_gt, tp / (tp + fp)))
    ap = 0.0
    prev_recall = 0.0
    for recall, _ in points:
        if recall <= prev_recall:
            continue
        envelope = max(p for r, p in points if r >= recall)
        ap += (recall - prev_recall) * envelope
        prev_recall = recall
    return ap


def oracle_evaluate(
    preds: list[Detection],
    manifest: DatasetManifest,
    ids: list[str],
    iou_threshold: float = 0.5,
) -> dict:
    """Exhaustive re-derivation of per-class AP, mAP and best-F1 P/R."""
    by_id = manifest.by_id()
    pooled = []  # (confidence, image_id, rank, outcome, class_index)
    gt_counts: dict[int, int] = {}
    for image_id in sorted(ids):
        record = by_id[image_id]
        for ann in record.annotations:
            gt_counts[ann.class_index] = gt_counts.get(ann.class_index, 0) + 1
        image_preds = [d for d in preds if d.image_id == image_id]
        for rank, (det, outcome) in enumerate(
            oracle_match(image_preds, list(record.annotations), iou_threshold,
                         record.ignore_regions)
        ):
            if outcome == "ignored":
                continue
            pooled.append((-det.confidence, image_id, rank, outcome == "tp", det.class_index))
    pooled.sort()

    per_class_ap = {}
    for class_index, num_gt in sorted(gt_counts.items()):
        flags = [tp for _, _, _, tp, ci in pooled if ci == class_index]
        per_class_ap[manifest.class_names[class_index]] = oracle_ap(flags, num_gt)
    map50 = sum(per_class_ap.values()) / len(per_class_ap) if per_class_ap else 0.0

    total_gt = sum(gt_counts.values())
    best = (0.0, 0.0, 0.0)
    tp = 0
    for k, (_, _, _, flag, _) in enumerate(pooled, start=1):
        tp += 1 if flag else 0
        precision = tp / k
        recall = tp / total_gt if total_gt else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if f1 > best[0]:
            best = (f1, precision, recall)
    return {
        "precision": best[1],
        "recall": best[2],
        "f1": best[0],
        "map50": map50,
        "per_class_ap": per_class_ap,
    }
