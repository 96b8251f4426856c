from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitaudit.dataset import Annotation, DatasetManifest, ImageRecord
from splitaudit.detmetrics import (
    Detection,
    EvalMetrics,
    average_precision,
    evaluate,
    iou,
    match_detections,
    metrics_from_json_dict,
    metrics_to_json_dict,
    read_predictions_dir,
    read_predictions_jsonl,
)
from splitaudit.errors import EmptySideError, MalformedMetricsError, UnknownImageError

from .oracles import oracle_ap, oracle_evaluate, oracle_match


def det(image_id="img", cls=0, bbox=(0.0, 0.0, 10.0, 10.0), conf=0.9) -> Detection:
    return Detection(image_id=image_id, class_index=cls, bbox=bbox, confidence=conf)


def gt(cls=0, bbox=(0.0, 0.0, 10.0, 10.0)) -> Annotation:
    return Annotation(class_index=cls, bbox=bbox)


def manifest_of(records: list[ImageRecord], classes=("Car", "Pedestrian")) -> DatasetManifest:
    return DatasetManifest(name="eval", class_names=classes, images=tuple(records))


class TestIou:
    def test_identical_boxes(self):
        assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0

    def test_disjoint_boxes(self):
        assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0

    def test_worked_example_one_seventh(self):
        # intersection 1, union 4 + 4 - 1 = 7
        assert math.isclose(iou((0, 0, 2, 2), (1, 1, 3, 3)), 1 / 7)

    def test_degenerate_box_contributes_zero(self):
        assert iou((0, 0, 0, 0), (0, 0, 2, 2)) == 0.0

    def test_symmetry(self):
        a, b = (0, 0, 4, 3), (2, 1, 6, 5)
        assert iou(a, b) == iou(b, a)


class TestMatching:
    def test_exact_hit_is_tp(self):
        result = match_detections([det()], [gt()], 0.5)
        assert result.tp == [True]
        assert result.fn_count == 0

    def test_second_identical_pred_is_fp(self):
        result = match_detections([det(conf=0.9), det(conf=0.8)], [gt()], 0.5)
        assert result.tp == [True, False]
        assert result.fn_count == 0

    def test_wrong_class_is_fp_and_fn(self):
        result = match_detections([det(cls=1)], [gt(cls=0)], 0.5)
        assert result.tp == [False]
        assert result.ignored == [False]
        assert result.fn_count == 1

    def test_confidence_orders_greedy_claim(self):
        # the higher-confidence detection claims the single GT
        low = det(conf=0.3, bbox=(0.0, 0.0, 10.0, 10.0))
        high = det(conf=0.9, bbox=(1.0, 1.0, 10.0, 10.0))
        result = match_detections([low, high], [gt()], 0.5)
        assert result.order == [1, 0]
        assert result.tp == [True, False]

    def test_unmatched_detection_on_ignore_region_excluded(self):
        region = (0.0, 0.0, 10.0, 10.0)
        result = match_detections([det(bbox=(0.0, 0.0, 10.0, 10.0))], [], 0.5, [region])
        assert result.tp == [False]
        assert result.ignored == [True]

    def test_matched_detection_not_ignored(self):
        region = (0.0, 0.0, 10.0, 10.0)
        result = match_detections([det()], [gt()], 0.5, [region])
        assert result.tp == [True]
        assert result.ignored == [False]

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_matches_oracle(self, data):
        n_preds = data.draw(st.integers(0, 8))
        n_gts = data.draw(st.integers(0, 6))
        rng_vals = data.draw(
            st.lists(st.floats(0.0, 1.0), min_size=n_preds, max_size=n_preds)
        )
        preds = []
        for i in range(n_preds):
            x = data.draw(st.floats(0, 20))
            y = data.draw(st.floats(0, 20))
            preds.append(
                det(cls=data.draw(st.integers(0, 1)), bbox=(x, y, x + 5, y + 5), conf=rng_vals[i])
            )
        gts = []
        for _ in range(n_gts):
            x = data.draw(st.floats(0, 20))
            y = data.draw(st.floats(0, 20))
            gts.append(gt(cls=data.draw(st.integers(0, 1)), bbox=(x, y, x + 5, y + 5)))
        result = match_detections(preds, gts, 0.5)
        expected = oracle_match(preds, gts, 0.5)
        assert [preds[i] for i in result.order] == [d for d, _ in expected]
        assert result.tp == [outcome == "tp" for _, outcome in expected]


class TestAveragePrecision:
    def test_all_tp_full_recall(self):
        assert average_precision([True, True, True], 3) == 1.0

    def test_no_detections(self):
        assert average_precision([], 5) == 0.0

    def test_zero_gt(self):
        assert average_precision([False, False], 0) == 0.0

    def test_worked_example(self):
        # envelope points (r=0.5, p=1.0), (r=1.0, p=2/3)
        value = average_precision([True, False, True], 2)
        assert math.isclose(value, 0.5 * 1.0 + 0.5 * (2 / 3), abs_tol=1e-12)
        assert math.isclose(value, 0.8333, abs_tol=5e-5)

    def test_101_point_close_to_all_point(self):
        flags = [True, False, True, True, False]
        a = average_precision(flags, 4, mode="all_point")
        b = average_precision(flags, 4, mode="101_point")
        assert abs(a - b) < 0.05

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.booleans(), min_size=0, max_size=20),
        st.integers(0, 12),
    )
    def test_matches_oracle(self, flags, extra_gt):
        num_gt = sum(flags) + extra_gt
        assert math.isclose(
            average_precision(flags, num_gt), oracle_ap(flags, num_gt), abs_tol=1e-12
        )

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
    def test_confidence_rescale_leaves_ap_unchanged(self, scale, seed):
        # ranking-only dependence: uniformly rescaling every confidence by
        # the same positive factor changes no AP and no mAP
        rng = np.random.default_rng(seed)
        records = [
            ImageRecord(
                id="a.png", sequence="s", width=100, height=100,
                annotations=(gt(0, (10, 10, 40, 40)), gt(1, (50, 50, 80, 80))),
            )
        ]
        manifest = manifest_of(records)
        preds = []
        for _ in range(6):
            x, y = rng.uniform(0, 60, 2)
            preds.append(
                det("a.png", int(rng.integers(0, 2)), (x, y, x + 25, y + 25),
                    float(rng.uniform(0.1, 1.0)))
            )
        scaled = [
            Detection(d.image_id, d.class_index, d.bbox, d.confidence * scale)
            for d in preds
        ]
        base = evaluate(preds, manifest, ["a.png"])
        rescaled = evaluate(scaled, manifest, ["a.png"])
        assert base.map50 == rescaled.map50
        assert base.per_class_ap == rescaled.per_class_ap
        assert base.precision == rescaled.precision
        assert base.recall == rescaled.recall

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=15))
    def test_trailing_fp_never_increases_ap(self, flags):
        num_gt = max(sum(flags), 1)
        assert average_precision(flags + [False], num_gt) <= average_precision(flags, num_gt) + 1e-12


def two_image_manifest():
    records = [
        ImageRecord(
            id="a.png", sequence="s", width=100, height=100,
            annotations=(gt(0, (10, 10, 30, 30)), gt(1, (50, 50, 80, 80))),
        ),
        ImageRecord(
            id="b.png", sequence="s", width=100, height=100,
            annotations=(gt(0, (20, 20, 60, 60)),),
        ),
    ]
    return manifest_of(records)


class TestEvaluate:
    def test_perfect_predictions(self):
        manifest = two_image_manifest()
        preds = [
            det("a.png", 0, (10, 10, 30, 30), 0.9),
            det("a.png", 1, (50, 50, 80, 80), 0.8),
            det("b.png", 0, (20, 20, 60, 60), 0.95),
        ]
        metrics = evaluate(preds, manifest, ["a.png", "b.png"])
        assert metrics.precision == metrics.recall == metrics.map50 == metrics.f1 == 1.0
        assert metrics.per_class_ap == {"Car": 1.0, "Pedestrian": 1.0}

    def test_no_predictions(self):
        manifest = two_image_manifest()
        metrics = evaluate([], manifest, ["a.png", "b.png"])
        assert (metrics.precision, metrics.recall, metrics.map50, metrics.f1) == (0, 0, 0, 0)

    def test_three_image_fixture_against_oracle(self):
        records = [
            ImageRecord(
                id=f"{i}.png", sequence="s", width=100, height=100,
                annotations=annotations,
            )
            for i, annotations in enumerate(
                [
                    (gt(0, (10, 10, 40, 40)), gt(0, (60, 60, 90, 90))),
                    (gt(1, (5, 5, 25, 25)), gt(0, (30, 30, 70, 70))),
                    (gt(1, (40, 10, 80, 50)),),
                ]
            )
        ]
        manifest = manifest_of(records)
        preds = [
            det("0.png", 0, (12, 12, 38, 38), 0.95),   # good hit
            det("0.png", 0, (58, 62, 92, 88), 0.70),   # good hit
            det("0.png", 0, (60, 60, 90, 90), 0.20),   # duplicate -> FP
            det("1.png", 1, (6, 6, 24, 24), 0.85),     # good hit
            det("1.png", 0, (35, 20, 75, 60), 0.60),   # partial overlap
            det("2.png", 0, (40, 10, 80, 50), 0.55),   # wrong class -> FP
        ]
        ids = [r.id for r in records]
        metrics = evaluate(preds, manifest, ids)
        expected = oracle_evaluate(preds, manifest, ids)
        assert math.isclose(metrics.map50, expected["map50"], abs_tol=1e-12)
        assert math.isclose(metrics.precision, expected["precision"], abs_tol=1e-12)
        assert math.isclose(metrics.recall, expected["recall"], abs_tol=1e-12)
        assert math.isclose(metrics.f1, expected["f1"], abs_tol=1e-12)
        for name, ap in expected["per_class_ap"].items():
            assert math.isclose(metrics.per_class_ap[name], ap, abs_tol=1e-12)

    def test_f1_consistency_and_bounds(self):
        manifest = two_image_manifest()
        preds = [
            det("a.png", 0, (10, 10, 30, 30), 0.9),
            det("b.png", 1, (20, 20, 60, 60), 0.4),
        ]
        metrics = evaluate(preds, manifest, ["a.png", "b.png"])
        metrics.validate()
        assert math.isclose(
            metrics.f1, EvalMetrics.f1_from(metrics.precision, metrics.recall), abs_tol=1e-12
        )

    def test_fixed_conf_threshold(self):
        manifest = two_image_manifest()
        preds = [
            det("a.png", 0, (10, 10, 30, 30), 0.9),
            det("a.png", 0, (0, 0, 5, 5), 0.1),  # low-confidence FP
        ]
        metrics = evaluate(preds, manifest, ["a.png", "b.png"], conf_threshold=0.5)
        assert metrics.precision == 1.0
        assert math.isclose(metrics.recall, 1 / 3)

    def test_unknown_image_rejected(self):
        manifest = two_image_manifest()
        with pytest.raises(UnknownImageError):
            evaluate([det("ghost.png")], manifest, ["a.png", "b.png"])
        with pytest.raises(UnknownImageError):
            evaluate([], manifest, ["ghost.png"])

    def test_empty_side_rejected(self):
        manifest = two_image_manifest()
        with pytest.raises(EmptySideError):
            evaluate([], manifest, [])

    def test_ignore_region_excluded_from_scoring(self):
        records = [
            ImageRecord(
                id="a.png", sequence="s", width=100, height=100,
                annotations=(gt(0, (10, 10, 30, 30)),),
                ignore_regions=((60.0, 60.0, 90.0, 90.0),),
            )
        ]
        manifest = manifest_of(records)
        preds = [
            det("a.png", 0, (10, 10, 30, 30), 0.9),
            det("a.png", 0, (61, 61, 89, 89), 0.8),  # inside the ignore region
        ]
        metrics = evaluate(preds, manifest, ["a.png"])
        assert metrics.precision == 1.0
        assert metrics.recall == 1.0


class TestPredictionFiles:
    def test_jsonl_roundtrip(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text(
            json.dumps({"image_id": "a.png", "class": 0, "conf": 0.8, "bbox": [1, 2, 3, 4]})
            + "\n"
        )
        dets = read_predictions_jsonl(path)
        assert dets == [det("a.png", 0, (1.0, 2.0, 3.0, 4.0), 0.8)]

    def test_jsonl_malformed(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text('{"image_id": "a.png"}\n')
        with pytest.raises(MalformedMetricsError):
            read_predictions_jsonl(path)

    def test_per_image_dir(self, tmp_path):
        manifest = two_image_manifest()
        (tmp_path / "a.txt").write_text("0 0.9 10 10 30 30\n")
        (tmp_path / "b.txt").write_text("0 0.5 20 20 60 60\n1 0.4 1 1 9 9\n")
        dets = read_predictions_dir(tmp_path, manifest)
        assert len(dets) == 3
        assert dets[0].image_id == "a.png"

    def test_per_image_dir_unknown_stem(self, tmp_path):
        manifest = two_image_manifest()
        (tmp_path / "zz.txt").write_text("0 0.9 10 10 30 30\n")
        with pytest.raises(UnknownImageError):
            read_predictions_dir(tmp_path, manifest)

    def test_metrics_json_roundtrip(self):
        metrics = EvalMetrics(precision=0.5, recall=0.25, map50=0.4, f1=1 / 3)
        doc = metrics_to_json_dict(metrics)
        assert metrics_from_json_dict(doc) == metrics

    def test_metrics_json_range_check(self):
        with pytest.raises(MalformedMetricsError):
            metrics_from_json_dict({"precision": 1.2, "recall": 0.5, "map50": 0.5, "f1": 0.5})


class TestRandomizedOracleEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_micro_fixture(self, seed):
        rng = np.random.default_rng(400 + seed)
        records = []
        ids = []
        for i in range(rng.integers(1, 4)):
            annotations = []
            for _ in range(rng.integers(0, 5)):
                x, y = rng.uniform(0, 60, 2)
                w, h = rng.uniform(8, 30, 2)
                annotations.append(gt(int(rng.integers(0, 2)), (x, y, x + w, y + h)))
            records.append(
                ImageRecord(
                    id=f"{i}.png", sequence="s", width=100, height=100,
                    annotations=tuple(annotations),
                )
            )
            ids.append(f"{i}.png")
        manifest = manifest_of(records)
        preds = []
        for image_id in ids:
            for _ in range(rng.integers(0, 6)):
                x, y = rng.uniform(0, 60, 2)
                w, h = rng.uniform(8, 30, 2)
                preds.append(
                    det(image_id, int(rng.integers(0, 2)), (x, y, x + w, y + h),
                        round(float(rng.uniform(0.05, 1.0)), 3))
                )
        total_boxes = len(preds) + sum(len(r.annotations) for r in records)
        assert total_boxes <= 50
        metrics = evaluate(preds, manifest, ids)
        expected = oracle_evaluate(preds, manifest, ids)
        assert math.isclose(metrics.map50, expected["map50"], abs_tol=1e-12)
        assert math.isclose(metrics.precision, expected["precision"], abs_tol=1e-12)
        assert math.isclose(metrics.recall, expected["recall"], abs_tol=1e-12)
        assert math.isclose(metrics.f1, expected["f1"], abs_tol=1e-12)
