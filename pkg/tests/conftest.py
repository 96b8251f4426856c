from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import gaussian_filter

from splitaudit.dataset import (
    Annotation,
    DatasetManifest,
    ImageRecord,
)


def make_photo(seed: int, width: int = 256, height: int = 192) -> np.ndarray:
    """Deterministic photo-like RGB image: smooth background, blobs, texture."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 0.35 + 0.3 * (x / width) + 0.2 * (y / height)
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        radius = rng.uniform(10, 60)
        blob = np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / (2 * radius**2)))
        base += rng.uniform(-0.35, 0.35) * blob
    texture = gaussian_filter(rng.normal(0.0, 1.0, size=(height, width)), sigma=3.0)
    base += 0.08 * texture / (np.abs(texture).max() + 1e-9)
    base = np.clip(base, 0.0, 1.0)
    tint = rng.uniform(0.75, 1.0, size=3)
    rgb = np.stack([np.clip(base * t, 0, 1) for t in tint], axis=-1)
    return (rgb * 255).round().astype(np.uint8)


@pytest.fixture(scope="session")
def synthetic_photos() -> list[np.ndarray]:
    return [make_photo(1000 + i) for i in range(24)]


def write_png(array: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)


@pytest.fixture(scope="session")
def tiny_kitti_root(tmp_path_factory) -> Path:
    """KITTI-layout dataset: two sequences, six images, labels for most."""
    root = tmp_path_factory.mktemp("kitti_fixture")
    labels = {
        "seq0/000000": ["Car 0.0 0 1.57 10.0 20.0 60.0 60.0 1.5 1.6 3.9 0 0 0 0"],
        "seq0/000001": [
            "Pedestrian 0.0 0 0.0 30.0 30.0 50.0 80.0 1.7 0.6 0.8 0 0 0 0",
            "DontCare -1 -1 -10 90.0 80.0 120.0 100.0 -1 -1 -1 -1000 -1000 -1000 -10",
        ],
        "seq0/000002": ["Car 0.0 0 0.0 5.0 5.0 45.0 40.0 1.5 1.6 3.9 0 0 0 0"],
        "seq1/000100": ["Cyclist 0.0 0 0.0 15.0 10.0 40.0 70.0 1.7 0.6 1.7 0 0 0 0"],
        "seq1/000101": ["Car 0.0 0 0.0 60.0 30.0 110.0 70.0 1.5 1.6 3.9 0 0 0 0"],
    }
    for i, stem in enumerate(
        ["seq0/000000", "seq0/000001", "seq0/000002", "seq1/000100", "seq1/000101", "seq1/000102"]
    ):
        write_png(make_photo(2000 + i, width=128, height=96), root / "images" / f"{stem}.png")
        if stem in labels:
            label_path = root / "labels" / f"{stem}.txt"
            label_path.parent.mkdir(parents=True, exist_ok=True)
            label_path.write_text("\n".join(labels[stem]) + "\n")
    return root


def make_manifest(
    n: int,
    *,
    name: str = "synthetic",
    classes: tuple[str, ...] = ("Car", "Pedestrian"),
    sequences: int = 2,
    width: int = 100,
    height: int = 80,
) -> DatasetManifest:
    """In-memory manifest with one annotation per image, no files behind it."""
    records = []
    for i in range(n):
        records.append(
            ImageRecord(
                id=f"images/seq{i % sequences}/{i:06d}.png",
                sequence=f"seq{i % sequences}",
                width=width,
                height=height,
                annotations=(
                    Annotation(class_index=i % len(classes), bbox=(5.0, 5.0, 30.0, 25.0)),
                ),
            )
        )
    return DatasetManifest(name=name, class_names=classes, images=tuple(records))


_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    outcomes: dict[int, list[bool]] = {}
    for status, passed in (("passed", True), ("failed", False), ("error", False)):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                outcomes.setdefault(int(match.group(1)), []).append(passed)
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for criterion in sorted(outcomes):
        results = outcomes[criterion]
        ok = sum(results)
        verdict = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(
            f"criterion {criterion}: {verdict} ({ok}/{len(results)} checks)"
        )
