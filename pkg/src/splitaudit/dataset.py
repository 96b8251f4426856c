"""Image manifests, KITTI-format annotations and train/test splits."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    EmptySideError,
    MalformedLabelError,
    ManifestError,
    SplitError,
    UnknownClassError,
    UnknownSequenceError,
    ZeroImagesError,
)

log = logging.getLogger(__name__)

KITTI_CLASS_NAMES = (
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
)

# KITTI's DontCare rows mark regions excluded from evaluation rather than
# objects of a class; they are kept on the record as ignore regions.
DONT_CARE = "DontCare"

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

Bbox = tuple[float, float, float, float]


@dataclass(frozen=True)
class Annotation:
    class_index: int
    bbox: Bbox

    def __post_init__(self) -> None:
        x_min, y_min, x_max, y_max = self.bbox
        if not (x_min < x_max and y_min < y_max):
            raise MalformedLabelError(f"degenerate bbox {self.bbox}")
        if self.class_index < 0:
            raise MalformedLabelError(f"negative class index {self.class_index}")


@dataclass(frozen=True)
class ImageRecord:
    id: str
    sequence: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    ignore_regions: tuple[Bbox, ...] = ()
    labels_path: str | None = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ManifestError(f"{self.id}: non-positive image size {self.width}x{self.height}")


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    class_names: tuple[str, ...]
    images: tuple[ImageRecord, ...]
    root: Path | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.images:
            if record.id in seen:
                raise ManifestError(f"duplicate image id {record.id!r}")
            seen.add(record.id)
            for ann in record.annotations:
                if ann.class_index >= len(self.class_names):
                    raise ManifestError(
                        f"{record.id}: class index {ann.class_index} out of bounds "
                        f"for {len(self.class_names)} classes"
                    )

    def ids(self) -> list[str]:
        return sorted(record.id for record in self.images)

    def record(self, image_id: str) -> ImageRecord:
        record = self.by_id().get(image_id)
        if record is None:
            raise ManifestError(f"unknown image id {image_id!r}")
        return record

    def by_id(self) -> dict[str, ImageRecord]:
        return {record.id: record for record in self.images}

    def image_path(self, image_id: str) -> Path:
        if self.root is None:
            raise ManifestError("manifest has no filesystem root")
        return self.root / image_id


class ManifestFormat(str, Enum):
    KITTI_DIR = "kitti"
    MANIFEST_JSON = "manifest"


class SplitStrategy(str, Enum):
    BY_SEQUENCE = "sequence"
    BY_RATIO = "ratio"
    EXPLICIT = "explicit"


class UnknownClassPolicy(str, Enum):
    IGNORE = "ignore"
    ERROR = "error"


@dataclass(frozen=True)
class SplitSpec:
    """Record of a split; may hold invalid data loaded from disk, so the
    invariants are enforced by make_split/check_split, not construction."""

    train_ids: frozenset[str]
    test_ids: frozenset[str]
    strategy: SplitStrategy
    ratio: float | None = None


def check_split(split: SplitSpec) -> None:
    """Raise unless the split is disjoint with two non-empty sides."""
    if not split.train_ids or not split.test_ids:
        raise EmptySideError("both split sides must be non-empty")
    overlap = split.train_ids & split.test_ids
    if overlap:
        raise SplitError(f"train and test overlap on {len(overlap)} ids")


@dataclass
class SplitValidation:
    valid: bool
    train_count: int
    test_count: int
    coverage: float
    duplicate_ids: list[str] = field(default_factory=list)
    unknown_ids: list[str] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)
    class_instances: dict[str, dict[str, int]] = field(default_factory=dict)


def parse_kitti_label_line(
    line: str,
    class_names: tuple[str, ...] | list[str],
    unknown_class: UnknownClassPolicy = UnknownClassPolicy.IGNORE,
) -> Annotation | None:
    """Parse one KITTI label row into an annotation.

    Rows are whitespace separated: type, truncated, occluded, alpha, then
    the pixel bbox (left, top, right, bottom) in columns 5-8. ``DontCare``
    rows and, under the ignore policy, unknown class names yield ``None``.
    """
    fields = line.split()
    if len(fields) < 8:
        raise MalformedLabelError(f"expected >= 8 fields, got {len(fields)}: {line!r}")
    class_name = fields[0]
    try:
        left, top, right, bottom = (float(v) for v in fields[4:8])
    except ValueError as exc:
        raise MalformedLabelError(f"non-numeric bbox in {line!r}") from exc
    if left >= right or top >= bottom:
        raise MalformedLabelError(f"empty bbox ({left}, {top}, {right}, {bottom}) in {line!r}")
    if class_name == DONT_CARE:
        return None
    if class_name not in class_names:
        if unknown_class is UnknownClassPolicy.ERROR:
            raise UnknownClassError(f"unknown class {class_name!r}")
        return None
    return Annotation(class_index=class_names.index(class_name), bbox=(left, top, right, bottom))


def load_kitti_labels(
    path: Path,
    class_names: tuple[str, ...] | list[str],
    unknown_class: UnknownClassPolicy = UnknownClassPolicy.IGNORE,
) -> tuple[list[Annotation], list[Bbox]]:
    """Read a KITTI label file into (annotations, ignore regions)."""
    annotations: list[Annotation] = []
    ignore_regions: list[Bbox] = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        annotation = parse_kitti_label_line(line, class_names, unknown_class)
        if annotation is not None:
            annotations.append(annotation)
        elif line.split()[0] == DONT_CARE:
            bbox = tuple(float(v) for v in line.split()[4:8])
            ignore_regions.append(bbox)  # type: ignore[arg-type]
    return annotations, ignore_regions


def _clamp_annotations(
    annotations: list[Annotation], width: int, height: int, image_id: str, warnings: list[str]
) -> tuple[Annotation, ...]:
    clamped: list[Annotation] = []
    for ann in annotations:
        x_min = min(max(ann.bbox[0], 0.0), float(width))
        y_min = min(max(ann.bbox[1], 0.0), float(height))
        x_max = min(max(ann.bbox[2], 0.0), float(width))
        y_max = min(max(ann.bbox[3], 0.0), float(height))
        if x_min >= x_max or y_min >= y_max:
            warnings.append(f"{image_id}: annotation {ann.bbox} collapsed by clamping, dropped")
            continue
        if (x_min, y_min, x_max, y_max) != ann.bbox:
            ann = Annotation(class_index=ann.class_index, bbox=(x_min, y_min, x_max, y_max))
        clamped.append(ann)
    return tuple(clamped)


def _image_size(path: Path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as img:
        return img.size


def _load_kitti_dir(
    root: Path,
    name: str,
    class_names: tuple[str, ...],
    unknown_class: UnknownClassPolicy,
) -> DatasetManifest:
    images_dir = root / "images"
    labels_dir = root / "labels"
    if not images_dir.is_dir():
        raise ManifestError(f"missing images directory under {root}")
    image_paths = sorted(
        p for p in images_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    if not image_paths:
        raise ZeroImagesError(f"no images found under {images_dir}")

    warnings: list[str] = []
    records: list[ImageRecord] = []
    for path in image_paths:
        rel = path.relative_to(root)
        image_id = rel.as_posix()
        try:
            width, height = _image_size(path)
        except Exception as exc:  # noqa: BLE001 - undecodable file is data
            warnings.append(f"{image_id}: unreadable image ({exc}), skipped")
            continue
        label_path = labels_dir / rel.relative_to("images").with_suffix(".txt")
        if not label_path.is_file():
            label_path = labels_dir / f"{path.stem}.txt"
        annotations: tuple[Annotation, ...] = ()
        ignore_regions: tuple[Bbox, ...] = ()
        labels_rel: str | None = None
        if label_path.is_file():
            parsed, ignored = load_kitti_labels(label_path, class_names, unknown_class)
            annotations = _clamp_annotations(parsed, width, height, image_id, warnings)
            ignore_regions = tuple(ignored)
            labels_rel = label_path.relative_to(root).as_posix()
        else:
            warnings.append(f"{image_id}: no label file, keeping with empty ground truth")
        records.append(
            ImageRecord(
                id=image_id,
                sequence=path.parent.name,
                width=width,
                height=height,
                annotations=annotations,
                ignore_regions=ignore_regions,
                labels_path=labels_rel,
            )
        )
    if not records:
        raise ZeroImagesError(f"no readable images under {images_dir}")
    return DatasetManifest(
        name=name,
        class_names=class_names,
        images=tuple(records),
        root=root,
        warnings=tuple(warnings),
    )


def _load_manifest_json(
    path: Path, class_names: tuple[str, ...] | None, unknown_class: UnknownClassPolicy
) -> DatasetManifest:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest JSON {path}: {exc}") from exc
    if not isinstance(doc, dict) or "images" not in doc:
        raise ManifestError(f"manifest JSON {path} lacks an images list")
    names = tuple(class_names or doc.get("class_names") or KITTI_CLASS_NAMES)
    root = path.parent
    warnings: list[str] = []
    records: list[ImageRecord] = []
    for entry in doc["images"]:
        image_id = entry["id"]
        width = int(entry["width"])
        height = int(entry["height"])
        labels_path = entry.get("labels_path")
        annotations: tuple[Annotation, ...] = ()
        ignore_regions: tuple[Bbox, ...] = ()
        if labels_path:
            label_file = root / labels_path
            if label_file.is_file():
                parsed, ignored = load_kitti_labels(label_file, names, unknown_class)
                annotations = _clamp_annotations(parsed, width, height, image_id, warnings)
                ignore_regions = tuple(ignored)
            else:
                warnings.append(f"{image_id}: label file {labels_path} missing")
        records.append(
            ImageRecord(
                id=image_id,
                sequence=entry.get("sequence") or Path(image_id).parent.name,
                width=width,
                height=height,
                annotations=annotations,
                ignore_regions=ignore_regions,
                labels_path=labels_path,
            )
        )
    if not records:
        raise ZeroImagesError(f"manifest JSON {path} lists no images")
    return DatasetManifest(
        name=doc.get("name", path.stem),
        class_names=names,
        images=tuple(records),
        root=root,
        warnings=tuple(warnings),
    )


def load_manifest(
    root_path: Path | str,
    format: ManifestFormat = ManifestFormat.KITTI_DIR,
    *,
    name: str | None = None,
    class_names: tuple[str, ...] | list[str] | None = None,
    unknown_class: UnknownClassPolicy = UnknownClassPolicy.IGNORE,
) -> DatasetManifest:
    """Load a dataset manifest from a KITTI-style directory or a JSON file."""
    root = Path(root_path)
    if not root.exists():
        raise ManifestError(f"dataset root {root} does not exist")
    if format is ManifestFormat.MANIFEST_JSON:
        manifest = _load_manifest_json(
            root if root.is_file() else root / "manifest.json",
            tuple(class_names) if class_names else None,
            unknown_class,
        )
    else:
        manifest = _load_kitti_dir(
            root,
            name or root.name,
            tuple(class_names or KITTI_CLASS_NAMES),
            unknown_class,
        )
    for warning in manifest.warnings:
        log.warning("%s", warning)
    return manifest


def make_split(
    manifest: DatasetManifest,
    strategy: SplitStrategy,
    *,
    ratio: float | None = None,
    train_sequences: set[str] | list[str] | None = None,
    train_ids: set[str] | None = None,
    test_ids: set[str] | None = None,
) -> SplitSpec:
    """Build a train/test split.

    ``BY_RATIO`` is deterministic: the first ``floor(N * ratio)`` records in
    lexicographic id order become the train side. ``BY_SEQUENCE`` sends the
    named sequences to train and the rest to test.
    """
    all_ids = manifest.ids()
    if strategy is SplitStrategy.BY_RATIO:
        if ratio is None or not 0.0 < ratio < 1.0:
            raise SplitError(f"ratio must be in (0, 1), got {ratio}")
        n_train = int(len(all_ids) * ratio)
        train, test = all_ids[:n_train], all_ids[n_train:]
        if not train or not test:
            raise EmptySideError(f"ratio {ratio} leaves a side empty for {len(all_ids)} images")
        return SplitSpec(frozenset(train), frozenset(test), strategy, ratio)

    if strategy is SplitStrategy.BY_SEQUENCE:
        if not train_sequences:
            raise SplitError("BY_SEQUENCE requires train_sequences")
        wanted = set(train_sequences)
        known = {record.sequence for record in manifest.images}
        missing = sorted(wanted - known)
        if missing:
            raise UnknownSequenceError(f"unknown sequences: {', '.join(missing)}")
        train = [r.id for r in manifest.images if r.sequence in wanted]
        test = [r.id for r in manifest.images if r.sequence not in wanted]
        if not train or not test:
            raise EmptySideError("sequence choice leaves a side empty")
        return SplitSpec(frozenset(train), frozenset(test), strategy)

    if strategy is SplitStrategy.EXPLICIT:
        if not train_ids or not test_ids:
            raise SplitError("EXPLICIT requires train_ids and test_ids")
        unknown = sorted((set(train_ids) | set(test_ids)) - set(all_ids))
        if unknown:
            raise SplitError(f"split references unknown ids: {', '.join(unknown[:5])}")
        split = SplitSpec(frozenset(train_ids), frozenset(test_ids), strategy)
        check_split(split)
        return split

    raise SplitError(f"unsupported strategy {strategy}")


def validate_split(manifest: DatasetManifest, split: SplitSpec) -> SplitValidation:
    """Check disjointness and coverage; failures land in the result, not exceptions."""
    known = set(manifest.ids())
    duplicates = sorted(split.train_ids & split.test_ids)
    unknown = sorted((split.train_ids | split.test_ids) - known)
    issues = []
    if duplicates:
        issues.append(f"{len(duplicates)} ids on both sides")
    if unknown:
        issues.append(f"{len(unknown)} unknown ids")
    if not split.train_ids:
        issues.append("empty train side")
    if not split.test_ids:
        issues.append("empty test side")

    by_id = manifest.by_id()
    counts: dict[str, dict[str, int]] = {}
    for side, ids in (("train", split.train_ids), ("test", split.test_ids)):
        side_counts = {name: 0 for name in manifest.class_names}
        for image_id in ids:
            record = by_id.get(image_id)
            if record is None:
                continue
            for ann in record.annotations:
                side_counts[manifest.class_names[ann.class_index]] += 1
        counts[side] = side_counts

    covered = len((split.train_ids | split.test_ids) & known)
    return SplitValidation(
        valid=not issues,
        train_count=len(split.train_ids),
        test_count=len(split.test_ids),
        coverage=covered / len(known) if known else 0.0,
        duplicate_ids=duplicates,
        unknown_ids=unknown,
        issues=issues,
        class_instances=counts,
    )


def split_to_json_dict(split: SplitSpec) -> dict:
    doc: dict = {"strategy": split.strategy.value}
    if split.ratio is not None:
        doc["ratio"] = split.ratio
    doc["train_ids"] = sorted(split.train_ids)
    doc["test_ids"] = sorted(split.test_ids)
    return doc


def split_from_json_dict(doc: dict) -> SplitSpec:
    try:
        return SplitSpec(
            train_ids=frozenset(doc["train_ids"]),
            test_ids=frozenset(doc["test_ids"]),
            strategy=SplitStrategy(doc.get("strategy", "explicit")),
            ratio=doc.get("ratio"),
        )
    except KeyError as exc:
        raise SplitError(f"split JSON missing field {exc}") from exc


def save_split(split: SplitSpec, path: Path | str) -> None:
    Path(path).write_text(json.dumps(split_to_json_dict(split), indent=2) + "\n")


def load_split(path: Path | str) -> SplitSpec:
    return split_from_json_dict(json.loads(Path(path).read_text()))


def split_content_hash(split: SplitSpec) -> str:
    """Stable digest of the split membership, used to tie artifacts together."""
    digest = hashlib.sha256()
    for side in (sorted(split.train_ids), ["--"], sorted(split.test_ids)):
        for item in side:
            digest.update(item.encode())
            digest.update(b"\n")
    return digest.hexdigest()
