"""Exact Hamming-radius search and cross-split near-duplicate scanning.

The index partitions each 64-bit hash into ``bands`` disjoint bit spans
with an exact-match table per span. If two hashes differ in at most
``bands - 1`` bits, at least one span matches exactly (pigeonhole), so
table probes plus full verification give exact recall for any radius up
to ``bands - 1``. Larger radii fall back to a linear verified scan.

Cross-split scans default to a vectorized brute-force pass because the
corpora this tool audits are small; the banded index kicks in only past
a configurable pair-count threshold.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import EmptyCorpusError
from .phash import HASH_BITS, PerceptualHash, hamming_distance

DEFAULT_MAX_DIST = 10
DEFAULT_BANDS = 8
DEFAULT_PAIR_CAP = 100_000
# Below this many train x test pairs the plain double loop is cheap enough
# to be preferable to building an index (5,000 x 5,000).
BRUTE_FORCE_PAIR_LIMIT = 25_000_000

_CHUNK_ROWS = 256


def _as_bits(value: PerceptualHash | int) -> int:
    return value.bits if isinstance(value, PerceptualHash) else int(value)


def _band_spans(bands: int) -> tuple[tuple[int, int], ...]:
    """(shift, mask) per band; widths differ by at most one bit."""
    base, extra = divmod(HASH_BITS, bands)
    spans = []
    offset = 0
    for i in range(bands):
        width = base + (1 if i < extra else 0)
        offset += width
        spans.append((HASH_BITS - offset, (1 << width) - 1))
    return tuple(spans)


def choose_bands(radius: int) -> int:
    """Smallest band count with exact recall at the given radius."""
    if not 0 <= radius <= HASH_BITS:
        raise ValueError(f"radius must be in [0, {HASH_BITS}], got {radius}")
    return max(radius + 1, 1)


@dataclass(frozen=True)
class HashIndex:
    ids: tuple[str, ...]
    hashes: tuple[int, ...]
    bands: int
    spans: tuple[tuple[int, int], ...]
    tables: tuple[dict[int, tuple[int, ...]], ...]

    @property
    def exact_radius(self) -> int:
        return self.bands - 1


def build_index(hashes: Mapping[str, PerceptualHash | int], bands: int = DEFAULT_BANDS) -> HashIndex:
    """Index a corpus for radius queries exact up to ``bands - 1``."""
    if not hashes:
        raise EmptyCorpusError("cannot index an empty corpus")
    if not 1 <= bands <= HASH_BITS:
        raise ValueError(f"bands must be in [1, {HASH_BITS}], got {bands}")
    ids = tuple(sorted(hashes))
    values = tuple(_as_bits(hashes[i]) for i in ids)
    spans = _band_spans(bands)
    staging: list[dict[int, list[int]]] = [{} for _ in spans]
    for idx, value in enumerate(values):
        for table, (shift, mask) in zip(staging, spans):
            table.setdefault((value >> shift) & mask, []).append(idx)
    tables = tuple({key: tuple(rows) for key, rows in table.items()} for table in staging)
    return HashIndex(ids=ids, hashes=values, bands=bands, spans=spans, tables=tables)


def query_within(
    index: HashIndex, probe: PerceptualHash | int, radius: int
) -> list[tuple[str, int]]:
    """All entries within the radius, ascending by distance then id."""
    if not 0 <= radius <= HASH_BITS:
        raise ValueError(f"radius must be in [0, {HASH_BITS}], got {radius}")
    value = _as_bits(probe)
    if radius <= index.exact_radius:
        candidates: set[int] = set()
        for table, (shift, mask) in zip(index.tables, index.spans):
            candidates.update(table.get((value >> shift) & mask, ()))
    else:
        candidates = set(range(len(index.ids)))
    hits = []
    for idx in candidates:
        dist = hamming_distance(value, index.hashes[idx])
        if dist <= radius:
            hits.append((index.ids[idx], dist))
    hits.sort(key=lambda item: (item[1], item[0]))
    return hits


@dataclass
class SimilarityReport:
    max_dist: int
    histogram: dict[int, int]
    pairs: list[tuple[str, str, int]]
    total: int
    truncated: bool = False

    def __post_init__(self) -> None:
        covered = sum(self.histogram.values())
        if covered != self.total:
            raise ValueError(f"histogram sums to {covered}, total says {self.total}")


class _CapBuffer:
    """Keeps the globally smallest ``cap`` pairs under (distance, ids) order."""

    def __init__(self, cap: int) -> None:
        self.cap = cap
        self.items: list[tuple[int, str, str]] = []
        self.dropped = False

    def extend(self, items: list[tuple[int, str, str]]) -> None:
        self.items.extend(items)
        if len(self.items) > 4 * self.cap:
            self._shrink()

    def _shrink(self) -> None:
        self.items.sort()
        if len(self.items) > self.cap:
            del self.items[self.cap :]
            self.dropped = True

    def finish(self) -> tuple[list[tuple[str, str, int]], bool]:
        self.items.sort()
        truncated = self.dropped or len(self.items) > self.cap
        del self.items[self.cap :]
        return [(train, test, dist) for dist, train, test in self.items], truncated


def _normalize(hashes: Mapping[str, PerceptualHash | int]) -> tuple[list[str], np.ndarray]:
    ids = sorted(hashes)
    values = np.array([_as_bits(hashes[i]) for i in ids], dtype=np.uint64)
    return ids, values


def _scan_chunk(
    train_ids: list[str],
    train_values: np.ndarray,
    test_ids: list[str],
    test_values: np.ndarray,
    start: int,
    stop: int,
    max_dist: int,
) -> tuple[np.ndarray, list[tuple[int, str, str]]]:
    chunk = test_values[start:stop]
    distances = np.bitwise_count(chunk[:, None] ^ train_values[None, :])
    mask = distances <= max_dist
    hist = np.bincount(distances[mask].astype(np.int64), minlength=max_dist + 1)
    rows, cols = np.nonzero(mask)
    pairs = [
        (int(distances[r, c]), train_ids[c], test_ids[start + r])
        for r, c in zip(rows.tolist(), cols.tolist())
    ]
    return hist, pairs


def cross_split_scan(
    train_hashes: Mapping[str, PerceptualHash | int],
    test_hashes: Mapping[str, PerceptualHash | int],
    max_dist: int = DEFAULT_MAX_DIST,
    *,
    pair_cap: int = DEFAULT_PAIR_CAP,
    brute_force_pair_limit: int = BRUTE_FORCE_PAIR_LIMIT,
    jobs: int | None = None,
) -> SimilarityReport:
    """Histogram every train x test pair at distance <= max_dist.

    The histogram is always complete; the pair list is capped at
    ``pair_cap`` (smallest distances first) with the cap noted via
    ``truncated``. Output is independent of chunking and thread count.
    """
    if not train_hashes or not test_hashes:
        raise EmptyCorpusError("both sides of a scan must be non-empty")
    if not 0 <= max_dist <= HASH_BITS:
        raise ValueError(f"max_dist must be in [0, {HASH_BITS}], got {max_dist}")

    train_ids, train_values = _normalize(train_hashes)
    test_ids, test_values = _normalize(test_hashes)

    histogram = np.zeros(max_dist + 1, dtype=np.int64)
    buffer = _CapBuffer(pair_cap)

    if len(train_ids) * len(test_ids) <= brute_force_pair_limit:
        starts = range(0, len(test_ids), _CHUNK_ROWS)

        def run(start: int) -> tuple[np.ndarray, list[tuple[int, str, str]]]:
            return _scan_chunk(
                train_ids,
                train_values,
                test_ids,
                test_values,
                start,
                min(start + _CHUNK_ROWS, len(test_ids)),
                max_dist,
            )

        if jobs and jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outputs = list(pool.map(run, starts))
        else:
            outputs = [run(start) for start in starts]
        for hist, pairs in outputs:
            histogram += hist
            buffer.extend(pairs)
    else:
        bands = DEFAULT_BANDS if max_dist <= DEFAULT_BANDS - 1 else choose_bands(max_dist)
        index = build_index(dict(zip(train_ids, train_values.tolist())), bands=bands)

        def probe(start: int) -> tuple[np.ndarray, list[tuple[int, str, str]]]:
            hist = np.zeros(max_dist + 1, dtype=np.int64)
            pairs: list[tuple[int, str, str]] = []
            for test_id, value in zip(
                test_ids[start : start + _CHUNK_ROWS],
                test_values[start : start + _CHUNK_ROWS].tolist(),
            ):
                for train_id, dist in query_within(index, value, max_dist):
                    hist[dist] += 1
                    pairs.append((dist, train_id, test_id))
            return hist, pairs

        starts = range(0, len(test_ids), _CHUNK_ROWS)
        if jobs and jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outputs = list(pool.map(probe, starts))
        else:
            outputs = [probe(start) for start in starts]
        for hist, pairs in outputs:
            histogram += hist
            buffer.extend(pairs)

    pairs, truncated = buffer.finish()
    return SimilarityReport(
        max_dist=max_dist,
        histogram={d: int(histogram[d]) for d in range(max_dist + 1)},
        pairs=pairs,
        total=int(histogram.sum()),
        truncated=truncated,
    )


def brute_force_scan(
    train_hashes: Mapping[str, PerceptualHash | int],
    test_hashes: Mapping[str, PerceptualHash | int],
    max_dist: int,
) -> dict[int, int]:
    """Reference double loop kept for oracle comparisons in tests."""
    histogram = {d: 0 for d in range(max_dist + 1)}
    for train_value in train_hashes.values():
        for test_value in test_hashes.values():
            dist = hamming_distance(train_value, test_value)
            if dist <= max_dist:
                histogram[dist] += 1
    return histogram


def report_to_json_dict(report: SimilarityReport) -> dict:
    return {
        "max_dist": report.max_dist,
        "histogram": {str(d): n for d, n in sorted(report.histogram.items())},
        "total": report.total,
        "pairs": [[train, test, dist] for train, test, dist in report.pairs],
        "truncated": report.truncated,
    }


def report_from_json_dict(doc: dict) -> SimilarityReport:
    return SimilarityReport(
        max_dist=int(doc["max_dist"]),
        histogram={int(k): int(v) for k, v in doc["histogram"].items()},
        pairs=[(p[0], p[1], int(p[2])) for p in doc.get("pairs", [])],
        total=int(doc["total"]),
        truncated=bool(doc.get("truncated", False)),
    )


def save_report(report: SimilarityReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_json_dict(report), fh, indent=2)
        fh.write("\n")


def load_report(path) -> SimilarityReport:
    with open(path) as fh:
        return report_from_json_dict(json.load(fh))


def report_to_markdown(report: SimilarityReport, even_buckets: bool = False) -> str:
    """Distance/occurrence table; ``even_buckets`` folds odd distances into
    the even bucket below them for comparison against even-only tallies."""
    lines = ["| distance | pairs |", "| --- | --- |"]
    if even_buckets:
        rows = []
        for d in range(0, report.max_dist + 1, 2):
            count = report.histogram.get(d, 0) + report.histogram.get(d + 1, 0)
            rows.append((d, count))
    else:
        rows = sorted(report.histogram.items())
    for dist, count in rows:
        if count:
            lines.append(f"| {dist} | {count} |")
    lines.append(f"| total | {report.total} |")
    return "\n".join(lines) + "\n"
