"""64-bit DCT perceptual hashes and Hamming distances.

The hash pipeline is fixed so distances are comparable across machines:
area-average the luminance to 32x32, take the 2-D DCT-II, keep the
top-left 8x8 coefficient block, threshold every coefficient against the
median of the 63 AC coefficients (the DC term is excluded from the
median but still contributes its own bit), and pack the 64 comparison
bits row-major, most significant bit first.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.fft import dct

from .dataset import DatasetManifest
from .errors import AllHashesFailedError, SplitAuditError

log = logging.getLogger(__name__)

HASH_BITS = 64

_RESAMPLE_SIZE = 32
_BLOCK_SIZE = 8
# Coefficients that are analytically zero (e.g. every AC term of a flat
# image) come out of the floating-point DCT as ~1e-13 noise; snapping them
# keeps the degenerate hashes deterministic.
_ZERO_SNAP = 1e-8

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PerceptualHash:
    bits: int
    source_id: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.bits < (1 << HASH_BITS):
            raise ValueError(f"hash must fit in {HASH_BITS} bits")

    @property
    def hex(self) -> str:
        return format(self.bits, "016x")

    @classmethod
    def from_hex(cls, text: str, source_id: str = "") -> "PerceptualHash":
        return cls(bits=int(text, 16), source_id=source_id)


@dataclass(frozen=True)
class GrayscaleRaster:
    width: int
    height: int
    samples: np.ndarray  # shape (height, width), luminance in [0, 1]

    def __post_init__(self) -> None:
        if self.samples.shape != (self.height, self.width):
            raise ValueError(
                f"samples shape {self.samples.shape} != ({self.height}, {self.width})"
            )


@dataclass
class HashBatch:
    hashes: dict[str, PerceptualHash]
    failures: dict[str, str]


def to_grayscale(image: np.ndarray) -> GrayscaleRaster:
    """Convert a decoded raster to luminance via 0.299R + 0.587G + 0.114B."""
    arr = np.asarray(image)
    if arr.size == 0:
        raise SplitAuditError("cannot hash a zero-sized image")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = np.clip(arr.astype(np.float64), 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr[..., :3] @ _LUMA_WEIGHTS
    elif arr.ndim != 2:
        raise SplitAuditError(f"expected a 2-D or 3-D raster, got shape {arr.shape}")
    height, width = arr.shape
    return GrayscaleRaster(width=width, height=height, samples=arr)


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix mapping n_in samples to n_out area averages."""
    weights = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            weights[i, j] = min(hi, j + 1.0) - max(lo, float(j))
        weights[i] /= scale
    return weights


def _resample_area(samples: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = samples.shape
    return _axis_weights(h, out_h) @ samples @ _axis_weights(w, out_w).T


def compute_phash(raster: GrayscaleRaster, source_id: str = "") -> PerceptualHash:
    """Hash a luminance raster; identical pixels always yield identical bits.

    A flat image has every AC coefficient equal to zero, so all AC bits are
    zero and only the DC bit reflects the level: 0x8000000000000000 for any
    non-black flat image, 0x0 for black.
    """
    if raster.width < 1 or raster.height < 1:
        raise SplitAuditError("raster must be at least 1x1")
    small = _resample_area(raster.samples, _RESAMPLE_SIZE, _RESAMPLE_SIZE)
    coeffs = dct(dct(small, axis=0), axis=1)
    block = coeffs[:_BLOCK_SIZE, :_BLOCK_SIZE].reshape(-1).copy()
    block[np.abs(block) < _ZERO_SNAP] = 0.0
    median = float(np.median(block[1:]))
    bits = 0
    for value in block:
        bits = (bits << 1) | (1 if value > median else 0)
    return PerceptualHash(bits=bits, source_id=source_id)


def hash_image(image: np.ndarray, source_id: str = "") -> PerceptualHash:
    return compute_phash(to_grayscale(image), source_id=source_id)


def hamming_distance(a: PerceptualHash | int, b: PerceptualHash | int) -> int:
    """Number of differing bits between two 64-bit hashes."""
    x = a.bits if isinstance(a, PerceptualHash) else a
    y = b.bits if isinstance(b, PerceptualHash) else b
    return (x ^ y).bit_count()


def load_image(path: Path | str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def manifest_decoder(manifest: DatasetManifest) -> Callable[[str], np.ndarray]:
    """Image loader resolving ids against the manifest root."""

    def decode(image_id: str) -> np.ndarray:
        return load_image(manifest.image_path(image_id))

    return decode


def hash_corpus(
    manifest: DatasetManifest,
    ids: Iterable[str],
    decode: Callable[[str], np.ndarray] | None = None,
    *,
    jobs: int | None = None,
) -> HashBatch:
    """Hash every id; per-id failures are recorded instead of aborting.

    The output is keyed and sorted by id, so it does not depend on worker
    scheduling. Raises only when every single image failed.
    """
    ordered = sorted(ids)
    decode = decode or manifest_decoder(manifest)

    def one(image_id: str) -> tuple[str, PerceptualHash | None, str | None]:
        try:
            return image_id, hash_image(decode(image_id), source_id=image_id), None
        except Exception as exc:  # noqa: BLE001 - every decode failure is data
            return image_id, None, f"{type(exc).__name__}: {exc}"

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ordered))
    else:
        results = [one(image_id) for image_id in ordered]

    hashes: dict[str, PerceptualHash] = {}
    failures: dict[str, str] = {}
    for image_id, value, error in results:
        if value is not None:
            hashes[image_id] = value
        else:
            failures[image_id] = error or "unknown error"
            log.warning("hashing %s failed: %s", image_id, error)
    if ordered and not hashes:
        raise AllHashesFailedError(f"all {len(ordered)} images failed to hash")
    return HashBatch(hashes=hashes, failures=failures)


def write_hashes_csv(hashes: Mapping[str, PerceptualHash], path: Path | str) -> None:
    """Dump `id,hash_hex` rows sorted by id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "hash_hex"])
        for image_id in sorted(hashes):
            writer.writerow([image_id, hashes[image_id].hex])


def read_hashes_csv(path: Path | str) -> dict[str, PerceptualHash]:
    hashes: dict[str, PerceptualHash] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "id":
                continue
            image_id, hex_value = row[0], row[1]
            hashes[image_id] = PerceptualHash.from_hex(hex_value, source_id=image_id)
    return hashes
