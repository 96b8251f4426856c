"""Deterministic 64-bit seed mixing and sampling.

Leakage schedules must replay bit-for-bit on any platform and Python
version, so nothing here depends on ``random`` or NumPy generator
internals. The generator is splitmix64 (Steele et al.), fixed by the
three constants below.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

T = TypeVar("T")


def splitmix64(state: int) -> int:
    """One splitmix64 output step for the given state."""
    z = (state + _GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def stable_mix(*parts: int) -> int:
    """Fold integers into one 64-bit seed, order-sensitively."""
    h = 0
    for part in parts:
        h = splitmix64(h ^ (part & MASK64))
    return h


class SeedStream:
    """Sequential splitmix64 stream with unbiased bounded draws."""

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound), rejection-sampled to avoid bias."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = (MASK64 + 1) - ((MASK64 + 1) % bound)
        while True:
            draw = self.next_u64()
            if draw < limit:
                return draw % bound

    def uniform(self, low: float, high: float) -> float:
        """Uniform float in [low, high) from one 53-bit draw."""
        unit = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + unit * (high - low)


def sample_without_replacement(pool: Sequence[T], count: int, stream: SeedStream) -> list[T]:
    """Pick ``count`` distinct items uniformly; result sorted for stable output.

    Partial Fisher-Yates over a copy of ``pool``; the caller controls
    determinism through the stream seed and the pool ordering.
    """
    n = len(pool)
    if not 0 <= count <= n:
        raise ValueError(f"cannot sample {count} of {n} items")
    items = list(pool)
    for i in range(count):
        j = i + stream.below(n - i)
        items[i], items[j] = items[j], items[i]
    return sorted(items[:count])
