"""Counter-based SplitMix64 generator.

The stream is defined by the recurrence::

    state_i = seed + i * 0x9E3779B97F4A7C15          (mod 2**64), i = 1, 2, ...
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9          (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB          (mod 2**64)
    out_i = z ^ (z >> 31)

Because each output depends only on its counter, blocks of outputs are
computed with wrapping uint64 numpy arithmetic and the stream is identical
on every platform. Uniform reals are ``(out >> 11) / 2**53``.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Deterministic 64-bit generator with vectorised draws."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n: int | None = None):
        """Return one uint64 (``n is None``) or an array of ``n``."""
        count = 1 if n is None else int(n)
        idx = np.arange(self.counter + 1, self.counter + 1 + count, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            out = _mix(np.uint64(self.seed) + idx * GOLDEN_GAMMA)
        return int(out[0]) if n is None else out

    def uniform(self, n: int | None = None):
        """Uniform reals in [0, 1) with 53 random bits."""
        bits = self.next_u64(1 if n is None else n) >> np.uint64(11)
        vals = bits.astype(np.float64) / 9007199254740992.0
        return float(vals[0]) if n is None else vals

    def uniform_range(self, low: float, high: float, n: int | None = None):
        u = self.uniform(n)
        return low + (high - low) * u

    def integers(self, low: int, high: int, n: int | None = None):
        """Integers in [low, high) by multiply-shift on the top 32 bits."""
        span = int(high) - int(low)
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        bits = self.next_u64(1 if n is None else n) >> np.uint64(32)
        vals = [int(low) + ((int(b) * span) >> 32) for b in bits]
        return vals[0] if n is None else np.asarray(vals, dtype=np.int64)

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller (float64)."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def spawn(self, tag: int) -> "SplitMix64":
        """Independent child stream derived from this seed and ``tag``."""
        with np.errstate(over="ignore"):
            child = _mix(np.array([self.seed ^ ((int(tag) * 0xD1B54A32D192ED03) & _MASK64)], dtype=np.uint64))
        return SplitMix64(int(child[0]))
