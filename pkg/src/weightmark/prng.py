"""xoshiro256** streams seeded through splitmix64.

Two flavours share one definition of every draw:

* :class:`PrngStream` -- a single sequential stream in pure Python.
* :func:`lane_permutations` -- one shuffle for each of many seeds, compiled
  with numba.  Lane ``k`` returns exactly ``PrngStream(seeds[k]).permutation(d)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numba
import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO53 = 2.0**-53


def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, *path: int) -> int:
    """Child seed for an index path, e.g. ``derive_seed(seed, position, iteration)``."""
    h = root & MASK64
    for k in path:
        h = mix64((h + (k + 1) * GOLDEN) & MASK64)
    return h


def _splitmix_state(seed: int) -> list[int]:
    x = seed & MASK64
    out = []
    for _ in range(4):
        x = (x + GOLDEN) & MASK64
        out.append(mix64(x))
    return out


class PrngStream:
    """Sequential xoshiro256** generator.

    ``below(n)`` uses the top 32 bits of a draw in a multiply-shift reduction,
    so it supports ``n <= 2**32`` with bias at most ``n / 2**32``.
    """

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._s = _splitmix_state(self.seed)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        r = (s1 * 5) & MASK64
        result = ((((r << 7) | (r >> 57)) & MASK64) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def u64_array(self, n: int) -> np.ndarray:
        return np.array([self.next_u64() for _ in range(n)], dtype=np.uint64)

    def below(self, n: int) -> int:
        if not 1 <= n <= 1 << 32:
            raise ValueError(f"bound out of range: {n}")
        return ((self.next_u64() >> 32) * n) >> 32

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * _TWO53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, n: int, std: float = 1.0) -> np.ndarray:
        """``n`` Normal(0, std) draws (Box-Muller on consecutive draw pairs)."""
        pairs = (n + 1) // 2
        raw = self.u64_array(2 * pairs)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _TWO53
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(theta)
        z[1::2] = radius * np.sin(theta)
        return z[:n] * std

    def permutation(self, d: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(d)``."""
        p = list(range(d))
        for i in range(d - 1, 0, -1):
            j = self.below(i + 1)
            p[i], p[j] = p[j], p[i]
        return np.array(p, dtype=np.int64)

    def sample(self, population: Sequence[int], k: int) -> list[int]:
        """``k`` distinct elements via a partial Fisher-Yates pass."""
        pool = list(population)
        n = len(pool)
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


# ---------------------------------------------------------------------------
# batched lanes


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seeds(root: int, *path) -> np.ndarray:
    """Vectorised :func:`derive_seed`; path items may be int arrays (broadcast)."""
    with np.errstate(over="ignore"):
        h = np.asarray(root & MASK64, dtype=np.uint64)
        for k in path:
            k = np.asarray(k).astype(np.uint64)
            h = _mix64_np(h + (k + np.uint64(1)) * np.uint64(GOLDEN))
    return h


@numba.njit(cache=True)
def shuffle_from_seed(seed, out):
    """Fill ``out`` with the Fisher-Yates permutation drawn by ``PrngStream(seed)``."""
    d = out.size
    x = seed
    s = np.empty(4, np.uint64)
    for w in range(4):
        x = x + np.uint64(GOLDEN)
        z = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        s[w] = z ^ (z >> np.uint64(31))
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    for i in range(d):
        out[i] = i
    for i in range(d - 1, 0, -1):
        r = s1 * np.uint64(5)
        res = ((r << np.uint64(7)) | (r >> np.uint64(57))) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        j = np.int64(((res >> np.uint64(32)) * np.uint64(i + 1)) >> np.uint64(32))
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp


@numba.njit(cache=True)
def _lane_kernel(seeds, d):
    out = np.empty((seeds.size, d), np.int64)
    for k in range(seeds.size):
        shuffle_from_seed(seeds[k], out[k])
    return out


def lane_permutations(seeds, d: int) -> np.ndarray:
    """Fisher-Yates permutation of ``range(d)`` for every seed, shape ``(n, d)``."""
    seeds = np.ascontiguousarray(np.asarray(seeds, dtype=np.uint64).ravel())
    return _lane_kernel(seeds, d)
