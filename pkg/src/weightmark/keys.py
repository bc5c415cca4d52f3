"""Secret material: permutation keys, orthogonal frames and invertible pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GenerationFailure, InvalidArgument
from .prng import PrngStream

MAX_RETRIES = 8


@dataclass(frozen=True, eq=False)
class PermKey:
    """Permutation of ``d`` coordinates stored as an index map.

    Applying the key to a row vector ``e`` gives ``e'[j] = e[map[j]]``, i.e.
    right-multiplication by the matrix with a one at ``(map[j], j)``.
    """

    map: np.ndarray

    def __post_init__(self):
        m = np.array(self.map, dtype=np.int64, copy=True).ravel()
        if not np.array_equal(np.sort(m), np.arange(m.size)):
            raise InvalidArgument("permutation map is not a bijection on [0, d)")
        m.setflags(write=False)
        object.__setattr__(self, "map", m)

    @classmethod
    def identity(cls, d: int) -> "PermKey":
        return cls(np.arange(d))

    @property
    def d(self) -> int:
        return self.map.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Permute the last axis of ``x`` (rows of a matrix, or a vector)."""
        return np.asarray(x)[..., self.map]

    def inverse(self) -> "PermKey":
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.d)
        return PermKey(inv)

    def compose(self, other: "PermKey") -> "PermKey":
        """Key equivalent to applying ``self`` and then ``other``."""
        return PermKey(self.map[other.map])

    def as_matrix(self) -> np.ndarray:
        P = np.zeros((self.d, self.d))
        P[self.map, np.arange(self.d)] = 1.0
        return P

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map, np.arange(self.d)))

    def __eq__(self, other):
        return isinstance(other, PermKey) and np.array_equal(self.map, other.map)

    def __hash__(self):
        return hash(self.map.tobytes())

    def tolist(self) -> list[int]:
        return self.map.tolist()


@dataclass(frozen=True, eq=False)
class OrthoKey:
    B: np.ndarray


@dataclass(frozen=True, eq=False)
class InvertiblePair:
    M: np.ndarray
    M_inv: np.ndarray

    def swapped(self) -> "InvertiblePair":
        return InvertiblePair(self.M_inv, self.M)


@dataclass(frozen=True, eq=False)
class SingleUserKey:
    """Everything the owner needs to re-detect a single watermark.

    ``seed`` roots the null-distribution draws made at extraction time.
    """

    L_M: tuple
    L_W: tuple
    L_P1: tuple
    L_P2: tuple
    scale_wm: float
    seed: int
    t: int = field(init=False)
    l: int = field(init=False)

    def __post_init__(self):
        for name in ("L_M", "L_W", "L_P1", "L_P2"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "L_M", tuple(int(i) for i in self.L_M))
        object.__setattr__(self, "L_W", tuple(int(i) for i in self.L_W))
        object.__setattr__(self, "t", len(self.L_M))
        object.__setattr__(self, "l", len(self.L_W))
        if len(set(self.L_M)) != self.t or len(set(self.L_W)) != self.l:
            raise InvalidArgument("L_M and L_W must hold distinct indices")
        if set(self.L_M) & set(self.L_W):
            raise InvalidArgument("L_W overlaps L_M")
        if len(self.L_P1) != self.l or len(self.L_P2) != self.t:
            raise InvalidArgument(
                f"expected {self.l} position keys and {self.t} invariant keys, "
                f"got {len(self.L_P1)} and {len(self.L_P2)}")
        if not self.scale_wm > 0:
            raise InvalidArgument("scale_wm must be positive")

    @property
    def d(self) -> int:
        return self.L_P1[0].d if self.L_P1 else self.L_P2[0].d

    def __eq__(self, other):
        return (isinstance(other, SingleUserKey)
                and (self.L_M, self.L_W, self.L_P1, self.L_P2, self.scale_wm, self.seed)
                == (other.L_M, other.L_W, other.L_P1, other.L_P2, other.scale_wm, other.seed))


@dataclass(frozen=True)
class UserKey:
    user_id: str
    key: SingleUserKey
    noise_seed: int
    num_noise: int


def gen_permutation(prng: PrngStream, d: int) -> PermKey:
    if d < 1:
        raise InvalidArgument(f"d must be positive, got {d}")
    return PermKey(prng.permutation(d))


def gen_permutations(prng: PrngStream, d: int, count: int) -> list[PermKey]:
    return [gen_permutation(prng, d) for _ in range(count)]


def gen_orthogonal(prng: PrngStream, d: int) -> OrthoKey:
    """Haar-distributed orthogonal matrix from the QR factors of a Gaussian draw."""
    if d < 1:
        raise InvalidArgument(f"d must be positive, got {d}")
    for _ in range(MAX_RETRIES):
        G = prng.normal(d * d).reshape(d, d)
        Q, R = np.linalg.qr(G)
        diag = np.abs(np.diag(R))
        if diag.min() <= d * np.finfo(float).eps * diag.max():
            continue
        B = Q * np.sign(np.diag(R))
        if np.abs(B @ B.T - np.eye(d)).max() <= 1e-10:
            return OrthoKey(B)
    raise GenerationFailure(f"no full-rank Gaussian draw in {MAX_RETRIES} attempts (d={d})")


def gen_invertible(prng: PrngStream, d: int, max_cond: float = 1e4) -> InvertiblePair:
    """``I + G`` with ``G`` Gaussian of std ``0.5/sqrt(d)``, redrawn while ill-conditioned."""
    if d < 1:
        raise InvalidArgument(f"d must be positive, got {d}")
    eye = np.eye(d)
    for _ in range(1 + MAX_RETRIES):
        M = eye + prng.normal(d * d, 0.5 / np.sqrt(d)).reshape(d, d)
        if not np.linalg.cond(M) <= max_cond:
            continue
        M_inv = np.linalg.inv(M)
        if np.abs(M @ M_inv - eye).max() <= 1e-8:
            return InvertiblePair(M, M_inv)
    raise GenerationFailure(f"no invertible draw with cond <= {max_cond:g} (d={d})")


def stack_maps(keys: Sequence[PermKey]) -> np.ndarray:
    """``(len(keys), d)`` array of index maps."""
    return np.stack([k.map for k in keys]) if keys else np.empty((0, 0), dtype=np.int64)
