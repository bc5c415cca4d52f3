"""Synthetic transformer weights and the toy forward pass.

Matrices are plain 2-D ``float64`` numpy arrays; vectors such as the LayerNorm
gains are stored as ``1 x d`` matrices so every tensor has a (rows, cols) shape.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .prng import PrngStream

LAYER_TENSORS = ("W_q", "W_k", "W_v", "W_o", "W_1", "W_2", "gamma1", "beta1", "gamma2", "beta2")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2:
        raise InvalidArgument(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("matrix contains non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LayerWeights:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    W_1: np.ndarray
    W_2: np.ndarray
    gamma1: np.ndarray
    beta1: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        for name in LAYER_TENSORS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        d = self.W_q.shape[0]
        d_ff = self.W_1.shape[1]
        expected = {
            "W_q": (d, d), "W_k": (d, d), "W_v": (d, d), "W_o": (d, d),
            "W_1": (d, d_ff), "W_2": (d_ff, d),
            "gamma1": (1, d), "beta1": (1, d), "gamma2": (1, d), "beta2": (1, d),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidArgument(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def replace(self, **changes) -> "LayerWeights":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Embedding, transformer layers and output projection of a toy model."""

    W_e: np.ndarray
    layers: tuple
    W_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W_e", _frozen(self.W_e))
        object.__setattr__(self, "W_c", _frozen(self.W_c))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidArgument("a model needs at least one layer")
        s, d = self.W_e.shape
        if self.W_c.shape != (d, s):
            raise InvalidArgument(f"W_c has shape {self.W_c.shape}, expected {(d, s)}")
        d_ff = self.layers[0].W_1.shape[1]
        for i, layer in enumerate(self.layers):
            if layer.W_q.shape[0] != d or layer.W_1.shape[1] != d_ff:
                raise InvalidArgument(f"layer {i} is inconsistent with d={d}, d_ff={d_ff}")

    @property
    def s(self) -> int:
        return self.W_e.shape[0]

    @property
    def d(self) -> int:
        return self.W_e.shape[1]

    @property
    def d_ff(self) -> int:
        return self.layers[0].W_1.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> dict:
        return {"s": self.s, "d": self.d, "d_ff": self.d_ff, "n_layers": self.n_layers}

    def replace(self, **changes) -> "ModelBundle":
        return dataclasses.replace(self, **changes)

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Tensors in canonical (file) order."""
        yield "W_e", self.W_e
        for i, layer in enumerate(self.layers):
            for name in LAYER_TENSORS:
                yield f"layers.{i}.{name}", getattr(layer, name)
        yield "W_c", self.W_c

    @classmethod
    def from_named(cls, tensors: dict, n_layers: int) -> "ModelBundle":
        layers = [
            LayerWeights(**{name: tensors[f"layers.{i}.{name}"] for name in LAYER_TENSORS})
            for i in range(n_layers)
        ]
        return cls(W_e=tensors["W_e"], layers=layers, W_c=tensors["W_c"])

    def map_tensors(self, fn) -> "ModelBundle":
        """New bundle with ``fn(name, array)`` applied to every tensor."""
        return ModelBundle.from_named(
            {name: fn(name, a) for name, a in self.named_tensors()}, self.n_layers)

    def equals(self, other: "ModelBundle") -> bool:
        """Bit-exact comparison of all tensors."""
        mine, theirs = list(self.named_tensors()), list(other.named_tensors())
        return len(mine) == len(theirs) and all(
            n1 == n2 and a.shape == b.shape and np.array_equal(a, b)
            for (n1, a), (n2, b) in zip(mine, theirs))


def gen_synthetic_model(seed: int, s: int, d: int, d_ff: int, n_layers: int,
                        sigma_init: float = 0.02) -> ModelBundle:
    """Gaussian-initialised model, deterministic in ``seed``.

    Weights are rounded to the float32 grid so that a generated model survives
    the on-disk format unchanged.
    """
    if min(s, d, d_ff, n_layers) <= 0:
        raise InvalidArgument("dimensions must be positive")
    if d < 8:
        raise InvalidArgument(f"d must be at least 8, got {d}")
    if s <= d:
        raise InvalidArgument(f"s must exceed d (s={s}, d={d})")
    if d_ff < d:
        raise InvalidArgument(f"d_ff must be at least d (d_ff={d_ff}, d={d})")
    if not sigma_init > 0:
        raise InvalidArgument(f"sigma_init must be positive, got {sigma_init}")

    prng = PrngStream(seed)

    def draw(rows, cols):
        w = prng.normal(rows * cols, sigma_init).reshape(rows, cols)
        return w.astype(np.float32).astype(np.float64)

    W_e = draw(s, d)
    layers = []
    for _ in range(n_layers):
        W_q, W_k, W_v, W_o = (draw(d, d) for _ in range(4))
        W_1 = draw(d, d_ff)
        W_2 = draw(d_ff, d)
        ones, zeros = np.ones((1, d)), np.zeros((1, d))
        layers.append(LayerWeights(W_q, W_k, W_v, W_o, W_1, W_2, ones, zeros, ones, zeros))
    W_c = draw(d, s)
    return ModelBundle(W_e=W_e, layers=layers, W_c=W_c)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Row-wise LayerNorm with population std and no variance floor."""
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    if np.any(std == 0.0):
        raise DegenerateInput("zero-variance vector entering LayerNorm")
    return gamma * (x - mean) / std + beta


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: ModelBundle, token_ids: Sequence[int]) -> np.ndarray:
    """Next-token distributions, one row per input token (``len x s``)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InvalidArgument("token_ids must be a non-empty 1-D sequence")
    if ids.min() < 0 or ids.max() >= model.s:
        raise InvalidArgument(f"token index out of range [0, {model.s})")

    x = model.W_e[ids]
    scale = np.sqrt(model.d)
    for layer in model.layers:
        q, k, v = x @ layer.W_q, x @ layer.W_k, x @ layer.W_v
        attn = softmax(q @ k.T / scale)
        x = layer_norm(attn @ v @ layer.W_o, layer.gamma1, layer.beta1)
        h = np.maximum(x @ layer.W_1, 0.0)
        x = layer_norm(h @ layer.W_2, layer.gamma2, layer.beta2)
    return softmax(x @ model.W_c)
