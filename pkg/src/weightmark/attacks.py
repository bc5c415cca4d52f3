"""Model-to-model attack transforms.

``apply_equiv_transform`` rewrites every tensor so the forward pass is
unchanged (dimension permutation, per-layer FFN permutations, invertible
query/key and value/output mixing, positive rescaling).  The remaining attacks
are lossy: global magnitude pruning, symmetric uniform quantisation, Gaussian
perturbation and collusion of several user copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .keys import InvertiblePair, PermKey, gen_invertible, gen_permutation
from .model import ModelBundle
from .prng import PrngStream, derive_seed

SCALE_RANGE = (0.5, 2.0)
COLLUDE_MODES = ("average", "max", "median", "copy_paste")


@dataclass(frozen=True, eq=False)
class EquivParams:
    pi: PermKey
    pi_ffn: tuple
    L_B: tuple
    L_C: tuple
    L_a: tuple
    L_d: tuple
    L_e: tuple

    def __post_init__(self):
        for name in ("pi_ffn", "L_B", "L_C", "L_a", "L_d", "L_e"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(self.pi_ffn)
        if not (len(self.L_B) == len(self.L_C) == len(self.L_d) == len(self.L_e) == n
                and len(self.L_a) == n + 1):
            raise InvalidArgument("parameter list lengths do not match the layer count")
        if min(self.L_a + self.L_d + self.L_e) <= 0:
            raise InvalidArgument("all scaling factors must be strictly positive")

    @property
    def n_layers(self) -> int:
        return len(self.pi_ffn)

    @classmethod
    def identity(cls, d: int, d_ff: int, n_layers: int) -> "EquivParams":
        eye = InvertiblePair(np.eye(d), np.eye(d))
        return cls(pi=PermKey.identity(d), pi_ffn=[PermKey.identity(d_ff)] * n_layers,
                   L_B=[eye] * n_layers, L_C=[eye] * n_layers, L_a=[1.0] * (n_layers + 1),
                   L_d=[1.0] * n_layers, L_e=[1.0] * n_layers)

    def inverse(self) -> "EquivParams":
        """Parameters that undo this transform."""
        return EquivParams(
            pi=self.pi.inverse(),
            pi_ffn=[p.inverse() for p in self.pi_ffn],
            L_B=[b.swapped() for b in self.L_B],
            L_C=[c.swapped() for c in self.L_C],
            L_a=[1.0 / a for a in self.L_a],
            L_d=[1.0 / x for x in self.L_d],
            L_e=[1.0 / x for x in self.L_e],
        )


def _log_uniform(prng: PrngStream, lo: float, hi: float) -> float:
    return math.exp(prng.uniform(math.log(lo), math.log(hi)))


def gen_equiv_params(prng: PrngStream, d: int, d_ff: int, n_layers: int) -> EquivParams:
    if min(d, d_ff, n_layers) < 1:
        raise InvalidArgument("dimensions must be positive")
    pi = gen_permutation(prng, d)
    pi_ffn = [gen_permutation(prng, d_ff) for _ in range(n_layers)]
    L_B = [gen_invertible(prng, d) for _ in range(n_layers)]
    L_C = [gen_invertible(prng, d) for _ in range(n_layers)]
    L_a = [_log_uniform(prng, *SCALE_RANGE) for _ in range(n_layers + 1)]
    L_d = [_log_uniform(prng, *SCALE_RANGE) for _ in range(n_layers)]
    L_e = [_log_uniform(prng, *SCALE_RANGE) for _ in range(n_layers)]
    return EquivParams(pi, pi_ffn, L_B, L_C, L_a, L_d, L_e)


def apply_equiv_transform(model: ModelBundle, p: EquivParams) -> ModelBundle:
    if p.n_layers != model.n_layers or p.pi.d != model.d:
        raise InvalidArgument("equivalence parameters do not match the model dimensions")
    if any(q.d != model.d_ff for q in p.pi_ffn):
        raise InvalidArgument("FFN permutations do not match d_ff")
    m = p.pi.map  # W[:, m] == W pi,  W[m, :] == pi^T W
    layers = []
    for i, layer in enumerate(model.layers):
        a, a_next, dd, e = p.L_a[i], p.L_a[i + 1], p.L_d[i], p.L_e[i]
        B, C = p.L_B[i], p.L_C[i]
        f = p.pi_ffn[i].map
        layers.append(layer.replace(
            W_q=layer.W_q[m, :] @ B.M / a,
            W_k=layer.W_k[m, :] @ B.M_inv.T / a,
            W_v=layer.W_v[m, :] @ C.M / a,
            W_o=a * (C.M_inv @ layer.W_o[:, m]),
            W_1=e * layer.W_1[m, :][:, f],
            W_2=layer.W_2[f, :][:, m] / e,
            gamma1=dd * layer.gamma1[:, m],
            beta1=dd * layer.beta1[:, m],
            gamma2=a_next * layer.gamma2[:, m],
            beta2=a_next * layer.beta2[:, m],
        ))
    return ModelBundle(W_e=p.L_a[0] * model.W_e[:, m], layers=layers,
                       W_c=model.W_c[m, :] / p.L_a[-1])


def prune_global(model: ModelBundle, r: float) -> ModelBundle:
    """Zero the ``floor(r * N)`` smallest-magnitude entries over all tensors."""
    if not 0 <= r <= 1:
        raise InvalidArgument(f"pruning ratio must lie in [0, 1], got {r}")
    named = list(model.named_tensors())
    flat = np.concatenate([a.ravel() for _, a in named])
    k = int(math.floor(r * flat.size))
    if k == 0:
        return model
    order = np.argsort(np.abs(flat), kind="stable")
    flat[order[:k]] = 0.0
    out, offset = {}, 0
    for name, a in named:
        out[name] = flat[offset: offset + a.size].reshape(a.shape)
        offset += a.size
    return ModelBundle.from_named(out, model.n_layers)


def quantize_tensor(w: np.ndarray, bits: int) -> np.ndarray:
    levels = 2 ** (bits - 1) - 1
    peak = float(np.abs(w).max()) if w.size else 0.0
    if peak == 0.0:
        return np.array(w, dtype=np.float64)
    step = peak / levels
    # settle on a step that the quantised tensor reproduces exactly
    for _ in range(4):
        again = (levels * step) / levels
        if again == step:
            break
        step = again
    return np.round(w / step) * step


def quantize(model: ModelBundle, bits: int) -> ModelBundle:
    """Per-tensor symmetric uniform quantisation to ``bits`` (4 or 8)."""
    if bits not in (4, 8):
        raise InvalidArgument(f"bits must be 4 or 8, got {bits}")
    return model.map_tensors(lambda _, w: quantize_tensor(w, bits))


def perturb(model: ModelBundle, sigma_rel: float, prng: PrngStream) -> ModelBundle:
    """Add ``Normal(0, sigma_rel * std(tensor))`` noise to every tensor (fine-tuning proxy).

    Each tensor draws from its own child stream of one root seed taken from ``prng``.
    """
    if not sigma_rel >= 0:
        raise InvalidArgument(f"sigma_rel must be non-negative, got {sigma_rel}")
    if sigma_rel == 0:
        return model
    root = prng.next_u64()
    out = {}
    for k, (name, w) in enumerate(model.named_tensors()):
        std = float(np.std(w))
        if std == 0.0:
            out[name] = w
            continue
        noise = PrngStream(derive_seed(root, k)).normal(w.size, sigma_rel * std)
        out[name] = w + noise.reshape(w.shape)
    return ModelBundle.from_named(out, model.n_layers)


def collude(models: Sequence[ModelBundle], mode: str, prng: PrngStream | None = None
            ) -> ModelBundle:
    """Combine user copies element-wise, or row-wise for ``copy_paste``."""
    models = list(models)
    if not models:
        raise InvalidArgument("collusion needs at least one model")
    if mode not in COLLUDE_MODES:
        raise InvalidArgument(f"unknown collusion mode {mode!r}; choose from {COLLUDE_MODES}")
    shapes = [[a.shape for _, a in m.named_tensors()] for m in models]
    if any(s != shapes[0] for s in shapes[1:]):
        raise InvalidArgument("colluding models have different shapes")
    if len(models) == 1:
        return models[0]

    if mode == "copy_paste":
        if prng is None:
            raise InvalidArgument("copy_paste collusion needs a PRNG")
        W = np.array(models[0].W_e)
        for row in range(W.shape[0]):
            W[row] = models[prng.below(len(models))].W_e[row]
        return models[0].replace(W_e=W)

    reduce = {"average": np.mean, "max": np.max, "median": np.median}[mode]
    stacks = {}
    for name, _ in models[0].named_tensors():
        stacks[name] = []
    for m in models:
        for name, a in m.named_tensors():
            stacks[name].append(a)
    return ModelBundle.from_named(
        {name: reduce(np.stack(arrs), axis=0) for name, arrs in stacks.items()},
        models[0].n_layers)
