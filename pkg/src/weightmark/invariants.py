"""Attention invariants carried by the embedding rows and frame recovery.

For a token row ``e`` the invariant row is ``e @ W_q1 @ W_k1.T``.  Under the
functional-equivalence rewrite ``W_q -> pi.T W_q B / a``, ``W_k -> pi.T W_k B^-T / a``
the factor ``B`` cancels, so after undoing ``pi`` the row only picks up ``1/a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AmbiguousRecovery, InvalidArgument, SingularMatrix
from .keys import PermKey
from .model import ModelBundle


@dataclass(frozen=True, eq=False)
class InvariantMatrix:
    A_m: np.ndarray
    source_L_M: tuple

    @property
    def t(self) -> int:
        return self.A_m.shape[0]


def compute_invariants(W_e: np.ndarray, W_q1: np.ndarray, W_k1: np.ndarray,
                       L_M: Sequence[int]) -> InvariantMatrix:
    L_M = tuple(int(i) for i in L_M)
    s, d = W_e.shape
    if len(set(L_M)) != len(L_M):
        raise InvalidArgument("L_M entries must be distinct")
    if any(not 0 <= i < s for i in L_M):
        raise InvalidArgument(f"L_M index out of range [0, {s})")
    if len(L_M) > d:
        raise InvalidArgument(f"t={len(L_M)} exceeds d={d}")
    rows = W_e[list(L_M)] @ W_q1 @ W_k1.T
    return InvariantMatrix(rows.reshape(len(L_M), d), L_M)


def permute_invariant_rows(inv: InvariantMatrix | np.ndarray,
                           L_P2: Sequence[PermKey]) -> np.ndarray:
    """Row ``j`` permuted by ``L_P2[j]``."""
    A = inv.A_m if isinstance(inv, InvariantMatrix) else np.asarray(inv)
    if len(L_P2) != A.shape[0]:
        raise InvalidArgument(f"{len(L_P2)} keys for {A.shape[0]} invariant rows")
    if A.shape[0] == 0:
        return A.copy()
    return np.stack([key.apply(row) for row, key in zip(A, L_P2)])


def condition_number(M: np.ndarray) -> float:
    """Ratio of extreme singular values of a square matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument(f"condition number needs a square matrix, got {M.shape}")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= sv[0] * M.shape[0] * np.finfo(float).eps:
        raise SingularMatrix("matrix is singular to working precision")
    return float(sv[0] / sv[-1])


def _unit_columns(W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=0)
    return W / np.where(norms > 0, norms, 1.0)


def recover_permutation(W_e_ref: np.ndarray, W_e_suspect: np.ndarray) -> PermKey:
    """Match every suspect column to the reference column of highest cosine similarity.

    The returned key maps suspect column ``j`` to reference column ``map[j]``,
    so ``suspect ~ a * reference[:, map]``.
    """
    if W_e_ref.shape != W_e_suspect.shape:
        raise InvalidArgument(
            f"embedding shapes differ: {W_e_ref.shape} vs {W_e_suspect.shape}")
    sim = _unit_columns(W_e_suspect).T @ _unit_columns(W_e_ref)
    best = np.argmax(sim, axis=1)
    if np.unique(best).size != best.size:
        taken = np.bincount(best, minlength=best.size)
        raise AmbiguousRecovery(
            f"{int((taken > 1).sum())} reference columns claimed by several suspect columns")
    return PermKey(best)


def apply_frame_correction(suspect: ModelBundle, pi_hat: PermKey) -> ModelBundle:
    """Undo a recovered dimension permutation on ``W_e`` and the layer-1 query/key rows.

    Only the tensors the invariants read are corrected.
    """
    if pi_hat.d != suspect.d:
        raise InvalidArgument(f"permutation over {pi_hat.d} dims, model has d={suspect.d}")
    if pi_hat.is_identity():
        return suspect
    inv = pi_hat.inverse().map
    first = suspect.layers[0]
    first = first.replace(W_q=first.W_q[inv, :], W_k=first.W_k[inv, :])
    return suspect.replace(W_e=suspect.W_e[:, inv], layers=(first,) + suspect.layers[1:])
