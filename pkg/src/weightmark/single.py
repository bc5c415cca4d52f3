"""Single-owner watermark insertion and detection.

Insertion replaces ``l`` embedding rows.  For each row, a secret permutation
moves ``t`` coordinates into the trailing slots; those are re-solved so the row
is orthogonal to every (permuted) invariant row, then divided by ``scale_wm``.
Detection multiplies the trailing slots back and ranks the residual against
residuals obtained with random permutations.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import ConditioningFailure, InvalidArgument, SingularMatrix
from .invariants import (
    InvariantMatrix,
    apply_frame_correction,
    compute_invariants,
    condition_number,
    permute_invariant_rows,
    recover_permutation,
)
from .keys import PermKey, SingleUserKey, gen_permutations, stack_maps
from .model import ModelBundle
from .prng import PrngStream, derive_seeds, shuffle_from_seed

DEFAULT_NUM_IT = 1000
DEFAULT_BETA = 0.05


def default_rho(l: int) -> int:
    return math.ceil(0.6 * l)


@dataclass(frozen=True)
class InsertionConfig:
    t: int = 10
    l: int = 50
    scale_wm: float = 1000.0
    tau: float = 1e3
    max_times: int = 100

    def validate(self, s: int, d: int) -> None:
        if self.t < 1 or self.t > d:
            raise InvalidArgument(f"t must lie in [1, d={d}], got {self.t}")
        if self.l < 0 or self.l + self.t > s:
            raise InvalidArgument(f"l + t must not exceed s={s} (l={self.l}, t={self.t})")
        if not self.scale_wm > 0:
            raise InvalidArgument(f"scale_wm must be positive, got {self.scale_wm}")
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau}")
        if self.max_times < 1:
            raise InvalidArgument(f"max_times must be at least 1, got {self.max_times}")


@dataclass(frozen=True)
class PositionResult:
    position: int
    statistic: float
    rank: int
    num_it: int


@dataclass(frozen=True)
class DetectionReport:
    per_position: tuple
    detect_count: int
    beta: float
    rho: int
    num_it: int
    success: bool
    p_hat: float

    @property
    def l(self) -> int:
        return len(self.per_position)

    @property
    def ranks(self) -> np.ndarray:
        return np.array([p.rank for p in self.per_position], dtype=np.int64)

    def fraction_below(self, quantile: float) -> float:
        """Share of positions whose rank falls below ``quantile`` of the null."""
        if not self.per_position:
            return 0.0
        return float(np.mean(self.ranks / self.num_it < quantile))

    def summary(self) -> dict:
        return {
            "detect_count": self.detect_count,
            "l": self.l,
            "beta": self.beta,
            "rho": self.rho,
            "num_it": self.num_it,
            "success": self.success,
            "p_hat": self.p_hat,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def csv_rows(self, user_id: str | None = None) -> list[list]:
        lead = [] if user_id is None else [user_id]
        return [lead + [p.position, repr(p.statistic), p.rank, p.num_it]
                for p in self.per_position]

    def to_csv(self, user_id: str | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["position", "statistic", "rank", "num_it"]
        writer.writerow(header if user_id is None else ["user_id"] + header)
        writer.writerows(self.csv_rows(user_id))
        return buf.getvalue()


def select_watermark_positions(prng: PrngStream, s: int, l: int,
                               L_M: Sequence[int]) -> list[int]:
    """``l`` distinct rows drawn uniformly from the rows outside ``L_M``."""
    excluded = set(int(i) for i in L_M)
    if l < 0 or l + len(excluded) > s:
        raise InvalidArgument(f"cannot place {l} positions outside {len(excluded)} of {s} rows")
    candidates = [i for i in range(s) if i not in excluded]
    return prng.sample(candidates, l)


def choose_conditioned_permutations(A_m: InvariantMatrix | np.ndarray, tau: float,
                                    max_times: int, prng: PrngStream):
    """Draw row keys until the trailing ``t x t`` block has condition number below ``tau``.

    Returns ``(L_P2, A_m_perm, A2)``.
    """
    A = A_m.A_m if isinstance(A_m, InvariantMatrix) else np.asarray(A_m)
    t, d = A.shape
    if not 1 <= t <= d:
        raise InvalidArgument(f"need 1 <= t <= d, got t={t}, d={d}")
    best = math.inf
    for _ in range(max_times):
        keys = gen_permutations(prng, d, t)
        A_perm = permute_invariant_rows(A, keys)
        A2 = A_perm[:, d - t:]
        try:
            cond = condition_number(A2)
        except SingularMatrix:
            continue
        if cond < tau:
            return keys, A_perm, A2
        best = min(best, cond)
    raise ConditioningFailure(
        f"no draw in {max_times} attempts reached condition number < {tau:g} "
        f"(best {best:.4g}); raise tau or max_times")


def solve_watermark_row(A_m_perm: np.ndarray, x_known: np.ndarray,
                        scale_wm: float) -> np.ndarray:
    """Complete ``x_known`` with ``t`` trailing entries that zero every constraint.

    The trailing entries are stored divided by ``scale_wm``.
    """
    A = np.asarray(A_m_perm, dtype=np.float64)
    t, d = A.shape
    x = np.asarray(x_known, dtype=np.float64).ravel()
    if x.size != d - t:
        raise InvalidArgument(f"x_known has {x.size} entries, expected d - t = {d - t}")
    A1, A2 = A[:, : d - t], A[:, d - t:]
    try:
        u = np.linalg.solve(A2, -(A1 @ x))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("trailing constraint block is singular") from exc
    if not np.all(np.isfinite(u)):
        raise SingularMatrix("trailing constraint block is singular")
    return np.concatenate([x, u / scale_wm])


def embed_rows(rows: np.ndarray, L_P1: Sequence[PermKey], A_m_perm: np.ndarray,
               scale_wm: float) -> np.ndarray:
    """Watermarked replacements for ``rows`` (one per position key), same frame."""
    t, d = A_m_perm.shape
    out = np.empty_like(rows, dtype=np.float64)
    for i, (row, key) in enumerate(zip(rows, L_P1)):
        e = key.apply(row)
        solved = solve_watermark_row(A_m_perm, e[: d - t], scale_wm)
        out[i] = key.inverse().apply(solved)
    return out


def insert_watermark(model: ModelBundle, cfg: InsertionConfig, prng: PrngStream,
                     L_M: Sequence[int] | None = None):
    """Watermark ``model``; returns ``(watermarked_model, key)``.

    ``L_M`` is drawn from ``prng`` unless supplied.
    """
    cfg.validate(model.s, model.d)
    if L_M is None:
        L_M = prng.sample(range(model.s), cfg.t)
    elif len(L_M) != cfg.t:
        raise InvalidArgument(f"L_M has {len(L_M)} entries, config says t={cfg.t}")
    seed = prng.next_u64()
    L_W = select_watermark_positions(prng, model.s, cfg.l, L_M)
    first = model.layers[0]
    inv = compute_invariants(model.W_e, first.W_q, first.W_k, L_M)
    L_P2, A_perm, _ = choose_conditioned_permutations(inv, cfg.tau, cfg.max_times, prng)
    L_P1 = gen_permutations(prng, model.d, cfg.l)

    W = np.array(model.W_e)
    if cfg.l:
        W[L_W] = embed_rows(W[L_W], L_P1, A_perm, cfg.scale_wm)
    key = SingleUserKey(L_M=L_M, L_W=L_W, L_P1=L_P1, L_P2=L_P2,
                        scale_wm=cfg.scale_wm, seed=seed)
    return model.replace(W_e=W), key


def _rescale(E: np.ndarray, t: int, scale_wm: float) -> np.ndarray:
    E = np.array(E, dtype=np.float64)
    E[..., E.shape[-1] - t:] *= scale_wm
    return E


def watermark_statistic(A_m_perm: np.ndarray, row: np.ndarray, key_perm: PermKey,
                        scale_wm: float, t: int) -> float:
    """Absolute value of the summed constraint residuals of ``row`` under ``key_perm``."""
    e = _rescale(key_perm.apply(np.asarray(row).ravel()), t, scale_wm)
    return float(abs(np.sum(A_m_perm @ e)))


def _slot_weights(A_m_perm: np.ndarray, scale_wm: float) -> np.ndarray:
    # |sum(A e'^T)| == |e . w| with w the column sums of A, trailing t scaled
    t, d = A_m_perm.shape
    w = A_m_perm.sum(axis=0)
    w[d - t:] *= scale_wm
    return w


@numba.njit(cache=True)
def _null_kernel(seeds, rows, w):
    l, n = seeds.shape
    d = rows.shape[1]
    out = np.empty((l, n))
    perm = np.empty(d, np.int64)
    for i in range(l):
        for j in range(n):
            shuffle_from_seed(seeds[i, j], perm)
            acc = 0.0
            for k in range(d):
                acc += w[k] * rows[i, perm[k]]
            out[i, j] = abs(acc)
    return out


def null_distribution(A_m_perm: np.ndarray, row: np.ndarray, scale_wm: float, t: int,
                      num_it: int, seed: int) -> np.ndarray:
    """Statistics of ``row`` under ``num_it`` random keys.

    Key ``j`` is the permutation drawn by ``PrngStream(derive_seed(seed, j))``.
    """
    if num_it < 1:
        raise InvalidArgument(f"num_it must be at least 1, got {num_it}")
    A = np.asarray(A_m_perm, dtype=np.float64)
    row = np.ascontiguousarray(np.asarray(row, dtype=np.float64).reshape(1, -1))
    seeds = derive_seeds(seed, np.arange(num_it)).reshape(1, num_it)
    return _null_kernel(seeds, row, _slot_weights(A, scale_wm))[0]


def score_positions(A_m_perm: np.ndarray, rows: np.ndarray, L_P1: Sequence[PermKey],
                    scale_wm: float, t: int, num_it: int, seed: int):
    """Per-position statistic, null samples and rank.

    Position ``i`` uses the nulls of ``null_distribution(..., derive_seed(seed, i))``.
    Returns ``(stats, nulls, ranks)`` with ``nulls`` of shape ``(l, num_it)``.
    """
    if num_it < 1:
        raise InvalidArgument(f"num_it must be at least 1, got {num_it}")
    A = np.asarray(A_m_perm, dtype=np.float64)
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    l = rows.shape[0]
    if l == 0:
        return np.zeros(0), np.zeros((0, num_it)), np.zeros(0, dtype=np.int64)
    w = _slot_weights(A, scale_wm)
    stats = np.abs(np.take_along_axis(rows, stack_maps(L_P1), axis=1) @ w)
    seeds = derive_seeds(seed, np.arange(l)[:, None], np.arange(num_it)[None, :])
    nulls = _null_kernel(seeds, rows, w)
    ranks = np.count_nonzero(nulls <= stats[:, None], axis=1)
    return stats, nulls, ranks


def rank_of(value: float, samples) -> int:
    """Number of samples at or below ``value``; ties count against the watermark."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise InvalidArgument("rank_of needs at least one sample")
    return int(np.count_nonzero(samples <= value))


def _check_decision(beta: float, rho: int, l: int, num_it: int) -> None:
    if not 0 < beta < 1:
        raise InvalidArgument(f"beta must lie in (0, 1), got {beta}")
    if not 0 <= rho <= l:
        raise InvalidArgument(f"rho must lie in [0, l={l}], got {rho}")
    if num_it < 1:
        raise InvalidArgument(f"num_it must be at least 1, got {num_it}")


def build_report(positions: Sequence[int], stats, ranks, beta: float, rho: int,
                 num_it: int) -> DetectionReport:
    per = tuple(PositionResult(int(p), float(s), int(r), num_it)
                for p, s, r in zip(positions, stats, ranks))
    detect = sum(1 for p in per if p.rank / num_it < beta)
    l = len(per)
    return DetectionReport(per_position=per, detect_count=detect, beta=beta, rho=rho,
                           num_it=num_it, success=detect > rho,
                           p_hat=detect / l if l else 0.0)


def check_key_fits(key: SingleUserKey, s: int, d: int) -> None:
    if key.d != d:
        raise InvalidArgument(f"key permutes {key.d} dims, model has d={d}")
    if any(not 0 <= i < s for i in key.L_M + key.L_W):
        raise InvalidArgument(f"key references rows outside [0, {s})")


def corrected_frame(reference: ModelBundle, suspect: ModelBundle) -> ModelBundle:
    """Suspect with the attacker's dimension permutation undone against ``reference``."""
    if (reference.s, reference.d) != (suspect.s, suspect.d):
        raise InvalidArgument(
            f"reference is {reference.s}x{reference.d}, suspect is {suspect.s}x{suspect.d}")
    pi_hat = recover_permutation(reference.W_e, suspect.W_e)
    return apply_frame_correction(suspect, pi_hat)


def extract_watermark(reference: ModelBundle, suspect: ModelBundle, key: SingleUserKey,
                      beta: float = DEFAULT_BETA, rho: int | None = None,
                      num_it: int = DEFAULT_NUM_IT, seed: int | None = None) -> DetectionReport:
    """Detect ``key``'s watermark in ``suspect`` using the unwatermarked ``reference``.

    Null draws are rooted at ``key.seed`` unless ``seed`` is given.
    """
    rho = default_rho(key.l) if rho is None else rho
    _check_decision(beta, rho, key.l, num_it)
    check_key_fits(key, suspect.s, suspect.d)
    corrected = corrected_frame(reference, suspect)
    first = corrected.layers[0]
    inv = compute_invariants(corrected.W_e, first.W_q, first.W_k, key.L_M)
    A_perm = permute_invariant_rows(inv, key.L_P2)
    rows = corrected.W_e[list(key.L_W)]
    stats, _, ranks = score_positions(A_perm, rows, key.L_P1, key.scale_wm, key.t, num_it,
                                      key.seed if seed is None else seed)
    return build_report(key.L_W, stats, ranks, beta, rho, num_it)
