"""Multi-user watermarking in an orthogonal noise frame.

Every user copy receives its own noise: in the frame ``W_e @ B`` a few
coordinates of each non-watermark row are overwritten with ``+-sigma_E`` and the
result is rotated back.  Watermark rows are solved in the same frame, so pairwise
differences of two copies touch almost every row instead of exposing positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .invariants import compute_invariants, permute_invariant_rows
from .keys import OrthoKey, SingleUserKey, UserKey, gen_orthogonal, gen_permutations
from .model import ModelBundle
from .prng import PrngStream, derive_seed
from .single import (
    DEFAULT_BETA,
    DEFAULT_NUM_IT,
    DetectionReport,
    InsertionConfig,
    _check_decision,
    build_report,
    check_key_fits,
    choose_conditioned_permutations,
    corrected_frame,
    default_rho,
    embed_rows,
    score_positions,
    select_watermark_positions,
)

NOISE_STREAM = 0x6E6F697365


@dataclass
class MultiUserContext:
    """Shared secrets of a multi-user deployment plus the registered users."""

    B: OrthoKey
    L_M: tuple
    num_noise: int
    sigma_E: float
    users: list = field(default_factory=list)

    def __post_init__(self):
        self.L_M = tuple(int(i) for i in self.L_M)

    @property
    def user_ids(self) -> list[str]:
        return [u.user_id for u in self.users]

    def user(self, user_id: str) -> UserKey:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise KeyError(user_id)

    def check_sigma(self, base_W_e: np.ndarray, tol: float = 1e-12) -> None:
        if abs(float(np.std(base_W_e)) - self.sigma_E) > tol:
            raise InvalidArgument("sigma_E does not match the base embedding matrix")


def make_multi_context(base: ModelBundle, t: int, prng: PrngStream,
                       num_noise: int | None = None, B: OrthoKey | None = None
                       ) -> MultiUserContext:
    """Draw the shared invariant rows (and ``B`` unless given).  ``num_noise`` defaults to ``t``."""
    if not 1 <= t <= base.d:
        raise InvalidArgument(f"t must lie in [1, d={base.d}], got {t}")
    num_noise = t if num_noise is None else num_noise
    if not 0 <= num_noise <= base.d:
        raise InvalidArgument(f"num_noise must lie in [0, d={base.d}], got {num_noise}")
    L_M = prng.sample(range(base.s), t)
    if B is None:
        B = gen_orthogonal(prng, base.d)
    return MultiUserContext(B=B, L_M=L_M, num_noise=num_noise,
                            sigma_E=float(np.std(base.W_e)))


def add_noise(W_e: np.ndarray, B: OrthoKey, num_noise: int, skip_rows: Sequence[int],
              prng: PrngStream, sigma_E: float | None = None) -> np.ndarray:
    """Set ``num_noise`` frame coordinates of every row outside ``skip_rows`` to ``+-sigma_E``."""
    s, d = W_e.shape
    if not 0 <= num_noise <= d:
        raise InvalidArgument(f"num_noise must lie in [0, d={d}], got {num_noise}")
    sigma = float(np.std(W_e)) if sigma_E is None else sigma_E
    frame = W_e @ B.B
    skip = set(int(i) for i in skip_rows)
    if num_noise:
        signs = np.where(np.arange(num_noise) % 2 == 0, sigma, -sigma)
        for i in range(s):
            if i not in skip:
                frame[i, prng.sample(range(d), num_noise)] = signs
    return frame @ B.B.T


def insert_watermark_user(base: ModelBundle, ctx: MultiUserContext, user_id: str,
                          cfg: InsertionConfig, prng: PrngStream):
    """Issue a watermarked copy of ``base`` for ``user_id`` and register its key in ``ctx``."""
    cfg.validate(base.s, base.d)
    if cfg.t != len(ctx.L_M):
        raise InvalidArgument(f"config t={cfg.t} but context has {len(ctx.L_M)} invariant rows")
    if user_id in ctx.user_ids:
        raise InvalidArgument(f"user {user_id!r} already registered")
    B = ctx.B.B
    seed = prng.next_u64()
    L_W = select_watermark_positions(prng, base.s, cfg.l, ctx.L_M)
    noise_seed = derive_seed(seed, NOISE_STREAM)
    W = add_noise(base.W_e, ctx.B, ctx.num_noise, L_W, PrngStream(noise_seed), ctx.sigma_E)

    first = base.layers[0]
    inv = compute_invariants(W, first.W_q, first.W_k, ctx.L_M)
    L_P2, A_perm, _ = choose_conditioned_permutations(inv, cfg.tau, cfg.max_times, prng)
    L_P1 = gen_permutations(prng, base.d, cfg.l)
    if cfg.l:
        W[L_W] = embed_rows(W[L_W] @ B, L_P1, A_perm, cfg.scale_wm) @ B.T

    key = UserKey(
        user_id=user_id,
        key=SingleUserKey(L_M=ctx.L_M, L_W=L_W, L_P1=L_P1, L_P2=L_P2,
                          scale_wm=cfg.scale_wm, seed=seed),
        noise_seed=noise_seed,
        num_noise=ctx.num_noise,
    )
    ctx.users.append(key)
    return base.replace(W_e=W), key


def extract_watermark_multi(reference_base: ModelBundle, suspect: ModelBundle,
                            ctx: MultiUserContext, beta: float = DEFAULT_BETA,
                            rho: int | None = None, num_it: int = DEFAULT_NUM_IT):
    """Score every registered user; returns ``(detected_ids, {user_id: report})``."""
    if not ctx.users:
        raise InvalidArgument("context has no users")
    corrected = corrected_frame(reference_base, suspect)
    first = corrected.layers[0]
    inv = compute_invariants(corrected.W_e, first.W_q, first.W_k, ctx.L_M)
    frame = corrected.W_e @ ctx.B.B

    reports: dict[str, DetectionReport] = {}
    for user in ctx.users:
        key = user.key
        user_rho = default_rho(key.l) if rho is None else rho
        _check_decision(beta, user_rho, key.l, num_it)
        check_key_fits(key, suspect.s, suspect.d)
        A_perm = permute_invariant_rows(inv, key.L_P2)
        stats, _, ranks = score_positions(A_perm, frame[list(key.L_W)], key.L_P1,
                                          key.scale_wm, key.t, num_it, key.seed)
        reports[user.user_id] = build_report(key.L_W, stats, ranks, beta, user_rho, num_it)
    detected = [uid for uid, rep in reports.items() if rep.success]
    return detected, reports
