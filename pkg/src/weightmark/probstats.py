"""Success and false-attribution probabilities for the rank-threshold detector."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgument


@dataclass(frozen=True)
class ProbParams:
    l: int
    rho: int
    p: float = 0.8
    beta: float = 0.2
    num_u: int = 1

    def __post_init__(self):
        if self.l < 0 or not 0 <= self.rho <= self.l:
            raise InvalidArgument(f"need 0 <= rho <= l, got rho={self.rho}, l={self.l}")
        if not 0 <= self.p <= 1 or not 0 <= self.beta <= 1:
            raise InvalidArgument("p and beta must be probabilities")
        if self.num_u < 0:
            raise InvalidArgument("num_u must be non-negative")


def _log_binom_pmf(n: int, k: int, log_q: float, log_1q: float) -> float:
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            + k * log_q + (n - k) * log_1q)


def _tail_sum(n: int, ks: range, q: float) -> float:
    log_q, log_1q = math.log(q), math.log1p(-q)
    logs = [_log_binom_pmf(n, k, log_q, log_1q) for k in ks]
    top = max(logs)
    return min(1.0, math.exp(top) * math.fsum(math.exp(v - top) for v in logs))


def _check_tail_args(n: int, k0: int, q: float) -> None:
    if n < 0 or not 0 <= k0 <= n + 1:
        raise InvalidArgument(f"need 0 <= k0 <= n + 1, got n={n}, k0={k0}")
    if not 0 <= q <= 1:
        raise InvalidArgument(f"q must be a probability, got {q}")


def binom_upper_tail(n: int, k0: int, q: float) -> float:
    """``P(X >= k0)`` for ``X ~ Binomial(n, q)``, summed in log space."""
    _check_tail_args(n, k0, q)
    if k0 == 0:
        return 1.0
    if k0 > n or q == 0.0:
        return 0.0
    if q == 1.0:
        return 1.0
    return _tail_sum(n, range(k0, n + 1), q)


def binom_lower_tail(n: int, k0: int, q: float) -> float:
    """``P(X < k0)``, summed directly rather than as a complement."""
    _check_tail_args(n, k0, q)
    if k0 == 0:
        return 0.0
    if k0 > n or q == 0.0:
        return 1.0
    if q == 1.0:
        return 0.0
    return _tail_sum(n, range(0, k0), q)


def pr_wm_success(pp: ProbParams) -> float:
    """Probability that more than ``rho - 1`` of ``l`` positions pass at match ratio ``p``."""
    return binom_upper_tail(pp.l, pp.rho, pp.p)


def pr_u_random(pp: ProbParams) -> float:
    """Probability that an unrelated key reaches the detection threshold."""
    return binom_upper_tail(pp.l, pp.rho, pp.beta)


def pr_u_wrong(pr_urandom: float, num_u: int) -> float:
    """Probability that at least one of ``num_u`` unrelated keys passes."""
    if not 0 <= pr_urandom <= 1:
        raise InvalidArgument(f"pr_urandom must be a probability, got {pr_urandom}")
    if num_u < 0:
        raise InvalidArgument(f"num_u must be non-negative, got {num_u}")
    if num_u == 0 or pr_urandom == 0.0:
        return 0.0
    if pr_urandom == 1.0:
        return 1.0
    return -math.expm1(num_u * math.log1p(-pr_urandom))


def estimate_p(report) -> float:
    """Observed share of positions meeting the rank threshold."""
    if report.l == 0:
        raise InvalidArgument("report has no watermark positions")
    return report.detect_count / report.l


def prob_row(l: int, rho: int, p: float, beta: float, num_u: int) -> dict:
    pp = ProbParams(l=l, rho=rho, p=p, beta=beta, num_u=num_u)
    u_random = pr_u_random(pp)
    return {
        "l": l, "rho": rho, "p": p, "beta": beta, "num_u": num_u,
        "pr_wm_success": pr_wm_success(pp),
        "pr_u_random": u_random,
        "pr_u_wrong": pr_u_wrong(u_random, num_u),
    }
