"""Acceptance criteria, one test (or a few parts) per criterion.

Run ``pytest tests/test_acceptance.py`` (or this file directly); the terminal
summary prints one PASS/FAIL line per criterion.
"""

import time
from fractions import Fraction
from math import comb

import mpmath
import numpy as np
import pytest

from weightmark import (InsertionConfig, PrngStream, ProbParams, apply_equiv_transform, collude,
                        compute_invariants, extract_watermark, extract_watermark_multi, forward,
                        gen_equiv_params, gen_permutation, gen_synthetic_model, insert_watermark,
                        insert_watermark_user, make_multi_context, pr_u_random, pr_u_wrong,
                        pr_wm_success, prune_global, quantize, recover_permutation,
                        watermark_statistic)
from weightmark.prng import derive_seed

DIMS = dict(s=512, d=64, d_ff=128, n_layers=2)
CFG = InsertionConfig(t=10, l=50, scale_wm=1000.0)
BETA, RHO, NUM_IT = 0.05, 30, 1000
ORACLE_RTOL = 1e-12
SWEEP_BUDGET_S = 300.0


def _model(seed):
    return gen_synthetic_model(seed, **DIMS)


def _watermark(seed, cfg=CFG):
    base = _model(seed)
    wm, key = insert_watermark(base, cfg, PrngStream(derive_seed(seed, 1)))
    return base, wm, key


def _extract(base, suspect, key):
    return extract_watermark(base, suspect, key, BETA, RHO, NUM_IT)


# ---------------------------------------------------------------- criterion 1

def _exact_tail(n, k0, q):
    q = Fraction(q)
    return sum(comb(n, k) * q**k * (1 - q) ** (n - k) for k in range(k0, n + 1))


def _exact_wrong(x, num_u):
    with mpmath.workdps(80):
        return 1 - (1 - _as_mpf(x)) ** num_u


def _as_mpf(x):
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def _headline_figures():
    start = time.perf_counter()
    x30 = pr_u_random(ProbParams(50, 30, beta=0.2))
    x28 = pr_u_random(ProbParams(50, 28, beta=0.2))
    values = {
        "success(50,30,0.8)": pr_wm_success(ProbParams(50, 30, 0.8)),
        "success(50,28,0.7)": pr_wm_success(ProbParams(50, 28, 0.7)),
        "wrong(rho=30)": pr_u_wrong(x30, 10**5),
        "wrong(rho=28)": pr_u_wrong(x28, 10**5),
    }
    elapsed = time.perf_counter() - start
    oracles = {
        "success(50,30,0.8)": _exact_tail(50, 30, 0.8),
        "success(50,28,0.7)": _exact_tail(50, 28, 0.7),
        "wrong(rho=30)": _exact_wrong(_exact_tail(50, 30, 0.2), 10**5),
        "wrong(rho=28)": _exact_wrong(_exact_tail(50, 28, 0.2), 10**5),
    }
    return values, oracles, elapsed


def test_criterion_1_oracle_agreement(verdict):
    values, oracles, elapsed = _headline_figures()
    with mpmath.workdps(80):
        worst = max(abs(mpmath.mpf(values[k]) - _as_mpf(oracles[k])) / _as_mpf(oracles[k])
                    for k in values)
    ok = worst <= ORACLE_RTOL and elapsed < 1.0
    verdict(1, "oracle", ok, f"max rel err {float(worst):.1e}, {elapsed * 1e3:.1f} ms")
    assert ok


def test_criterion_1_published_rounding(verdict):
    values, _, _ = _headline_figures()
    # published percentage and the number of decimals it carries
    checks = [
        ("success(50,30,0.8)", 99.96, 2),
        ("success(50,28,0.7)", 98.77, 2),
        ("wrong(rho=30)", 0.007, 3),
        ("wrong(rho=28)", 0.2, 1),
    ]
    misses = [f"{name} = {100 * values[name]:.5f}% rounds to "
              f"{round(100 * values[name], dec)}%, published {expected}%"
              for name, expected, dec in checks if round(100 * values[name], dec) != expected]
    ok = not misses
    verdict(1, "rounding", ok, "all four match" if ok else "; ".join(misses))
    assert ok, misses


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_effectiveness(verdict):
    start = time.perf_counter()
    seeds = range(50)
    single_ok = multi_ok = wrong = 0
    for seed in seeds:
        base, wm, key = _watermark(seed)
        single_ok += _extract(base, wm, key).success

        ctx = make_multi_context(base, CFG.t, PrngStream(derive_seed(seed, 2)))
        copies = {}
        for u in range(8):
            uid = f"user{u}"
            copies[uid], _ = insert_watermark_user(base, ctx, uid, CFG,
                                                   PrngStream(derive_seed(seed, 3, u)))
        for uid, model in copies.items():
            detected, _ = extract_watermark_multi(base, model, ctx, BETA, RHO, NUM_IT)
            multi_ok += uid in detected
            wrong += sum(d != uid for d in detected)
    elapsed = time.perf_counter() - start
    n = len(seeds)
    ok = single_ok == n and multi_ok == 8 * n and wrong == 0 and elapsed < SWEEP_BUDGET_S
    verdict(2, "detect", ok, f"single {single_ok}/{n}, multi {multi_ok}/{8 * n}, "
            f"wrong attributions {wrong}, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_equivalence(verdict):
    start = time.perf_counter()
    same, worst_fwd = 0, 0.0
    rng = np.random.default_rng(3)
    for seed in range(50):
        base, wm, key = _watermark(seed)
        params = gen_equiv_params(PrngStream(derive_seed(seed, 4)), wm.d, wm.d_ff, wm.n_layers)
        attacked = apply_equiv_transform(wm, params)
        same += _extract(base, wm, key).detect_count == _extract(base, attacked, key).detect_count
        for _ in range(2):
            ids = rng.integers(0, wm.s, size=8)
            ref = forward(wm, ids)
            worst_fwd = max(worst_fwd, float(np.max(np.abs(forward(attacked, ids) - ref) / ref)))
    elapsed = time.perf_counter() - start
    ok = same == 50 and worst_fwd <= 1e-5 and elapsed < SWEEP_BUDGET_S
    verdict(3, "equiv", ok, f"identical detect_count {same}/50, forward rel dev "
            f"{worst_fwd:.1e}, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- criterion 4

RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)


def test_criterion_4_pruning(verdict):
    wins = {r: 0 for r in RATIOS}
    for seed in range(20):
        base, wm, key = _watermark(seed)
        for r in RATIOS:
            wins[r] += _extract(base, prune_global(wm, r), key).success
    rates = [wins[r] / 20 for r in RATIOS]
    ok = rates[0] >= 0.95 and all(a >= b for a, b in zip(rates, rates[1:]))
    verdict(4, "prune", ok, ", ".join(f"r={r}: {x:.2f}" for r, x in zip(RATIOS, rates)))
    assert ok


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_quantization(verdict):
    wins = {8: 0, 4: 0}
    for seed in range(20):
        base, wm, key = _watermark(seed)
        for bits in wins:
            wins[bits] += _extract(base, quantize(wm, bits), key).success
    ok = wins[8] == 20 and wins[4] / 20 >= 0.8
    verdict(5, "quantize", ok, f"8-bit {wins[8]}/20, 4-bit {wins[4]}/20 "
            f"(rate {wins[4] / 20:.2f})")
    assert ok


# ---------------------------------------------------------------- criterion 6

COLLUSION_CFG = InsertionConfig(t=5, l=50, scale_wm=1000.0)
# detection under averaging is judged with the top-50% rank threshold
COLLUSION_BETA = 0.5


def test_criterion_6_collusion(verdict):
    counts = range(1, 9)
    top50 = {n: [] for n in counts}
    found_at_2 = strict_found_at_2 = 0
    for seed in range(10):
        base = _model(seed)
        ctx = make_multi_context(base, COLLUSION_CFG.t, PrngStream(derive_seed(seed, 5)))
        copies = [insert_watermark_user(base, ctx, f"u{u}", COLLUSION_CFG,
                                        PrngStream(derive_seed(seed, 6, u)))[0]
                  for u in range(8)]
        for n in counts:
            suspect = collude(copies[:n], "average")
            detected, reports = extract_watermark_multi(base, suspect, ctx, COLLUSION_BETA,
                                                        RHO, NUM_IT)
            top50[n].append(np.mean([reports[f"u{u}"].fraction_below(0.5) for u in range(n)]))
            if n == 2:
                found_at_2 += any(f"u{u}" in detected for u in range(2))
                strict = [extract_watermark(base, suspect, ctx.user(f"u{u}").key, BETA, RHO,
                                            NUM_IT) for u in range(2)]
                strict_found_at_2 += any(r.success for r in strict)
    means = [float(np.mean(top50[n])) for n in counts]
    inversions = sum(b > a for a, b in zip(means, means[1:]))
    ok = means[0] >= 0.99 and inversions <= 1 and means[-1] <= 0.65 and found_at_2 >= 8
    verdict(6, "collusion", ok,
            "top50 " + " ".join(f"{m:.3f}" for m in means)
            + f", inversions {inversions}, n=2 detected {found_at_2}/10 at beta=0.5"
            f" ({strict_found_at_2}/10 at beta=0.05)")
    assert ok


# ---------------------------------------------------------------- criterion 7

def test_criterion_7_double_watermark(verdict):
    kept = 0
    for seed in range(20):
        base, wm, key = _watermark(seed)
        twice, _ = insert_watermark(wm, CFG, PrngStream(derive_seed(seed, 7)))
        kept += _extract(base, twice, key).success
    ok = kept == 20
    verdict(7, "double", ok, f"first watermark detected {kept}/20")
    assert ok


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_residuals(verdict):
    worst = 0.0
    for seed in range(20):
        base, wm, key = _watermark(seed)
        first = base.layers[0]
        A = compute_invariants(base.W_e, first.W_q, first.W_k, key.L_M).A_m
        A_perm = np.stack([k.apply(r) for r, k in zip(A, key.L_P2)])
        bound = 1e-6 * key.scale_wm * np.abs(A_perm).max()
        for pos, k in zip(key.L_W, key.L_P1):
            worst = max(worst, watermark_statistic(A_perm, wm.W_e[pos], k, key.scale_wm,
                                                   key.t) / bound)
    ok = worst <= 1.0
    verdict(8, "residual", ok, f"max residual / bound {worst:.1e}")
    assert ok


def test_criterion_8_recovery(verdict):
    exact = 0
    for trial in range(200):
        prng = PrngStream(derive_seed(8, trial))
        W = prng.normal(512 * 64, 0.02).reshape(512, 64)
        pi = gen_permutation(prng, 64)
        a1 = float(np.exp(prng.uniform(np.log(0.5), np.log(2.0))))
        exact += recover_permutation(W, a1 * pi.apply(W)) == pi
    ok = exact == 200
    verdict(8, "recovery", ok, f"exact {exact}/200")
    assert ok


def test_criterion_8_quantize_idempotent(verdict):
    ok = True
    for seed in range(5):
        m = _model(seed)
        for bits in (4, 8):
            q = quantize(m, bits)
            ok &= quantize(q, bits).equals(q)
    verdict(8, "quantize", ok, "idempotent on 5 models x 2 widths")
    assert ok


def test_criterion_8_equiv_round_trip(verdict):
    worst = 0.0
    for seed in range(5):
        m = _model(seed)
        p = gen_equiv_params(PrngStream(seed), m.d, m.d_ff, m.n_layers)
        back = apply_equiv_transform(apply_equiv_transform(m, p), p.inverse())
        worst = max(worst, max(float(np.abs(a - b).max()) for (_, a), (_, b)
                               in zip(back.named_tensors(), m.named_tensors())))
    ok = worst <= 1e-8
    verdict(8, "round trip", ok, f"max entry error {worst:.1e}")
    assert ok


def test_criterion_8_null_calibration(verdict):
    base = _model(0)
    trials, l = 100, CFG.l
    counts, positives = [], 0
    for trial in range(trials):
        _, key = insert_watermark(base, CFG, PrngStream(derive_seed(9, trial)))
        rep = _extract(base, base, key)
        counts.append(rep.detect_count)
        positives += rep.success
    # a null rank is uniform on {0..num_it}; it passes when rank < beta * num_it
    q = int(np.ceil(BETA * NUM_IT)) / (NUM_IT + 1)
    mean_sd = np.sqrt(l * q * (1 - q) / trials)
    mean_ok = abs(np.mean(counts) - l * q) <= 3 * mean_sd
    p_fp = pr_u_random(ProbParams(l, RHO + 1, beta=q))  # success needs detect > rho
    fp_ok = positives <= trials * p_fp + 3 * np.sqrt(trials * p_fp * (1 - p_fp))
    ok = mean_ok and fp_ok
    verdict(8, "null", ok, f"mean detect {np.mean(counts):.2f} vs {l * q:.2f} "
            f"+- {3 * mean_sd:.2f}, false positives {positives}/{trials}")
    assert ok


# ---------------------------------------------------------------- criterion 9

def test_criterion_9_modified_support(verdict):
    ok = True
    details = []
    for seed in range(5):
        base, wm, key = _watermark(seed)
        diff = wm.W_e != base.W_e
        rows, coords = int(diff.any(axis=1).sum()), int(diff.sum())
        ok &= rows == key.l and coords == key.l * key.t
        details.append(f"{rows}/{coords}")
    verdict(9, "support", ok, f"rows/coords per seed {' '.join(details)} "
            f"(want {CFG.l}/{CFG.l * CFG.t})")
    assert ok


def test_criterion_9_frobenius(verdict):
    ratios = []
    for seed in range(5):
        base, wm, _ = _watermark(seed)
        ratios.append(np.linalg.norm(wm.W_e - base.W_e) / np.linalg.norm(base.W_e))
    worst = float(max(ratios))
    ok = worst <= 1e-2
    verdict(9, "frobenius", ok, f"max relative change {worst:.3f} (limit 0.01)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
