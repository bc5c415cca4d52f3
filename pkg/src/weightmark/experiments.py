"""Desk-scale robustness, collusion and probability-table sweeps written as CSV."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import attacks
from .errors import InvalidArgument, WatermarkError
from .model import gen_synthetic_model
from .multi import extract_watermark_multi, insert_watermark_user, make_multi_context
from .prng import PrngStream, derive_seed
from .probstats import prob_row
from .single import InsertionConfig, extract_watermark, insert_watermark

EXPERIMENTS = ("robustness", "collusion-sweep", "prob-tables")

# stream tags so each experiment stage draws from its own child seed
_INSERT, _ATTACK, _CONTEXT, _USER = 1, 2, 3, 4


@dataclass(frozen=True)
class ExperimentConfig:
    s: int = 512
    d: int = 64
    d_ff: int = 128
    n_layers: int = 2
    sigma_init: float = 0.02
    t: int = 10
    l: int = 50
    scale_wm: float = 1000.0
    tau: float = 1e3
    max_times: int = 100
    beta: float = 0.05
    rho: int = 30
    num_it: int = 1000
    prune_ratios: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    quant_bits: tuple = (8, 4)
    perturb_sigmas: tuple = (0.0, 0.01, 0.05, 0.1)
    colluder_counts: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    collusion_t: int = 5
    collusion_beta: float = 0.5
    collusion_rho: int = 30
    prob_l: int = 50
    prob_rhos: tuple = (28, 30, 35, 40)
    prob_ps: tuple = (0.7, 0.8, 0.9)
    prob_betas: tuple = (0.01, 0.1, 0.2)
    prob_num_us: tuple = (1, 100000)
    seeds: tuple = tuple(range(10))
    output_dir: str = "."

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.type == "tuple":
                object.__setattr__(self, f.name, tuple(getattr(self, f.name)))
        self.insertion().validate(self.s, self.d)
        if not 0 < self.beta < 1 or not 0 < self.collusion_beta < 1:
            raise InvalidArgument("beta values must lie in (0, 1)")
        if not 0 <= self.rho <= self.l or not 0 <= self.collusion_rho <= self.l:
            raise InvalidArgument("rho values must lie in [0, l]")
        if any(not 0 <= r <= 1 for r in self.prune_ratios):
            raise InvalidArgument("prune_ratios must lie in [0, 1]")
        if any(b not in (4, 8) for b in self.quant_bits):
            raise InvalidArgument("quant_bits must be 4 or 8")
        if any(c < 1 for c in self.colluder_counts):
            raise InvalidArgument("colluder_counts must be positive")
        if self.num_it < 1:
            raise InvalidArgument("num_it must be at least 1")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def insertion(self, t: int | None = None) -> InsertionConfig:
        return InsertionConfig(t=self.t if t is None else t, l=self.l, scale_wm=self.scale_wm,
                               tau=self.tau, max_times=self.max_times)

    def model(self, seed: int):
        return gen_synthetic_model(seed, self.s, self.d, self.d_ff, self.n_layers,
                                   self.sigma_init)


ROBUSTNESS_HEADER = ["seed", "attack", "setting", "detect_count", "success", "p_hat",
                     "runtime_s", "error"]
COLLUSION_HEADER = ["seed", "n_colluders", "mean_top50", "colluders_detected",
                    "others_detected", "runtime_s", "error"]
PROB_HEADER = ["l", "rho", "p", "beta", "num_u", "pr_wm_success", "pr_u_random", "pr_u_wrong"]


def _attack_grid(cfg: ExperimentConfig):
    yield "none", ""
    yield "equiv", ""
    for r in cfg.prune_ratios:
        yield "prune", r
    for b in cfg.quant_bits:
        yield "quantize", b
    for sig in cfg.perturb_sigmas:
        yield "perturb", sig


def _attacked(wm, cfg: ExperimentConfig, seed: int, attack: str, setting):
    prng = PrngStream(derive_seed(seed, _ATTACK))
    if attack == "none":
        return wm
    if attack == "equiv":
        params = attacks.gen_equiv_params(prng, wm.d, wm.d_ff, wm.n_layers)
        return attacks.apply_equiv_transform(wm, params)
    if attack == "prune":
        return attacks.prune_global(wm, setting)
    if attack == "quantize":
        return attacks.quantize(wm, setting)
    if attack == "perturb":
        return attacks.perturb(wm, setting, prng)
    raise InvalidArgument(f"unknown attack {attack!r}")


def robustness_rows(cfg: ExperimentConfig, seed: int) -> list[list]:
    model = cfg.model(seed)
    wm, key = insert_watermark(model, cfg.insertion(), PrngStream(derive_seed(seed, _INSERT)))
    rows = []
    for attack, setting in _attack_grid(cfg):
        start = time.perf_counter()
        try:
            suspect = _attacked(wm, cfg, seed, attack, setting)
            rep = extract_watermark(model, suspect, key, cfg.beta, cfg.rho, cfg.num_it)
            row = [seed, attack, setting, rep.detect_count, rep.success, rep.p_hat]
            err = ""
        except WatermarkError as exc:
            row = [seed, attack, setting, "", False, ""]
            err = f"{type(exc).__name__}: {exc}"
        rows.append(row + [f"{time.perf_counter() - start:.4f}", err])
    return rows


def collusion_users(cfg: ExperimentConfig, seed: int):
    """Base model, context and one copy per user for the collusion sweep."""
    model = cfg.model(seed)
    n_users = max(cfg.colluder_counts)
    ins = cfg.insertion(t=cfg.collusion_t)
    ctx = make_multi_context(model, ins.t, PrngStream(derive_seed(seed, _CONTEXT)))
    copies = []
    for u in range(n_users):
        copy, _ = insert_watermark_user(model, ctx, f"user{u}", ins,
                                        PrngStream(derive_seed(seed, _USER, u)))
        copies.append(copy)
    return model, ctx, copies


def collusion_rows(cfg: ExperimentConfig, seed: int) -> list[list]:
    model, ctx, copies = collusion_users(cfg, seed)
    rows = []
    for n in cfg.colluder_counts:
        start = time.perf_counter()
        try:
            suspect = attacks.collude(copies[:n], "average")
            detected, reports = extract_watermark_multi(
                model, suspect, ctx, cfg.collusion_beta, cfg.collusion_rho, cfg.num_it)
            colluders = [f"user{u}" for u in range(n)]
            top50 = float(np.mean([reports[c].fraction_below(0.5) for c in colluders]))
            hits = sum(c in detected for c in colluders)
            row = [seed, n, f"{top50:.6f}", hits, len(detected) - hits]
            err = ""
        except WatermarkError as exc:
            row = [seed, n, "", "", ""]
            err = f"{type(exc).__name__}: {exc}"
        rows.append(row + [f"{time.perf_counter() - start:.4f}", err])
    return rows


def prob_rows(cfg: ExperimentConfig) -> list[list]:
    rows = []
    for rho in cfg.prob_rhos:
        for p in cfg.prob_ps:
            for beta in cfg.prob_betas:
                for num_u in cfg.prob_num_us:
                    r = prob_row(cfg.prob_l, rho, p, beta, num_u)
                    rows.append([r[k] if k not in ("pr_wm_success", "pr_u_random", "pr_u_wrong")
                                 else repr(r[k]) for k in PROB_HEADER])
    return rows


_PER_SEED = {"robustness": (robustness_rows, ROBUSTNESS_HEADER),
             "collusion-sweep": (collusion_rows, COLLUSION_HEADER)}


def run_experiment(name: str, cfg: ExperimentConfig, jobs: int = 1) -> tuple[list, list[list]]:
    """``(header, rows)``; rows keep seed order whatever the completion order."""
    if name == "prob-tables":
        return PROB_HEADER, prob_rows(cfg)
    if name not in _PER_SEED:
        raise InvalidArgument(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    fn, header = _PER_SEED[name]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(fn, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        chunks = [fn(cfg, seed) for seed in cfg.seeds]
    return header, [row for chunk in chunks for row in chunk]


def format_csv(name: str, header: list, rows: list[list]) -> str:
    buf = io.StringIO()
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    buf.write(f"# weightmark {name} {stamp}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()
