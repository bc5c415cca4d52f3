"""``weightmark`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import attacks
from .errors import (AmbiguousRecovery, ConditioningFailure, DegenerateInput, FormatError,
                     GenerationFailure, InvalidArgument, SingularMatrix, WatermarkError)
from .experiments import EXPERIMENTS, ExperimentConfig, format_csv, run_experiment
from .keystore import load_keystore, save_keystore
from .model import gen_synthetic_model
from .modelio import load_model, save_model
from .multi import extract_watermark_multi, insert_watermark_user, make_multi_context
from .prng import PrngStream, derive_seed
from .probstats import prob_row
from .single import DEFAULT_BETA, DEFAULT_NUM_IT, InsertionConfig, extract_watermark, insert_watermark

EXIT_OK, EXIT_NEGATIVE, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
OUT_ENV = "WEIGHTMARK_OUT"


class UsageError(Exception):
    """Bad flag value; the message names the flag."""


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, InvalidArgument)):
        return EXIT_INVALID
    if isinstance(exc, (SingularMatrix, ConditioningFailure, GenerationFailure,
                        DegenerateInput, AmbiguousRecovery)):
        return EXIT_NUMERIC
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, WatermarkError):
        return EXIT_NUMERIC
    raise exc


def _require(cond: bool, flag: str, msg: str) -> None:
    if not cond:
        raise UsageError(f"{flag}: {msg}")


def _csv_list(text: str, kind=str) -> list:
    return [kind(x) for x in text.split(",") if x.strip()]


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, ".")) / name


def _insertion(args) -> InsertionConfig:
    _require(args.t >= 1, "--t", "must be at least 1")
    _require(args.l >= 0, "--l", "must be non-negative")
    _require(args.scale_wm > 0, "--scale-wm", "must be positive")
    _require(args.tau >= 1, "--tau", "must be at least 1")
    _require(args.max_times >= 1, "--max-times", "must be at least 1")
    return InsertionConfig(t=args.t, l=args.l, scale_wm=args.scale_wm, tau=args.tau,
                           max_times=args.max_times)


def _detection(args) -> tuple[float, int | None, int]:
    _require(0 < args.beta < 1, "--beta", "must lie in (0, 1)")
    _require(args.num_it >= 1, "--num-it", "must be at least 1")
    _require(args.rho is None or args.rho >= 0, "--rho", "must be non-negative")
    return args.beta, args.rho, args.num_it


def _write_report(prefix, text_csv: str, summary) -> None:
    if prefix is None:
        return
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.csv").write_text(text_csv, encoding="utf-8")
    Path(f"{prefix}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def cmd_gen_model(args) -> int:
    _require(args.d >= 8, "--d", "must be at least 8")
    _require(args.s > args.d, "--s", f"must exceed --d ({args.d})")
    d_ff = args.d_ff if args.d_ff is not None else 2 * args.d
    _require(d_ff >= args.d, "--d-ff", f"must be at least --d ({args.d})")
    _require(args.n_layers >= 1, "--n-layers", "must be at least 1")
    _require(args.sigma > 0, "--sigma", "must be positive")
    model = gen_synthetic_model(args.seed, args.s, args.d, d_ff, args.n_layers, args.sigma)
    out = args.out or _default_out(f"model-{args.seed}")
    save_model(model, out, metadata={"generator": {"seed": args.seed, "sigma_init": args.sigma}})
    print(out)
    return EXIT_OK


def cmd_insert(args) -> int:
    cfg = _insertion(args)
    model = load_model(args.model)
    wm, key = insert_watermark(model, cfg, PrngStream(args.seed))
    out = args.out or _default_out("watermarked")
    save_model(wm, out, metadata={"watermark": {"mode": "single", "seed": args.seed}})
    save_keystore(key, args.keystore, model.s)
    print(out)
    return EXIT_OK


def cmd_extract(args) -> int:
    beta, rho, num_it = _detection(args)
    reference, suspect = load_model(args.reference), load_model(args.suspect)
    store = load_keystore(args.keystore)
    _require(store.mode == "single", "--keystore", "is a multi-user keystore; use extract-multi")
    success = False
    csv_parts, summaries = [], []
    for key in store.keys:
        rep = extract_watermark(reference, suspect, key, beta, rho, num_it)
        success |= rep.success
        csv_parts.append(rep.to_csv())
        summaries.append(rep.summary())
    summary = summaries[0] if len(summaries) == 1 else {"keys": summaries, "success": success}
    _write_report(args.report, "".join(csv_parts), summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if success else EXIT_NEGATIVE


def cmd_insert_multi(args) -> int:
    cfg = _insertion(args)
    if args.users:
        users = _csv_list(args.users)
    else:
        _require(args.num_users >= 1, "--num-users", "must be at least 1")
        users = [f"user{i}" for i in range(1, args.num_users + 1)]
    _require(len(set(users)) == len(users), "--users", "contains duplicates")
    _require(args.num_noise is None or 0 <= args.num_noise, "--num-noise", "must be non-negative")
    base = load_model(args.model)
    ctx = make_multi_context(base, cfg.t, PrngStream(derive_seed(args.seed, 0)), args.num_noise)
    out_dir = Path(args.out_dir or _default_out("users"))
    for i, uid in enumerate(users):
        copy, _ = insert_watermark_user(base, ctx, uid, cfg,
                                        PrngStream(derive_seed(args.seed, 1, i)))
        save_model(copy, out_dir / uid,
                   metadata={"watermark": {"mode": "multi", "user_id": uid, "seed": args.seed}})
        print(out_dir / uid)
    save_keystore(ctx, args.keystore, base.s)
    return EXIT_OK


def cmd_extract_multi(args) -> int:
    beta, rho, num_it = _detection(args)
    reference, suspect = load_model(args.reference), load_model(args.suspect)
    store = load_keystore(args.keystore)
    _require(store.mode == "multi", "--keystore", "is a single-owner keystore; use extract")
    detected, reports = extract_watermark_multi(reference, suspect, store.context, beta, rho,
                                                num_it)
    text = "".join(rep.to_csv(uid) if i == 0 else rep.to_csv(uid).split("\n", 1)[1]
                   for i, (uid, rep) in enumerate(reports.items()))
    summary = {"detected": detected,
               "users": {uid: rep.summary() for uid, rep in reports.items()}}
    _write_report(args.report, text, summary)
    print(json.dumps({"detected": detected}))
    return EXIT_OK if detected else EXIT_NEGATIVE


def cmd_attack(args) -> int:
    kind = args.attack
    meta: dict = {"attack": kind}
    if kind == "collude":
        _require(args.mode in attacks.COLLUDE_MODES, "--mode",
                 f"must be one of {', '.join(attacks.COLLUDE_MODES)}")
        inputs = _csv_list(args.inputs)
        _require(len(inputs) >= 1, "--inputs", "needs at least one model directory")
        models = [load_model(p) for p in inputs]
        prng = PrngStream(args.seed) if args.mode == "copy_paste" else None
        out_model = attacks.collude(models, args.mode, prng)
        meta.update(mode=args.mode, inputs=inputs, seed=args.seed)
    else:
        model = load_model(args.model)
        meta["source"] = str(args.model)
        if kind == "equiv":
            params = attacks.gen_equiv_params(PrngStream(args.seed), model.d, model.d_ff,
                                              model.n_layers)
            out_model = attacks.apply_equiv_transform(model, params)
            meta["seed"] = args.seed
        elif kind == "prune":
            _require(0 <= args.r <= 1, "--r", "must lie in [0, 1]")
            out_model = attacks.prune_global(model, args.r)
            meta["r"] = args.r
        elif kind == "quantize":
            _require(args.bits in (4, 8), "--bits", "must be 4 or 8")
            out_model = attacks.quantize(model, args.bits)
            meta["bits"] = args.bits
        else:
            _require(args.sigma_rel >= 0, "--sigma-rel", "must be non-negative")
            out_model = attacks.perturb(model, args.sigma_rel, PrngStream(args.seed))
            meta.update(sigma_rel=args.sigma_rel, seed=args.seed)
    out = args.out or _default_out(f"attacked-{kind}")
    save_model(out_model, out, metadata={"attack": meta})
    print(out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seeds:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seeds": tuple(_csv_list(args.seeds, int))})
    _require(args.jobs >= 1, "--jobs", "must be at least 1")
    header, rows = run_experiment(args.name, cfg, args.jobs)
    text = format_csv(args.name, header, rows)
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.name}.csv"
    path.write_text(text, encoding="utf-8")
    print(path)
    return EXIT_OK


def cmd_prob(args) -> int:
    ls, rhos = _csv_list(args.l, int), _csv_list(args.rho, int)
    ps, betas = _csv_list(args.p, float), _csv_list(args.beta, float)
    num_us = _csv_list(args.num_u, int)
    for flag, vals in (("--l", ls), ("--rho", rhos), ("--p", ps), ("--beta", betas),
                       ("--num-u", num_us)):
        _require(bool(vals), flag, "needs at least one value")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["l", "rho", "p", "beta", "num_u", "pr_wm_success", "pr_u_random", "pr_u_wrong"]
    writer.writerow(cols)
    for l in ls:
        for rho in rhos:
            _require(0 <= rho <= l, "--rho", f"must lie in [0, --l={l}]")
            for p in ps:
                _require(0 <= p <= 1, "--p", "must lie in [0, 1]")
                for beta in betas:
                    _require(0 <= beta <= 1, "--beta", "must lie in [0, 1]")
                    for num_u in num_us:
                        _require(num_u >= 1, "--num-u", "must be at least 1")
                        r = prob_row(l, rho, p, beta, num_u)
                        writer.writerow([r[c] if i < 5 else repr(r[c])
                                         for i, c in enumerate(cols)])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _add_insertion_flags(p) -> None:
    p.add_argument("--t", type=int, default=10, help="invariant rows")
    p.add_argument("--l", type=int, default=50, help="watermark positions")
    p.add_argument("--scale-wm", type=float, default=1000.0)
    p.add_argument("--tau", type=float, default=1e3, help="condition-number bound")
    p.add_argument("--max-times", type=int, default=100)


def _add_detection_flags(p) -> None:
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--rho", type=int, default=None, help="default ceil(0.6 l)")
    p.add_argument("--num-it", type=int, default=DEFAULT_NUM_IT)
    p.add_argument("--report", help="write PREFIX.csv and PREFIX.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weightmark",
                                     description="Embedding-matrix watermarks for toy transformers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate a synthetic model bundle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--s", type=int, default=512, help="vocabulary size")
    p.add_argument("--d", type=int, default=64, help="model width")
    p.add_argument("--d-ff", type=int, default=None, help="FFN width (default 2*d)")
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("insert", help="single-owner watermark insertion")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.add_argument("--keystore", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_insertion_flags(p)
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("extract", help="single-owner watermark extraction")
    p.add_argument("--reference", required=True, help="original model")
    p.add_argument("--suspect", required=True)
    p.add_argument("--keystore", required=True)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("insert-multi", help="issue per-user watermarked copies")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--keystore", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--users", help="comma-separated user ids")
    p.add_argument("--num-users", type=int, default=8)
    p.add_argument("--num-noise", type=int, default=None, help="default t")
    _add_insertion_flags(p)
    p.set_defaults(func=cmd_insert_multi)

    p = sub.add_parser("extract-multi", help="attribute a suspect model to users")
    p.add_argument("--reference", required=True, help="original base model")
    p.add_argument("--suspect", required=True)
    p.add_argument("--keystore", required=True)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_extract_multi)

    p = sub.add_parser("attack", help="apply a model modification")
    asub = p.add_subparsers(dest="attack", required=True)
    a = asub.add_parser("equiv", help="functional-equivalence rewrite")
    a.add_argument("--seed", type=int, required=True)
    a = asub.add_parser("prune", help="global magnitude pruning")
    a.add_argument("--r", type=float, required=True)
    a = asub.add_parser("quantize", help="symmetric per-tensor quantization")
    a.add_argument("--bits", type=int, required=True)
    a = asub.add_parser("perturb", help="relative Gaussian noise")
    a.add_argument("--sigma-rel", type=float, required=True)
    a.add_argument("--seed", type=int, required=True)
    a = asub.add_parser("collude", help="combine several user copies")
    a.add_argument("--mode", default="average")
    a.add_argument("--inputs", required=True, help="comma-separated model directories")
    a.add_argument("--seed", type=int, default=0)
    for name, a in asub.choices.items():
        if name != "collude":
            a.add_argument("--model", required=True)
        a.add_argument("--out")
        a.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="run a reproduction sweep to CSV")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or config)")
    p.add_argument("--seeds", help="comma-separated seeds overriding the config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("prob", help="success and false-attribution probabilities")
    p.add_argument("--l", default="50")
    p.add_argument("--rho", default="30")
    p.add_argument("--p", default="0.8")
    p.add_argument("--beta", default="0.2")
    p.add_argument("--num-u", default="100000")
    p.set_defaults(func=cmd_prob)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (WatermarkError, UsageError, OSError) as exc:
        print(f"weightmark: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except ValueError as exc:
        # malformed comma lists etc.
        print(f"weightmark: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
