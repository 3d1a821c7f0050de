"""Command-line entry point ``hypergen``.

Every subcommand writes into ``--out`` (default: current directory) a
``meta.json`` with the resolved configuration, package and numpy versions and
wall-clock timings, plus its results as CSV.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, HypergenError
from .evaluation import (EvalReport, GridSpec, PipelineConfig, evaluate, run_baseline,
                         run_dde_pipeline, run_experiment_grid, write_meta, write_reports)
from .hypercore import degree_summary, load_hypergraph, save_hypergraph
from .linmodel import (load_embeddings, load_matrix, load_node_params, sample_hyperlinks,
                       save_embeddings, save_matrix, save_node_params)
from .lowrank import lowrank_dde
from .mle import MleConfig, fit
from .scorediff import DiffusionSchedule, ScoreNet, TrainConfig, sample, train_score
from .simgen import SimConfig, generate_ground_truth

log = logging.getLogger("hypergen")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    """``cfg[name]`` if present, else the whole config (flat files)."""
    sub = cfg.get(name, cfg)
    return dict(sub) if isinstance(sub, dict) else {}


def _pick(d: dict, cls) -> dict:
    names = set(cls.__dataclass_fields__)
    return {k: v for k, v in d.items() if k in names}


def _override(d: dict, **flags) -> dict:
    d = dict(d)
    d.update({k: v for k, v in flags.items() if v is not None})
    return d


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _sim_config(args, cfg) -> SimConfig:
    d = _pick(_section(cfg, "sim"), SimConfig)
    alpha = [args.alpha_lo, args.alpha_hi] if args.alpha_lo is not None else None
    return SimConfig(**_override(d, K=args.K, m=args.m, n=args.n, alpha_range=alpha, seed=args.seed))


def _mle_config(args, cfg) -> MleConfig:
    return MleConfig(**_override(_pick(_section(cfg, "mle"), MleConfig), K=args.K, seed=args.seed))


def _schedule(args, cfg) -> DiffusionSchedule:
    return DiffusionSchedule(**_override(_pick(_section(cfg, "schedule"), DiffusionSchedule),
                                         T=args.T, N=args.N, t_min=args.t_min))


def _train_config(args, cfg) -> TrainConfig:
    return TrainConfig(**_override(_pick(_section(cfg, "train"), TrainConfig),
                                   epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                                   seed=args.seed))


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg, out):
    sim = _sim_config(args, cfg)
    truth = generate_ground_truth(sim)
    save_hypergraph(truth.hypergraph, out / "hypergraph.txt")
    save_embeddings(out / "X.csv", truth.X)
    save_node_params(out, truth.params)
    deg, orders = degree_summary(truth.hypergraph)
    _write_csv(out / "orders.csv", ["order", "count"], sorted(orders.items()))
    _write_csv(out / "degrees.csv", ["node", "degree"], sorted(deg.items()))
    return {"sim": sim.to_dict()}


def cmd_fit(args, cfg, out):
    h = load_hypergraph(args.input, args.format)
    mcfg = _mle_config(args, cfg)
    res = fit(h, mcfg)
    res.save(out)
    _write_csv(out / "residuals.csv", ["name", "value"],
               [(k, repr(v)) for k, v in res.constraint_residuals.items()])
    return {"mle": asdict(mcfg), "input": str(args.input), "converged": res.converged,
            "final_loglik": res.final_loglik}


def cmd_train(args, cfg, out):
    X = load_embeddings(args.embeddings)
    sched, tcfg = _schedule(args, cfg), _train_config(args, cfg)
    hidden = tuple(cfg.get("hidden", (128, 128)))
    net = ScoreNet(X.shape[1], hidden=hidden, rng=np.random.default_rng(args.seed))
    net = train_score(X, net, sched, tcfg)
    net.save(out / "score_net.bin", sched)
    _write_csv(out / "loss_trace.csv", ["epoch", "loss"],
               [(i, repr(v)) for i, v in enumerate(net.loss_trace)])
    return {"schedule": asdict(sched), "train": asdict(tcfg), "hidden": list(hidden)}


def cmd_sample(args, cfg, out):
    net, sched = ScoreNet.load(args.net)
    if sched is None or any(v is not None for v in (args.T, args.N, args.t_min)):
        sched = _schedule(args, cfg)
    X = sample(net, sched, args.m_tilde, np.random.default_rng(args.seed), stepper=args.stepper)
    save_embeddings(out / "embeddings.csv", X)
    return {"schedule": asdict(sched), "m_tilde": args.m_tilde, "stepper": args.stepper}


def cmd_generate(args, cfg, out):
    X = load_embeddings(args.embeddings)
    params = load_node_params(args.params)
    h = sample_hyperlinks(X, params, np.random.default_rng(args.seed))
    save_hypergraph(h, out / "generated.txt")
    _, orders = degree_summary(h)
    _write_csv(out / "orders.csv", ["order", "count"], sorted(orders.items()))
    return {"embeddings": str(args.embeddings), "params": str(args.params)}


def cmd_evaluate(args, cfg, out):
    gen = load_hypergraph(args.generated, args.format)
    ref = load_hypergraph(args.reference, args.format)
    train = load_hypergraph(args.train, args.format) if args.train else ref
    rep = evaluate(args.method, gen, train, ref, K=0, seed=args.seed or 0, seconds=0.0,
                   reference=args.reference_label)
    write_reports(out / "report.csv", [rep])
    return {"generated": str(args.generated), "reference": str(args.reference)}


def _pipeline_config(args, cfg) -> PipelineConfig:
    d = dict(cfg)
    if args.input:
        d.pop("sim", None)
        d["input_path"] = str(args.input)
        d["input_format"] = args.format
    elif "input_path" not in d:
        d["sim"] = _sim_config(args, cfg).to_dict()
    pc = PipelineConfig.from_dict(d)
    pc.mle = _mle_config(args, {"mle": asdict(pc.mle)})
    pc.schedule = _schedule(args, {"schedule": asdict(pc.schedule)})
    pc.train = _train_config(args, {"train": asdict(pc.train)})
    if args.m_tilde_multiplier is not None:
        pc.m_tilde_multiplier = args.m_tilde_multiplier
    if args.reference is not None:
        pc.reference = args.reference
    if args.seed is not None:
        pc.seed = args.seed
    pc.__post_init__()
    return pc


def cmd_pipeline(args, cfg, out):
    pc = _pipeline_config(args, cfg)
    res = run_dde_pipeline(pc)
    res.save(out, pc)
    return None  # PipelineResult.save writes meta.json itself


def cmd_baseline(args, cfg, out):
    pc = _pipeline_config(args, cfg)
    res, model = run_baseline(args.method, pc, ber_steps=args.steps)
    save_hypergraph(res.generated, out / "generated.txt")
    write_reports(out / "report.csv", [res.report])
    extra = {}
    if args.method == "gau-diff":
        save_matrix(out / "thresholds.csv", model.thresholds[:, None])
        extra["thresholds"] = [float(t) if np.isfinite(t) else str(t) for t in model.thresholds]
    else:
        extra["betas"] = model.betas.tolist()
    return {"pipeline": pc.to_dict(), "method": args.method, **extra}


def cmd_grid(args, cfg, out):
    d = dict(cfg)
    if args.seed is not None and "seeds" not in d:
        d["seeds"] = [args.seed]
    spec = GridSpec.from_dict(d)
    rows, medians = run_experiment_grid(spec, out / "grid.csv", workers=args.workers)
    failed = sum(bool(r["error"]) for r in rows)
    return {"grid": asdict(spec), "cells": len(rows), "failed": failed}


def cmd_lowrank(args, cfg, out):
    Y, _ = load_matrix(args.input)
    sched, tcfg = _schedule(args, cfg), _train_config(args, cfg)
    K = args.K if args.K is not None else cfg.get("K", 2)
    m_tilde = args.m_tilde if args.m_tilde is not None else Y.shape[0]
    gen, lr_fit, net = lowrank_dde(Y, K, sched, tcfg, m_tilde, np.random.default_rng(args.seed))
    save_matrix(out / "generated.csv", gen)
    save_matrix(out / "Z_hat.csv", lr_fit.Z_hat)
    save_matrix(out / "X_hat.csv", lr_fit.X_hat)
    _write_csv(out / "singular_values.csv", ["index", "value"],
               [(i, repr(float(s))) for i, s in enumerate(lr_fit.singular_values)])
    return {"K": K, "m_tilde": m_tilde, "schedule": asdict(sched), "train": asdict(tcfg)}


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "train": cmd_train, "sample": cmd_sample,
    "generate": cmd_generate, "evaluate": cmd_evaluate, "pipeline": cmd_pipeline,
    "grid": cmd_grid, "baseline": cmd_baseline, "lowrank": cmd_lowrank,
}


# ---------------------------------------------------------------- parser

def _global_flags(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--config", default=default, help="JSON configuration file")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def _sim_flags(p):
    p.add_argument("--K", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha-lo", type=float)
    p.add_argument("--alpha-hi", type=float)


def _diff_flags(p):
    p.add_argument("--T", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--t-min", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)


def _pipeline_flags(p):
    _sim_flags(p)
    _diff_flags(p)
    p.add_argument("--input", help="observed hypergraph (otherwise simulated)")
    p.add_argument("--format", default="lines", choices=("lines", "jsonl"))
    p.add_argument("--m-tilde-multiplier", type=int)
    p.add_argument("--reference", choices=("train-sample", "oracle-sample"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypergen", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = add("simulate", "draw a ground-truth hypergraph")
    _sim_flags(p)

    p = add("fit", "constrained maximum-likelihood embeddings")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="lines", choices=("lines", "jsonl"))
    p.add_argument("--K", type=int)

    p = add("train", "train a score network on embeddings")
    p.add_argument("--embeddings", required=True)
    _diff_flags(p)

    p = add("sample", "sample embeddings from a trained score network")
    p.add_argument("--net", required=True)
    p.add_argument("--m-tilde", type=int, required=True)
    p.add_argument("--stepper", default="exponential", choices=("exponential", "euler"))
    p.add_argument("--T", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--t-min", type=float)

    p = add("generate", "decode embeddings into hyperlinks")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--params", required=True, help="directory with Z.csv and alpha.csv")

    p = add("evaluate", "RMSE of means/covariances and duplicate rate")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--train", help="training hypergraph for the duplicate rate (default: reference)")
    p.add_argument("--format", default="lines", choices=("lines", "jsonl"))
    p.add_argument("--method", default="external")
    p.add_argument("--reference-label", default="train-sample")

    p = add("pipeline", "fit, train, sample and decode end to end")
    _pipeline_flags(p)

    p = add("baseline", "Gau-Diff or Ber-Diff on the incidence rows")
    p.add_argument("method", choices=("gau-diff", "ber-diff"))
    p.add_argument("--steps", type=int, default=100, help="Ber-Diff steps")
    _pipeline_flags(p)

    p = add("grid", "run a simulation grid (config holds the grid settings)")
    p.add_argument("--workers", type=int, default=1)

    p = add("lowrank", "SVD embedding + latent diffusion for continuous data")
    p.add_argument("--input", required=True, help="CSV matrix, one row per observation")
    p.add_argument("--K", type=int)
    p.add_argument("--m-tilde", type=int)
    _diff_flags(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        resolved = COMMANDS[args.command](args, cfg, out)
    except (HypergenError, OSError) as exc:
        print(f"hypergen {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if resolved is not None:
        write_meta(out, resolved, command=args.command, argv=list(sys.argv[1:] if argv is None else argv),
                   timings={"total": time.perf_counter() - t0})
    return 0


if __name__ == "__main__":
    sys.exit(main())
