"""Command-line front door.

Subcommands: simulate, train, crossval, evaluate, ablate, gradcheck.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
failure threshold exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from .cohort import CohortError, load_cohort, save_cohort, simulate_cohort
from .config import ConfigError, RunConfig, load_config
from .crossval import VARIANTS, emit_report, evaluate_model, run_ablation, run_crossval
from .graph import GraphConstructionError
from .model import init_model, load_model, save_model
from .training import train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajsurv",
                     description="Graph-trajectory survival prognosis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--out", default=None, help="output directory")

    common(sub.add_parser("simulate", help="write a synthetic cohort"))
    common(sub.add_parser("train", help="fit one model with an inner split"))
    common(sub.add_parser("crossval", help="repeated stratified cross-validation"))
    pe = sub.add_parser("evaluate", help="evaluate a saved model on a cohort")
    common(pe)
    pe.add_argument("--model", default=None, help="model file (overrides paths.model)")
    pa = sub.add_parser("ablate", help="run an ablation variant")
    common(pa)
    pa.add_argument("--variant", required=True, choices=VARIANTS)
    common(sub.add_parser("gradcheck", help="finite-difference check of the full pipeline"),
           config_required=False)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    if args.out is not None:
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths,
                                                                 output_dir=args.out))
    return cfg


def _cohort(cfg: RunConfig):
    if cfg.paths.cohort is None:
        raise CohortError("config.paths.cohort is not set")
    return load_cohort(cfg.paths.cohort)


def cmd_simulate(cfg: RunConfig) -> int:
    sim = cfg.simulate
    seed = sim.seed if sim.seed is not None else cfg.train.seed
    records, groups = simulate_cohort(sim.n, seed, sim.scenario())
    out = cfg.paths.output_dir
    os.makedirs(out, exist_ok=True)
    save_cohort(records, os.path.join(out, "cohort.json"), sim.region_len, sim.clinical_len)
    with open(os.path.join(out, "truth.json"), "w") as fh:
        json.dump({"seed": seed, "groups": groups.tolist(),
                   "scenario": dataclasses.asdict(sim.scenario())}, fh, indent=1)
        fh.write("\n")
    print(f"wrote {sim.n}-patient cohort to {out}/cohort.json")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from .cohort import stratified_repeated_kfold
    from .crossval import _feature_widths

    records = _cohort(cfg)
    plan = stratified_repeated_kfold(records, k=5, repeats=1, seed=cfg.train.seed)
    fold = plan.folds[0]
    # Single fit: the first fold's held-out fifth becomes the validation set.
    train_recs = [records[i] for i in fold.train] + [records[i] for i in fold.val]
    val_recs = [records[i] for i in fold.test]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed, 4, 0, 0]))
    model = init_model(cfg.model, _feature_widths(records), rng)
    out = cfg.paths.output_dir
    os.makedirs(out, exist_ok=True)
    result = train_model(model, train_recs, val_recs, cfg.train,
                         log_path=os.path.join(out, "training_log.txt"))
    save_model(model, os.path.join(out, "model.npz"))
    with open(os.path.join(out, "train_summary.json"), "w") as fh:
        json.dump({"best_val": result.best_val, "best_epoch": result.best_epoch,
                   "epochs_run": result.epochs_run}, fh, indent=1)
        fh.write("\n")
    print(f"best validation loss {result.best_val:.6g} at epoch {result.best_epoch}; "
          f"model saved to {out}/model.npz")
    return EXIT_OK


def _finish_cv(report, cfg: RunConfig) -> int:
    paths = emit_report(report, cfg.paths.output_dir)
    for task in ("os", "dfs"):
        mean = report.mean_metric(task, "cindex")
        mean_txt = "NA" if mean is None else f"{mean:.3f}"
        ci = report.ci.get(task) or {}
        print(f"{task} C-index mean {mean_txt}" +
              (f" ({ci['formatted']})" if "formatted" in ci else ""))
    print(f"report written to {paths['report.json']}")
    total = report.total_folds
    if total and len(report.failed_folds) * 3 > total:
        print(f"{len(report.failed_folds)}/{total} folds failed to train", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


def cmd_crossval(cfg: RunConfig) -> int:
    return _finish_cv(run_crossval(cfg, _cohort(cfg)), cfg)


def cmd_ablate(cfg: RunConfig, variant: str) -> int:
    return _finish_cv(run_ablation(cfg, variant, _cohort(cfg)), cfg)


def cmd_evaluate(cfg: RunConfig, model_path: str | None) -> int:
    path = model_path or cfg.paths.model
    if path is None:
        raise UsageError("evaluate needs --model or paths.model")
    records = _cohort(cfg)
    model = load_model(path)
    report = evaluate_model(model, records, cfg)
    paths = emit_report(report, cfg.paths.output_dir)
    print(f"report written to {paths['report.json']}")
    return EXIT_OK


def cmd_gradcheck() -> int:
    from .acceptance_support import full_pipeline_gradcheck

    err = full_pipeline_gradcheck()
    print(f"max relative gradient error: {err:.3e}")
    if err > 1e-4:
        print("gradient check FAILED (tolerance 1e-4)", file=sys.stderr)
        return EXIT_TRAINING
    print("gradient check passed (tolerance 1e-4)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        cfg = _load(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "crossval":
            return cmd_crossval(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.variant)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.model)
        raise UsageError(f"unknown command {args.command}")
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CohortError, GraphConstructionError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ad.NonFiniteError, ad.DomainError) as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
