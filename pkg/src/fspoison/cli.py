"""Command line entry point: ``fspoison <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .attack import AttackConfig, poison
from .baselines import random_label_flip
from .data import load_csv, normalize
from .learners import LearnerConfig, Regularizer, kkt_residual, lambda_grid, objective, select_lambda, train
from .metrics import classification_error, kuncheva_index, selected_features

OUT_ENV = "FSPOISON_OUT"


class SpecError(Exception):
    pass


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise SpecError(f"no output directory: pass --out or set {OUT_ENV}")
    return Path(out)


def _load_spec(args) -> harness.ExperimentSpec:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            raw = json.load(fh)
        if args.seed is not None:
            raw["seed"] = args.seed
        return harness.ExperimentSpec.from_dict(raw)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise SpecError(f"bad experiment spec {args.spec}: {exc}") from exc


def _fit(args):
    data = normalize(load_csv(args.data), args.cap)
    reg = Regularizer.parse(args.method)
    if args.lam is None:
        lam, _ = select_lambda(data, reg, lambda_grid(data, reg), folds=args.folds)
    else:
        lam = args.lam
    config = LearnerConfig(reg, lam)
    return data, config, train(data, config)


def cmd_train(args) -> int:
    data, config, model = _fit(args)
    summary = {
        "method": config.regularizer.label,
        "lambda": config.lam,
        "n": data.n,
        "d": data.d,
        "bias": model.bias,
        "n_selected": selected_features(model).k,
        "train_error": classification_error(model, data),
        "objective": objective(data, model, config),
        "kkt_residual": kkt_residual(data, model, config),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.weights:
        np.savetxt(args.weights, model.weights, fmt="%.17g")
    return 0


def cmd_attack(args) -> int:
    data, config, _ = _fit(args)
    initial = random_label_flip(data, args.q, args.seed)
    attack = AttackConfig(step_size=args.step_size, normalize=args.normalize,
                          max_outer_iterations=args.max_iter)
    state = poison(data, initial, config, attack)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_attack_points([state], out / "attack_points.csv")
    print(f"W: {state.objective_history[0]:.6g} -> {state.objective_history[-1]:.6g} "
          f"after {state.diagnostics['iterations']} iterations")
    return 0


def _run_protocol(args, runner, prefix: str) -> int:
    spec = _load_spec(args)
    out = _out_dir(args)
    result = runner(spec, threads=args.threads)
    harness.write_results(result, out, prefix)
    if prefix == "" and spec.baseline:
        harness.write_results(harness.run_baseline(spec, threads=args.threads), out, "baseline_")
    for agg in result.aggregates():
        print(f"{agg['method']:>16} {agg['knowledge']} p={agg['fraction']:.3f} "
              f"error={agg['error_mean']:.4f}+-{agg['error_std']:.4f} n_selected={agg['n_selected_mean']:.1f}")
    return 0


def cmd_experiment(args) -> int:
    return _run_protocol(args, harness.run_experiment, "")


def cmd_baseline(args) -> int:
    return _run_protocol(args, harness.run_baseline, "baseline_")


def cmd_demo(args) -> int:
    res = harness.demo_fig1(_out_dir(args), seed=args.seed or 0)
    print(f"error {res.error_before:.4f} -> {res.error_after:.4f}, "
          f"W {res.state.objective_history[0]:.6g} -> {res.state.objective_history[-1]:.6g}")
    return 0


def cmd_stability(args) -> int:
    a = harness.load_subset(args.a)
    b = harness.load_subset(args.b)
    print(f"{kuncheva_index(a, b):.10g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fspoison", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
        p.add_argument("--seed", type=int, default=None)
        if out:
            p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV})")

    def learner(p):
        p.add_argument("--data", required=True, help="CSV with a 'label' column")
        p.add_argument("--method", default="lasso", help="lasso | ridge | elastic_net[:rho]")
        p.add_argument("--lam", type=float, default=None, help="default: 5-fold CV over the path")
        p.add_argument("--cap", type=float, default=20.0)
        p.add_argument("--folds", type=int, default=5)

    p = sub.add_parser("train", help="fit one learner and print a summary")
    common(p, out=False)
    learner(p)
    p.add_argument("--weights", default=None, help="write weights to this file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="poison a CSV dataset and write the attack points")
    common(p)
    learner(p)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--step-size", type=float, default=0.5)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--max-iter", type=int, default=100)
    p.set_defaults(func=cmd_attack)

    for name, func, text in (("experiment", cmd_experiment, "run the poisoning sweep from a JSON spec"),
                             ("baseline", cmd_baseline, "run the random label-flip sweep")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--spec", required=True)
        p.add_argument("--threads", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("demo-fig1", help="2-D single-point attack with grid tables")
    common(p)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("stability", help="consistency index between two saved subsets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
