"""Command line entry point: ``obigrad {estimate,experiment,sweep,root}``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from .core import ObigradError, read_csv
from .dgp import DESIGN_NAMES, MODEL_NAMES, cached_design, default_learner_for_model, get_model
from .estimator import CrossFitter, canonical_method
from .harness import ExperimentConfig, emit_reports, load_config, run_experiment, uniform_error_sweep
from .harness.config import ConfigError


class UsageError(ObigradError):
    kind = "usage_error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _config(args, kinds: Sequence[str]) -> ExperimentConfig:
    if args.design not in DESIGN_NAMES:
        raise ConfigError(f"unknown design {args.design!r}; expected one of {DESIGN_NAMES}")
    kind = cached_design(args.design).kind
    if kind not in kinds:
        raise UsageError(f"design {args.design!r} is a {kind} design; this command needs one of {tuple(kinds)}")
    overrides = {
        "replications": args.reps,
        "output_dir": args.out,
        "master_seed": args.seed,
        "workers": args.workers,
        "sample_sizes": _ints(args.sizes) if args.sizes else None,
    }
    if args.config:
        cfg = load_config(args.config, {"design": args.design}, **overrides)
        if cfg.design != args.design:
            raise ConfigError(f"config names design {cfg.design!r} but the command asked for {args.design!r}")
        return cfg
    return ExperimentConfig(design=args.design, **{k: v for k, v in overrides.items() if v is not None})


def _estimate(args) -> dict:
    method = canonical_method(args.method)
    if method not in ("obigrad", "plugin", "plugin_crossfit"):
        raise UsageError("estimate supports --method obigrad, plugin or plugin_crossfit")
    if args.model not in MODEL_NAMES:
        raise UsageError(f"unknown model {args.model!r}; expected one of {MODEL_NAMES}")
    try:
        data = read_csv(args.data)
    except OSError as exc:
        raise UsageError(f"{args.data}: {exc.strerror}") from None
    model = get_model(args.model)
    learner = default_learner_for_model(args.model, data.x.shape[1])
    if args.ridge_lambda is not None:
        learner = type(learner)(learner.feature_map, args.ridge_lambda, learner.intercept_unpenalized)
    report = CrossFitter(data, model, learner, args.seed).estimate(np.array(_floats(args.omega)), method, args.alpha)
    return report.to_dict()


def _experiment(args) -> dict:
    cfg = _config(args, ("gradient", "kbo"))
    result = run_experiment(cfg)
    paths = emit_reports(result, cfg.output_dir)
    return {"design": cfg.design, "kind": result.kind, "files": [str(p) for p in paths]}


def _sweep(args) -> dict:
    cfg = _config(args, ("gradient",))
    result = uniform_error_sweep(cfg)
    paths = emit_reports(result, cfg.output_dir)
    return {"design": cfg.design, "ratio": result.ratio, "slope": result.slope, "files": [str(p) for p in paths]}


def _root(args) -> dict:
    cfg = _config(args, ("root",))
    result = run_experiment(cfg)
    paths = emit_reports(result, cfg.output_dir)
    return {"design": cfg.design, "kind": result.kind, "files": [str(p) for p in paths]}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="obigrad", description="Orthogonal bilevel gradient estimation and Monte Carlo experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate the gradient at one point from a CSV dataset")
    est.add_argument("--data", required=True, help="CSV with columns x0.., y0.., z0..")
    est.add_argument("--model", required=True, help=f"structural model, one of {', '.join(MODEL_NAMES)}")
    est.add_argument("--omega", required=True, help="comma-separated parameter vector")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--seed", type=int, default=0, help="fold seed")
    est.add_argument("--method", default="obigrad", help="obigrad, plugin or plugin_crossfit")
    est.add_argument("--ridge-lambda", type=float, default=None)
    est.set_defaults(handler=_estimate)

    for name, handler, text in (
        ("experiment", _experiment, "run a gradient or KBO Monte Carlo design"),
        ("sweep", _sweep, "uniform-in-omega error sweep on a gradient design"),
        ("root", _root, "run a root-finding Monte Carlo design"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("design", help=f"one of {', '.join(DESIGN_NAMES)}")
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--reps", type=int, default=None, help="replications per sample size")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--sizes", default=None, help="comma-separated sample sizes")
        p.add_argument("--workers", type=int, default=None, help="process count")
        p.set_defaults(handler=handler)
    return parser


def _error_line(kind: str, message: str) -> str:
    return json.dumps({"error": kind, "message": message})


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        out = args.handler(args)
    except ObigradError as exc:
        print(_error_line(exc.kind, str(exc)), file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(_error_line("invalid_input", str(exc)), file=sys.stderr)
        return 1
    print(json.dumps(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
