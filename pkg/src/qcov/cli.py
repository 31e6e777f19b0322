"""``qcov`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .experiments import (
    ConfigError,
    ExperimentConfig,
    default_threads,
    load_config,
    parse_range,
    rate_check,
    records_to_csv,
    run_experiment,
    tune_lambda,
    write_csv,
)
from .matrixcore import NumericalError
from .sampling import CovModel, build_cov

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def preset_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("qcov.presets").iterdir() if p.name.endswith(".yaml"))


def resolve_config(name: str):
    path = Path(name)
    if path.exists():
        return path
    candidate = resources.files("qcov.presets") / f"{name}.yaml"
    if candidate.is_file():
        return candidate
    raise ConfigError(f"no config file or preset named {name!r} (presets: {', '.join(preset_names())})")


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = load_config(
        resolve_config(args.config), seed=args.seed, trials=args.trials, out=args.out,
        timing=True if args.timing else None,
    )
    threads = default_threads(args.threads)
    records = run_experiment(cfg, threads=threads, dump_dir=args.dump_bits)
    if cfg.out:
        write_csv(records, cfg.out)
    else:
        sys.stdout.write(records_to_csv(records))
    if cfg.experiment == "rate-check":
        for r in rate_check(cfg, records=records):
            _print_rate(r)
    return 0


def _print_rate(r) -> None:
    if r.exact_zero:
        print(f"# {r.estimator}: error identically zero (<= 1e-12); slope undefined", file=sys.stderr)
    else:
        print(f"# {r.estimator}: log-log slope {r.slope:.4f}", file=sys.stderr)


def _model(args):
    if args.spike is not None:
        return CovModel.spiked(args.c, args.p, 1, args.spike)
    return CovModel.equicorrelation(args.c, args.p)


def cmd_tune(args) -> int:
    try:
        sigma = build_cov(_model(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.trials < 1 or args.grid_points < 2:
        raise ConfigError("need trials >= 1 and grid-points >= 2")
    lam, curve = tune_lambda(
        sigma, args.n, trials=args.trials, grid_points=args.grid_points, seed=args.seed,
        metric=args.metric, mask=args.mask, threads=default_threads(args.threads),
    )
    lines = ["lambda,mean_error"] + [f"{l!r},{e!r}" for l, e in curve]
    _emit("\n".join(lines) + "\n", args.out)
    print(f"# lambda_star {lam!r}", file=sys.stderr)
    return 0


def cmd_rate(args) -> int:
    if args.config:
        cfg = load_config(resolve_config(args.config), experiment="rate-check", seed=args.seed, trials=args.trials)
    else:
        cfg = ExperimentConfig(
            experiment="rate-check", p=[args.p], n=parse_range(args.n), c=[args.c],
            trials=args.trials or 100, seed=args.seed or 0, estimators=args.estimator,
        )
    records = run_experiment(cfg, threads=default_threads(args.threads))
    if args.out:
        write_csv(records, args.out)
    for r in rate_check(cfg, records=records):
        _print_rate(r)
        print(f"{r.estimator},{'' if r.slope is None else repr(r.slope)},{int(r.exact_zero)}")
    return 0


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcov", description="Covariance estimation from quantized samples.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config (file path or preset name)")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--out")
    run.add_argument("--threads", type=int)
    run.add_argument("--dump-bits", metavar="DIR")
    run.add_argument("--timing", action="store_true", help="fill the ms column (makes output non-reproducible)")
    run.set_defaults(func=cmd_run)

    tune = sub.add_parser("tune-lambda", help="grid-search the dither level")
    tune.add_argument("--p", type=int, default=5)
    tune.add_argument("--n", type=int, default=200)
    tune.add_argument("--c", type=float, default=0.2)
    tune.add_argument("--spike", type=float)
    tune.add_argument("--trials", type=int, default=100)
    tune.add_argument("--grid-points", type=int, default=40)
    tune.add_argument("--metric", default="operator", choices=("operator", "frobenius", "max"))
    tune.add_argument("--mask", default="full")
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--threads", type=int)
    tune.add_argument("--out")
    tune.set_defaults(func=cmd_tune)

    rate = sub.add_parser("rate-check", help="fit the log-log error slope in n")
    rate.add_argument("config", nargs="?")
    rate.add_argument("--estimator", action="append")
    rate.add_argument("--p", type=int, default=20)
    rate.add_argument("--c", type=float, default=0.5)
    rate.add_argument("--n", default="100,200,400,800,1600,3200")
    rate.add_argument("--trials", type=int)
    rate.add_argument("--seed", type=int)
    rate.add_argument("--threads", type=int)
    rate.add_argument("--out")
    rate.set_defaults(func=cmd_rate)

    pre = sub.add_parser("presets", help="list bundled experiment presets")
    pre.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"qcov: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"qcov: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
