"""Monte-Carlo experiment harness: configs, lambda tuning, trial runner, CSV output.

Every trial draws its samples from its own stream keyed by
``(seed, experiment, setting, trial)``, so results do not depend on how
trials are scheduled across threads. All estimators in one trial see the
same samples. The dither stream of a trial does not depend on lambda, so a
lambda grid is evaluated with common random numbers.
"""
from __future__ import annotations

import csv
import io
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .bounds import prop_lb_value, theory_lambda, thm1_rhs, thm2_rhs
from .estimators import (
    ESTIMATOR_TAGS,
    METRICS,
    dithered_estimate,
    estimation_error,
    one_bit_sine,
    sample_cov,
)
from .matrixcore import as_mask, cholesky, hadamard, max_norm, psd_project
from .quantize import dithered_pack, sign_pack, write_block
from .sampling import CovModel, RngStream, build_cov, derive_stream_id, sample_gaussian

__all__ = [
    "ConfigError",
    "EXPERIMENTS",
    "ExperimentConfig",
    "TrialRecord",
    "CSV_COLUMNS",
    "load_config",
    "parse_range",
    "build_mask",
    "lambda_grid",
    "tune_lambda",
    "run_experiment",
    "aggregate",
    "rate_check",
    "RateResult",
    "write_csv",
    "records_to_csv",
]

EXPERIMENTS = (
    "compare-all",
    "lambda-sweep",
    "optimal-lambda",
    "correlation",
    "diagonal",
    "rate-check",
    "bounds-sweep",
)
CSV_COLUMNS = ("experiment", "estimator", "p", "n", "c", "lambda", "trial", "seed", "error", "ms")
MEAN_ROW = -1
STDERR_ROW = -2

_DEFAULT_ESTIMATORS = {
    "compare-all": ("sample", "one_bit_sine", "dithered_raw", "dithered_psd"),
    "lambda-sweep": ("sample", "one_bit_sine", "dithered_psd"),
    "optimal-lambda": ("dithered_psd",),
    "correlation": ("sample", "one_bit_sine"),
    "diagonal": ("sample", "dithered_psd"),
    "rate-check": ("one_bit_sine",),
    "bounds-sweep": ("one_bit_sine",),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    p: list = field(default_factory=lambda: [5])
    n: list = field(default_factory=lambda: [200])
    c: list = field(default_factory=lambda: [0.2])
    trials: int = 100
    tuning_trials: int | None = None
    seed: int = 0
    spike: float | None = None
    lambda_grid_points: int = 40
    metric: str = "operator"
    mask: str = "full"
    estimators: list | None = None
    t: float = 0.0
    out: str | None = None
    timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("p", "n", "c"):
            vals = getattr(self, name)
            if isinstance(vals, (int, float, str)):
                vals = parse_range(vals) if name != "c" else [float(vals)]
                setattr(self, name, vals)
            if len(vals) == 0:
                raise ConfigError(f"{name} range is empty")
        self.p = [int(v) for v in self.p]
        self.n = [int(v) for v in self.n]
        self.c = [float(v) for v in self.c]
        if min(self.p) < 1 or min(self.n) < 1:
            raise ConfigError("p and n values must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.tuning_trials is not None and self.tuning_trials < 1:
            raise ConfigError("tuning_trials must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.lambda_grid_points < 2:
            raise ConfigError("lambda_grid_points must be >= 2")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.t < 0:
            raise ConfigError("t must be >= 0")
        if self.spike is not None and not self.spike > 0:
            raise ConfigError("spike must be positive")
        if self.estimators is None:
            self.estimators = list(_DEFAULT_ESTIMATORS[self.experiment])
        bad = [e for e in self.estimators if e not in ESTIMATOR_TAGS]
        if bad or not self.estimators:
            raise ConfigError(f"invalid estimators {self.estimators}")
        for p in self.p:
            build_mask(self.mask, p)
            for c in self.c:
                try:
                    build_cov(CovModel.equicorrelation(c, p))
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
        if self.experiment == "rate-check":
            _check_rate_range(self.n)

    @property
    def n_tuning(self) -> int:
        return self.tuning_trials if self.tuning_trials is not None else self.trials


@dataclass(frozen=True)
class TrialRecord:
    experiment: str
    estimator: str
    p: int
    n: int
    c: float
    lam: float | None
    trial: int
    seed: int
    error: float
    ms: float | None = None

    def __post_init__(self):
        if not self.error >= 0 and not (self.trial == STDERR_ROW and math.isnan(self.error)):
            raise ValueError(f"error must be >= 0, got {self.error}")

    def row(self) -> list:
        return [
            self.experiment,
            self.estimator,
            self.p,
            self.n,
            repr(self.c),
            "" if self.lam is None else repr(self.lam),
            self.trial,
            self.seed,
            repr(self.error),
            "" if self.ms is None else f"{self.ms:.3f}",
        ]


_RANGE_RE = re.compile(r"^\s*(-?\d+)\s*:\s*(-?\d+)\s*(?::\s*(\d+)\s*)?$")


def parse_range(spec) -> list:
    """Integer range from a list, a scalar, ``"a:b"`` or ``"a:b:step"`` (inclusive)."""
    if isinstance(spec, (list, tuple)):
        return [int(v) for v in spec]
    if isinstance(spec, int):
        return [spec]
    text = str(spec)
    m = _RANGE_RE.match(text)
    if m:
        a, b, step = int(m.group(1)), int(m.group(2)), int(m.group(3) or 1)
        if step < 1:
            raise ConfigError(f"bad range step in {text!r}")
        return list(range(a, b + 1, step))
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse range {text!r}") from None


def build_mask(spec: str, p: int) -> np.ndarray:
    """Mask from ``full``, ``identity``, ``band(w)`` or ``file:PATH``."""
    spec = str(spec).strip()
    if spec == "full":
        return as_mask(np.ones((p, p)))
    if spec == "identity":
        return as_mask(np.eye(p))
    m = re.fullmatch(r"band\((\d+)\)", spec)
    if m:
        w = int(m.group(1))
        if w >= p:
            raise ConfigError(f"band width {w} must be < p = {p}")
        idx = np.arange(p)
        return as_mask((np.abs(idx[:, None] - idx[None, :]) <= w).astype(float))
    if spec.startswith("file:"):
        try:
            mat = np.loadtxt(spec[5:], delimiter=None, ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read mask file: {exc}") from None
        if mat.shape != (p, p):
            raise ConfigError(f"mask file is {mat.shape}, expected {(p, p)}")
        try:
            return as_mask(mat)
        except ValueError as exc:
            raise ConfigError(f"invalid mask file: {exc}") from None
    raise ConfigError(f"unknown mask spec {spec!r}")


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML config; keyword overrides that are not ``None`` win."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in data:
        raise ConfigError("config needs an 'experiment' key")
    for key in ("p", "n"):
        if key in data:
            data[key] = parse_range(data[key])
    if "c" in data and not isinstance(data["c"], list):
        data["c"] = [data["c"]]
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def lambda_grid(sigma, grid_points: int) -> np.ndarray:
    """``grid_points`` equispaced values on ``(0, 4 ||sigma||_max]``."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    top = 4.0 * max_norm(sigma)
    return top * np.arange(1, grid_points + 1) / grid_points


# --- per-trial core ---------------------------------------------------------


@dataclass(frozen=True)
class _Setting:
    experiment: str
    p: int
    n: int
    c: float
    sigma: np.ndarray
    chol: np.ndarray
    mask: np.ndarray | None  # None means the all-ones mask
    key: tuple


def _make_setting(experiment, label, p, n, c, mask_spec, spike=None):
    model = CovModel.spiked(c, p, 1, spike) if spike is not None else CovModel.equicorrelation(c, p)
    sigma = build_cov(model)
    mask = None if mask_spec == "full" else build_mask(mask_spec, p)
    key = (label, p, n, c, spike, mask_spec)
    return _Setting(experiment, p, n, c, sigma, cholesky(sigma), mask, key)


def _clock(timing):
    return time.perf_counter() if timing else 0.0


def _ms(start, timing):
    return (time.perf_counter() - start) * 1e3 if timing else None


def _trial(setting, k, tags, lams, seed, metric, stage, timing=False, dump_dir=None):
    """Errors of every requested estimator on trial ``k``.

    Returns a list of ``(tag, lam, error, ms)``; dithered tags give one entry
    per value in ``lams``.
    """
    rng = RngStream(seed, derive_stream_id(*setting.key, stage, "x", k))
    x = sample_gaussian(setting.chol, setting.n, rng)
    mask = setting.mask
    truth = setting.sigma if mask is None else hadamard(mask, setting.sigma)
    out = []

    def finish(tag, lam, est, start):
        if mask is not None:
            est = hadamard(mask, est)
        if tag == "dithered_psd":
            est = psd_project(est)
        out.append((tag, lam, estimation_error(est, truth, metric=metric), _ms(start, timing)))

    for tag in tags:
        if tag == "sample":
            t0 = _clock(timing)
            finish(tag, None, sample_cov(x), t0)
        elif tag == "one_bit_sine":
            t0 = _clock(timing)
            block = sign_pack(x)
            finish(tag, None, one_bit_sine(block), t0)
            if dump_dir is not None:
                write_block(Path(dump_dir) / f"{_dump_stem(setting, k)}_sign.qblk", block)
    dithered = [t for t in tags if t.startswith("dithered")]
    for lam in lams if dithered else ():
        t0 = _clock(timing)
        drng = RngStream(seed, derive_stream_id(*setting.key, stage, "dither", k))
        pair = dithered_pack(x, float(lam), drng)
        raw = dithered_estimate(pair)
        for tag in dithered:
            finish(tag, float(lam), raw, t0)
        if dump_dir is not None:
            stem = f"{_dump_stem(setting, k)}_lam{float(lam):.6g}"
            write_block(Path(dump_dir) / f"{stem}_y.qblk", pair.y)
            write_block(Path(dump_dir) / f"{stem}_ybar.qblk", pair.ybar)
    return out


def _dump_stem(setting, k):
    label = re.sub(r"[^A-Za-z0-9_.-]", "_", str(setting.key[0]))
    return f"{label}_p{setting.p}_n{setting.n}_c{setting.c:g}_t{k}"


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # preserves input order


def _lambda_errors(setting, grid, trials, seed, metric, stage, threads):
    rows = _map(
        lambda k: [e for _, _, e, _ in _trial(setting, k, ("dithered_psd",), grid, seed, metric, stage)],
        range(trials),
        threads,
    )
    return np.asarray(rows)  # (trials, len(grid))


def _argmin_curve(grid, errors):
    means = [math.fsum(col) / len(col) for col in errors.T]
    j = int(np.argmin(means))  # first minimum, i.e. smallest lambda on ties
    return float(grid[j]), [(float(g), m) for g, m in zip(grid, means)]


def tune_lambda(
    sigma,
    n: int,
    trials: int = 100,
    grid_points: int = 40,
    seed: int = 0,
    key=("tune",),
    metric: str = "operator",
    mask: str = "full",
    grid=None,
    threads: int = 1,
):
    """Grid-search the dither level of the PSD-projected dithered estimator.

    Returns ``(lambda_star, curve)`` where ``curve`` lists ``(lambda,
    mean_error)`` over the grid (``lambda_grid`` unless ``grid`` is given).
    Ties go to the smaller lambda.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    setting = _Setting(
        "tune", p, n, 0.0, sigma, cholesky(sigma),
        None if mask == "full" else build_mask(mask, p), tuple(key) + (p, n),
    )
    grid = lambda_grid(sigma, grid_points) if grid is None else np.asarray(grid, dtype=float)
    if len(grid) < 2 or np.any(grid <= 0):
        raise ValueError("lambda grid needs >= 2 positive points")
    errors = _lambda_errors(setting, grid, trials, seed, metric, "tune", threads)
    return _argmin_curve(grid, errors)


# --- experiments --------------------------------------------------------------


def _records(setting, label, k, results, seed):
    return [
        TrialRecord(label, tag, setting.p, setting.n, setting.c, lam, k, seed, err, ms)
        for tag, lam, err, ms in results
    ]


def _eval_trials(cfg, setting, label, tags, lams, threads, dump_dir):
    per_trial = _map(
        lambda k: _trial(setting, k, tags, lams, cfg.seed, cfg.metric, "eval", cfg.timing, dump_dir),
        range(cfg.trials),
        threads,
    )
    recs = []
    for k, res in enumerate(per_trial):
        recs.extend(_records(setting, label, k, res, cfg.seed))
    return recs


def _tuned(cfg, setting, threads):
    grid = lambda_grid(setting.sigma, cfg.lambda_grid_points)
    errors = _lambda_errors(setting, grid, cfg.n_tuning, cfg.seed, cfg.metric, "tune", threads)
    return grid, errors


def _settings(cfg, label, spike=None):
    for c in cfg.c:
        for p in cfg.p:
            for n in cfg.n:
                yield _make_setting(cfg.experiment, label, p, n, c, cfg.mask, spike)


def _run_standard(cfg, threads, dump_dir, label=None, spike=None):
    label = label or cfg.experiment
    recs = []
    needs_lambda = any(t.startswith("dithered") for t in cfg.estimators)
    for s in _settings(cfg, label, spike):
        lams = ()
        if needs_lambda:
            grid, errors = _tuned(cfg, s, threads)
            lams = (_argmin_curve(grid, errors)[0],)
        recs.extend(_eval_trials(cfg, s, label, cfg.estimators, lams, threads, dump_dir))
    return recs


def _run_lambda_sweep(cfg, threads, dump_dir):
    recs = []
    for s in _settings(cfg, cfg.experiment):
        grid = lambda_grid(s.sigma, cfg.lambda_grid_points)
        recs.extend(_eval_trials(cfg, s, cfg.experiment, cfg.estimators, grid, threads, dump_dir))
    return recs


def _run_optimal_lambda(cfg, threads):
    recs = []
    for s in _settings(cfg, cfg.experiment):
        grid, errors = _tuned(cfg, s, threads)
        for k in range(errors.shape[0]):
            for lam, err in zip(grid, errors[k]):
                recs.append(TrialRecord(cfg.experiment, "dithered_psd", s.p, s.n, s.c, float(lam), k, cfg.seed, float(err)))
    return recs


def _optimal_rows(cfg, recs):
    """One ``lambda_star`` row per setting: argmin of the mean curve."""
    out = []
    curves = {}
    for r in aggregate(recs):
        if r.trial == MEAN_ROW and r.estimator == "dithered_psd":
            curves.setdefault((r.p, r.n, r.c), []).append(r)
    for (p, n, c), rows in curves.items():
        best = min(rows, key=lambda r: (r.error, r.lam))
        out.append(TrialRecord(cfg.experiment, "lambda_star", p, n, c, best.lam, MEAN_ROW, cfg.seed, best.error))
    return out


def _run_bounds(cfg, threads):
    recs = []
    for s in _settings(cfg, cfg.experiment):
        recs.extend(_eval_trials(cfg, s, cfg.experiment, cfg.estimators, (), threads, None))
    return recs


def _bound_rows(cfg):
    out = []
    for c in cfg.c:
        for p in cfg.p:
            for n in cfg.n:
                sigma = build_cov(CovModel.equicorrelation(c, p))
                mask = build_mask(cfg.mask, p)
                t1 = thm1_rhs(sigma, mask, n, cfg.t).total
                lb = prop_lb_value(sigma, mask, n)
                lam = theory_lambda(sigma, n) if n >= 2 else None
                row = lambda tag, v, lam=None: TrialRecord(cfg.experiment, tag, p, n, c, lam, MEAN_ROW, cfg.seed, float(v))
                out.append(row("bound_thm1", t1))
                out.append(row("bound_prop_lb", lb.positive_total))
                out.append(row("bound_prop_lb_remainder", lb.remainder))
                if lam is not None:
                    out.append(row("bound_thm2", thm2_rhs(sigma, mask, n, cfg.t, lam).total, lam))
    return out


def aggregate(records) -> list:
    """Mean (``trial=-1``) and standard error (``trial=-2``) per setting, in first-seen order."""
    groups: dict = {}
    for r in records:
        if r.trial < 0:
            continue
        key = (r.experiment, r.estimator, r.p, r.n, r.c, r.lam)
        groups.setdefault(key, []).append(r)
    out = []
    for (exp, est, p, n, c, lam), rows in groups.items():
        errs = [r.error for r in rows]
        mean = math.fsum(errs) / len(errs)
        if len(errs) > 1:
            var = math.fsum((e - mean) ** 2 for e in errs) / (len(errs) - 1)
            se = math.sqrt(var / len(errs))
        else:
            se = math.nan
        seed = rows[0].seed
        out.append(TrialRecord(exp, est, p, n, c, lam, MEAN_ROW, seed, mean))
        out.append(TrialRecord(exp, est, p, n, c, lam, STDERR_ROW, seed, se))
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1, dump_dir=None) -> list:
    """Run all trials of ``cfg``; returns raw rows followed by aggregate rows."""
    cfg.validate()
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    exp = cfg.experiment
    extra = []
    if exp in ("compare-all", "correlation", "rate-check"):
        recs = _run_standard(cfg, threads, dump_dir)
    elif exp == "diagonal":
        spike = 10.0 if cfg.spike is None else cfg.spike
        recs = _run_standard(cfg, threads, dump_dir, label="diagonal/flat")
        recs += _run_standard(cfg, threads, dump_dir, label="diagonal/spiked", spike=spike)
    elif exp == "lambda-sweep":
        recs = _run_lambda_sweep(cfg, threads, dump_dir)
    elif exp == "optimal-lambda":
        recs = _run_optimal_lambda(cfg, threads)
        extra = _optimal_rows(cfg, recs)
    else:
        recs = _run_bounds(cfg, threads)
        extra = _bound_rows(cfg)
    return recs + aggregate(recs) + extra


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def write_csv(records, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


# --- rate check ---------------------------------------------------------------


@dataclass(frozen=True)
class RateResult:
    estimator: str
    n: list
    mean_error: list
    slope: float | None
    exact_zero: bool


def _check_rate_range(ns):
    if len(set(ns)) < 4:
        raise ConfigError("rate check needs at least 4 distinct n values")
    if max(ns) < 10 * min(ns):
        raise ConfigError("rate check n values must span at least one decade")


def rate_check(cfg: ExperimentConfig, threads: int = 1, records=None) -> list:
    """Least-squares slope of ``log(mean error)`` against ``log(n)``, per estimator and p.

    If every mean error is at most 1e-12 the slope is reported as ``None``
    with ``exact_zero`` set.
    """
    _check_rate_range(cfg.n)
    if cfg.experiment != "rate-check":
        cfg = replace(cfg, experiment="rate-check")
    if records is None:
        records = run_experiment(cfg, threads)
    means: dict = {}
    for r in records:
        if r.trial == MEAN_ROW:
            means.setdefault((r.estimator, r.p, r.c), {})[r.n] = r.error
    results = []
    for (est, p, c), by_n in means.items():
        ns = sorted(by_n)
        errs = [by_n[n] for n in ns]
        if all(e <= 1e-12 for e in errs):
            results.append(RateResult(est, ns, errs, None, True))
            continue
        if any(e <= 0 for e in errs):
            raise ArithmeticError("cannot fit a log-log slope through zero errors")
        slope = float(np.polyfit(np.log(ns), np.log(errs), 1)[0])
        results.append(RateResult(est, ns, errs, slope, False))
    return results


def default_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("QCOV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"QCOV_THREADS must be an integer, got {env!r}") from None
    return 1
