"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also repeated in the pytest
terminal summary) and then asserts. Tolerances, sizes, seeds and runtime
budgets are pinned here as module constants.
"""
import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from qcov.bounds import gamma_of, sigma_opnorm, sigma_sq_of, thm1_rhs
from qcov.estimators import estimation_error, one_bit_sine
from qcov.experiments import (
    MEAN_ROW,
    ExperimentConfig,
    rate_check,
    records_to_csv,
    run_experiment,
    tune_lambda,
)
from qcov.matrixcore import (
    as_sym,
    cholesky,
    hadamard,
    one_to_two_norm,
    operator_norm,
    psd_project,
)
from qcov.quantize import cross_gram, decode, dithered_pack, sign_gram, sign_pack
from qcov.sampling import CovModel, RngStream, build_cov, sample_gaussian

ORACLE_BLOCKS = 500
ORACLE_MAX_P = 16
ORACLE_NS = (1, 63, 64, 65, 200)
ORACLE_BUDGET_S = 5.0

ARCSINE_N = 10**6
ARCSINE_TOL = 4e-3
ARCSINE_BUDGET_S = 10.0

DITHER_N = 10**6
DITHER_TOL = 4e-3
DITHER_BUDGET_S = 5.0

FULL_CORR_P = 10
FULL_CORR_TOL = 1e-12

RATE_NS = [100, 200, 400, 800, 1600, 3200]
RATE_SLOPE = (-0.6, -0.4)
RATE_BUDGET_S = 120.0

CROSSOVER_BUDGET_S = 60.0

SPIKED_PS = [5, 15, 30]

TUNING_NS = (50, 200, 800)

PROPERTY_INSTANCES = 200
LIPSCHITZ_INSTANCES = 1000

DETERMINISM_THREADS = (1, 8)


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def naive_gram(u, v):
    p, n = u.shape
    g = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            s = 0.0
            for k in range(n):
                s += u[i, k] * v[j, k]
            g[i, j] = s
    return g


def test_c01_popcount_gram_oracle():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    mismatches = 0
    for b in range(ORACLE_BLOCKS):
        p = int(rng.integers(1, ORACLE_MAX_P + 1))
        n = ORACLE_NS[b % len(ORACLE_NS)]
        x = rng.standard_normal((n, p))
        pair = dithered_pack(x, float(rng.uniform(0.1, 3.0)), RngStream(101, b))
        y, yb = decode(pair.y), decode(pair.ybar)
        mismatches += not np.array_equal(sign_gram(pair.y), naive_gram(y, y))
        mismatches += not np.array_equal(cross_gram(pair), naive_gram(y, yb))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < ORACLE_BUDGET_S
    report(1, ok, f"{mismatches} mismatches over {ORACLE_BLOCKS} blocks, {elapsed:.2f}s (budget {ORACLE_BUDGET_S}s)")
    assert ok


def test_c02_arcsine_law():
    start = time.perf_counter()
    sigma = build_cov(CovModel.equicorrelation(0.5, 2))
    x = sample_gaussian(cholesky(sigma), ARCSINE_N, RngStream(202))
    mean = sign_gram(sign_pack(x))[0, 1] / ARCSINE_N
    elapsed = time.perf_counter() - start
    target = 2 / math.pi * math.asin(0.5)
    dev = abs(mean - target)
    ok = dev <= ARCSINE_TOL and elapsed < ARCSINE_BUDGET_S
    report(2, ok, f"mean {mean:.5f} vs {target:.5f} (|dev| {dev:.2e} <= {ARCSINE_TOL}), {elapsed:.2f}s")
    assert ok


def test_c03_dither_product_identity():
    a, b, lam = 0.5, -0.25, 1.0
    start = time.perf_counter()
    x = np.tile([a, b], (DITHER_N, 1))
    pair = dithered_pack(x, lam, RngStream(303))
    mean = lam**2 * cross_gram(pair)[0, 1] / DITHER_N
    elapsed = time.perf_counter() - start
    dev = abs(mean - a * b)
    ok = dev <= DITHER_TOL and elapsed < DITHER_BUDGET_S
    report(3, ok, f"mean {mean:.5f} vs {a * b} (|dev| {dev:.2e} <= {DITHER_TOL}), {elapsed:.2f}s")
    assert ok


def test_c04_full_correlation_degeneracy():
    p = FULL_CORR_P
    sigma = build_cov(CovModel.equicorrelation(1.0, p))
    L = cholesky(sigma)
    worst = 0.0
    for k, n in enumerate([1, 2, 10, 100, 1000] * 20):
        est = one_bit_sine(sign_pack(sample_gaussian(L, n, RngStream(404, k))))
        worst = max(worst, estimation_error(est, sigma))
    lead = thm1_rhs(sigma, np.ones((p, p)), 100, 0.0).leading_term
    ok = worst <= FULL_CORR_TOL and lead == 0.0
    report(4, ok, f"max error over 100 trials {worst:.1e} (<= {FULL_CORR_TOL}), leading term {lead!r}")
    assert ok


def test_c05_rate_slope():
    start = time.perf_counter()
    cfg = ExperimentConfig("rate-check", p=[20], n=RATE_NS, c=[0.5], trials=100, seed=6, estimators=["one_bit_sine"])
    (res,) = rate_check(cfg)
    elapsed = time.perf_counter() - start
    lo, hi = RATE_SLOPE
    ok = res.slope is not None and lo <= res.slope <= hi and elapsed < RATE_BUDGET_S
    report(5, ok, f"one_bit_sine slope {res.slope:.4f} in [{lo}, {hi}], {elapsed:.1f}s (budget {RATE_BUDGET_S:.0f}s)")
    assert ok


def test_c06_high_correlation_crossover():
    start = time.perf_counter()
    cfg = ExperimentConfig("correlation", p=[20], n=[300], c=[0.99, 0.5], trials=100, seed=4)
    recs = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    m = {(r.estimator, r.c): r.error for r in recs if r.trial == MEAN_ROW}
    high = m["one_bit_sine", 0.99] < m["sample", 0.99]
    reversed_ = m["one_bit_sine", 0.5] > m["sample", 0.5]
    ok = high and reversed_ and elapsed < CROSSOVER_BUDGET_S
    report(
        6,
        ok,
        f"c=0.99 one_bit {m['one_bit_sine', 0.99]:.4f} vs sample {m['sample', 0.99]:.4f} "
        f"({'ok' if high else 'wrong order'}); c=0.5 one_bit {m['one_bit_sine', 0.5]:.4f} "
        f"vs sample {m['sample', 0.5]:.4f} ({'reversed' if reversed_ else 'not reversed'}); {elapsed:.1f}s",
    )
    assert ok


def test_c07_spiked_diagonal_gap():
    cfg = ExperimentConfig(
        "diagonal", p=SPIKED_PS, n=[200], c=[0.2], spike=10.0, trials=100, seed=5,
        estimators=["sample", "dithered_psd"],
    )
    recs = run_experiment(cfg)
    m = {(r.experiment, r.estimator, r.p): r.error for r in recs if r.trial == MEAN_ROW}
    parts = []
    ok = True
    for p in SPIKED_PS:
        flat = m["diagonal/flat", "dithered_psd", p] / m["diagonal/flat", "sample", p]
        spiked = m["diagonal/spiked", "dithered_psd", p] / m["diagonal/spiked", "sample", p]
        ok &= spiked > flat
        parts.append(f"p={p} flat {flat:.3f} spiked {spiked:.3f}")
    report(7, ok, "; ".join(parts))
    assert ok


def test_c08_lambda_tuning_shape():
    sigma = build_cov(CovModel.equicorrelation(0.2, 5))
    stars, interior = [], True
    step = None
    for n in TUNING_NS:
        lam, curve = tune_lambda(sigma, n, trials=100, grid_points=40, seed=8, key=("accept",))
        errs = [e for _, e in curve]
        best = min(errs)
        interior &= errs[0] > best and errs[-1] > best
        stars.append(lam)
        step = curve[1][0] - curve[0][0]
    monotone = all(b >= a - step * (1 + 1e-9) for a, b in zip(stars, stars[1:]))
    ok = interior and monotone
    detail = ", ".join(f"n={n}: {s:.2f}" for n, s in zip(TUNING_NS, stars))
    report(8, ok, f"lambda* {detail}; interior minimum {interior}; nondecreasing within one step {monotone}")
    assert ok


def rand_sym(rng, p, scale=1.0):
    a = rng.standard_normal((p, p)) * scale
    return as_sym((a + a.T) / 2)


def rand_corr(rng, p):
    g = rng.standard_normal((p, p + 2))
    s = g @ g.T
    d = 1 / np.sqrt(np.diag(s))
    c = s * d[:, None] * d[None, :]
    np.fill_diagonal(c, 1.0)
    return as_sym(c, rtol=1e-9)


def _hadamard_general(rng):
    p = int(rng.integers(1, 10))
    a, b = rand_sym(rng, p, 3.0), rand_sym(rng, p, 3.0)
    return operator_norm(hadamard(a, b)) <= one_to_two_norm(a) * operator_norm(b) * (1 + 1e-12) + 1e-10


def _hadamard_psd(rng):
    # PSD form: ||A o B|| <= max_i A_ii ||B||
    p = int(rng.integers(1, 10))
    g = rng.standard_normal((p, p))
    a = as_sym(g @ g.T, rtol=1e-9)
    b = rand_sym(rng, p, 3.0)
    return operator_norm(hadamard(a, b)) <= np.max(np.diag(a)) * operator_norm(b) * (1 + 1e-12) + 1e-10


def _sigma_norm(rng):
    p = int(rng.integers(2, 10))
    z = rand_sym(rng, p)
    return sigma_opnorm(z, gamma_of(rand_corr(rng, p))) <= math.sqrt(2) * operator_norm(z) + 1e-10


def _sigma_psd(rng):
    p = int(rng.integers(2, 10))
    z = rand_sym(rng, p)
    s2 = sigma_sq_of(z, gamma_of(rand_corr(rng, p)))
    return np.min(np.linalg.eigvalsh(s2)) >= -1e-9 * (1 + operator_norm(z) ** 2)


def _psd_idempotent(rng):
    p = int(rng.integers(1, 10))
    pa = psd_project(rand_sym(rng, p))
    return np.max(np.abs(psd_project(pa) - pa)) <= 1e-9 * (1 + operator_norm(pa))


def _psd_lipschitz(rng):
    p = int(rng.integers(1, 10))
    a, b = rand_sym(rng, p), rand_sym(rng, p)
    return operator_norm(psd_project(a) - psd_project(b)) <= operator_norm(a - b) * (1 + 1e-9) + 1e-12


def _scale_invariance(rng):
    p = int(rng.integers(1, 10))
    x = rng.standard_normal((int(rng.integers(1, 200)), p))
    d = rng.uniform(1e-3, 1e3, p)
    return np.array_equal(one_bit_sine(sign_pack(x * d)), one_bit_sine(sign_pack(x)))


PROPERTIES = [
    ("Hadamard bound, general", _hadamard_general, PROPERTY_INSTANCES),
    ("Hadamard bound, PSD factor", _hadamard_psd, PROPERTY_INSTANCES),
    ("sigma norm <= sqrt2 ||Z||", _sigma_norm, PROPERTY_INSTANCES),
    ("sigma_sq PSD", _sigma_psd, PROPERTY_INSTANCES),
    ("PSD projection idempotent", _psd_idempotent, PROPERTY_INSTANCES),
    ("PSD projection 1-Lipschitz (operator norm)", _psd_lipschitz, LIPSCHITZ_INSTANCES),
    ("one-bit scale invariance", _scale_invariance, PROPERTY_INSTANCES),
]


def test_c09_property_suites():
    rng = np.random.default_rng(909)
    parts, ok = [], True
    for name, check, count in PROPERTIES:
        failures = sum(not check(rng) for _ in range(count))
        ok &= failures == 0
        parts.append(f"{name}: {failures}/{count} failures")
    report(9, ok, "; ".join(parts))
    assert ok


DETERMINISM_CONFIGS = [
    dict(experiment="compare-all", p=[3, 6], n=[80], c=[0.2]),
    dict(experiment="lambda-sweep", p=[4], n=[80], c=[0.2]),
    dict(experiment="optimal-lambda", p=[4], n=[40, 160], c=[0.2]),
    dict(experiment="correlation", p=[5], n=[30, 90], c=[0.5, 0.99]),
    dict(experiment="diagonal", p=[3, 5], n=[80], c=[0.2]),
    dict(experiment="rate-check", p=[4], n=[20, 50, 100, 200], c=[0.5]),
    dict(experiment="bounds-sweep", p=[3, 5], n=[100, 400], c=[0.5]),
]


def test_c10_determinism():
    diffs = []
    for spec in DETERMINISM_CONFIGS:
        cfg = ExperimentConfig(trials=5, seed=10, lambda_grid_points=6, **spec)
        outputs = [records_to_csv(run_experiment(cfg, threads=t)) for t in DETERMINISM_THREADS for _ in range(2)]
        if len(set(outputs)) != 1:
            diffs.append(spec["experiment"])
    ok = not diffs
    report(
        10,
        ok,
        f"{len(DETERMINISM_CONFIGS)} experiment types x threads {DETERMINISM_THREADS} x 2 runs; "
        f"differing: {diffs or 'none'}",
    )
    assert ok
