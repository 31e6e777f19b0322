"""Covariance estimators from full, one-bit and dithered two-bit samples.

None of the estimators subtracts a mean: the data model is mean-zero and
the sample covariance here is ``X.T @ X / n``, not the centered version.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matrixcore import (
    as_mask,
    as_sym,
    frobenius_norm,
    hadamard,
    max_norm,
    operator_norm,
    psd_project,
)
from .quantize import (
    BitSampleBlock,
    DitheredPairBlock,
    cross_gram,
    dithered_pack,
    sign_gram,
    sign_pack,
)
from .sampling import RngStream

__all__ = [
    "ESTIMATOR_TAGS",
    "METRICS",
    "EstimatorKind",
    "sample_cov",
    "one_bit_sine",
    "dithered_estimate",
    "apply_mask",
    "estimation_error",
    "estimate",
]

ESTIMATOR_TAGS = ("sample", "one_bit_sine", "dithered_raw", "dithered_psd")
METRICS = ("operator", "frobenius", "max")


@dataclass(frozen=True)
class EstimatorKind:
    tag: str
    lam: float | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in ESTIMATOR_TAGS:
            raise ValueError(f"unknown estimator {self.tag!r}")
        dithered = self.tag.startswith("dithered")
        if dithered and (self.lam is None or not self.lam > 0):
            raise ValueError(f"{self.tag} needs a positive lambda")
        if not dithered and self.lam is not None:
            raise ValueError(f"{self.tag} takes no lambda")


def sample_cov(batch) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("batch must be a non-empty (n, p) array")
    return as_sym(x.T @ x / x.shape[0], rtol=None)


def one_bit_sine(block: BitSampleBlock) -> np.ndarray:
    """``sin(pi/2 * G / n)`` for the sign Gram matrix ``G``.

    ``G / n`` is 1 exactly on the diagonal, so the diagonal is exactly 1.
    """
    g = sign_gram(block)
    return as_sym(np.sin(0.5 * math.pi * (g / block.count)), rtol=None)


def dithered_estimate(pair: DitheredPairBlock, project: bool = False) -> np.ndarray:
    """Symmetrized ``lam^2 / n * sum_k y^k (ybar^k)^T``, optionally PSD-projected."""
    s = (pair.lam * pair.lam / pair.y.count) * cross_gram(pair)
    est = as_sym(0.5 * (s + s.T), rtol=None)
    return psd_project(est) if project else est


def apply_mask(est, mask) -> np.ndarray:
    return hadamard(est, as_mask(mask))


def estimation_error(est, truth, mask=None, metric: str = "operator") -> float:
    """Norm of ``mask * (est - truth)``; no mask means the all-ones mask."""
    diff = np.asarray(est, dtype=float) - np.asarray(truth, dtype=float)
    if np.shape(est) != np.shape(truth):
        raise ValueError(f"dimension mismatch: {np.shape(est)} vs {np.shape(truth)}")
    if mask is not None:
        diff = apply_mask(diff, mask)
    if metric == "operator":
        return operator_norm(as_sym(diff, rtol=None))
    if metric == "frobenius":
        return frobenius_norm(diff)
    if metric == "max":
        return max_norm(diff)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def estimate(kind: EstimatorKind, batch, rng: RngStream | None = None) -> np.ndarray:
    """Run one estimator on an unquantized ``(n, p)`` batch (quantizing as needed).

    A mask on ``kind`` is applied to the estimate, before PSD projection.
    """
    if kind.tag == "sample":
        est = sample_cov(batch)
    elif kind.tag == "one_bit_sine":
        est = one_bit_sine(sign_pack(batch))
    else:
        if rng is None:
            raise ValueError("dithered estimators need an RngStream")
        est = dithered_estimate(dithered_pack(batch, kind.lam, rng))
    if kind.mask is not None:
        est = apply_mask(est, kind.mask)
    # Projection goes last so the result is P_psd(mask * raw).
    if kind.tag == "dithered_psd":
        est = psd_project(est)
    return est
