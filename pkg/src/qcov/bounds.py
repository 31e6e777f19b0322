"""Theoretical error-bound expressions, evaluated with all hidden constants set to 1.

The values are "constant-free bound shapes": they track how the error
should scale with ``p``, ``n``, the mask and the covariance, not its
absolute size. Logs are natural logs. ``t`` is the deviation parameter of
the tail bounds; the matching probabilities involve unspecified constants
and are not computed here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matrixcore import (
    as_mask,
    as_sym,
    elementwise_map,
    hadamard,
    max_norm,
    one_to_two_norm,
    operator_norm,
)

__all__ = [
    "BoundReport",
    "LowerBoundReport",
    "gamma_of",
    "a_of",
    "sigma_sq_of",
    "sigma_opnorm",
    "thm1_rhs",
    "thm2_rhs",
    "prop_lb_value",
    "theory_lambda",
]

LABEL = "constant-free bound shape"


@dataclass(frozen=True)
class BoundReport:
    leading_term: float
    second_term: float
    quantities: dict = field(default_factory=dict)
    label: str = LABEL

    @property
    def total(self) -> float:
        return self.leading_term + self.second_term


@dataclass(frozen=True)
class LowerBoundReport:
    """Lower-bound terms; ``remainder`` is the magnitude of the subtracted term."""

    first: float
    second: float
    third: float
    remainder: float
    label: str = LABEL

    @property
    def positive_total(self) -> float:
        return self.first + self.second + self.third

    @property
    def degenerate(self) -> bool:
        return self.remainder >= self.positive_total


def gamma_of(sigma) -> np.ndarray:
    """Sign covariance ``(2/pi) * arcsin(sigma)`` of a correlation matrix."""
    return as_sym((2.0 / math.pi) * elementwise_map(as_sym(sigma), "arcsin"), rtol=None)


def a_of(sigma) -> np.ndarray:
    """``cos(arcsin(sigma)) = sqrt(1 - sigma**2)`` entrywise."""
    s = as_sym(sigma)
    if np.any(np.abs(s) > 1.0 + 1e-12):
        raise ValueError("a_of needs entries in [-1, 1]")
    return as_sym(elementwise_map(s, "sqrt1m_sq"), rtol=None)


def sigma_sq_of(z, gamma) -> np.ndarray:
    """``(z @ z) * gamma - (z * gamma) @ (z * gamma)``.

    This is the variance ``E[(z * B)^2]`` of the centered sign outer product
    ``B = y y^T - gamma``, so it is positive semidefinite.
    """
    z = as_sym(z)
    gamma = as_sym(gamma)
    if z.shape != gamma.shape:
        raise ValueError(f"dimension mismatch: {z.shape} vs {gamma.shape}")
    zg = z * gamma
    return as_sym((z @ z) * gamma - zg @ zg, rtol=1e-8)


def sigma_opnorm(z, gamma) -> float:
    return math.sqrt(operator_norm(sigma_sq_of(z, gamma)))


def _check_unit_diagonal(sigma: np.ndarray) -> None:
    if not np.allclose(np.diag(sigma), 1.0, rtol=0.0, atol=1e-12):
        raise ValueError("sigma must have a unit diagonal (correlation matrix)")


def _rate(p: int, n: int, t: float) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if t < 0:
        raise ValueError("t must be >= 0")
    return (math.log(p) + t) / n


def thm1_rhs(sigma, mask, n: int, t: float = 0.0) -> BoundReport:
    """Masked one-bit estimator bound.

    ``||sigma(M*A)|| sqrt((log p + t)/n) + max(||M*A||, ||M*Sigma||) (log p + t)/n``.
    """
    sigma = as_sym(sigma)
    _check_unit_diagonal(sigma)
    mask = as_mask(mask)
    p = sigma.shape[0]
    r = _rate(p, n, t)
    gamma = gamma_of(sigma)
    ma = hadamard(mask, a_of(sigma))
    q = {
        "opnorm_sigma_MA": sigma_opnorm(ma, gamma),
        "opnorm_MA": operator_norm(ma),
        "opnorm_MSigma": operator_norm(hadamard(mask, sigma)),
    }
    leading = q["opnorm_sigma_MA"] * math.sqrt(r)
    second = max(q["opnorm_MA"], q["opnorm_MSigma"]) * r
    return BoundReport(leading, second, q)


def thm2_rhs(sigma, mask, n: int, t: float, lam: float) -> BoundReport:
    """Masked dithered estimator bound.

    ``||M||_{1->2} (lam ||Sigma||^{1/2} + lam^2) sqrt((log p + t)/n) + lam^2 ||M|| (log p + t)/n``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    sigma = as_sym(sigma)
    mask = as_mask(mask)
    p = sigma.shape[0]
    r = _rate(p, n, t)
    q = {
        "one_to_two_M": one_to_two_norm(mask),
        "opnorm_M": operator_norm(mask),
        "opnorm_Sigma": operator_norm(sigma),
        "maxnorm_Sigma": max_norm(sigma),
        "lambda": float(lam),
    }
    leading = q["one_to_two_M"] * (lam * math.sqrt(q["opnorm_Sigma"]) + lam * lam) * math.sqrt(r)
    second = lam * lam * q["opnorm_M"] * r
    return BoundReport(leading, second, q)


def theory_lambda(sigma, n: int) -> float:
    """Dither level with ``lam^2 = log(n) * ||Sigma||_max`` (constant 1)."""
    if n < 2:
        raise ValueError("n must be >= 2 for log(n) > 0")
    return math.sqrt(math.log(n) * max_norm(sigma))


def prop_lb_value(sigma, mask, n: int) -> LowerBoundReport:
    """Terms of the lower bound on the root-mean-square one-bit error.

    first  = ||sigma(M*A)|| / sqrt(n)
    second = ||M * Sigma * (1 - Gamma*Gamma)|| / n
    third  = ||sigma(M*Sigma)^2 * Gamma||^{1/2} / n
    remainder = max(||A||, ||Sigma||) (log p / n)^{3/2}, to be subtracted
    """
    sigma = as_sym(sigma)
    _check_unit_diagonal(sigma)
    mask = as_mask(mask)
    if n < 1:
        raise ValueError("n must be >= 1")
    p = sigma.shape[0]
    gamma = gamma_of(sigma)
    a = a_of(sigma)
    ms = hadamard(mask, sigma)
    first = sigma_opnorm(hadamard(mask, a), gamma) / math.sqrt(n)
    second = operator_norm(hadamard(ms, 1.0 - gamma * gamma)) / n
    third = math.sqrt(operator_norm(hadamard(sigma_sq_of(ms, gamma), gamma))) / n
    remainder = max(operator_norm(a), operator_norm(sigma)) * (math.log(p) / n) ** 1.5
    return LowerBoundReport(first, second, third, remainder)
