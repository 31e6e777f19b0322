"""Seeded Gaussian samples, uniform dithers and covariance-model constructors.

Random numbers come from numpy's PCG64 bit generator; Gaussian draws use
numpy's ziggurat ``standard_normal``. A stream is fully determined by
``(seed, stream_id)``, so a trial can be replayed on any worker.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .matrixcore import as_sym

__all__ = [
    "RngStream",
    "derive_stream_id",
    "CovModel",
    "build_cov",
    "sample_gaussian",
    "sample_dither",
]


def derive_stream_id(*parts) -> int:
    """Stable 64-bit id from arbitrary printable parts (not ``hash()``)."""
    key = "\x1f".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def standard_normal(self, shape) -> np.ndarray:
        return self.gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.gen.uniform(low, high, shape)


@dataclass(frozen=True)
class CovModel:
    """Covariance family used by the experiments.

    ``kind`` is ``"equicorrelation"`` (unit diagonal, off-diagonal ``c``),
    ``"spiked"`` (equicorrelation with entry ``(spike_index, spike_index)``
    replaced by ``spike_value``) or ``"explicit"`` (``matrix`` given).
    ``spike_index`` is 1-based.
    """

    kind: str
    dim: int
    c: float = 0.0
    spike_index: int = 1
    spike_value: float = 1.0
    matrix: np.ndarray | None = None

    @classmethod
    def equicorrelation(cls, c: float, p: int) -> "CovModel":
        return cls("equicorrelation", p, c=c)

    @classmethod
    def spiked(cls, c: float, p: int, spike_index: int = 1, spike_value: float = 10.0) -> "CovModel":
        return cls("spiked", p, c=c, spike_index=spike_index, spike_value=spike_value)

    @classmethod
    def explicit(cls, matrix) -> "CovModel":
        m = as_sym(matrix)
        return cls("explicit", m.shape[0], matrix=m)


def build_cov(model: CovModel) -> np.ndarray:
    p = model.dim
    if p < 1:
        raise ValueError("dimension must be >= 1")
    if model.kind == "explicit":
        return as_sym(model.matrix)
    if model.kind not in ("equicorrelation", "spiked"):
        raise ValueError(f"unknown covariance model {model.kind!r}")
    c = float(model.c)
    # Equicorrelation eigenvalues are 1 + (p-1)c and 1 - c.
    lower = -1.0 / (p - 1) if p > 1 else -np.inf
    if not (lower < c <= 1.0):
        raise ValueError(f"equicorrelation c={c} is outside ({lower}, 1] for p={p}")
    sigma = np.full((p, p), c)
    np.fill_diagonal(sigma, 1.0)
    if model.kind == "spiked":
        if not 1 <= model.spike_index <= p:
            raise ValueError(f"spike_index {model.spike_index} out of range 1..{p}")
        if model.spike_value <= 0:
            raise ValueError("spike_value must be positive")
        k = model.spike_index - 1
        sigma[k, k] = model.spike_value
    return as_sym(sigma)


def sample_gaussian(sigma_chol, n: int, rng: RngStream) -> np.ndarray:
    """``n`` samples ``L @ g`` with ``g`` standard normal, as an ``(n, p)`` array."""
    L = np.asarray(sigma_chol, dtype=float)
    if n < 1:
        raise ValueError("n must be >= 1")
    g = rng.standard_normal((n, L.shape[1]))
    return g @ L.T


def sample_dither(lam: float, p: int, n: int, rng: RngStream) -> np.ndarray:
    """``(n, p)`` i.i.d. Uniform[-lam, lam] entries.

    Drawn as ``lam * u`` with ``u`` uniform on [-1, 1], so the same stream
    gives proportional dithers for every ``lam``.
    """
    if not lam > 0:
        raise ValueError(f"dither level must be positive, got {lam}")
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    return lam * rng.uniform(-1.0, 1.0, (n, p))
