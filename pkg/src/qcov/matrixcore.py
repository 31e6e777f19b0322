"""Dense symmetric-matrix helpers.

Matrices are plain ``numpy.ndarray`` objects. A "symmetric" matrix is one
that went through :func:`as_sym`, which copies the upper triangle onto the
lower one so ``a[i, j] == a[j, i]`` holds bit-for-bit, and marks the array
read-only.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = [
    "NumericalError",
    "ConvergenceError",
    "NotPSDError",
    "as_sym",
    "as_mask",
    "hadamard",
    "elementwise_map",
    "matmul",
    "sym_eigen",
    "operator_norm",
    "max_norm",
    "one_to_two_norm",
    "frobenius_norm",
    "psd_project",
    "cholesky",
]

ARCSIN_CLAMP = 1e-12
JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100
CHOLESKY_TOL = 1e-12


class NumericalError(ArithmeticError):
    """Base class for numerical failures (bad domain, no convergence, ...)."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class NotPSDError(NumericalError):
    pass


def _square(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    return a


def as_sym(a, rtol: float | None = 1e-10) -> np.ndarray:
    """Return a read-only, exactly symmetric copy of ``a``.

    The upper triangle is authoritative. If ``rtol`` is given, ``a`` must be
    symmetric to within ``rtol * (1 + max|a|)`` or a ``ValueError`` is raised;
    pass ``rtol=None`` to skip that check.
    """
    a = _square(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if rtol is not None:
        asym = np.max(np.abs(a - a.T))
        if asym > rtol * (1.0 + np.max(np.abs(a))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    upper = np.triu(a)
    out = upper + np.triu(a, 1).T
    out.setflags(write=False)
    return out


def as_mask(m) -> np.ndarray:
    """Validate a mask: symmetric with every entry in [0, 1]."""
    m = as_sym(m)
    if np.any(m < 0.0) or np.any(m > 1.0):
        raise ValueError("mask entries must lie in [0, 1]")
    return m


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def hadamard(a, b) -> np.ndarray:
    """Entrywise product; symmetric inputs give a symmetric result."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _same_shape(a, b)
    out = a * b
    out.setflags(write=False)
    return out


def _sqrt1m_sq(x):
    return np.sqrt(np.clip(1.0 - x * x, 0.0, None))


def _clamped_arcsin(x):
    bad = np.abs(x) > 1.0 + ARCSIN_CLAMP
    if np.any(bad):
        worst = float(np.max(np.abs(x)))
        raise NumericalError(f"arcsin argument out of domain: |x| = {worst!r}")
    return np.arcsin(np.clip(x, -1.0, 1.0))


_ELEMENTWISE = {
    "sin": np.sin,
    "cos": np.cos,
    "arcsin": _clamped_arcsin,
    "sqrt1m_sq": _sqrt1m_sq,
}


def elementwise_map(a, f: str) -> np.ndarray:
    """Apply one of ``sin``, ``cos``, ``arcsin``, ``sqrt1m_sq`` entrywise.

    ``arcsin`` accepts values up to ``1 + 1e-12`` in magnitude (clamped to
    +/-1); anything further out raises :class:`NumericalError`.
    """
    try:
        fn = _ELEMENTWISE[f]
    except KeyError:
        raise ValueError(f"unknown elementwise function {f!r}") from None
    out = fn(np.asarray(a, dtype=float))
    out.setflags(write=False)
    return out


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


@njit(cache=True, nogil=True)
def _jacobi(a, tol, max_sweeps, want_vectors):
    # Cyclic-by-row Jacobi; returns (diag, V, residual, sweeps).
    p = a.shape[0]
    a = a.copy()
    v = np.eye(p)
    fro = 0.0
    for i in range(p):
        for j in range(p):
            fro += a[i, j] * a[i, j]
    target = tol * math.sqrt(fro)
    off = 0.0
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(p):
            for j in range(i + 1, p):
                off += 2.0 * a[i, j] * a[i, j]
        off = math.sqrt(off)
        if off <= target:
            return np.diag(a).copy(), v, off, sweep
        if sweep == max_sweeps:
            break
        for k in range(p - 1):
            for l in range(k + 1, p):
                akl = a[k, l]
                if akl == 0.0:
                    continue
                theta = (a[l, l] - a[k, k]) / (2.0 * akl)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for i in range(p):
                    aik = a[i, k]
                    ail = a[i, l]
                    a[i, k] = c * aik - s * ail
                    a[i, l] = s * aik + c * ail
                for i in range(p):
                    aki = a[k, i]
                    ali = a[l, i]
                    a[k, i] = c * aki - s * ali
                    a[l, i] = s * aki + c * ali
                a[k, l] = 0.0
                a[l, k] = 0.0
                if want_vectors:
                    for i in range(p):
                        vik = v[i, k]
                        vil = v[i, l]
                        v[i, k] = c * vik - s * vil
                        v[i, l] = s * vik + c * vil
    return np.diag(a).copy(), v, off, -1


def sym_eigen(a, vectors: bool = True):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` sorted in descending order and
    ``a = V @ diag(w) @ V.T``; ``V`` is ``None`` when ``vectors`` is false.
    Converges when the off-diagonal Frobenius mass drops to
    ``1e-14 * ||a||_F``; raises :class:`ConvergenceError` after 100 sweeps.
    """
    a = as_sym(a)
    w, v, off, sweeps = _jacobi(np.array(a), JACOBI_TOL, JACOBI_MAX_SWEEPS, vectors)
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps", off
        )
    order = np.argsort(-w, kind="stable")
    w = w[order]
    if not vectors:
        return w, None
    return w, v[:, order]


def _is_exactly_symmetric(a: np.ndarray) -> bool:
    return a.ndim == 2 and a.shape[0] == a.shape[1] and np.array_equal(a, a.T)


def operator_norm(a) -> float:
    """Largest singular value.

    Symmetric input: max |eigenvalue|. Otherwise ``sqrt(||a.T @ a||)``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty matrix, got shape {a.shape}")
    if _is_exactly_symmetric(a):
        w, _ = sym_eigen(a, vectors=False)
        return float(max(abs(w[0]), abs(w[-1])))
    w, _ = sym_eigen(as_sym(a.T @ a, rtol=None), vectors=False)
    return math.sqrt(max(float(w[0]), 0.0))


def max_norm(a) -> float:
    return float(np.max(np.abs(a)))


def one_to_two_norm(a) -> float:
    """Maximum Euclidean norm over the columns."""
    a = np.asarray(a, dtype=float)
    return float(np.max(np.sqrt(np.sum(a * a, axis=0))))


def frobenius_norm(a) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


def psd_project(a) -> np.ndarray:
    """Clamp negative eigenvalues to zero and rebuild the matrix."""
    w, v = sym_eigen(a)
    w = np.maximum(w, 0.0)
    return as_sym((v * w) @ v.T, rtol=None)


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Rank-deficient input is accepted: a pivot in ``[-1e-12, 0]`` (relative to
    the largest diagonal entry) zeroes its column. A pivot below that raises
    :class:`NotPSDError`.
    """
    a = as_sym(a)
    p = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(a)))))
    L = np.zeros((p, p))
    for j in range(p):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -CHOLESKY_TOL * scale:
            raise NotPSDError(f"matrix is not positive semidefinite (pivot {pivot:.3e} at {j})")
        if pivot <= CHOLESKY_TOL * scale:
            continue
        d = math.sqrt(pivot)
        L[j, j] = d
        L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / d
    return L
