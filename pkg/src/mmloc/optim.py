"""Numerical helpers shared by the least-squares solvers."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
from scipy import linalg

ResidualFn = Callable[[np.ndarray], np.ndarray]


def central_difference_jacobian(fun: ResidualFn, x: np.ndarray, step: float = 1e-7) -> np.ndarray:
    """Jacobian of ``fun`` at ``x`` by central differences with an absolute step."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = step
        jac[:, j] = (np.asarray(fun(x + dx)) - np.asarray(fun(x - dx))) / (2.0 * step)
    return jac


def jacobian_for(fun: ResidualFn, step: float) -> Callable[[np.ndarray], np.ndarray]:
    """Bind ``fun`` into a callable suitable for ``scipy.optimize.least_squares(jac=...)``."""

    def jac(x: np.ndarray, *_: object) -> np.ndarray:
        return central_difference_jacobian(fun, x, step)

    return jac


def whitening_matrix(cov: np.ndarray, floor: float = 1e-300) -> np.ndarray:
    """Return ``W`` with ``W.T @ W == inv(cov)`` so that ``||W r||^2`` is the Mahalanobis norm.

    Uses a Cholesky factor when ``cov`` is positive definite and falls back to an
    eigen-decomposition with eigenvalues clipped at ``floor`` otherwise.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        lower = linalg.cholesky(cov, lower=True)
        return linalg.solve_triangular(lower, np.eye(cov.shape[0]), lower=True)
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        vals = np.maximum(vals, floor)
        return (vecs / np.sqrt(vals)).T


def matrix_sqrt(cov: np.ndarray) -> np.ndarray:
    """Square-root factor ``S`` with ``S @ S.T == cov`` for PSD ``cov`` (zero allowed)."""
    cov = np.asarray(cov, dtype=float)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def unscented_sigma_points(
    mean: np.ndarray, cov: np.ndarray, lam: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Standard 2n+1 sigma points and weights for ``N(mean, cov)``.

    ``lam`` defaults to ``3 - n``. Row ``0`` is the mean, rows ``1..n`` are
    ``mean + S[:, i]`` and rows ``n+1..2n`` are ``mean - S[:, i]`` with
    ``S = sqrt((n + lam) * cov)``.
    """
    mean = np.asarray(mean, dtype=float)
    n = mean.size
    if lam is None:
        lam = 3.0 - n
    spread = matrix_sqrt((n + lam) * np.asarray(cov, dtype=float))
    points = np.empty((2 * n + 1, n))
    points[0] = mean
    points[1 : n + 1] = mean + spread.T
    points[n + 1 :] = mean - spread.T
    weights = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    weights[0] = lam / (n + lam)
    return points, weights
