"""Discrepancies between a particle ensemble and a target."""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kernels import _as_points
from .targets import EmpiricalTarget

__all__ = ["mmd_squared", "ksd_squared", "w2_exact"]


def _particle_term(K, unbiased):
    n = len(K)
    if not unbiased:
        return K.mean()
    if n < 2:
        raise ValueError("the U-statistic needs at least two particles")
    return (K.sum() - np.trace(K)) / (n * (n - 1))


def mmd_squared(kernel, X, target, unbiased=False):
    """Squared MMD between the empirical measure of ``X`` and ``target``.

    ``target`` may be an array of samples or any target representation.  The
    default is the V-statistic; ``unbiased=True`` drops the diagonal terms.
    For an analytic target the cross and target terms are closed form; for a
    score-only target with a Stein kernel they vanish and the value is the
    squared KSD.
    """
    X = _as_points(X)
    if not hasattr(target, "embedding"):
        target = EmpiricalTarget(target)
    xx = _particle_term(kernel.gram(X), unbiased)
    xy = target.embedding(kernel, X).mean()
    yy = target.self_term(kernel, unbiased=unbiased)
    return float(xx - 2.0 * xy + yy)


def ksd_squared(stein_kernel, X, unbiased=False):
    """Squared kernel Stein discrepancy ``(1/N^2) sum_ij k_pi(x_i, x_j)``."""
    X = _as_points(X)
    return float(_particle_term(stein_kernel.gram(X), unbiased))


def w2_exact(X, Y):
    """Exact 2-Wasserstein distance between two uniform point sets of equal size."""
    X = _as_points(X)
    Y = _as_points(Y)
    if X.shape != Y.shape:
        raise ValueError(f"w2_exact needs point sets of equal shape, got {X.shape} and {Y.shape}")
    with np.errstate(over="ignore"):
        cost = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    if not np.all(np.isfinite(cost)):
        return np.inf
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))
