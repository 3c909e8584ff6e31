"""Finite-difference oracles shared by the test modules."""

import numpy as np

STEP = 1e-5


def central_grad(f, x, h=STEP):
    """Central-difference gradient of a scalar function at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_jacobian(f, x, h=STEP):
    """Rows ``J[:, i] = d f / d x_i`` for a vector-valued ``f``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(approx, exact, floor=1e-6):
    """Entrywise relative error with an absolute floor for near-zero entries."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return np.max(np.abs(approx - exact) / np.maximum(np.abs(exact), floor))


def stack_fd_errors(kernel, x, y):
    """Max relative errors of ``grad1``, ``grad2`` and ``cross_hessian`` against differences.

    ``grad1``/``grad2`` are differenced from kernel values; the cross-Hessian
    ``d_{1,i} d_{2,j} k`` from the analytic ``grad1`` in ``y``.
    """
    st = kernel.derivative_stack(x, y)
    g1 = central_grad(lambda a: kernel(a, y), x)
    g2 = central_grad(lambda b: kernel(x, b), y)
    cross = central_jacobian(lambda b: kernel.derivative_stack(x, b).grad1, y)
    return rel_err(st.grad1, g1), rel_err(st.grad2, g2), rel_err(st.cross_hessian, cross)
