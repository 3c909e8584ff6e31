"""Compiled pairwise assembly for Langevin Stein kernel blocks.

Mirrors ``SteinKernel._blocks_numpy`` term by term; the numpy version stays
as the reference implementation and as the fallback when numba is missing.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _squared_distances(X, Z):
    n, d = X.shape
    m = Z.shape[0]
    u = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for a in range(d):
                t = X[i, a] - Z[j, a]
                acc += t * t
            u[i, j] = acc
    return u


def _stein_pairs(X, Z, sx, Jx, sy, Jy, prof, order, value, g1, g2, cross):
    n, d = X.shape
    m = Z.shape[0]
    delta = np.empty(d)
    Jx_sy = np.empty(d)
    Jy_sx = np.empty(d)
    Jx_d = np.empty(d)
    Jy_d = np.empty(d)
    sdiff = np.empty(d)
    left = np.empty(d)
    right = np.empty(d)
    for i in range(n):
        for j in range(m):
            u = 0.0
            S = 0.0
            dsx = 0.0
            dsy = 0.0
            for a in range(d):
                t = X[i, a] - Z[j, a]
                delta[a] = t
                u += t * t
                S += sx[i, a] * sy[j, a]
                dsx += t * sx[i, a]
                dsy += t * sy[j, a]
            ds = dsx - dsy
            p0 = prof[0, i, j]
            p1 = prof[1, i, j]
            p2 = prof[2, i, j]
            value[i, j] = S * p0 - 2.0 * p1 * ds - 2.0 * d * p1 - 4.0 * u * p2
            if order == 0:
                continue
            p3 = prof[3, i, j]
            tau1 = -2.0 * (d + 2) * p2 - 4.0 * u * p3
            rc = 2.0 * p1 * S - 4.0 * p2 * ds + 2.0 * tau1
            for c in range(d):
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                a4 = 0.0
                for a in range(d):
                    a1 += Jx[i, a, c] * sy[j, a]
                    a2 += Jy[j, a, c] * sx[i, a]
                    a3 += Jx[i, a, c] * delta[a]
                    a4 += Jy[j, a, c] * delta[a]
                Jx_sy[c] = a1
                Jy_sx[c] = a2
                Jx_d[c] = a3
                Jy_d[c] = a4
                sdiff[c] = sx[i, c] - sy[j, c]
                g1[i, j, c] = p0 * a1 + rc * delta[c] - 2.0 * p1 * (sdiff[c] + a3)
                g2[i, j, c] = p0 * a2 - rc * delta[c] + 2.0 * p1 * (sdiff[c] + a4)
            if order == 1:
                continue
            p4 = prof[4, i, j]
            tau2 = -2.0 * (d + 4) * p3 - 4.0 * u * p4
            c_outer = -4.0 * p2 * S + 8.0 * p3 * ds - 4.0 * tau2
            c_eye = -2.0 * p1 * S + 4.0 * p2 * ds - 2.0 * tau1
            for c in range(d):
                left[c] = -2.0 * p1 * Jx_sy[c] + 4.0 * p2 * (sdiff[c] + Jx_d[c]) + c_outer * delta[c]
                right[c] = 2.0 * p1 * Jy_sx[c] + 4.0 * p2 * (sdiff[c] + Jy_d[c])
            for r in range(d):
                for c in range(d):
                    jj = 0.0
                    for a in range(d):
                        jj += Jx[i, a, r] * Jy[j, a, c]
                    h = p0 * jj + 2.0 * p1 * (Jx[i, c, r] + Jy[j, r, c])
                    h += left[r] * delta[c] + delta[r] * right[c]
                    if r == c:
                        h += c_eye
                    cross[i, j, r, c] = h


if njit is not None:
    _squared_distances = njit(cache=True)(_squared_distances)
    _stein_pairs = njit(cache=True)(_stein_pairs)

AVAILABLE = njit is not None


def stein_blocks(base, X, Z, sx, Jx, sy, Jy, order):
    n, d = X.shape
    m = Z.shape[0]
    u = _squared_distances(X, Z)
    prof = np.ascontiguousarray(base.profile(u, order + 2))
    if order == 0:
        # dummies keep a single compiled signature
        Jx = Jy = np.zeros((1, d, d))
    value = np.empty((n, m))
    g1 = np.empty((n, m, d)) if order >= 1 else np.empty((1, 1, d))
    g2 = np.empty((n, m, d)) if order >= 1 else np.empty((1, 1, d))
    cross = np.empty((n, m, d, d)) if order >= 2 else np.empty((1, 1, d, d))
    _stein_pairs(X, Z, sx, np.ascontiguousarray(Jx), sy, np.ascontiguousarray(Jy),
                 prof, order, value, g1, g2, cross)
    return value, (g1 if order >= 1 else None), (g2 if order >= 1 else None), (
        cross if order >= 2 else None)
