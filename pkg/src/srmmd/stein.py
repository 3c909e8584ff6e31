"""Langevin Stein kernels built from a radial base kernel and a score model.

    k_pi(x, y) = s(x).s(y) k(x, y) + s(x).grad_y k(x, y)
                 + grad_x k(x, y).s(y) + div_x grad_y k(x, y)

A score model is any object with ``score(X) -> (N, d)`` and
``jacobian(X) -> (N, d, d)`` where ``jacobian(X)[n, a, b] = d s_a / d x_b``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _stein_jit
from .errors import CapabilityError
from .kernels import Kernel, KernelBlocks, _as_points, _RadialKernel

__all__ = [
    "CallableScore",
    "SteinKernel",
    "StatTestResult",
    "GrowthReport",
    "stein_identity_statistic",
    "growth_diagnostics",
]


class CallableScore:
    """Wrap a pair of vectorized functions as a score model."""

    def __init__(self, score, jacobian, dim=None):
        self._score = score
        self._jacobian = jacobian
        self.dim = dim

    def score(self, X):
        return np.asarray(self._score(_as_points(X)), dtype=float)

    def jacobian(self, X):
        return np.asarray(self._jacobian(_as_points(X)), dtype=float)


class SteinKernel(Kernel):
    """Langevin Stein kernel over a smooth radial base kernel.

    Values need the base profile up to its second derivative, gradients up to
    the third and the mixed second derivatives up to the fourth.  Only the
    score and its Jacobian are needed on each side.
    """

    def __init__(self, base, score):
        if not isinstance(base, _RadialKernel):
            raise CapabilityError("the Stein construction needs a radial base kernel")
        if base.smooth_order < 2:
            raise CapabilityError("the base kernel must be twice differentiable")
        self.base = base
        self.score_model = score
        self.smooth_order = base.smooth_order - 2
        self.dim = getattr(score, "dim", None)
        self.use_jit = _stein_jit.AVAILABLE

    def _score_terms(self, X, with_jacobian):
        s = self.score_model.score(X)
        J = self.score_model.jacobian(X) if with_jacobian else None
        return s, J

    def blocks(self, X, Z, order=0):
        if order > self.smooth_order:
            raise CapabilityError(
                f"Stein kernel over {self.base!r} supports derivative order {self.smooth_order}"
            )
        same = Z is X
        X = _as_points(X)
        Z = X if same else _as_points(Z)
        if X.shape[1] != Z.shape[1]:
            raise ValueError("dimension mismatch between point sets")
        sx, Jx = self._score_terms(X, order >= 1)
        sy, Jy = (sx, Jx) if same else self._score_terms(Z, order >= 1)
        if self.use_jit:
            return KernelBlocks(*_stein_jit.stein_blocks(self.base, X, Z, sx, Jx, sy, Jy, order))
        return self._blocks_numpy(X, Z, sx, Jx, sy, Jy, order)

    def _blocks_numpy(self, X, Z, sx, Jx, sy, Jy, order):
        d = X.shape[1]
        delta = X[:, None, :] - Z[None, :, :]
        u = np.einsum("npa,npa->np", delta, delta)
        p = self.base.profile(u, order + 2)
        S = sx @ sy.T
        dsx = np.einsum("npa,na->np", delta, sx)
        dsy = np.einsum("npa,pa->np", delta, sy)
        ds = dsx - dsy
        value = S * p[0] - 2.0 * p[1] * ds - 2.0 * d * p[1] - 4.0 * u * p[2]
        if order == 0:
            return KernelBlocks(value)

        # tau(u) = -2 d psi' - 4 u psi'' is the trace term
        tau1 = -2.0 * (d + 2) * p[2] - 4.0 * u * p[3]
        # batched matmuls; einsum is far slower for these small inner dimensions
        Jx_sy = np.matmul(sy[None, :, :], Jx)
        Jy_sx = np.matmul(sx[None, :, :], Jy).transpose(1, 0, 2)
        Jx_d = np.matmul(delta, Jx)
        Jy_d = np.matmul(delta.transpose(1, 0, 2), Jy).transpose(1, 0, 2)
        sdiff = sx[:, None, :] - sy[None, :, :]

        radial = (2.0 * p[1] * S - 4.0 * p[2] * ds + 2.0 * tau1)[..., None] * delta
        p0 = p[0][..., None]
        p1 = p[1][..., None]
        g1 = p0 * Jx_sy + radial - 2.0 * p1 * (sdiff + Jx_d)
        g2 = p0 * Jy_sx - radial + 2.0 * p1 * (sdiff + Jy_d)
        if order == 1:
            return KernelBlocks(value, g1, g2)

        tau2 = -2.0 * (d + 4) * p[3] - 4.0 * u * p[4]
        p2 = p[2][..., None]
        c_outer = -4.0 * p[2] * S + 8.0 * p[3] * ds - 4.0 * tau2
        c_eye = -2.0 * p[1] * S + 4.0 * p[2] * ds - 2.0 * tau1
        left = -2.0 * p1 * Jx_sy + 4.0 * p2 * (sdiff + Jx_d)
        right = 2.0 * p1 * Jy_sx + 4.0 * p2 * (sdiff + Jy_d)
        n, m = len(X), len(Z)
        JxJy = np.swapaxes(Jx, 1, 2).reshape(n * d, d) @ Jy.transpose(1, 0, 2).reshape(d, m * d)
        cross = JxJy.reshape(n, d, m, d).transpose(0, 2, 1, 3) * p[0][..., None, None]
        cross += 2.0 * p[1][..., None, None] * (
            np.swapaxes(Jx, 1, 2)[:, None, :, :] + Jy[None, :, :, :]
        )
        cross += (c_outer[..., None] * delta + left)[..., :, None] * delta[..., None, :]
        cross += delta[..., :, None] * right[..., None, :]
        cross += c_eye[..., None, None] * np.eye(d)
        return KernelBlocks(value, g1, g2, cross)

    def config(self):
        return {"kind": "stein", "base": self.base.config()}

    def __repr__(self):
        return f"SteinKernel(base={self.base!r})"


@dataclass
class StatTestResult:
    mean: float
    stderr: Optional[float]
    num_samples: int

    @property
    def passed(self):
        """``|mean| <= 4 stderr``; ``None`` when the standard error is unavailable."""
        if self.stderr is None:
            return None
        return abs(self.mean) <= 4.0 * self.stderr


def stein_identity_statistic(stein_kernel, sampler, y, num_samples, seed=0):
    """Monte-Carlo estimate of ``E_{X ~ pi} k_pi(X, y)``, which should vanish.

    Parameters
    ----------
    sampler : callable
        ``sampler(n, rng)`` returning ``n`` i.i.d. draws from the target.
    """
    rng = np.random.default_rng(seed)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    samples = _as_points(sampler(int(num_samples), rng))
    vals = stein_kernel.blocks(samples, y[None, :], order=0).value[:, 0]
    mean = float(vals.mean())
    if vals.size < 2:
        return StatTestResult(mean, None, int(vals.size))
    return StatTestResult(mean, float(vals.std(ddof=1) / np.sqrt(vals.size)), int(vals.size))


@dataclass
class GrowthReport:
    score_ratio: float
    jacobian_ratio: float
    radius: float
    num_points: int


def growth_diagnostics(score, radius, grid_size, dim=None, seed=0):
    """Empirical linear-growth constants of a score model over the ball ``B(0, radius)``.

    Reports ``sup |s(x)| / (1 + |x|)`` and ``sup |Js(x)|_F / (1 + |x|)``.  In
    up to three dimensions a Cartesian grid with ``grid_size`` nodes per axis
    is used; beyond that, ``grid_size`` shells of random directions.
    """
    dim = dim if dim is not None else getattr(score, "dim", None)
    if dim is None:
        raise ValueError("dimension could not be inferred; pass dim")
    if dim <= 3:
        axis = np.linspace(-radius, radius, grid_size)
        pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), -1).reshape(-1, dim)
        pts = pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((grid_size * 8, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = np.repeat(np.linspace(0.0, radius, grid_size), 8)
        pts = dirs * radii[:, None]
    norms = np.linalg.norm(pts, axis=1)
    s = score.score(pts)
    J = score.jacobian(pts)
    s_ratio = np.linalg.norm(s, axis=1) / (1.0 + norms)
    j_ratio = np.linalg.norm(J.reshape(len(pts), -1), axis=1) / (1.0 + norms)
    return GrowthReport(float(s_ratio.max()), float(j_ratio.max()), float(radius), len(pts))
