"""Base kernels with closed-form derivative stacks.

Every kernel exposes a batched interface, :meth:`Kernel.blocks`, which for
point sets ``X`` (N, d) and ``Z`` (P, d) returns

* ``value[i, p]      = k(x_i, z_p)``
* ``grad1[i, p, l]   = d/dx_l k(x_i, z_p)``
* ``grad2[i, p, m]   = d/dz_m k(x_i, z_p)``
* ``cross[i, p, l, m] = d/dx_l d/dz_m k(x_i, z_p)``

Smooth radial kernels are written through a profile ``psi(u)`` of the squared
distance ``u = |x - y|^2``.  To convert to a profile ``rho(t)`` of the plain
distance use ``rho(t) = psi(t**2)``, ``rho'(t) = 2 t psi'(t**2)``.
"""

from typing import NamedTuple, Optional

import numpy as np

from .errors import CapabilityError, SingularityError

__all__ = [
    "DerivativeStack",
    "KernelBlocks",
    "Kernel",
    "GaussianKernel",
    "RieszKernel",
    "PolynomialKernel",
    "FeatureMapKernel",
    "kernel_from_config",
]


class DerivativeStack(NamedTuple):
    value: float
    grad1: np.ndarray
    grad2: np.ndarray
    cross_hessian: np.ndarray


class KernelBlocks(NamedTuple):
    value: np.ndarray
    grad1: Optional[np.ndarray] = None
    grad2: Optional[np.ndarray] = None
    cross: Optional[np.ndarray] = None


def _as_points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected an (n, d) array of points, got shape {X.shape}")
    return X


def _check_pair(x, y, dim=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("kernel arguments must be vectors")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"kernel expects dimension {dim}, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("kernel arguments must be finite")
    return x, y


class Kernel:
    """Base class.  Subclasses implement :meth:`blocks`."""

    #: highest derivative order (per argument, counted jointly) available
    smooth_order = 2
    #: False for kernels that are only conditionally positive definite
    positive_definite = True
    dim = None

    def blocks(self, X, Z, order=0):
        raise NotImplementedError

    def gram(self, X, Z=None):
        X = _as_points(X)
        Z = X if Z is None else _as_points(Z)
        return self.blocks(X, Z, order=0).value

    def __call__(self, x, y):
        x, y = _check_pair(x, y, self.dim)
        return float(self.blocks(x[None], y[None], order=0).value[0, 0])

    def derivative_stack(self, x, y):
        x, y = _check_pair(x, y, self.dim)
        if self.smooth_order < 2:
            raise CapabilityError(f"{type(self).__name__} has no mixed second derivatives")
        b = self.blocks(x[None], y[None], order=2)
        return DerivativeStack(float(b.value[0, 0]), b.grad1[0, 0], b.grad2[0, 0], b.cross[0, 0])

    def config(self):
        raise NotImplementedError


class _RadialKernel(Kernel):
    """Kernel of the form ``psi(|x - y|^2)``."""

    def profile(self, u, max_order=0):
        """Return ``[psi(u), psi'(u), ..., psi^(max_order)(u)]`` stacked on axis 0."""
        raise NotImplementedError

    def radial_profile_derivatives(self, u, max_order=0):
        if max_order > self.smooth_order:
            raise CapabilityError(
                f"{type(self).__name__} provides profile derivatives up to order "
                f"{self.smooth_order}, requested {max_order}"
            )
        return self.profile(np.asarray(u, dtype=float), max_order)

    def blocks(self, X, Z, order=0):
        X = _as_points(X)
        Z = _as_points(Z)
        if X.shape[1] != Z.shape[1]:
            raise ValueError("dimension mismatch between point sets")
        delta = X[:, None, :] - Z[None, :, :]
        u = np.einsum("ipl,ipl->ip", delta, delta)
        psi = self.profile(u, min(order, 2))
        if order == 0:
            return KernelBlocks(psi[0])
        g1 = 2.0 * psi[1][..., None] * delta
        if order == 1:
            return KernelBlocks(psi[0], g1, -g1)
        d = X.shape[1]
        cross = -4.0 * psi[2][..., None, None] * delta[..., :, None] * delta[..., None, :]
        cross -= 2.0 * psi[1][..., None, None] * np.eye(d)
        return KernelBlocks(psi[0], g1, -g1, cross)


class GaussianKernel(_RadialKernel):
    """``k(x, y) = exp(-|x - y|^2 / (2 sigma^2))``."""

    smooth_order = 4

    def __init__(self, lengthscale=1.0):
        if not lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        self.lengthscale = float(lengthscale)

    def profile(self, u, max_order=0):
        rate = -0.5 / self.lengthscale**2
        out = np.empty((max_order + 1,) + np.shape(u))
        e = out[0, ...]
        np.multiply(u, rate, out=e)
        np.exp(e, out=e)
        for j in range(1, max_order + 1):
            np.multiply(e, rate**j, out=out[j, ...])
        return out

    def config(self):
        return {"kind": "gaussian", "lengthscale": self.lengthscale}

    def __repr__(self):
        return f"GaussianKernel(lengthscale={self.lengthscale!r})"


class RieszKernel(_RadialKernel):
    """Riesz kernel ``k(x, y) = -|x - y|^r`` for ``r`` in (0, 2].

    The kernel is singular at ``x == y``.  In :meth:`blocks`, coincident pairs
    get ``grad1 = grad2 = 0`` and a zero cross-Hessian block; the scalar
    :meth:`derivative_stack` raises :class:`SingularityError` instead.
    """

    positive_definite = False
    smooth_order = 2

    def __init__(self, exponent=1.0):
        if not 0 < exponent <= 2:
            raise ValueError("Riesz exponent must lie in (0, 2]")
        self.exponent = float(exponent)

    def profile(self, u, max_order=0):
        h = 0.5 * self.exponent
        out = np.empty((max_order + 1,) + np.shape(u))
        coincident = u == 0
        safe = np.where(coincident, 1.0, u)
        coef = -1.0
        for j in range(max_order + 1):
            out[j] = coef * safe ** (h - j)
            coef *= h - j
        out[0] = np.where(coincident, 0.0, out[0])
        if max_order >= 1:
            # diagonal convention: derivatives are zeroed where the points coincide
            out[1:] = np.where(coincident, 0.0, out[1:])
        return out

    def derivative_stack(self, x, y):
        x, y = _check_pair(x, y)
        if np.array_equal(x, y):
            raise SingularityError("Riesz kernel derivatives are singular at x == y")
        return super().derivative_stack(x, y)

    def config(self):
        return {"kind": "riesz", "exponent": self.exponent}

    def __repr__(self):
        return f"RieszKernel(exponent={self.exponent!r})"


class PolynomialKernel(Kernel):
    """Quadratic polynomial kernel ``k(x, y) = (x^T y + c)^2``."""

    smooth_order = 4

    def __init__(self, offset=1.0):
        if not offset > 0:
            raise ValueError("offset must be positive")
        self.offset = float(offset)

    def blocks(self, X, Z, order=0):
        X = _as_points(X)
        Z = _as_points(Z)
        if X.shape[1] != Z.shape[1]:
            raise ValueError("dimension mismatch between point sets")
        a = X @ Z.T + self.offset
        if order == 0:
            return KernelBlocks(a**2)
        g1 = 2.0 * a[..., None] * Z[None, :, :]
        g2 = 2.0 * a[..., None] * X[:, None, :]
        if order == 1:
            return KernelBlocks(a**2, g1, g2)
        d = X.shape[1]
        # d/dz_m [2 a z_l] = 2 x_m z_l + 2 a delta_lm
        cross = 2.0 * Z[None, :, :, None] * X[:, None, None, :]
        cross += 2.0 * a[..., None, None] * np.eye(d)
        return KernelBlocks(a**2, g1, g2, cross)

    def features(self, X):
        """Explicit feature map with ``k(x, y) = features(x) @ features(y)``."""
        X = _as_points(X)
        n, d = X.shape
        c = self.offset
        iu, ju = np.triu_indices(d, k=1)
        cols = [
            np.full((n, 1), c),
            np.sqrt(2.0 * c) * X,
            X**2,
            np.sqrt(2.0) * X[:, iu] * X[:, ju],
        ]
        return np.hstack(cols)

    def config(self):
        return {"kind": "polynomial", "offset": self.offset}

    def __repr__(self):
        return f"PolynomialKernel(offset={self.offset!r})"


def _relu_gate(a):
    # ReLU subgradient at 0 is taken to be 0
    return (a > 0).astype(float)


class FeatureMapKernel(Kernel):
    r"""Mean-field network kernel ``k(t, t') = (1/B) sum_b psi(z_b, t) psi(z_b, t')``.

    The network is ``psi(z, t) = G(b1 + W1 * relu(W0 . z + b0))`` with
    ``G(x) = exp(-x^2 / 4)`` and a single hidden unit.  Parameters are packed as
    ``t = (b1, W1, b0, W0)`` so that ``dim = 3 + probes.shape[1]``.

    Parameters
    ----------
    probes : array_like, shape (B, p)
        Data points ``z_b`` over which the kernel averages.
    """

    smooth_order = 2

    def __init__(self, probes):
        probes = np.asarray(probes, dtype=float)
        if probes.ndim != 2 or probes.shape[0] < 1:
            raise ValueError("probes must be a non-empty (B, p) array")
        self.probes = probes
        self.dim = probes.shape[1] + 3

    @property
    def feature_dim(self):
        return self.probes.shape[0]

    def _check_params(self, X):
        X = _as_points(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected parameter vectors of length {self.dim}, got {X.shape[1]}")
        return X

    def _forward(self, X):
        b1, w1, b0 = X[:, 0:1], X[:, 1:2], X[:, 2:3]
        w0 = X[:, 3:]
        pre = w0 @ self.probes.T + b0  # (N, B)
        hidden = np.maximum(pre, 0.0)
        out = b1 + w1 * hidden
        g = np.exp(-0.25 * out**2)
        return pre, hidden, out, g

    def psi(self, theta):
        """Network outputs ``psi(z_b, theta)`` (B,) and their Jacobian (dim, B)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.ndim != 1 or theta.shape[0] != self.dim:
            raise ValueError(f"expected a parameter vector of length {self.dim}")
        values = self.network(theta[None])[0]
        jac = self.network_jacobian(theta[None])[0]
        return values, jac.T

    def network(self, X):
        """``psi(z_b, x_i)`` for all particles and probes, shape (N, B)."""
        X = self._check_params(X)
        return self._forward(X)[3]

    def network_jacobian(self, X):
        """``d psi(z_b, x_i) / d x_i``, shape (N, B, dim)."""
        X = self._check_params(X)
        pre, hidden, out, g = self._forward(X)
        dout = -0.5 * out * g  # G'(o) = -(o/2) G(o)
        gate = _relu_gate(pre) * X[:, 1:2]
        jac = np.empty(pre.shape + (self.dim,))
        jac[..., 0] = dout
        jac[..., 1] = dout * hidden
        jac[..., 2] = dout * gate
        jac[..., 3:] = (dout * gate)[..., None] * self.probes[None, :, :]
        return jac

    def features(self, X):
        return self.network(X) / np.sqrt(self.feature_dim)

    def feature_jacobian(self, X):
        return self.network_jacobian(X) / np.sqrt(self.feature_dim)

    def blocks(self, X, Z, order=0):
        fx = self.features(X)
        fz = self.features(Z)
        value = fx @ fz.T
        if order == 0:
            return KernelBlocks(value)
        jx = self.feature_jacobian(X)
        jz = self.feature_jacobian(Z)
        g1 = np.einsum("ibl,pb->ipl", jx, fz)
        g2 = np.einsum("ib,pbm->ipm", fx, jz)
        if order == 1:
            return KernelBlocks(value, g1, g2)
        cross = np.einsum("ibl,pbm->iplm", jx, jz)
        return KernelBlocks(value, g1, g2, cross)

    def config(self):
        return {"kind": "feature", "num_probes": self.feature_dim, "probe_dim": self.probes.shape[1]}

    def __repr__(self):
        return f"FeatureMapKernel(B={self.feature_dim}, dim={self.dim})"


def kernel_from_config(spec, probes=None):
    """Build a kernel from ``{"kind": ..., parameters...}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "gaussian":
        return GaussianKernel(spec.get("lengthscale", 1.0))
    if kind == "riesz":
        return RieszKernel(spec.get("exponent", 1.0))
    if kind == "polynomial":
        return PolynomialKernel(spec.get("offset", 1.0))
    if kind == "feature":
        if probes is None:
            raise ValueError("feature kernels need probe points")
        return FeatureMapKernel(probes)
    raise ValueError(f"unknown kernel kind {kind!r}")
