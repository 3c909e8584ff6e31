"""Regularized witness functions on a particle ensemble.

For particles ``X`` (N, d), regularization ``lam`` and a target ``pi`` the
gradient-regularized witness is

    f(z) = (1/lam) [ mean_i k(x_i, z) - E_pi k(Y, z) - D_X(z) . c ]
    c    = (H_XX + N lam I)^{-1} r,   r = D_XX 1 / N - E_pi D_X(Y)

with ``D_XX[(i,l), j] = d_{1,l} k(x_i, x_j)`` and
``H_XX[(i,l), (j,m)] = d_{1,l} d_{2,m} k(x_i, x_j)``.  The flattened index
``(i, l)`` is ``i * d + l`` throughout (particle-major).

The hybrid witness adds an L2(mu) penalty with weight ``1 - alpha`` and
solves an ``(N + N d)`` block system instead.
"""

import logging
import struct

import numpy as np
import scipy.linalg

from .errors import CapabilityError, NumericalError
from .kernels import PolynomialKernel, _as_points

__all__ = [
    "WitnessSystem",
    "HybridWitnessSystem",
    "FeatureWitnessSystem",
    "assemble_witness",
    "assemble_hybrid_witness",
    "primal_witness_oracle",
    "solve_regularized",
    "read_witness_dump",
]

log = logging.getLogger(__name__)

_JITTER_START = 1e-10
_JITTER_STOP = 1e-6


def solve_regularized(A, b, allow_indefinite=False):
    """Solve ``A x = b`` for symmetric ``A`` by Cholesky with jitter escalation.

    On factorization failure, ``eps * trace(A) / n`` is added to the diagonal
    for ``eps = 1e-10, 1e-9, ..., 1e-6``.  If all attempts fail, a
    :class:`NumericalError` is raised unless ``allow_indefinite``, in which
    case a symmetric-indefinite (LDL^T) solve is used.
    """
    n = A.shape[0]
    scale = np.trace(A) / n
    eps = 0.0
    while True:
        M = A if eps == 0.0 else A + eps * scale * np.eye(n)
        try:
            factor = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
            return scipy.linalg.cho_solve(factor, b, check_finite=False)
        except np.linalg.LinAlgError:
            eps = _JITTER_START if eps == 0.0 else eps * 10.0
            if eps > _JITTER_STOP * (1 + 1e-9):
                break
    if allow_indefinite:
        log.debug("Cholesky failed after jitter escalation; using an LDL^T solve")
        return scipy.linalg.solve(A, b, assume_a="sym", check_finite=False)
    cond = np.linalg.cond(A) if np.all(np.isfinite(A)) else np.inf
    raise NumericalError(
        f"regularized system of size {n} is not positive definite "
        f"(condition number {cond:.3e})",
        condition=cond,
    )


def _check_reg(reg):
    if not reg > 0:
        raise ValueError("the regularization parameter must be positive")
    return float(reg)


def _flatten_grad1(g1):
    # (N, P, d) -> D[(i, l), p]
    n, p, d = g1.shape
    return g1.transpose(0, 2, 1).reshape(n * d, p)


def _flatten_cross(cross):
    # (N, P, d, d) -> H[(i, l), (p, m)]
    n, p, d, _ = cross.shape
    return cross.transpose(0, 2, 1, 3).reshape(n * d, p * d)


def _uses_features(kernel, rows, method):
    has = hasattr(kernel, "feature_jacobian")
    if method == "dense":
        return False
    if method == "feature":
        if not has:
            raise CapabilityError(f"{kernel!r} has no explicit feature map")
        return True
    return has and rows > kernel.feature_dim


class WitnessSystem:
    """Assembled gradient-regularized witness for one particle ensemble.

    Immutable after construction; evaluation reuses the cached solve.
    """

    def __init__(self, kernel, X, target, reg):
        self.kernel = kernel
        self.particles = X = _as_points(X).copy()
        self.target = target
        self.reg = reg = _check_reg(reg)
        n, d = X.shape
        self._blocks = b = kernel.blocks(X, X, order=2)
        self.D_XX = _flatten_grad1(b.grad1)
        self.H_XX = _flatten_cross(b.cross)
        target_grad = target.embedding_grad(kernel, X)  # E_pi d_1 k(x_i, Y)
        self.r = self.D_XX.mean(1) - target_grad.reshape(-1)
        system = self.H_XX.copy()
        system.flat[:: n * d + 1] += n * reg
        self.coef = solve_regularized(
            system, self.r, allow_indefinite=not getattr(kernel, "positive_definite", True))
        self._system = system

    @property
    def num_particles(self):
        return self.particles.shape[0]

    def residual(self):
        """Relative residual of the cached solve."""
        res = self._system @ self.coef - self.r
        return float(np.linalg.norm(res) / max(np.linalg.norm(self.r), np.finfo(float).tiny))

    def __call__(self, Z):
        Z = _as_points(Z)
        b = self.kernel.blocks(self.particles, Z, order=1)
        n, d = self.particles.shape
        corr = np.einsum("npl,nl->p", b.grad1, self.coef.reshape(n, d))
        return (b.value.mean(0) - self.target.embedding(self.kernel, Z) - corr) / self.reg

    def evaluate(self, z):
        return float(self(np.atleast_1d(z)[None, :])[0])

    def grad(self, Z):
        """Witness gradient at query points ``Z`` (P, d)."""
        Z = _as_points(Z)
        b = self.kernel.blocks(self.particles, Z, order=2)
        n, d = self.particles.shape
        corr = np.einsum("nplm,nl->pm", b.cross, self.coef.reshape(n, d))
        return (b.grad2.mean(0) - self.target.embedding_grad(self.kernel, Z) - corr) / self.reg

    def grad_at_particles(self):
        """Witness gradient at the particles themselves, reusing assembled blocks."""
        n, d = self.particles.shape
        corr = (self.coef @ self.H_XX).reshape(n, d)
        tgt = self.target.embedding_grad(self.kernel, self.particles)
        return (self._blocks.grad2.mean(0) - tgt - corr) / self.reg

    def dump(self, path):
        """Write ``(D_XX, H_XX, r, coef)`` to a flat little-endian binary file.

        Layout: int64 N, int64 d, then float64 arrays in row-major order:
        D_XX (N d x N), H_XX (N d x N d), r (N d), coef (N d).
        """
        n, d = self.particles.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qq", n, d))
            for arr in (self.D_XX, self.H_XX, self.r, self.coef):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_witness_dump(path):
    """Inverse of :meth:`WitnessSystem.dump`; returns a dict of arrays."""
    with open(path, "rb") as fh:
        raw = fh.read()
    n, d = struct.unpack("<qq", raw[:16])
    data = np.frombuffer(raw[16:], dtype="<f8")
    nd = n * d
    sizes = {"D_XX": (nd, n), "H_XX": (nd, nd), "r": (nd,), "coef": (nd,)}
    out, pos = {}, 0
    for name, shape in sizes.items():
        size = int(np.prod(shape))
        out[name] = data[pos:pos + size].reshape(shape).copy()
        pos += size
    if pos != data.size:
        raise ValueError("witness dump has unexpected length")
    return out


class HybridWitnessSystem:
    """Witness penalizing ``alpha |grad f|^2_{L2(mu)} + (1 - alpha) |f|^2_{L2(mu)} + lam |f|_H^2``."""

    def __init__(self, kernel, X, target, reg, alpha):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.kernel = kernel
        self.particles = X = _as_points(X).copy()
        self.target = target
        self.reg = reg = _check_reg(reg)
        self.alpha = alpha = float(alpha)
        n, d = X.shape
        self._blocks = b = kernel.blocks(X, X, order=2)
        self.K_XX = b.value
        self.D_XX = _flatten_grad1(b.grad1)
        self.H_XX = _flatten_cross(b.cross)
        self.g = self.K_XX.mean(1) - target.embedding(kernel, X)
        self.r = self.D_XX.mean(1) - target.embedding_grad(kernel, X).reshape(-1)
        self._wk = np.sqrt(1.0 - alpha)
        self._wd = np.sqrt(alpha)
        off = np.sqrt(alpha * (1.0 - alpha))
        system = np.block([
            [(1.0 - alpha) * self.K_XX, off * self.D_XX.T],
            [off * self.D_XX, alpha * self.H_XX],
        ])
        system[np.diag_indices_from(system)] += n * reg
        rhs = np.concatenate([self._wk * self.g, self._wd * self.r])
        sol = solve_regularized(system, rhs,
                                allow_indefinite=not getattr(kernel, "positive_definite", True))
        self.beta_k, self.beta_d = sol[:n], sol[n:]
        self._system, self._rhs, self._sol = system, rhs, sol

    def residual(self):
        res = self._system @ self._sol - self._rhs
        return float(np.linalg.norm(res) / max(np.linalg.norm(self._rhs), np.finfo(float).tiny))

    def __call__(self, Z):
        Z = _as_points(Z)
        b = self.kernel.blocks(self.particles, Z, order=1)
        n, d = self.particles.shape
        corr = self._wk * (self.beta_k @ b.value)
        corr += self._wd * np.einsum("npl,nl->p", b.grad1, self.beta_d.reshape(n, d))
        return (b.value.mean(0) - self.target.embedding(self.kernel, Z) - corr) / self.reg

    def evaluate(self, z):
        return float(self(np.atleast_1d(z)[None, :])[0])

    def grad(self, Z):
        Z = _as_points(Z)
        b = self.kernel.blocks(self.particles, Z, order=2)
        n, d = self.particles.shape
        corr = self._wk * np.einsum("n,npm->pm", self.beta_k, b.grad2)
        corr += self._wd * np.einsum("nplm,nl->pm", b.cross, self.beta_d.reshape(n, d))
        return (b.grad2.mean(0) - self.target.embedding_grad(self.kernel, Z) - corr) / self.reg

    def grad_at_particles(self):
        n, d = self.particles.shape
        b = self._blocks
        corr = self._wk * np.einsum("n,npm->pm", self.beta_k, b.grad2)
        corr += self._wd * (self.beta_d @ self.H_XX).reshape(n, d)
        tgt = self.target.embedding_grad(self.kernel, self.particles)
        return (b.grad2.mean(0) - tgt - corr) / self.reg


class FeatureWitnessSystem:
    """Witness for kernels with an explicit finite feature map of width ``B``.

    The witness lies in the span of the features, ``f(z) = Phi(z) . w``, and
    by the push-through identity ``w = N (A^T A + N lam I)^{-1} (phi_mu - phi_pi)``
    where ``A`` stacks ``sqrt(1 - alpha) Phi(X)`` over ``sqrt(alpha) dPhi(X)``.
    This costs O(N d B^2) instead of O((N d)^3) and is used when ``N d > B``.
    """

    def __init__(self, kernel, X, target, reg, alpha=1.0):
        if not hasattr(target, "mean_features"):
            raise CapabilityError("feature-coordinate witnesses need an empirical target")
        self.kernel = kernel
        self.particles = X = _as_points(X).copy()
        self.target = target
        self.reg = reg = _check_reg(reg)
        self.alpha = alpha
        n, d = X.shape
        phi = kernel.features(X)
        jac = kernel.feature_jacobian(X)  # (N, B, d)
        rows = [np.sqrt(alpha) * jac.transpose(0, 2, 1).reshape(n * d, -1)]
        if alpha < 1.0:
            rows.insert(0, np.sqrt(1.0 - alpha) * phi)
        A = np.vstack(rows)
        self.mean_gap = phi.mean(0) - target.mean_features(kernel)
        B = phi.shape[1]
        self.w = n * solve_regularized(A.T @ A + n * reg * np.eye(B), self.mean_gap)

    def __call__(self, Z):
        return self.kernel.features(_as_points(Z)) @ self.w

    def evaluate(self, z):
        return float(self(np.atleast_1d(z)[None, :])[0])

    def grad(self, Z):
        return np.einsum("pbm,b->pm", self.kernel.feature_jacobian(_as_points(Z)), self.w)

    def grad_at_particles(self):
        return self.grad(self.particles)


def assemble_witness(kernel, X, target, reg, method="auto"):
    """Build the gradient-regularized witness for particles ``X``.

    ``method`` is ``"dense"`` (the ``N d`` dual system), ``"feature"`` (feature
    coordinates) or ``"auto"`` (feature coordinates only when cheaper).
    """
    reg = _check_reg(reg)
    X = _as_points(X)
    if _uses_features(kernel, X.size, method):
        return FeatureWitnessSystem(kernel, X, target, reg, alpha=1.0)
    return WitnessSystem(kernel, X, target, reg)


def assemble_hybrid_witness(kernel, X, target, reg, alpha, method="auto"):
    """Build the hybrid (L2 + gradient) regularized witness."""
    reg = _check_reg(reg)
    X = _as_points(X)
    if _uses_features(kernel, X.size + len(X), method):
        return FeatureWitnessSystem(kernel, X, target, reg, alpha=alpha)
    return HybridWitnessSystem(kernel, X, target, reg, alpha)


def primal_witness_oracle(kernel, X, target, reg):
    """Witness computed directly in feature space, ``(S + lam I)^{-1} (m_mu - m_pi)``.

    Only for kernels with an explicit finite feature map ``Phi`` and a target
    given by samples (an :class:`EmpiricalTarget` or an array).  In feature
    coordinates ``S = (1/N) sum_i dPhi(x_i) dPhi(x_i)^T``.  Shares no code
    with the dual assembly; intended as a test oracle.
    """
    if hasattr(kernel, "feature_jacobian"):
        jacobian = kernel.feature_jacobian
    elif isinstance(kernel, PolynomialKernel):
        jacobian = lambda P: _polynomial_feature_jacobian(kernel, P)  # noqa: E731
    else:
        raise CapabilityError(f"{kernel!r} has no finite feature map")
    reg = _check_reg(reg)
    X = _as_points(X)
    Y = _as_points(getattr(target, "samples", target))
    jac = jacobian(X)
    phi = kernel.features(X)
    S = np.einsum("nbl,ncl->bc", jac, jac) / len(X)
    gap = phi.mean(0) - kernel.features(Y).mean(0)
    w = np.linalg.solve(S + reg * np.eye(phi.shape[1]), gap)
    return lambda Z: kernel.features(_as_points(Z)) @ w


def _polynomial_feature_jacobian(kernel, X):
    """Exact Jacobian of the quadratic feature map, shape (N, p, d)."""
    n, d = X.shape
    c = kernel.offset
    iu, ju = np.triu_indices(d, k=1)
    p = 1 + 2 * d + len(iu)
    jac = np.zeros((n, p, d))
    rows = np.arange(d)
    jac[:, 1 + rows, rows] = np.sqrt(2.0 * c)
    jac[:, 1 + d + rows, rows] = 2.0 * X
    for q, (a, b) in enumerate(zip(iu, ju)):
        jac[:, 1 + 2 * d + q, a] = np.sqrt(2.0) * X[:, b]
        jac[:, 1 + 2 * d + q, b] = np.sqrt(2.0) * X[:, a]
    return jac
