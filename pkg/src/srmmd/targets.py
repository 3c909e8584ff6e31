"""Target distributions and the ways a flow can see them.

Distributions (``GaussianMixture``, ``LogisticPosterior``, ``SwissRoll``,
``StudentTeacherSetup``) provide samplers and/or scores.  The representation
classes (``EmpiricalTarget``, ``AnalyticTarget``, ``SteinTarget``) answer the
target-expectation queries needed by witness assembly and metrics:

* ``embedding(kernel, Z)[p]      = E_{Y ~ pi} k(Y, z_p)``
* ``embedding_grad(kernel, Z)[p] = grad_z E_{Y ~ pi} k(Y, z_p)``
* ``self_term(kernel)            = E_{Y, Y' ~ pi} k(Y, Y')``

For symmetric kernels ``embedding_grad`` also equals ``E_Y d_1 k(x, Y)``.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .kernels import FeatureMapKernel, GaussianKernel, _as_points
from .stein import SteinKernel

__all__ = [
    "GaussianMixture",
    "four_gaussians",
    "ten_gaussians",
    "LogisticPosterior",
    "logistic_metrics",
    "synthetic_logistic_data",
    "load_labeled_csv",
    "split_standardize",
    "SwissRoll",
    "uniform_sphere",
    "StudentTeacherSetup",
    "EmpiricalTarget",
    "AnalyticTarget",
    "SteinTarget",
]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class GaussianMixture:
    """Finite mixture of Gaussians with full covariances."""

    def __init__(self, weights, means, covariances):
        weights = np.asarray(weights, dtype=float)
        means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covariances, dtype=float)
        k, d = means.shape
        if covs.ndim == 2:
            covs = np.broadcast_to(covs, (k, d, d))
        if weights.shape != (k,) or covs.shape != (k, d, d):
            raise ValueError("inconsistent mixture parameter shapes")
        if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2)):
            raise ValueError("covariances must be symmetric")
        try:
            self._chol = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError:
            raise ValueError("covariances must be positive definite") from None
        self.weights = weights
        self.means = means
        self.covariances = np.array(covs)
        self.precisions = np.linalg.inv(covs)
        self._logdet = 2.0 * np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(1)
        self.dim = d

    @property
    def mean(self):
        return self.weights @ self.means

    def sample(self, n, seed=None):
        rng = _rng(seed)
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nab,nb->na", self._chol[comp], eps)

    def _component_logpdf(self, X):
        diff = X[:, None, :] - self.means[None]  # (N, K, d)
        maha = np.einsum("nka,kab,nkb->nk", diff, self.precisions, diff)
        return -0.5 * (maha + self._logdet + self.dim * np.log(2 * np.pi)) + np.log(self.weights), diff

    def log_density(self, X):
        X = _as_points(X)
        lp, _ = self._component_logpdf(X)
        return logsumexp(lp, axis=1)

    def _responsibilities(self, X):
        lp, diff = self._component_logpdf(X)
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        grads = -np.einsum("kab,nkb->nka", self.precisions, diff)  # per-component scores
        return resp, grads

    def score(self, X):
        resp, grads = self._responsibilities(_as_points(X))
        return np.einsum("nk,nka->na", resp, grads)

    def jacobian(self, X):
        resp, grads = self._responsibilities(_as_points(X))
        s = np.einsum("nk,nka->na", resp, grads)
        outer = np.einsum("nk,nka,nkb->nab", resp, grads, grads)
        return outer - s[:, :, None] * s[:, None, :] - np.einsum("nk,kab->nab", resp, self.precisions)

    def _embedding_terms(self, X, extra_cov):
        inv = np.linalg.inv(self.covariances + extra_cov)
        diff = X[:, None, :] - self.means[None]
        maha = np.einsum("nka,kab,nkb->nk", diff, inv, diff)
        return inv, diff, maha

    def mean_embedding(self, X, lengthscale):
        """Closed-form ``E_{Y ~ pi} k(Y, x)`` under a Gaussian kernel and its gradient.

        Returns
        -------
        values : ndarray (N,)
        grads : ndarray (N, d)
        """
        X = _as_points(X)
        s2 = lengthscale**2
        eye = np.eye(self.dim)
        inv, diff, maha = self._embedding_terms(X, s2 * eye)
        scale = np.linalg.det(eye + self.covariances / s2) ** -0.5
        comp = self.weights * scale * np.exp(-0.5 * maha)  # (N, K)
        grads = -np.einsum("nk,kab,nkb->na", comp, inv, diff)
        return comp.sum(1), grads

    def embedding_constant(self, lengthscale):
        """``E_{Y, Y' ~ pi} k(Y, Y')`` for the Gaussian kernel."""
        s2 = lengthscale**2
        eye = np.eye(self.dim)
        total = 0.0
        for a in range(len(self.weights)):
            for b in range(len(self.weights)):
                cov = self.covariances[a] + self.covariances[b]
                diff = self.means[a] - self.means[b]
                scale = np.linalg.det(eye + cov / s2) ** -0.5
                maha = diff @ np.linalg.solve(cov + s2 * eye, diff)
                total += self.weights[a] * self.weights[b] * scale * np.exp(-0.5 * maha)
        return float(total)

    def to_config(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }


def four_gaussians():
    """Equal-weight mixture with means (+-2, +-2) and covariance 1.2 I."""
    means = np.array([[2.0, 2.0], [2.0, -2.0], [-2.0, 2.0], [-2.0, -2.0]])
    return GaussianMixture(np.full(4, 0.25), means, 1.2 * np.eye(2))


def ten_gaussians(radius=5.0, variance=0.5):
    """Ten equal-weight components with means evenly spaced on a circle."""
    angles = 2 * np.pi * np.arange(10) / 10
    means = radius * np.stack([np.cos(angles), np.sin(angles)], 1)
    return GaussianMixture(np.full(10, 0.1), means, variance * np.eye(2))


class LogisticPosterior:
    """Posterior of Bayesian logistic regression with an isotropic Gaussian prior.

    ``log pi(x) = sum_i [y_i z_i.x - log(1 + exp(z_i.x))] - |x|^2 / (2 a^2) + const``
    """

    def __init__(self, features, labels, prior_scale=1.0):
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float)
        if features.ndim != 2:
            raise ValueError("features must be an (n, p) array")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per row of features")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0/1")
        if not prior_scale > 0:
            raise ValueError("prior_scale must be positive")
        self.features = features
        self.labels = labels
        self.prior_scale = float(prior_scale)
        self.dim = features.shape[1]

    def log_density(self, X):
        X = _as_points(X)
        logits = X @ self.features.T
        ll = (self.labels * logits - np.logaddexp(0.0, logits)).sum(1)
        return ll - 0.5 * np.sum(X**2, 1) / self.prior_scale**2

    def score(self, X):
        X = _as_points(X)
        resid = self.labels - expit(X @ self.features.T)
        return resid @ self.features - X / self.prior_scale**2

    def jacobian(self, X):
        X = _as_points(X)
        prob = expit(X @ self.features.T)
        w = prob * (1.0 - prob)
        J = -np.einsum("ni,ia,ib->nab", w, self.features, self.features)
        J -= np.eye(self.dim) / self.prior_scale**2
        return J


def logistic_metrics(features, labels, particles):
    """Accuracy and mean log predictive likelihood of the particle average.

    The predictive probability is ``(1/N) sum_i sigmoid(z . x_i)``.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    particles = _as_points(particles)
    prob = expit(features @ particles.T).mean(1)
    pred = (prob >= 0.5).astype(float)
    accuracy = float(np.mean(pred == labels))
    # log of the averaged probability, computed in log space
    logits = features @ particles.T
    log_p1 = logsumexp(log_expit(logits), axis=1) - np.log(len(particles))
    log_p0 = logsumexp(log_expit(-logits), axis=1) - np.log(len(particles))
    loglik = float(np.mean(np.where(labels == 1, log_p1, log_p0)))
    return accuracy, loglik


def synthetic_logistic_data(n=200, p=5, flip=0.05, seed=0):
    """Linearly separable labels with a fraction ``flip`` of them flipped."""
    rng = _rng(seed)
    w = rng.standard_normal(p)
    Z = rng.standard_normal((n, p))
    y = (Z @ w > 0).astype(float)
    flips = rng.random(n) < flip
    y[flips] = 1.0 - y[flips]
    return Z, y


def split_standardize(Z, y, seed, train_fraction):
    rng = _rng(seed)
    perm = rng.permutation(len(y))
    n_train = int(round(train_fraction * len(y)))
    tr, te = perm[:n_train], perm[n_train:]
    mu = Z[tr].mean(0)
    sd = Z[tr].std(0)
    sd[sd == 0] = 1.0
    return (Z[tr] - mu) / sd, y[tr], (Z[te] - mu) / sd, y[te]


def load_labeled_csv(path, seed=0, train_fraction=2.0 / 3.0):
    """Load a UCI-style CSV: optional header row, last column is a binary label.

    Labels are mapped to 0/1 (smaller value -> 0).  Rows are split into
    train/test with a seeded permutation and features are standardized with
    the training-split statistics.

    Returns
    -------
    Z_train, y_train, Z_test, y_test
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    data = np.array([[float(v) for v in r] for r in rows])
    Z, raw = data[:, :-1], data[:, -1]
    values = np.unique(raw)
    if len(values) != 2:
        raise ValueError(f"expected a binary label column, found {len(values)} distinct values")
    y = (raw == values[1]).astype(float)
    return split_standardize(Z, y, seed, train_fraction)


@dataclass
class SwissRoll:
    """Planar Swiss roll ``(t cos t, t sin t) / scale`` plus isotropic noise."""

    t_min: float = 1.5 * np.pi
    t_max: float = 4.5 * np.pi
    scale: float = 3.0
    noise: float = 0.05

    def sample(self, n, seed=None, return_t=False):
        rng = _rng(seed)
        t = rng.uniform(self.t_min, self.t_max, size=n)
        pts = np.stack([t * np.cos(t), t * np.sin(t)], 1) / self.scale
        pts = pts + self.noise * rng.standard_normal((n, 2))
        return (pts, t) if return_t else pts


def uniform_sphere(n, dim, seed=None):
    """Uniform draws on the unit sphere in ``R^dim``."""
    g = _rng(seed).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class StudentTeacherSetup:
    """Mean-field student-teacher problem on one-hidden-unit networks.

    ``teacher`` holds the fixed parameter samples drawn from N(0, I) and the
    probe sets are points on the unit sphere.
    """

    teacher: np.ndarray
    train_probes: np.ndarray
    val_probes: np.ndarray
    batch_size: int = 100

    @classmethod
    def create(cls, seed=0, num_teacher=10, probe_dim=50, num_train=1000, num_val=1000,
               batch_size=100):
        rng = _rng(seed)
        teacher = rng.standard_normal((num_teacher, probe_dim + 3))
        train = uniform_sphere(num_train, probe_dim, rng)
        val = uniform_sphere(num_val, probe_dim, rng)
        return cls(teacher, train, val, batch_size)

    @property
    def dim(self):
        return self.teacher.shape[1]

    def kernel(self, probes):
        return FeatureMapKernel(probes)

    def objective(self, students, probes):
        """``mean_z (Psi_teacher(z) - Psi_student(z))^2`` over the given probes."""
        k = FeatureMapKernel(probes)
        gap = k.network(self.teacher).mean(0) - k.network(students).mean(0)
        return float(np.mean(gap**2))


class EmpiricalTarget:
    """Target known through samples ``Y`` (M, d)."""

    kind = "empirical"

    def __init__(self, samples):
        samples = _as_points(samples)
        if len(samples) < 1:
            raise ValueError("an empirical target needs at least one sample")
        self.samples = samples

    @property
    def dim(self):
        return self.samples.shape[1]

    def embedding(self, kernel, Z):
        return kernel.blocks(self.samples, _as_points(Z), order=0).value.mean(0)

    def embedding_grad(self, kernel, Z):
        return kernel.blocks(self.samples, _as_points(Z), order=1).grad2.mean(0)

    def self_term(self, kernel, unbiased=False):
        K = kernel.gram(self.samples)
        m = len(K)
        if not unbiased:
            return float(K.mean())
        if m < 2:
            raise ValueError("U-statistic needs at least two target samples")
        return float((K.sum() - np.trace(K)) / (m * (m - 1)))

    def mean_features(self, kernel):
        return kernel.features(self.samples).mean(0)


class AnalyticTarget:
    """Gaussian-mixture target with closed-form Gaussian-kernel embeddings."""

    kind = "analytic"

    def __init__(self, mixture, lengthscale):
        self.mixture = mixture
        self.lengthscale = float(lengthscale)
        self._constant = None

    @property
    def dim(self):
        return self.mixture.dim

    def _check(self, kernel):
        if not isinstance(kernel, GaussianKernel) or not np.isclose(kernel.lengthscale, self.lengthscale):
            raise ValueError("analytic embeddings need the Gaussian kernel with the matching lengthscale")

    def embedding(self, kernel, Z):
        self._check(kernel)
        return self.mixture.mean_embedding(Z, self.lengthscale)[0]

    def embedding_grad(self, kernel, Z):
        self._check(kernel)
        return self.mixture.mean_embedding(Z, self.lengthscale)[1]

    def self_term(self, kernel, unbiased=False):
        self._check(kernel)
        if self._constant is None:
            self._constant = self.mixture.embedding_constant(self.lengthscale)
        return self._constant


class SteinTarget:
    """Target known through its score; all embedding queries vanish."""

    kind = "stein"

    def __init__(self, score):
        self.score = score

    @property
    def dim(self):
        return getattr(self.score, "dim", None)

    def _check(self, kernel):
        if not isinstance(kernel, SteinKernel):
            raise ValueError("a score-only target needs a Stein kernel")

    def embedding(self, kernel, Z):
        self._check(kernel)
        return np.zeros(len(_as_points(Z)))

    def embedding_grad(self, kernel, Z):
        self._check(kernel)
        return np.zeros_like(_as_points(Z))

    def self_term(self, kernel, unbiased=False):
        self._check(kernel)
        return 0.0
