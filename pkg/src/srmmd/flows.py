"""Particle descent loops for SrMMD, MMD, HrMMD, KSD and SVGD flows.

Every flow is an explicit Euler scheme ``x <- x - step_size * v(x)`` where
``v`` is the flow's velocity field evaluated on the current ensemble.
"""

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .kernels import _as_points
from .metrics import ksd_squared, mmd_squared, w2_exact
from .stein import SteinKernel
from .targets import SteinTarget
from .witness import assemble_hybrid_witness, assemble_witness

__all__ = [
    "FLOW_KINDS",
    "FlowConfig",
    "ParticleEnsemble",
    "MetricRow",
    "FlowTrajectory",
    "resolve_kernel",
    "vector_field",
    "mmd_field",
    "noise_injected_field",
    "flow_step",
    "run_flow",
    "NOISE_STREAM",
]

FLOW_KINDS = ("srmmd", "mmd", "hrmmd", "ksd", "svgd")

#: labelled sub-stream of the master seed used for noise injection
NOISE_STREAM = 3


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "srmmd"
    step_size: float = 0.1
    iterations: int = 4000
    reg: float = 0.1
    alpha: float = 1.0
    noise: float = 0.0
    cadence: int = 10
    seed: int = 0

    def validate(self):
        if self.kind not in FLOW_KINDS:
            raise ConfigurationError(f"unknown flow kind {self.kind!r}", field="kind")
        if not self.step_size >= 0:
            raise ConfigurationError("must be nonnegative", field="step_size")
        if self.iterations < 0:
            raise ConfigurationError("must be nonnegative", field="iterations")
        if self.kind in ("srmmd", "hrmmd") and not self.reg > 0:
            raise ConfigurationError(f"{self.kind} needs a positive regularization", field="reg")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", field="alpha")
        if self.noise < 0:
            raise ConfigurationError("must be nonnegative", field="noise")
        if self.cadence < 1:
            raise ConfigurationError("must be at least 1", field="cadence")
        if self.kind == "srmmd" and not 0 < self.step_size < 0.5:
            warnings.warn(
                f"step size {self.step_size} lies outside (0, 1/2), where discrete-time "
                "decay is guaranteed",
                stacklevel=2,
            )
        return self


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.positions = _as_points(self.positions)


@dataclass
class MetricRow:
    step: int
    mmd2: Optional[float] = None
    ksd2: Optional[float] = None
    w2: Optional[float] = None
    wall_ms: Optional[float] = None
    extra: dict = field(default_factory=dict)


@dataclass
class FlowTrajectory:
    initial: np.ndarray
    final: np.ndarray
    log: list
    snapshots: list = field(default_factory=list)
    steps_completed: int = 0

    def column(self, name):
        """Logged values of one metric as an array (NaN where missing)."""
        out = []
        for row in self.log:
            v = getattr(row, name, None) if name in ("mmd2", "ksd2", "w2", "wall_ms") else row.extra.get(name)
            out.append(np.nan if v is None else v)
        return np.array(out, dtype=float)

    @property
    def steps(self):
        return np.array([row.step for row in self.log])


def resolve_kernel(kind, kernel, target):
    """Kernel actually used by ``kind`` for ``target``, checking compatibility.

    Score-only targets turn a base kernel into its Stein kernel for the
    srmmd/hrmmd/ksd flows; SVGD always uses the base kernel.
    """
    stein = isinstance(target, SteinTarget)
    if kind in ("ksd", "svgd") and not stein:
        raise ConfigurationError(f"{kind} flow needs a score-only (Stein) target", field="target")
    if kind == "mmd" and stein:
        raise ConfigurationError("mmd flow needs a sample or analytic target; use ksd", field="target")
    if not stein:
        if isinstance(kernel, SteinKernel):
            raise ConfigurationError("Stein kernels need a score-only target", field="kernel")
        return kernel
    if kind == "svgd":
        return kernel.base if isinstance(kernel, SteinKernel) else kernel
    if isinstance(kernel, SteinKernel):
        return kernel
    return SteinKernel(kernel, target.score)


def mmd_field(kernel, X, target, Z=None):
    """``mean_i grad_2 k(x_i, z) - grad_z E_pi k(Y, z)`` at ``Z`` (defaults to ``X``)."""
    X = _as_points(X)
    Z = X if Z is None else _as_points(Z)
    g2 = kernel.blocks(X, Z, order=1).grad2
    return g2.mean(0) - target.embedding_grad(kernel, Z)


def noise_injected_field(X, field_at, noise, rng):
    """Evaluate ``field_at`` at ``x_i + noise * eps_i`` with ``eps_i ~ N(0, I)``.

    With ``noise == 0`` no random numbers are drawn and the plain field is
    returned.
    """
    X = _as_points(X)
    if noise == 0:
        return field_at(X)
    return field_at(X + noise * rng.standard_normal(X.shape))


def _svgd_field(kernel, X, score):
    b = kernel.blocks(X, X, order=1)
    # phi(x_i) = (1/N) sum_j [k(x_j, x_i) s(x_j) + grad_1 k(x_j, x_i)]
    phi = (b.value.T @ score.score(X) + b.grad1.sum(0)) / len(X)
    return -phi


def vector_field(kind, kernel, target, X, config=None, rng=None):
    """Velocity field ``v`` of the given flow at the particles ``X``.

    The update is ``x <- x - step_size * v``.
    """
    config = config or FlowConfig(kind=kind)
    X = _as_points(X)
    k = resolve_kernel(kind, kernel, target)
    if kind == "srmmd":
        return assemble_witness(k, X, target, config.reg).grad_at_particles()
    if kind == "hrmmd":
        return assemble_hybrid_witness(k, X, target, config.reg, config.alpha).grad_at_particles()
    if kind in ("mmd", "ksd"):
        if config.noise > 0 and rng is None:
            raise ValueError("noise injection needs a random generator")
        return noise_injected_field(X, lambda Z: mmd_field(k, X, target, Z), config.noise, rng)
    if kind == "svgd":
        return _svgd_field(k, X, target.score)
    raise ConfigurationError(f"unknown flow kind {kind!r}", field="kind")


def flow_step(ensemble, velocity, step_size):
    """One explicit Euler step; raises :class:`DivergenceError` on non-finite output."""
    velocity = np.asarray(velocity, dtype=float)
    if velocity.shape != ensemble.positions.shape:
        raise ValueError(f"field shape {velocity.shape} does not match {ensemble.positions.shape}")
    new = ensemble.positions - step_size * velocity
    if not np.all(np.isfinite(new)):
        raise DivergenceError(ensemble.step + 1, ensemble.positions.copy())
    return ParticleEnsemble(new, ensemble.step + 1)


def _default_metrics(kernel, target, reference):
    def compute(X):
        row = {}
        if isinstance(target, SteinTarget):
            row["ksd2"] = ksd_squared(kernel, X)
        else:
            row["mmd2"] = mmd_squared(kernel, X, target)
        if reference is not None:
            row["w2"] = w2_exact(X, reference)
        return row

    return compute


def run_flow(config, kernel, target, initial, *, metric_fn=None, reference=None,
             metric_kernel=None, snapshot_every=0, kernel_schedule=None, log_steps=None):
    """Iterate a particle flow and log metrics.

    Parameters
    ----------
    config : FlowConfig
    kernel : Kernel
        Base kernel (wrapped into a Stein kernel for score-only targets).
    target : EmpiricalTarget, AnalyticTarget or SteinTarget
    initial : array_like (N, d)
    metric_fn : callable, optional
        ``metric_fn(X) -> dict`` replacing the default metrics (mmd2 for
        sample/analytic targets, ksd2 for score-only targets, w2 against
        ``reference`` when given).  Keys other than mmd2/ksd2/w2 land in
        ``MetricRow.extra``.
    metric_kernel : Kernel, optional
        Kernel for the default discrepancy metric (defaults to the flow kernel).
    snapshot_every : int
        Store a copy of the particles every this many steps (0 disables).
    kernel_schedule : callable, optional
        ``kernel_schedule(step)`` returning the kernel for that step; used when
        the kernel itself is resampled during the run.
    log_steps : iterable of int, optional
        Extra steps at which to log, in addition to the cadence.
    """
    config = config.validate()
    X0 = _as_points(initial).copy()
    k = resolve_kernel(config.kind, kernel, target)
    if metric_fn is None:
        if isinstance(target, SteinTarget):
            mk = resolve_kernel("ksd", metric_kernel or kernel, target)
        else:
            mk = metric_kernel or k
        metric_fn = _default_metrics(mk, target, reference)
    rng = np.random.default_rng([config.seed, NOISE_STREAM])
    extra_steps = set(log_steps or ())

    ensemble = ParticleEnsemble(X0.copy())
    log, snapshots = [], []
    start = time.perf_counter()

    def record(ens):
        values = metric_fn(ens.positions)
        row = MetricRow(ens.step, wall_ms=(time.perf_counter() - start) * 1e3)
        for key, val in values.items():
            if key in ("mmd2", "ksd2", "w2"):
                setattr(row, key, float(val))
            else:
                row.extra[key] = val
        log.append(row)

    record(ensemble)
    if snapshot_every:
        snapshots.append((0, X0.copy()))
    S = config.iterations
    for s in range(S):
        step_kernel = k if kernel_schedule is None else resolve_kernel(
            config.kind, kernel_schedule(s), target)
        try:
            v = vector_field(config.kind, step_kernel, target, ensemble.positions, config, rng)
            ensemble = flow_step(ensemble, v, config.step_size)
        except DivergenceError as err:
            err.trajectory = FlowTrajectory(X0, ensemble.positions.copy(), log, snapshots, s)
            raise
        if ensemble.step % config.cadence == 0 or ensemble.step == S or ensemble.step in extra_steps:
            record(ensemble)
        if snapshot_every and ensemble.step % snapshot_every == 0:
            snapshots.append((ensemble.step, ensemble.positions.copy()))
    return FlowTrajectory(X0, ensemble.positions.copy(), log, snapshots, S)


def with_overrides(config, **kwargs):
    """Copy of ``config`` with fields replaced."""
    return replace(config, **kwargs)
