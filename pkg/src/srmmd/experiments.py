"""Config-driven experiment runner and the CSV/JSON artifact formats.

A config is a JSON object.  Missing keys are filled from the defaults of the
chosen experiment and the fully resolved config is echoed to
``config_resolved.json`` next to the other outputs.
"""

import copy
import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .flows import NOISE_STREAM, FlowConfig, resolve_kernel, run_flow
from .imaging import read_ppm, recolor, write_ppm
from .kernels import GaussianKernel, kernel_from_config
from .metrics import ksd_squared, mmd_squared, w2_exact
from .targets import (
    AnalyticTarget,
    EmpiricalTarget,
    GaussianMixture,
    LogisticPosterior,
    SteinTarget,
    StudentTeacherSetup,
    SwissRoll,
    four_gaussians,
    load_labeled_csv,
    split_standardize,
    logistic_metrics,
    synthetic_logistic_data,
    ten_gaussians,
)

__all__ = [
    "EXPERIMENTS",
    "OUTPUT_ROOT_ENV",
    "METRIC_HEADER",
    "substream",
    "resolve_config",
    "build_target",
    "prepare_experiment",
    "run_experiment",
    "color_transfer",
    "write_metrics_csv",
    "write_particles_csv",
    "read_particles_csv",
    "ExperimentResult",
]

OUTPUT_ROOT_ENV = "SRMMD_OUTPUT_ROOT"
METRIC_HEADER = ("step", "mmd2", "ksd2", "w2", "wall_ms")

# fixed labels for the sub-streams of the master seed
STREAMS = {
    "particles": 0,
    "target": 1,
    "probes": 2,
    "noise": NOISE_STREAM,
    "reference": 4,
    "data": 5,
    "source_pixels": 6,
    "target_pixels": 7,
}


def substream(seed, label):
    """Independent generator for one labelled component of a run."""
    return np.random.default_rng([int(seed), STREAMS[label]])


_COMMON = {
    "seed": 0,
    "output_dir": None,
    "record_wall_time": False,
    "snapshot_every": 0,
}

EXPERIMENTS = {
    "toy-mixture": {
        "num_particles": 100,
        "kernel": {"kind": "gaussian", "lengthscale": 1.0},
        "target": {"kind": "four_gaussians", "representation": "analytic"},
        "init": {"kind": "gaussian", "mean": 0.0, "scale": 0.5},
        "flow": {"kind": "srmmd", "step_size": 0.1, "iterations": 4000, "reg": 0.1, "cadence": 10},
        "w2": True,
    },
    "swiss-roll": {
        "num_particles": 300,
        "kernel": {"kind": "riesz", "exponent": 1.0},
        "target": {"kind": "swiss_roll", "representation": "empirical", "num_samples": 500,
                   "noise": 0.05, "scale": 3.0},
        "init": {"kind": "gaussian", "mean": 0.0, "scale": 0.5},
        "flow": {"kind": "srmmd", "step_size": 0.1, "iterations": 4000, "reg": 0.1, "cadence": 10},
        "w2": True,
    },
    "sampling-mixture": {
        "num_particles": 500,
        "kernel": {"kind": "gaussian", "lengthscale": 0.3},
        "target": {"kind": "ten_gaussians", "representation": "stein", "radius": 5.0, "variance": 0.5},
        "init": {"kind": "gaussian", "mean": 0.0, "scale": 1.0},
        "flow": {"kind": "srmmd", "step_size": 0.1, "iterations": 2000, "reg": 0.5, "cadence": 10},
        "w2": True,
    },
    "logistic": {
        "num_particles": 20,
        "kernel": {"kind": "gaussian", "lengthscale": 1.0},
        "target": {"kind": "logistic", "representation": "stein", "data": None, "num_points": 200,
                   "num_features": 5, "flip": 0.05, "prior_scale": 1.0, "train_fraction": 2.0 / 3.0},
        "init": {"kind": "gaussian", "mean": 0.0, "scale": 1.0},
        "flow": {"kind": "srmmd", "step_size": 0.1, "iterations": 3000, "reg": 0.1, "cadence": 10},
        "w2": False,
    },
    "student-teacher": {
        "num_particles": 100,
        "target": {"kind": "student_teacher", "num_teacher": 10, "probe_dim": 50, "num_train": 1000,
                   "num_val": 1000, "batch_size": 100},
        "init": {"kind": "gaussian", "mean": 0.0, "scale": float(np.sqrt(0.1))},
        "flow": {"kind": "srmmd", "step_size": 0.1, "iterations": 2000, "reg": 0.1, "cadence": 10},
        "w2": False,
    },
    "color-transfer": {
        "num_particles": 500,
        "source": None,
        "target": None,
        "output_image": "recolored.ppm",
        "kernel": {"kind": "gaussian", "lengthscale": float(1.0 / np.sqrt(2.0))},
        "flow": {"kind": "srmmd", "step_size": 0.01, "iterations": 1000, "reg": 0.01, "cadence": 10},
        "w2": True,
    },
}

_FLOW_FIELDS = {f: getattr(FlowConfig, f) for f in FlowConfig.__dataclass_fields__}


def _merge(defaults, overrides):
    out = copy.deepcopy(defaults)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(raw):
    """Fill defaults into a raw config and validate it.

    Raises
    ------
    ConfigurationError
        With the offending field in the message.
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigurationError(f"must be one of {sorted(EXPERIMENTS)}, got {name!r}", field="experiment")
    base = _merge(_COMMON, EXPERIMENTS[name])
    # a user-given target or kernel of another kind replaces the default wholesale
    for key in ("target", "kernel"):
        user = raw.get(key)
        if isinstance(user, dict) and isinstance(base.get(key), dict) and user.get("kind") not in (
                None, base[key].get("kind")):
            base[key] = {}
    cfg = _merge(base, raw)
    cfg["flow"] = {**_FLOW_FIELDS, **cfg["flow"]}
    # one master seed; a seed given only inside "flow" is promoted to it
    if "seed" not in raw and "seed" in raw.get("flow", {}):
        cfg["seed"] = cfg["flow"]["seed"]
    if not isinstance(cfg["seed"], int):
        raise ConfigurationError("must be an integer", field="seed")
    cfg["flow"]["seed"] = cfg["seed"]
    if cfg["output_dir"] is None:
        cfg["output_dir"] = name
    unknown = set(cfg["flow"]) - set(_FLOW_FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)}", field="flow")
    try:
        FlowConfig(**cfg["flow"]).validate()
    except ConfigurationError as err:
        raise ConfigurationError(str(err), field="flow") from None
    except TypeError as err:
        raise ConfigurationError(str(err), field="flow") from None
    n = cfg["num_particles"]
    if not isinstance(n, int) or n < 1:
        raise ConfigurationError("must be a positive integer", field="num_particles")
    return cfg


def _representation_of(spec, dist, kernel, rng):
    rep = spec.get("representation", "empirical")
    if rep == "stein":
        return SteinTarget(dist)
    if rep == "analytic":
        if not isinstance(dist, GaussianMixture):
            raise ConfigurationError("analytic embeddings exist only for Gaussian mixtures",
                                     field="target.representation")
        if not isinstance(kernel, GaussianKernel):
            raise ConfigurationError("analytic embeddings need a Gaussian kernel", field="kernel")
        return AnalyticTarget(dist, kernel.lengthscale)
    if rep == "empirical":
        if not hasattr(dist, "sample"):
            raise ConfigurationError("this target cannot be sampled", field="target.representation")
        m = spec.setdefault("num_samples", 500)
        return EmpiricalTarget(dist.sample(int(m), rng))
    raise ConfigurationError(f"unknown representation {rep!r}", field="target.representation")


def build_distribution(spec, seed=0):
    """Distribution object named by a target spec; may fill defaults into ``spec``."""
    kind = spec.get("kind")
    if kind == "four_gaussians":
        return four_gaussians()
    if kind == "ten_gaussians":
        return ten_gaussians(spec.setdefault("radius", 5.0), spec.setdefault("variance", 0.5))
    if kind == "standard_normal":
        d = int(spec.setdefault("dim", 1))
        return GaussianMixture([1.0], np.zeros((1, d)), np.eye(d)[None])
    if kind == "gaussian_mixture":
        try:
            return GaussianMixture(spec["weights"], spec["means"], spec["covariances"])
        except KeyError as err:
            raise ConfigurationError(f"missing {err.args[0]}", field="target") from None
        except ValueError as err:
            raise ConfigurationError(str(err), field="target") from None
    if kind == "swiss_roll":
        return SwissRoll(noise=spec.setdefault("noise", 0.05), scale=spec.setdefault("scale", 3.0))
    if kind == "logistic":
        return _logistic_problem(spec, seed)[0]
    raise ConfigurationError(f"unknown target kind {kind!r}", field="target.kind")


def _logistic_problem(spec, seed):
    spec.setdefault("prior_scale", 1.0)
    spec.setdefault("train_fraction", 2.0 / 3.0)
    data = spec.get("data")
    rng = substream(seed, "data")
    if data:
        if not Path(data).is_file():
            raise ConfigurationError(f"data file {data!r} does not exist", field="target.data")
        Ztr, ytr, Zte, yte = load_labeled_csv(data, seed=rng, train_fraction=spec["train_fraction"])
    else:
        Z, y = synthetic_logistic_data(
            n=int(spec.setdefault("num_points", 200)), p=int(spec.setdefault("num_features", 5)),
            flip=spec.setdefault("flip", 0.05), seed=rng)
        Ztr, ytr, Zte, yte = split_standardize(Z, y, rng, spec["train_fraction"])
    return LogisticPosterior(Ztr, ytr, spec["prior_scale"]), (Zte, yte)


def build_target(spec, kernel=None, seed=0):
    """``(distribution, representation)`` for a target spec.

    ``spec`` may also be a bare kind name such as ``"four_gaussians"``.
    """
    if isinstance(spec, str):
        spec = {"kind": spec}
    dist = build_distribution(spec, seed)
    rep = _representation_of(spec, dist, kernel, substream(seed, "target"))
    return dist, rep


def _initial_particles(spec, n, dim, seed):
    rng = substream(seed, "particles")
    kind = spec.setdefault("kind", "gaussian")
    if kind == "gaussian":
        mean = np.asarray(spec.setdefault("mean", 0.0), dtype=float)
        if mean.ndim > 1 or mean.size not in (1, dim):
            raise ConfigurationError(f"must be a scalar or a length-{dim} list", field="init.mean")
        return mean + float(spec.setdefault("scale", 1.0)) * rng.standard_normal((n, dim))
    if kind == "uniform":
        return rng.uniform(spec.setdefault("low", -1.0), spec.setdefault("high", 1.0), size=(n, dim))
    if kind == "file":
        try:
            X = read_particles_csv(spec["path"])
        except (KeyError, OSError, ValueError) as err:
            raise ConfigurationError(f"cannot read initial particles ({err})", field="init.path") from None
        if X.shape != (n, dim):
            raise ConfigurationError(f"expected {n} x {dim} particles, found {X.shape[0]} x {X.shape[1]}",
                                     field="init.path")
        return X
    raise ConfigurationError(f"unknown init kind {kind!r}", field="init.kind")


# -- file formats ---------------------------------------------------------------

def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_metrics_csv(trajectory, path, record_wall_time=False):
    """Metric log with header ``step,mmd2,ksd2,w2,wall_ms``; inapplicable fields are empty.

    Wall time is left empty unless ``record_wall_time`` so that reruns are
    byte-identical.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_HEADER)
        for row in trajectory.log:
            w.writerow([row.step, _fmt(row.mmd2), _fmt(row.ksd2), _fmt(row.w2),
                        _fmt(row.wall_ms) if record_wall_time else ""])


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0]] + [_fmt(v) for v in r[1:]])


def write_particles_csv(X, path, step=0):
    """Particles as rows ``step,particle,x0,...,x{d-1}``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "particle"] + [f"x{j}" for j in range(X.shape[1])])
        for i, x in enumerate(X):
            w.writerow([step, i] + [repr(float(v)) for v in x])


def write_snapshots_csv(snapshots, path):
    d = snapshots[0][1].shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "particle"] + [f"x{j}" for j in range(d)])
        for step, X in snapshots:
            for i, x in enumerate(X):
                w.writerow([step, i] + [repr(float(v)) for v in x])


def read_particles_csv(path):
    """Coordinates from a particle CSV (the ``step``/``particle`` columns are optional)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty particle file")
    header = rows[0]
    try:
        [float(v) for v in header]
        body, skip = rows, 0
    except ValueError:
        body = rows[1:]
        skip = sum(1 for h in header if h in ("step", "particle"))
    X = np.array([[float(v) for v in r[skip:]] for r in body if r], dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError(f"{path}: no particle rows")
    return X


# -- running ------------------------------------------------------------------

@dataclass
class ExperimentResult:
    output_dir: Path
    files: list = field(default_factory=list)
    trajectory: object = None
    status: int = 0
    message: str = ""


def _output_dir(cfg, output_root=None):
    root = output_root or os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg["output_dir"])
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def prepare_experiment(cfg):
    """Build every object the run needs; raises before any file is written."""
    name = cfg["experiment"]
    seed = cfg["seed"]
    flow_cfg = FlowConfig(**cfg["flow"])
    plan = {"flow": flow_cfg}
    if name == "student-teacher":
        t = cfg["target"]
        setup = StudentTeacherSetup.create(
            seed=substream(seed, "target"), num_teacher=t["num_teacher"], probe_dim=t["probe_dim"],
            num_train=t["num_train"], num_val=t["num_val"], batch_size=t["batch_size"])
        if flow_cfg.kind not in ("srmmd", "mmd", "hrmmd"):
            raise ConfigurationError(f"{flow_cfg.kind} flow needs a score-only target", field="flow.kind")
        plan.update(setup=setup, target=EmpiricalTarget(setup.teacher),
                    initial=_initial_particles(cfg["init"], cfg["num_particles"], setup.dim, seed))
        return plan
    if name == "color-transfer":
        for key in ("source", "target"):
            p = cfg[key]
            if not isinstance(p, str) or not Path(p).is_file():
                raise ConfigurationError(f"image {p!r} does not exist", field=key)
        src, tgt = read_ppm(cfg["source"]), read_ppm(cfg["target"])
        n = cfg["num_particles"]
        if n > src.num_pixels or n > tgt.num_pixels:
            raise ConfigurationError(
                f"{n} particles exceed the pixel count ({src.num_pixels}, {tgt.num_pixels})",
                field="num_particles")
        kernel = kernel_from_config(cfg["kernel"])
        cfg["kernel"].update(kernel.config())
        if flow_cfg.kind in ("ksd", "svgd"):
            raise ConfigurationError(f"{flow_cfg.kind} flow needs a score-only target", field="flow.kind")
        plan.update(source=src, target_image=tgt, kernel=kernel)
        return plan

    try:
        kernel = kernel_from_config(cfg["kernel"])
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigurationError(str(err), field="kernel") from None
    cfg["kernel"].update(kernel.config())
    dist, target = build_target(cfg["target"], kernel, seed)
    try:
        resolve_kernel(flow_cfg.kind, kernel, target)
    except ConfigurationError as err:
        raise ConfigurationError(f"{flow_cfg.kind} flow cannot use this target: {err}", field="flow.kind") from None
    dim = target.dim if target.dim is not None else dist.dim
    plan.update(kernel=kernel, dist=dist, target=target,
                initial=_initial_particles(cfg.setdefault("init", {}), cfg["num_particles"], dim, seed))
    if cfg["experiment"] == "logistic":
        plan["test_split"] = _logistic_problem(dict(cfg["target"]), seed)[1]
    if cfg.get("w2") and hasattr(dist, "sample"):
        plan["reference"] = dist.sample(cfg["num_particles"], substream(seed, "reference"))
    return plan


def _metric_fn(cfg, plan):
    target, kernel, reference = plan["target"], plan["kernel"], plan.get("reference")
    stein = isinstance(target, SteinTarget)
    mk = resolve_kernel("ksd", kernel, target) if stein else kernel
    test = plan.get("test_split")

    def compute(X):
        row = {"ksd2": ksd_squared(mk, X)} if stein else {"mmd2": mmd_squared(mk, X, target)}
        if reference is not None:
            row["w2"] = w2_exact(X, reference)
        if test is not None:
            acc, ll = logistic_metrics(test[0], test[1], X)
            row["accuracy"], row["log_likelihood"] = acc, ll
        return row

    return compute


def _run_student_teacher(cfg, plan):
    setup, flow_cfg = plan["setup"], plan["flow"]
    rng = substream(cfg["seed"], "probes")
    train, val = setup.train_probes, setup.val_probes
    train_kernel = setup.kernel(train)
    target = plan["target"]

    def schedule(step):
        idx = rng.choice(len(train), size=min(setup.batch_size, len(train)), replace=False)
        return setup.kernel(train[idx])

    def metrics(X):
        return {"mmd2": mmd_squared(train_kernel, X, target), "validation": setup.objective(X, val)}

    return run_flow(flow_cfg, train_kernel, target, plan["initial"], metric_fn=metrics,
                    kernel_schedule=schedule, snapshot_every=cfg["snapshot_every"])


def color_transfer(source, target, flow_config, num_particles, seed=0, kernel=None, w2=True):
    """Recolour ``source`` so that its colour distribution moves towards ``target``'s.

    Returns
    -------
    image : PpmImage
    trajectory : FlowTrajectory
    """
    if num_particles > source.num_pixels or num_particles > target.num_pixels:
        raise ValueError(f"{num_particles} particles exceed the pixel count "
                         f"({source.num_pixels}, {target.num_pixels})")
    if num_particles < 1:
        raise ValueError("need at least one particle")
    kernel = kernel or GaussianKernel(1.0 / np.sqrt(2.0))
    src_idx = substream(seed, "source_pixels").choice(source.num_pixels, num_particles, replace=False)
    tgt_idx = substream(seed, "target_pixels").choice(target.num_pixels, num_particles, replace=False)
    Y0 = source.colors()[src_idx]
    Yt = target.colors()[tgt_idx]
    traj = run_flow(flow_config, kernel, EmpiricalTarget(Yt), Y0, reference=Yt if w2 else None)
    return recolor(source, traj.initial, traj.final), traj


def _config_echo(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def run_experiment(raw, output_root=None):
    """Resolve, validate and run one experiment, writing its artifacts.

    Validation failures raise :class:`ConfigurationError` before anything is
    written.  A diverging flow still writes the partial metric log and the
    last finite particles and returns ``status=3``.
    """
    cfg = resolve_config(raw)
    plan = prepare_experiment(cfg)
    out = _output_dir(cfg, output_root)
    if out.exists() and not out.is_dir():
        raise ConfigurationError(f"{out} exists and is not a directory", field="output_dir")
    name = cfg["experiment"]
    result = ExperimentResult(out)
    traj, err = None, None
    try:
        if name == "student-teacher":
            traj = _run_student_teacher(cfg, plan)
        elif name == "color-transfer":
            image, traj = color_transfer(plan["source"], plan["target_image"], plan["flow"],
                                         cfg["num_particles"], cfg["seed"], plan["kernel"], cfg["w2"])
        else:
            traj = run_flow(plan["flow"], plan["kernel"], plan["target"], plan["initial"],
                            metric_fn=_metric_fn(cfg, plan), snapshot_every=cfg["snapshot_every"])
    except DivergenceError as e:
        err, traj = e, e.trajectory
        result.status, result.message = 3, str(e)

    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["config_resolved.json"] = lambda p: p.write_text(_config_echo(cfg))
    files["metrics.csv"] = lambda p: write_metrics_csv(traj, p, cfg["record_wall_time"])
    files["particles_initial.csv"] = lambda p: write_particles_csv(traj.initial, p, 0)
    final_step = traj.steps_completed
    files["particles_final.csv"] = lambda p: write_particles_csv(traj.final, p, final_step)
    if traj.snapshots:
        files["snapshots.csv"] = lambda p: write_snapshots_csv(traj.snapshots, p)
    if name == "student-teacher":
        rows = [(r.step, r.mmd2, r.extra["validation"]) for r in traj.log]
        files["objectives.csv"] = lambda p: _write_table(p, ("step", "train", "validation"), rows)
    if name == "logistic":
        rows = [(r.step, r.extra["accuracy"], r.extra["log_likelihood"]) for r in traj.log]
        files["predictive.csv"] = lambda p: _write_table(p, ("step", "accuracy", "log_likelihood"), rows)
    if name == "color-transfer" and err is None:
        files[cfg["output_image"]] = lambda p: write_ppm(image, p)
    for fname, writer in files.items():
        writer(out / fname)
        result.files.append(out / fname)
    result.trajectory = traj
    return result


def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path!r} does not exist") from None
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"{path}: invalid JSON ({err})") from None
