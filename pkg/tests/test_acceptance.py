"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion n] PASS/FAIL`` line with its key
numbers and wall time, whatever the outcome.
"""

import time
from itertools import permutations

import numpy as np
import pytest

from helpers import central_jacobian, stack_fd_errors
from srmmd.experiments import prepare_experiment, resolve_config, run_experiment
from srmmd.flows import FlowConfig, mmd_field, run_flow, vector_field
from srmmd.imaging import PpmImage, write_ppm
from srmmd.kernels import FeatureMapKernel, GaussianKernel, PolynomialKernel
from srmmd.metrics import mmd_squared, w2_exact
from srmmd.stein import SteinKernel, stein_identity_statistic
from srmmd.targets import EmpiricalTarget, GaussianMixture, StudentTeacherSetup, four_gaussians, uniform_sphere
from srmmd.witness import assemble_witness, primal_witness_oracle


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(number, passed, detail, budget, shared=0.0):
        # ``shared`` adds the cost of runs made once in a module fixture
        elapsed = time.perf_counter() - start + shared
        ok = passed and elapsed < budget
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {detail} "
                  f"({elapsed:.1f} s, budget {budget:.0f} s)")
        assert passed, detail
        assert elapsed < budget, f"took {elapsed:.1f} s"

    return emit


def std_normal():
    return GaussianMixture([1.0], [[0.0]], [[[1.0]]])


def plan_for(raw):
    cfg = resolve_config(raw)
    return cfg, prepare_experiment(cfg)


def toy_plan(seed, **flow):
    return plan_for({"experiment": "toy-mixture", "seed": seed, "num_particles": 100,
                     "flow": {"iterations": 4000, "step_size": 0.1, "reg": 0.1, **flow}})


def mmd_only(plan):
    kernel, target = plan["kernel"], plan["target"]
    return lambda X: {"mmd2": mmd_squared(kernel, X, target)}


SEEDS_TOY = range(10)


@pytest.fixture(scope="module")
def toy_runs():
    """SrMMD and vanilla MMD runs on the 4-Gaussian benchmark, shared by two criteria."""
    out, seconds = {"srmmd": [], "mmd": []}, {}
    for kind in out:
        start = time.perf_counter()
        for seed in SEEDS_TOY:
            cfg, plan = toy_plan(seed, kind=kind, cadence=4000)
            extra = range(1, 501) if kind == "srmmd" else ()
            traj = run_flow(plan["flow"], plan["kernel"], plan["target"], plan["initial"],
                            metric_fn=mmd_only(plan), log_steps=extra)
            out[kind].append(traj)
        seconds[kind] = time.perf_counter() - start
    return out, seconds


def test_criterion_01_dual_matches_primal(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        n, m = rng.integers(1, 21, size=2)
        reg = rng.choice([0.01, 0.1, 1.0])
        X, Y = rng.normal(size=(n, 2)), rng.normal(size=(m, 2)) + rng.normal(size=2)
        Z = rng.normal(size=(50, 2)) * 1.5
        k = PolynomialKernel(1.0)
        dual = assemble_witness(k, X, EmpiricalTarget(Y), reg, method="dense")(Z)
        primal = primal_witness_oracle(k, X, EmpiricalTarget(Y), reg)(Z)
        worst = max(worst, np.abs(dual - primal).max())
    report(1, worst < 1e-8, f"max abs witness error {worst:.2e}", 5)


def test_criterion_02_derivative_stacks(report):
    rng = np.random.default_rng(7)
    worst = {}
    cases = []
    for d in (1, 2, 5):
        cases += [(f"gaussian d={d}", GaussianKernel(1.0), d), (f"polynomial d={d}", PolynomialKernel(1.0), d)]
        fm = FeatureMapKernel(uniform_sphere(10, d, rng))
        cases.append((f"feature-map probe_dim={d}", fm, fm.dim))
    for d in (1, 2):
        target = std_normal() if d == 1 else four_gaussians()
        cases.append((f"stein d={d}", SteinKernel(GaussianKernel(1.0), target), d))
    for name, k, d in cases:
        errs = [stack_fd_errors(k, *rng.uniform(-2, 2, size=(2, d))) for _ in range(20)]
        worst[name] = float(np.max(errs))
    top = max(worst, key=worst.get)
    report(2, worst[top] < 1e-5, f"worst relative error {worst[top]:.2e} ({top})", 10)


def test_criterion_03_stein_identity(report):
    ratios = []
    for name, target in (("normal", std_normal()), ("four", four_gaussians())):
        sk = SteinKernel(GaussianKernel(1.0), target)
        points = target.sample(5, 11)
        for j, y in enumerate(points):
            res = stein_identity_statistic(sk, target.sample, y, 100_000, seed=100 + j)
            ratios.append(abs(res.mean) / res.stderr)
    worst = max(ratios)
    report(3, worst <= 4.0, f"max |mean| / stderr {worst:.2f} over {len(ratios)} points", 10)


def test_criterion_04_stein_diagonal(report):
    sk = SteinKernel(GaussianKernel(1.0), std_normal())
    diag = max(abs(sk([x], [x]) - (x * x + 1)) for x in (0.0, 1.0, 2.0))
    cross = sk.derivative_stack([0.0], [0.0]).cross_hessian[0, 0]
    fd = central_jacobian(lambda b: sk.derivative_stack([0.0], b).grad1, np.zeros(1))[0, 0]
    ok = diag < 1e-10 and abs(cross - 6.0) < 1e-12 and abs(fd - cross) < 1e-6
    report(4, ok, f"diagonal error {diag:.1e}, cross {float(cross)!r}, fd gap {abs(fd - cross):.1e}", 1)


def test_criterion_05_tikhonov_limit(report):
    rng = np.random.default_rng(5)
    reg, worst = 1e6, 0.0
    for _ in range(10):
        X, Y = rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + 1.0
        k = GaussianKernel(1.0)
        target = EmpiricalTarget(Y)
        scaled = reg * vector_field("srmmd", k, target, X, FlowConfig(reg=reg))
        plain = mmd_field(k, X, target)
        worst = max(worst, float(np.max(np.abs(scaled - plain) / np.abs(plain))))
    report(5, worst < 1e-3, f"max entrywise relative error {worst:.2e}", 5)


def test_criterion_06_hybrid_reduction(report):
    cfg, plan = toy_plan(0, iterations=100, cadence=100)
    init = plan["initial"][:50]
    runs = {}
    for kind in ("srmmd", "hrmmd"):
        flow = FlowConfig(kind=kind, step_size=0.1, reg=0.1, alpha=1.0, iterations=100, cadence=100)
        runs[kind] = run_flow(flow, plan["kernel"], plan["target"], init, metric_fn=lambda X: {}).final
    gap = float(np.abs(runs["srmmd"] - runs["hrmmd"]).max())
    report(6, gap < 1e-6, f"max position gap after 100 steps {gap:.2e}", 30)


def test_criterion_07_decay(report, toy_runs):
    runs, seconds = toy_runs
    worst_rise, ratios = -np.inf, []
    for traj in runs["srmmd"]:
        steps, vals = traj.steps, traj.column("mmd2")
        early = vals[steps <= 500]
        worst_rise = max(worst_rise, float(np.diff(early).max()))
        ratios.append(vals[-1] / vals[0])
    ratio = float(np.median(ratios))
    ok = worst_rise <= 1e-6 and ratio < 0.1
    report(7, ok, f"largest step increase {worst_rise:.2e}, median final/initial {ratio:.2e}",
           300, shared=seconds["srmmd"])


def test_criterion_08_srmmd_beats_mmd(report, toy_runs):
    runs, seconds = toy_runs
    final = {k: float(np.median([t.column("mmd2")[-1] for t in r])) for k, r in runs.items()}
    report(8, final["srmmd"] < final["mmd"],
           f"median final mmd2 srmmd {final['srmmd']:.3e} vs mmd {final['mmd']:.3e}", 600,
           shared=sum(seconds.values()))


def test_criterion_09_sampling(report):
    finals = {"srmmd": [], "ksd": []}
    for seed in range(5):
        for kind, flow in (("srmmd", {"step_size": 0.1, "reg": 0.5}), ("ksd", {"step_size": 0.01})):
            cfg, plan = plan_for({"experiment": "sampling-mixture", "seed": seed,
                                  "flow": {"kind": kind, "iterations": 2000, "cadence": 2000, **flow}})
            traj = run_flow(plan["flow"], plan["kernel"], plan["target"], plan["initial"])
            finals[kind].append(traj.column("ksd2")[-1])
    med = {k: float(np.median(v)) for k, v in finals.items()}
    report(9, med["srmmd"] < med["ksd"], f"median ksd2 srmmd {med['srmmd']:.4f} vs ksd {med['ksd']:.4f}", 900)


def test_criterion_10_w2_oracle(report):
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(1, 7))
        X, Y = rng.normal(size=(2, n, 2))
        brute = np.sqrt(min(np.mean(np.sum((X - Y[list(p)]) ** 2, axis=1)) for p in permutations(range(n))))
        mismatches += w2_exact(X, Y) != brute
    report(10, mismatches == 0, f"{mismatches} of 50 instances differ from brute force", 5)


def test_criterion_11_student_teacher(report, tmp_path):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        teacher, students = rng.normal(size=(3, 13)), rng.normal(size=(4, 13))
        probes = uniform_sphere(15, 10, rng)
        setup = StudentTeacherSetup(teacher, probes, probes)
        via_kernel = mmd_squared(FeatureMapKernel(probes), students, EmpiricalTarget(teacher))
        worst = max(worst, abs(setup.objective(students, probes) - via_kernel))
    drops = []
    for seed in range(5):
        res = run_experiment({"experiment": "student-teacher", "seed": seed,
                              "output_dir": str(tmp_path / f"st{seed}"), "flow": {"cadence": 2000}})
        val = res.trajectory.column("validation")
        drops.append(val[0] - val[-1])
    med = float(np.median(drops))
    report(11, worst < 1e-10 and med > 0,
           f"identity error {worst:.1e}, median validation drop 0->2000 {med:.4f}", 600)


def test_criterion_12_logistic_parity(report, tmp_path):
    acc = {"srmmd": [], "svgd": []}
    for seed in range(5):
        for kind in acc:
            res = run_experiment({"experiment": "logistic", "seed": seed, "output_dir": str(tmp_path / f"{kind}{seed}"),
                                  "flow": {"kind": kind, "step_size": 0.1, "iterations": 3000, "cadence": 3000}})
            acc[kind].append(res.trajectory.column("accuracy")[-1])
    med = {k: float(np.median(v)) for k, v in acc.items()}
    gap = abs(med["srmmd"] - med["svgd"])
    report(12, gap <= 0.02, f"median test accuracy srmmd {med['srmmd']:.3f} vs svgd {med['svgd']:.3f}", 600)


def two_tone(path, first, second, shape=(12, 10)):
    px = np.empty(shape + (3,), dtype=np.uint8)
    px[:, : shape[1] // 2] = first
    px[:, shape[1] // 2:] = second
    write_ppm(PpmImage(px), path)


def test_criterion_13_determinism(report, tmp_path):
    two_tone(tmp_path / "src.ppm", (30, 60, 200), (220, 220, 40))
    two_tone(tmp_path / "tgt.ppm", (200, 30, 30), (20, 160, 60))
    short = {"iterations": 20, "cadence": 5}
    configs = [
        {"experiment": "toy-mixture", "flow": short, "snapshot_every": 10},
        {"experiment": "swiss-roll", "num_particles": 40, "target": {"num_samples": 60}, "flow": short},
        {"experiment": "sampling-mixture", "num_particles": 30, "flow": short},
        {"experiment": "logistic", "flow": short},
        {"experiment": "student-teacher", "num_particles": 10,
         "target": {"num_train": 50, "num_val": 50, "batch_size": 20}, "flow": short},
        {"experiment": "color-transfer", "source": str(tmp_path / "src.ppm"), "target": str(tmp_path / "tgt.ppm"),
         "num_particles": 60, "flow": short},
    ]
    differing, compared = [], 0
    for cfg in configs:
        name = cfg["experiment"]
        a = run_experiment({**cfg, "seed": 3, "output_dir": str(tmp_path / f"{name}-a")})
        b = run_experiment({**cfg, "seed": 3, "output_dir": str(tmp_path / f"{name}-b")})
        for pa, pb in zip(a.files, b.files):
            if pa.suffix in (".csv", ".ppm"):
                compared += 1
                if pa.read_bytes() != pb.read_bytes():
                    differing.append(f"{name}/{pa.name}")
    report(13, not differing, f"{compared} files compared, differing: {differing or 'none'}", 120)
