"""Command-line entry point: ``run``, ``color-transfer``, ``stein-check`` and ``eval``.

Exit codes: 0 success, 1 runtime or input error, 2 invalid configuration,
3 flow divergence (partial outputs are kept).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PpmFormatError
from .experiments import (
    build_target,
    load_config,
    read_particles_csv,
    run_experiment,
    substream,
)
from .kernels import GaussianKernel, kernel_from_config
from .metrics import ksd_squared, mmd_squared, w2_exact
from .stein import SteinKernel, stein_identity_statistic
from .targets import SteinTarget

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def parse_spec(text):
    """A JSON object given inline, as a path to a JSON file, or a bare kind name."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"invalid JSON spec ({err})") from None
    if text.endswith(".json"):
        return load_config(text)
    return {"kind": text}


def _report(result):
    for path in result.files:
        print(path)
    if result.status:
        print(f"flow diverged: {result.message}", file=sys.stderr)
    return result.status


def cmd_run(args):
    return _report(run_experiment(load_config(args.config), output_root=args.output_root))


def cmd_color_transfer(args):
    cfg = load_config(args.config) if args.config else {}
    cfg.update(experiment="color-transfer", source=args.source, target=args.target)
    if args.output:
        cfg["output_image"] = args.output
    if args.num_particles is not None:
        cfg["num_particles"] = args.num_particles
    return _report(run_experiment(cfg, output_root=args.output_root))


def cmd_stein_check(args):
    spec = parse_spec(args.target)
    spec["representation"] = "stein"
    dist, _ = build_target(spec, seed=args.seed)
    if not hasattr(dist, "sample"):
        raise ConfigurationError("stein-check needs a target that can be sampled", field="target")
    sk = SteinKernel(GaussianKernel(args.lengthscale), dist)
    if args.points:
        points = np.atleast_2d(np.asarray(json.loads(args.points), dtype=float))
    else:
        points = dist.sample(args.num_points, substream(args.seed, "reference"))
    all_passed = True
    for y in points:
        res = stein_identity_statistic(sk, dist.sample, y, args.samples, seed=args.seed)
        verdict = {True: "pass", False: "FAIL", None: "n/a"}[res.passed]
        all_passed &= res.passed is not False
        stderr = "nan" if res.stderr is None else f"{res.stderr:.6g}"
        print(f"y={np.array2string(y, precision=4)} mean={res.mean:.6g} stderr={stderr} {verdict}")
    return EXIT_OK if all_passed else EXIT_ERROR


def cmd_eval(args):
    X = read_particles_csv(args.particles)
    spec = parse_spec(args.target)
    kernel = kernel_from_config(parse_spec(args.kernel)) if args.kernel else GaussianKernel(1.0)
    dist, target = build_target(spec, kernel, seed=args.seed)
    out = {"num_particles": len(X)}
    if isinstance(target, SteinTarget):
        out["ksd2"] = ksd_squared(SteinKernel(kernel, dist), X)
    else:
        out["mmd2"] = mmd_squared(kernel, X, target)
    if hasattr(dist, "sample"):
        out["w2"] = w2_exact(X, dist.sample(len(X), substream(args.seed, "reference")))
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="srmmd", description="Particle flows under a gradient-regularized MMD.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config", type=Path)
    r.add_argument("--output-root", default=None, help="directory prefix for relative output_dir")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("color-transfer", help="recolour a P6 PPM image towards another")
    c.add_argument("source")
    c.add_argument("target")
    c.add_argument("--config", default=None, help="JSON config with flow/kernel overrides")
    c.add_argument("--output", default=None, help="file name of the recoloured image")
    c.add_argument("--num-particles", type=int, default=None)
    c.add_argument("--output-root", default=None)
    c.set_defaults(func=cmd_color_transfer)

    s = sub.add_parser("stein-check", help="Monte-Carlo test of E_pi k_pi(X, y) = 0")
    s.add_argument("target", help="target spec: kind name, inline JSON or .json file")
    s.add_argument("-M", "--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lengthscale", type=float, default=1.0)
    s.add_argument("--points", default=None, help="JSON list of query points")
    s.add_argument("--num-points", type=int, default=5)
    s.set_defaults(func=cmd_stein_check)

    e = sub.add_parser("eval", help="discrepancy metrics of a particle CSV against a target")
    e.add_argument("particles")
    e.add_argument("target", help="target spec: kind name, inline JSON or .json file")
    e.add_argument("--kernel", default=None, help="kernel spec (default Gaussian, lengthscale 1)")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (PpmFormatError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
