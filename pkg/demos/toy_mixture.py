"""Transport a Gaussian blob onto four Gaussians, with and without the gradient penalty.

Both flows see the same kernel, step size and starting particles.  The
regularized flow drives the squared MMD down by orders of magnitude more over
the same number of steps, and reaches a smaller transport distance.

    python demos/toy_mixture.py [iterations]
"""

import sys

from srmmd.experiments import prepare_experiment, resolve_config
from srmmd.flows import run_flow


def run(kind, iterations):
    cfg = resolve_config({"experiment": "toy-mixture", "flow": {"kind": kind, "iterations": iterations,
                                                              "cadence": max(iterations // 8, 1)}})
    plan = prepare_experiment(cfg)
    return run_flow(plan["flow"], plan["kernel"], plan["target"], plan["initial"], reference=plan["reference"])


def main(iterations=1000):
    trajs = {kind: run(kind, iterations) for kind in ("srmmd", "mmd")}
    print(f"{'step':>6} {'srmmd mmd2':>12} {'mmd mmd2':>12} {'srmmd w2':>9} {'mmd w2':>9}")
    a, b = trajs["srmmd"], trajs["mmd"]
    for i, step in enumerate(a.steps):
        print(f"{step:>6} {a.log[i].mmd2:>12.3e} {b.log[i].mmd2:>12.3e} {a.log[i].w2:>9.3f} {b.log[i].w2:>9.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1000)
