"""Bayesian logistic regression by particles, using only the posterior score.

A synthetic dataset with a few flipped labels is split into train and test
halves; the particles approximate the posterior over weights and predict by
averaging their class probabilities.

    python demos/logistic.py [iterations]
"""

import sys

from srmmd.experiments import run_experiment


def main(iterations=1000, out="logistic-demo"):
    for kind in ("srmmd", "svgd"):
        res = run_experiment({"experiment": "logistic", "output_dir": f"{out}/{kind}",
                              "flow": {"kind": kind, "iterations": iterations, "cadence": iterations // 4}})
        t = res.trajectory
        acc, ll = t.column("accuracy"), t.column("log_likelihood")
        for step, a, l in zip(t.steps, acc, ll):
            print(f"{kind:>6} step {step:>5}: test accuracy {a:.3f}  mean log-likelihood {l:.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1000)
