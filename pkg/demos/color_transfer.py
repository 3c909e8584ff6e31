"""Recolour a synthetic image so that its palette matches another one.

Pixel colours are points in the unit RGB cube.  A random subset of source
colours flows towards a subset of target colours and every source pixel takes
the transported colour of its nearest flowed particle.

    python demos/color_transfer.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from srmmd.experiments import color_transfer
from srmmd.flows import FlowConfig
from srmmd.imaging import PpmImage, write_ppm


def gradient_image(rng, base, spread, shape=(48, 64)):
    # a smooth ramp around one base colour plus a little noise
    ramp = np.linspace(-1, 1, shape[1])[None, :, None]
    px = np.asarray(base, dtype=float) + spread * ramp + rng.normal(0, 6, size=shape + (3,))
    return PpmImage(np.clip(np.round(px), 0, 255).astype(np.uint8))


def main(out="color-demo"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    source = gradient_image(rng, (60, 90, 170), np.array([30, 30, 60]))
    target = gradient_image(rng, (200, 120, 50), np.array([40, 50, -20]))
    cfg = FlowConfig(step_size=0.01, reg=0.01, iterations=300, cadence=50)
    recolored, traj = color_transfer(source, target, cfg, num_particles=300, seed=0)
    for name, img in (("source", source), ("target", target), ("recolored", recolored)):
        write_ppm(img, out / f"{name}.ppm")
        print(f"{name:>9}: mean colour {img.colors().mean(0).round(3)}  -> {out / (name + '.ppm')}")
    print(f"palette mmd2 {traj.log[0].mmd2:.4f} -> {traj.log[-1].mmd2:.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
