"""Write a small synthetic reference-field dataset for the reference-field preset.

The target is a 2-D log-potential of three point charges sampled on a 6x6
grid.  Each design is the target plus a smooth random perturbation of
random amplitude, scored with the negative log MSE to the target.

    python scripts/make_field_demo.py src/pgvae/presets/data
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from pgvae.oracles import ReferenceFieldOracle
from pgvae.rng import Rng


def target_field(size: int) -> np.ndarray:
    g = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    charges = [(-0.5, -0.4, 1.0), (0.6, -0.2, -0.7), (0.0, 0.7, 0.5)]
    u = np.zeros_like(xx)
    for cx, cy, q in charges:
        u -= q * np.log(np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) + 0.1)
    return u


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--size", type=int, default=6)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = Rng(args.seed)
    target = target_field(args.size)
    oracle = ReferenceFieldOracle(target)
    g = np.linspace(0.0, np.pi, args.size)
    designs = []
    for _ in range(args.n):
        kx, ky = rng.integers(1, 4, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        bump = np.outer(np.sin(kx * g + phase[0]), np.sin(ky * g + phase[1]))
        amp = 10 ** rng.uniform(-3, 0.5)
        designs.append(target + amp * bump + 0.01 * amp * rng.normal(target.shape))
    designs = np.array(designs)
    y = oracle.score(designs)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "field_target.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[f"{v:.6g}" for v in row] for row in target])
    with open(out / "field_designs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(target.size)] + ["property"])
        for d, v in zip(designs.reshape(args.n, -1), y):
            w.writerow([f"{x:.6g}" for x in d] + [f"{v:.6g}"])
    print(f"wrote {args.n} designs to {out}")


if __name__ == "__main__":
    main()
