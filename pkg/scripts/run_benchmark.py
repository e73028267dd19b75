"""Sweep one bundled preset and aggregate it, optionally at reduced size.

    python scripts/run_benchmark.py gmm --jobs 4 --out runs/gmm
    python scripts/run_benchmark.py semi-synthetic --quick --out runs/seq

``--quick`` keeps the grid but cuts seeds to 3 and iterations to 5, which is
enough to check the pipeline end to end in a few minutes.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

from pgvae import cli
from pgvae.config import load, preset_names


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("preset", choices=preset_names())
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--quick", action="store_true")
    args = p.parse_args(argv)

    cfg = load(args.preset)
    if args.quick:
        cfg = dataclasses.replace(
            cfg, seeds=cfg.seeds[:3], mbo=dataclasses.replace(cfg.mbo, iterations=5),
        )
    results = cli.execute(cfg, args.out, expand_grid=True, jobs=args.jobs)
    return cli.main(["report", str(results), "--out", str(args.out / "aggregate.csv"),
                     "--svg", str(args.out / "svg")])


if __name__ == "__main__":
    sys.exit(main())
