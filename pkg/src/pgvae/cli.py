"""Command-line entry point: ``pgvae run|sweep|report|gradcheck``.

Exit codes: 0 success, 1 runtime failure (including failed gradient
checks), 2 invalid input (bad config, missing file, CSV schema mismatch).
The default output directory is ``$PGVAE_OUTPUT_DIR`` or ``./pgvae-out``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import DEFAULT_OUTPUT, OUTPUT_ENV, ConfigError, ExperimentConfig
from .experiment import CELL_COLUMNS, LATENT_COLUMNS, RESULT_COLUMNS, build_problem, fmt, run_job
from .gradcheck import TOLERANCE, registered_losses, run_suite
from .mbo import RunMetrics, aggregate_runs
from .svg import Plot, Series, render

log = logging.getLogger("pgvae")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
AGGREGATE_COLUMNS = CELL_COLUMNS + ("n_runs", "metric", "iteration", "mean", "ci95")
PLOT_AXES = ("rho", "hr", "si", "delta_mu", "sigma1", "n_samples")


class UsageError(Exception):
    """Bad user input; maps to exit code 2."""


def _jobs(cells, schemes, seeds):
    return [(vals, cell, s, seed) for vals, cell in cells for s in schemes for seed in seeds]


def _job_entry(args):
    cell, scheme, seed = args
    return run_job(cell, scheme, seed)


def _preflight(cells, seeds) -> None:
    for _, cell in cells:
        try:
            build_problem(cell, seeds[0])
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(f"cannot build the dataset for {cell.name}: {exc}") from None


def execute(cfg: ExperimentConfig, out_dir: Path, expand_grid: bool, jobs: int = 1) -> Path:
    """Run every (cell, scheme, seed) job, streaming rows to CSV in job order."""
    cells = config_mod.grid_cells(cfg) if expand_grid else [({}, cfg)]
    _preflight(cells, cfg.seeds)
    work = _jobs(cells, cfg.schemes, cfg.seeds)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path, latent_path = out_dir / "results.csv", out_dir / "latent.csv"
    with open(results_path, "w", newline="", encoding="utf-8") as rf, \
            open(latent_path, "w", newline="", encoding="utf-8") as lf:
        rw, lw = csv.writer(rf, lineterminator="\n"), csv.writer(lf, lineterminator="\n")
        rw.writerow(RESULT_COLUMNS)
        lw.writerow(LATENT_COLUMNS)
        rf.flush()
        lf.flush()

        def emit(i, job, output):
            rw.writerows(output.rows)
            lw.writerows(output.latent)
            rf.flush()
            lf.flush()
            vals, _, scheme, seed = job
            final = next(r[-1] for r in reversed(output.rows) if r[9] == "cum_max")
            label = ", ".join(f"{k}={v}" for k, v in vals.items()) or cfg.name
            print(f"[{i + 1}/{len(work)}] {label} {scheme} seed={seed} cum_max={float(final):.4f}", file=sys.stderr)

        if jobs <= 1:
            for i, job in enumerate(work):
                emit(i, job, run_job(job[1], job[2], job[3]))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_job_entry, (c, s, seed)) for _, c, s, seed in work]
                # single writer, submission order: output is independent of scheduling
                for i, (job, fut) in enumerate(zip(work, futures)):
                    emit(i, job, fut.result())
    return results_path


def _load_config(path: str) -> ExperimentConfig:
    return config_mod.load(path)


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if cfg.grid:
        log.warning("config declares a [grid]; 'run' uses the base cell only (see 'sweep')")
    out = execute(cfg, cfg.output_path(args.out), expand_grid=False)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    if not cfg.grid:
        raise ConfigError("sweep needs a [grid] table with at least one axis")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = execute(cfg, cfg.output_path(args.out), expand_grid=True, jobs=args.jobs)
    print(f"wrote {out}")
    return EXIT_OK


def read_results(paths: list[str]) -> dict[tuple, dict[int, dict[tuple[str, int], float]]]:
    """``cell -> seed -> (metric, iteration) -> value`` from one or more results CSVs."""
    if not paths:
        raise UsageError("report needs at least one results CSV")
    rows = []
    for p in paths:
        try:
            with open(p, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header is None or tuple(header) != RESULT_COLUMNS:
                    raise UsageError(f"{p}: header does not match the results schema")
                for lineno, row in enumerate(reader, start=2):
                    if len(row) != len(RESULT_COLUMNS):
                        raise UsageError(f"{p}:{lineno}: expected {len(RESULT_COLUMNS)} fields")
                    try:
                        rows.append((tuple(row[:8]), int(row[8]), row[9], int(row[10]), float(row[11])))
                    except ValueError:
                        raise UsageError(f"{p}:{lineno}: non-numeric seed, iteration or value") from None
        except OSError as exc:
            raise UsageError(f"cannot read {p}: {exc.strerror}") from None
    rows.sort()
    data: dict = defaultdict(lambda: defaultdict(dict))
    for cell, seed, metric, it, value in rows:
        slot = data[cell][seed]
        if (metric, it) in slot and slot[(metric, it)] != value:
            raise UsageError(f"conflicting values for {cell} seed {seed} {metric}[{it}]")
        slot[(metric, it)] = value
    return data


def _run_metrics(values: dict[tuple[str, int], float]) -> RunMetrics:
    m = RunMetrics()
    for name in RunMetrics.SERIES:
        its = sorted(i for (k, i) in values if k == name)
        setattr(m, name, [values[(name, i)] for i in its])
    m.base = {k[5:]: v for (k, _), v in values.items() if k.startswith("base_")}
    return m


def aggregate_cell(seeds: dict[int, dict]) -> tuple[int, dict[str, np.ndarray], np.ndarray]:
    runs = [_run_metrics(seeds[s]) for s in sorted(seeds)]
    lengths = {len(r.cum_max) for r in runs}
    if len(lengths) != 1:
        raise UsageError("runs of one cell have different iteration counts")
    if len(runs) >= 2:
        agg = aggregate_runs(runs)
        return agg.n_runs, agg.mean, agg.cum_max_ci
    r = runs[0]
    mean = {s: np.asarray(getattr(r, s), dtype=float) for s in RunMetrics.SERIES}
    for k, v in r.base.items():
        mean["base_" + k] = np.array([v])
    return 1, mean, np.full(len(r.cum_max), math.nan)


def _axis_key(axis: str, value: str):
    if value == "":
        return (0.0,)
    if axis in ("hr", "si"):
        return tuple(float(v) for v in value.split(":"))
    return (float(value),)


def plot_cells(summary: list[tuple[tuple, int, float, float, float]], svg_dir: Path) -> list[Path]:
    """One SVG per varying axis: final cumulative max per scheme plus the Base series."""
    svg_dir.mkdir(parents=True, exist_ok=True)
    written = []
    idx = {c: i for i, c in enumerate(CELL_COLUMNS)}
    for axis in PLOT_AXES:
        others = [a for a in PLOT_AXES if a != axis]
        groups: dict = defaultdict(list)
        for cell, *rest in summary:
            groups[(cell[idx["dataset"]],) + tuple(cell[idx[a]] for a in others)].append((cell, *rest))
        for gkey, members in sorted(groups.items()):
            xs = sorted({m[0][idx[axis]] for m in members}, key=lambda v: _axis_key(axis, v))
            if len(xs) < 2:
                continue
            categorical = axis in ("hr", "si")
            pos = {v: (i if categorical else float(v)) for i, v in enumerate(xs)}
            by_scheme: dict = defaultdict(list)
            base: dict = defaultdict(list)
            for cell, _, final, ci, base_max in members:
                x = cell[idx[axis]]
                by_scheme[cell[idx["scheme"]]].append((pos[x], final, 0.0 if math.isnan(ci) else ci))
                base[pos[x]].append(base_max)
            series = []
            for scheme, pts in sorted(by_scheme.items()):
                pts.sort()
                series.append(Series(scheme, [p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts]))
            bx = sorted(base)
            series.append(Series("Base", bx, [float(np.mean(base[x])) for x in bx], dashed=True, color="#000000"))
            fixed = [f"{a}={v}" for a, v in zip(others, gkey[1:]) if v != ""]
            title = f"{gkey[0]}: max property vs {axis}"
            plot = Plot(title + (f" ({', '.join(fixed)})" if fixed else ""), axis, "cumulative max", series,
                        x_ticks=xs if categorical else None)
            stem = f"{gkey[0]}_max_vs_{axis}"
            if len(groups) > 1:
                stem += "__" + "_".join(v.replace(":", "-") for v in gkey[1:] if v != "")
            path = svg_dir / f"{stem}.svg"
            path.write_text(render(plot), encoding="utf-8")
            written.append(path)
    return written


def cmd_report(args) -> int:
    data = read_results(args.results)
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)) / "aggregate.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = []
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for cell in sorted(data):
            n_runs, mean, ci = aggregate_cell(data[cell])
            for key in sorted(k for k in mean if k.startswith("base_")):
                w.writerow(list(cell) + [n_runs, key, 0, fmt(mean[key][0]), ""])
            for name in RunMetrics.SERIES:
                for t, v in enumerate(mean[name], start=1):
                    c = fmt(ci[t - 1]) if name == "cum_max" and not math.isnan(ci[t - 1]) else ""
                    w.writerow(list(cell) + [n_runs, name, t, fmt(v), c])
            base_max = float(mean["base_max"][0]) if "base_max" in mean else math.nan
            summary.append((cell, n_runs, float(mean["cum_max"][-1]), float(ci[-1]), base_max))
    print(f"{'dataset':<16} {'scheme':<7} {'rho':>6} {'hr':>8} {'si':>10} {'dmu':>5} {'sig1':>5} "
          f"{'Ns':>4} {'n':>3} {'cum_max':>9} {'ci95':>8} {'base':>8}")
    for cell, n, final, ci, base_max in summary:
        d, s, rho, hr, si, dmu, s1, ns = cell
        print(f"{d:<16} {s:<7} {rho:>6} {hr:>8} {si:>10} {dmu:>5} {s1:>5} {ns:>4} {n:>3} "
              f"{final:>9.4f} {ci:>8.4f} {base_max:>8.4f}")
    print(f"wrote {out}")
    if args.svg:
        for p in plot_cells(summary, Path(args.svg)):
            print(f"wrote {p}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    outcomes = run_suite(corrupt=args.corrupt)
    failed = []
    for o in outcomes:
        r = o.result
        status = "PASS" if o.passed else "FAIL"
        print(f"{status} {o.name:<18} max_rel_error={r.max_rel_error:.3e} "
              f"worst=block {r.worst_block} index {r.worst_index} "
              f"(analytic {r.analytic:.6g}, numeric {r.numeric:.6g})")
        if not o.passed:
            failed.append(o.name)
    if failed:
        print(f"gradient check failed (tolerance {TOLERANCE:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(outcomes)} losses within {TOLERANCE:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgvae", description="Property-guided VAE model-based design experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every scheme x seed of one config cell")
    r.add_argument("config", help="TOML experiment config")
    r.add_argument("--out", help=f"output directory (default: config output_dir, ${OUTPUT_ENV}, ./{DEFAULT_OUTPUT})")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the Cartesian product of the config's [grid] axes")
    s.add_argument("config", help="TOML experiment config with a [grid] table")
    s.add_argument("--jobs", type=int, default=1, help="concurrent worker processes (default 1)")
    s.add_argument("--out", help="output directory (same default as run)")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="aggregate results CSVs (mean and 95%% CI per cell)")
    rep.add_argument("results", nargs="*", help="results.csv files")
    rep.add_argument("--svg", metavar="DIR", help="also write SVG plots into DIR")
    rep.add_argument("--out", help=f"aggregate CSV path (default: ${OUTPUT_ENV}/aggregate.csv)")
    rep.set_defaults(func=cmd_report)

    g = sub.add_parser("gradcheck", help="finite-difference check of every registered loss")
    g.add_argument("--corrupt", choices=sorted(registered_losses()), help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted; completed cells are already on disk", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
