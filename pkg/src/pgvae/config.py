"""Declarative experiment configuration stored as TOML.

A config describes one benchmark cell (or, with a ``[grid]`` table, a
Cartesian sweep of cells).  Top-level keys and tables::

    name = "gmm"                  # free-form label, copied into results
    schemes = ["pgvae", "rwr"]    # any of pgvae, rwr, fwrwr, cbas
    seeds = [0, 1, 2]
    output_dir = "runs/gmm"       # optional; else $PGVAE_OUTPUT_DIR or ./pgvae-out

    [dataset]   kind = "gmm" | "csv" | "semi-synthetic"
    [oracle]    kind = "gmm" | "lookup" | "reference-field"
    [model]     preset = "gmm" | "protein" | "pinn", or explicit dims
    [mbo]       n_samples, iterations, initial_epochs, epochs, warm_start,
                threshold, batch_size, learning_rate
    [pgvae]     tau, lambda_r
    [rwr]       gamma
    [cbas]      quantile, mc_samples
    [grid]      optional sweep axes: rho, delta_mu, si, sigma1, n_samples, hr

Dataset kinds:

* ``gmm``: ``n`` draws around mode 1 and ``round(rho * n)`` in the
  sampling interval ``si = [start, end]`` of mode 2.
* ``csv``: ``path`` and ``schema`` (``sequence`` | ``continuous``), sampled
  into an imbalanced trainset via ``low``/``high`` ranges, ``rho``, ``n_low``.
  Ranges are tables ``{kind = "percentile", lo = 0, hi = 30}``.
* ``semi-synthetic``: a sequence source (``source = "synthetic"`` with
  ``length``, ``alphabet_size``, ``epistasis``, ``sharpness``; or
  ``source = "csv"`` with ``path``) tagged at ``threshold``
  (``threshold_kind`` = ``percentile`` | ``absolute``) and then sampled like
  ``csv``.

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .datagen import RangeSpec
from .generative import ARCHITECTURES, PgvaeHyper
from .mbo import SCHEMES, Cbas, FwRwr, MboConfig, Pgvae, Rwr

OUTPUT_ENV = "PGVAE_OUTPUT_DIR"
DEFAULT_OUTPUT = "pgvae-out"
GRID_AXES = ("rho", "delta_mu", "si", "sigma1", "n_samples", "hr")


class ConfigError(ValueError):
    """Raised for any invalid or inconsistent configuration."""


@dataclass
class DatasetConfig:
    kind: str = "gmm"
    # gmm
    n: int = 500
    rho: float = 0.2
    si: tuple[float, float] = (0.5, 1.0)
    mode1_std: float = 0.6
    # csv / semi-synthetic
    path: str = ""
    schema: str = "sequence"
    alphabet: str = ""
    low: tuple[str, float, float] = ("percentile", 0.0, 30.0)
    high: tuple[str, float, float] = ("percentile", 60.0, 70.0)
    n_low: int = 500
    # semi-synthetic
    source: str = "synthetic"
    length: int = 4
    alphabet_size: int = 20
    epistasis: float = 1.0
    sharpness: float | None = None
    threshold: float = 30.0
    threshold_kind: str = "percentile"
    tag: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    data_seed: int = 0


@dataclass
class OracleConfig:
    kind: str = "gmm"
    mu1: float = 0.0
    sigma1: float = 0.25
    w1: float = 1.0
    mu2: float = 15.0
    sigma2: float = 1.0
    w2: float = 2.5
    target: str = ""
    weights: str = ""
    floor: float = 1e-12


@dataclass
class ModelConfig:
    preset: str = "gmm"
    encoder_hidden: tuple[int, ...] = ()
    latent_dim: int = 0
    slope: float = 0.01

    def resolved(self) -> tuple[tuple[int, ...], int]:
        """``(encoder_hidden, latent_dim)`` after applying the preset."""
        base = ARCHITECTURES.get(self.preset, {}) if self.preset else {}
        hidden = self.encoder_hidden or base.get("encoder_hidden", ())
        latent = self.latent_dim or base.get("latent_dim", 0)
        return tuple(hidden), int(latent)


@dataclass
class MboSection:
    n_samples: int = 200
    iterations: int = 20
    initial_epochs: int = 200
    epochs: int = 50
    warm_start: bool = True
    threshold: float = -math.inf
    batch_size: int = 64
    learning_rate: float = 1e-3


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    schemes: tuple[str, ...] = ("pgvae", "rwr", "fwrwr", "cbas")
    seeds: tuple[int, ...] = (0,)
    output_dir: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    mbo: MboSection = field(default_factory=MboSection)
    pgvae: PgvaeHyper = field(default_factory=PgvaeHyper)
    rwr: Rwr = field(default_factory=Rwr)
    cbas: Cbas = field(default_factory=Cbas)
    grid: dict[str, list] = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    def scheme(self, name: str):
        if name == "pgvae":
            return Pgvae()
        if name == "rwr":
            return self.rwr
        if name == "fwrwr":
            return FwRwr(self.rwr.gamma)
        return self.cbas

    def mbo_config(self, scheme_name: str) -> MboConfig:
        m = self.mbo
        return MboConfig(
            n_samples=m.n_samples, iterations=m.iterations, initial_epochs=m.initial_epochs,
            epochs=m.epochs, warm_start=m.warm_start, scheme=self.scheme(scheme_name),
            hyper=self.pgvae, threshold=m.threshold, batch_size=m.batch_size,
            learning_rate=m.learning_rate,
        )

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def output_path(self, override: str | None = None) -> Path:
        import os

        if override:
            return Path(override)
        if self.output_dir:
            return self.resolve(self.output_dir)
        return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))

    @property
    def delta_mu(self) -> float:
        return self.oracle.mu2 - self.oracle.mu1


def _section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        if key in ("low", "high"):
            value = _range_tuple(value, f"{where}.{key}")
        elif isinstance(getattr(defaults, key), tuple):
            if not isinstance(value, list):
                raise ConfigError(f"[{where}] {key} must be a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _range_tuple(value, where: str) -> tuple[str, float, float]:
    if isinstance(value, dict):
        try:
            value = (value["kind"], value["lo"], value["hi"])
        except KeyError as exc:
            raise ConfigError(f"{where} is missing {exc.args[0]!r}") from None
    if len(value) != 3:
        raise ConfigError(f"{where} must be {{kind, lo, hi}}")
    kind, lo, hi = value
    try:
        RangeSpec(kind, float(lo), float(hi))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return (str(kind), float(lo), float(hi))


def from_dict(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    raw = dict(raw)
    top = {k: raw.pop(k) for k in ("name", "schemes", "seeds", "output_dir") if k in raw}
    sections = {
        "dataset": DatasetConfig, "oracle": OracleConfig, "model": ModelConfig,
        "mbo": MboSection, "pgvae": PgvaeHyper, "rwr": Rwr, "cbas": Cbas,
    }
    parsed = {name: _section(cls, raw.pop(name, {}), name) for name, cls in sections.items()}
    grid = raw.pop("grid", {})
    if raw:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(raw))}")
    cfg = ExperimentConfig(
        name=str(top.get("name", "experiment")),
        schemes=tuple(top.get("schemes", ExperimentConfig.schemes)),
        seeds=tuple(int(s) for s in top.get("seeds", (0,))),
        output_dir=str(top.get("output_dir", "")),
        grid={k: list(v) for k, v in grid.items()},
        base_dir=str(base_dir),
        **parsed,
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Static checks; data files are checked when the dataset is built."""
    if not cfg.schemes:
        raise ConfigError("at least one scheme is required")
    for s in cfg.schemes:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    d, o = cfg.dataset, cfg.oracle
    if d.kind not in ("gmm", "csv", "semi-synthetic"):
        raise ConfigError(f"unknown dataset kind {d.kind!r}")
    if o.kind not in ("gmm", "lookup", "reference-field"):
        raise ConfigError(f"unknown oracle kind {o.kind!r}")
    if d.kind == "gmm" and o.kind != "gmm":
        raise ConfigError("a gmm dataset needs a gmm oracle")
    if d.kind == "semi-synthetic" and o.kind != "lookup":
        raise ConfigError("a semi-synthetic dataset needs a lookup oracle")
    if d.kind == "csv" and not d.path:
        raise ConfigError("[dataset] kind = 'csv' needs a path")
    if d.kind == "semi-synthetic" and d.source not in ("synthetic", "csv"):
        raise ConfigError(f"unknown semi-synthetic source {d.source!r}")
    if d.kind == "semi-synthetic" and d.source == "csv" and not d.path:
        raise ConfigError("semi-synthetic csv source needs a path")
    if d.threshold_kind not in ("percentile", "absolute"):
        raise ConfigError(f"unknown threshold_kind {d.threshold_kind!r}")
    if o.kind == "reference-field" and not o.target:
        raise ConfigError("[oracle] reference-field needs a target grid path")
    if cfg.model.preset and cfg.model.preset not in ARCHITECTURES:
        raise ConfigError(f"unknown model preset {cfg.model.preset!r}")
    hidden, latent = cfg.model.resolved()
    if latent < 1:
        raise ConfigError("model needs latent_dim >= 1 (set it or pick a preset)")
    if any(h < 1 for h in hidden):
        raise ConfigError("hidden widths must be >= 1")
    for key in cfg.grid:
        if key not in GRID_AXES:
            raise ConfigError(f"unknown grid axis {key!r}; choose from {', '.join(GRID_AXES)}")
        if not cfg.grid[key]:
            raise ConfigError(f"grid axis {key!r} is empty")
    try:
        MboConfig(n_samples=cfg.mbo.n_samples, iterations=cfg.mbo.iterations)
    except ValueError as exc:
        raise ConfigError(f"[mbo] {exc}") from None


PRESET_DIR = Path(__file__).parent / "presets"


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


def load(path) -> ExperimentConfig:
    """Parse a config file; a bare preset name (e.g. ``gmm``) loads the bundled preset."""
    path = Path(path)
    if not path.exists() and str(path) in preset_names():
        path = PRESET_DIR / f"{path}.toml"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, base_dir=str(path.parent))


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def to_dict(cfg: ExperimentConfig) -> dict:
    out: dict = {
        "name": cfg.name,
        "schemes": list(cfg.schemes),
        "seeds": list(cfg.seeds),
    }
    if cfg.output_dir:
        out["output_dir"] = cfg.output_dir
    for name in ("dataset", "oracle", "model", "mbo", "pgvae", "rwr", "cbas"):
        section = getattr(cfg, name)
        table = {}
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if value is None:
                continue  # TOML has no null; absent means default None
            if f.name in ("low", "high"):
                value = {"kind": value[0], "lo": value[1], "hi": value[2]}
            table[f.name] = _plain(value)
        out[name] = table
    if cfg.grid:
        out["grid"] = {k: _plain(v) for k, v in cfg.grid.items()}
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str, base_dir: str = ".") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None
    return from_dict(raw, base_dir=base_dir)


def grid_cells(cfg: ExperimentConfig) -> list[tuple[dict, ExperimentConfig]]:
    """Expand ``cfg.grid`` into ``(axis values, cell config)`` pairs.

    Axes are iterated in :data:`GRID_AXES` order with the last axis varying
    fastest.  A config without a grid is a single cell.
    """
    axes = [a for a in GRID_AXES if a in cfg.grid]
    cells = [({}, cfg)]
    for axis in axes:
        cells = [
            ({**vals, axis: v}, apply_axis(c, axis, v))
            for vals, c in cells
            for v in cfg.grid[axis]
        ]
    return cells


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    d, o, m = cfg.dataset, cfg.oracle, cfg.mbo
    if axis == "rho":
        d = dataclasses.replace(d, rho=float(value))
    elif axis == "delta_mu":
        o = dataclasses.replace(o, mu2=o.mu1 + float(value))
    elif axis == "si":
        d = dataclasses.replace(d, si=(float(value[0]), float(value[1])))
    elif axis == "sigma1":
        o = dataclasses.replace(o, sigma1=float(value))
    elif axis == "n_samples":
        m = dataclasses.replace(m, n_samples=int(value))
    elif axis == "hr":
        kind = d.high[0]
        d = dataclasses.replace(d, high=(kind, float(value[0]), float(value[1])))
    else:
        raise ConfigError(f"unknown grid axis {axis!r}")
    return dataclasses.replace(cfg, dataset=d, oracle=o, mbo=m, grid={})
