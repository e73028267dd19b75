"""Turn an :class:`ExperimentConfig` cell into trainsets, oracles, models and CSV rows.

Each ``(cell, scheme, seed)`` job draws its streams from ``Rng(seed)``:
``data`` for the trainset, ``model`` for weight init and ``mbo`` for the
loop.  All schemes of one seed therefore see the same trainset.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ExperimentConfig
from .datagen import (
    Dataset,
    ImbalanceSpec,
    RangeSpec,
    SamplingInterval,
    TagSpec,
    build_imbalanced_subset,
    load_dataset_csv,
    sample_gmm_trainset,
    semi_synthetic_transform,
    synthetic_sequence_dataset,
)
from .generative import CategoricalDecoder, GaussianDecoder, VaeModel, build_vae
from .mbo import LatentStructureReport, MboResult, RunMetrics, run_mbo
from .oracles import DEFAULT_ALPHABET, GmmOracle, LookupOracle, ReferenceFieldOracle
from .rng import Rng

RESULT_COLUMNS = (
    "dataset", "scheme", "rho", "hr", "si", "delta_mu", "sigma1", "n_samples",
    "seed", "metric", "iteration", "value",
)
CELL_COLUMNS = RESULT_COLUMNS[:8]
LATENT_COLUMNS = (
    "dataset", "scheme", "rho", "hr", "si", "delta_mu", "sigma1", "n_samples",
    "seed", "stage", "sample_id", "pc1", "pc2", "neg_sq_norm", "y",
)


def fmt(v) -> str:
    """Shortest round-tripping text for a number; blanks stay blank."""
    if v == "" or v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def gmm_oracle(cfg: ExperimentConfig) -> GmmOracle:
    o = cfg.oracle
    return GmmOracle(o.mu1, o.sigma1, o.w1, o.mu2, o.sigma2, o.w2)


@functools.lru_cache(maxsize=8)
def _sequence_source(kind, path, alphabet, length, alphabet_size, epistasis, sharpness, data_seed):
    if kind == "synthetic":
        return synthetic_sequence_dataset(
            length, alphabet_size, Rng(data_seed), sharpness=sharpness, epistasis=epistasis,
        )
    return load_dataset_csv(path, "sequence", alphabet=alphabet or DEFAULT_ALPHABET)


@functools.lru_cache(maxsize=8)
def _tagged_pool(cfg_key):
    (kind, path, alphabet, length, a_size, epistasis, sharpness, data_seed,
     threshold, threshold_kind, tag) = cfg_key
    src = _sequence_source(kind, path, alphabet, length, a_size, epistasis, sharpness, data_seed)
    tags = TagSpec(tuple(tag), len(src.alphabet))
    tagged = semi_synthetic_transform(src, threshold, tags, Rng(data_seed).child("tags"), kind=threshold_kind)
    return tagged, LookupOracle.from_dataset(tagged)


@functools.lru_cache(maxsize=8)
def _csv_pool(path, schema, alphabet):
    return load_dataset_csv(path, schema, alphabet=alphabet or DEFAULT_ALPHABET)


def _pool_and_oracle(cfg: ExperimentConfig):
    """Full design pool plus its oracle for the csv / semi-synthetic kinds."""
    d, o = cfg.dataset, cfg.oracle
    if d.kind == "semi-synthetic":
        path = str(cfg.resolve(d.path)) if d.source == "csv" else ""
        if path and not cfg.resolve(d.path).exists():
            raise ConfigError(f"dataset file not found: {path}")
        key = (d.source, path, d.alphabet, d.length, d.alphabet_size, d.epistasis,
               d.sharpness, d.data_seed, d.threshold, d.threshold_kind, tuple(d.tag))
        return _tagged_pool(key)
    path = cfg.resolve(d.path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    pool = _csv_pool(str(path), d.schema, d.alphabet)
    if o.kind == "lookup":
        oracle = LookupOracle.from_dataset(pool)
    elif o.kind == "reference-field":
        target = cfg.resolve(o.target)
        weights = cfg.resolve(o.weights) if o.weights else None
        for p in (target, weights):
            if p is not None and not p.exists():
                raise ConfigError(f"oracle grid not found: {p}")
        oracle = ReferenceFieldOracle.from_csv(target, weights, o.floor)
        if pool.designs.shape[1] != oracle.target.size:
            raise ConfigError(
                f"designs have {pool.designs.shape[1]} values but the target grid has {oracle.target.size}"
            )
    else:
        raise ConfigError("a csv dataset needs a lookup or reference-field oracle")
    return pool, oracle


def build_problem(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, object]:
    """Trainset and oracle for one seed of a cell."""
    d = cfg.dataset
    rng = Rng(seed).child("data")
    if d.kind == "gmm":
        oracle = gmm_oracle(cfg)
        trainset = sample_gmm_trainset(oracle, d.n, d.rho, rng, SamplingInterval(*d.si), d.mode1_std)
        return trainset, oracle
    pool, oracle = _pool_and_oracle(cfg)
    spec = ImbalanceSpec(RangeSpec(*d.low), RangeSpec(*d.high), d.rho, d.n_low)
    return build_imbalanced_subset(pool, spec, rng), oracle


def build_model(cfg: ExperimentConfig, trainset: Dataset, seed: int) -> VaeModel:
    hidden, latent = cfg.model.resolved()
    if trainset.is_sequence:
        kind = CategoricalDecoder(trainset.designs.shape[1], len(trainset.alphabet))
    else:
        kind = GaussianDecoder(trainset.designs.shape[1])
    return build_vae(kind, latent, Rng(seed).child("model"), encoder_hidden=hidden, slope=cfg.model.slope)


def cell_ids(cfg: ExperimentConfig, scheme: str) -> dict[str, str]:
    d, o = cfg.dataset, cfg.oracle
    gmm = d.kind == "gmm"
    return {
        "dataset": cfg.name,
        "scheme": scheme,
        "rho": fmt(d.rho),
        "hr": "" if gmm else f"{fmt(d.high[1])}:{fmt(d.high[2])}",
        "si": f"{fmt(d.si[0])}:{fmt(d.si[1])}" if gmm else "",
        "delta_mu": fmt(o.mu2 - o.mu1) if gmm else "",
        "sigma1": fmt(o.sigma1) if gmm else "",
        "n_samples": fmt(cfg.mbo.n_samples),
    }


def metric_rows(ids: dict, seed: int, metrics: RunMetrics) -> list[list[str]]:
    head = [ids[c] for c in CELL_COLUMNS] + [str(seed)]
    rows = [head + ["base_" + k, "0", fmt(v)] for k, v in metrics.base.items()]
    for name in RunMetrics.SERIES:
        for t, v in enumerate(getattr(metrics, name), start=1):
            rows.append(head + [name, str(t), fmt(v)])
    return rows


def latent_rows(ids: dict, seed: int, stage: str, report: LatentStructureReport) -> list[list[str]]:
    head = [ids[c] for c in CELL_COLUMNS] + [str(seed), stage]
    return [
        head + [str(i), fmt(c[0]), fmt(c[1]), fmt(s), fmt(y)]
        for i, (c, s, y) in enumerate(zip(report.coords, report.neg_sq_norm, report.y))
    ]


@dataclass
class JobOutput:
    rows: list[list[str]]
    latent: list[list[str]]
    result: MboResult | None = None


def run_job(cfg: ExperimentConfig, scheme: str, seed: int, keep_result: bool = False) -> JobOutput:
    """Train and run one scheme on one seed; returns its CSV rows."""
    trainset, oracle = build_problem(cfg, seed)
    model = build_model(cfg, trainset, seed)
    result = run_mbo(model, oracle, trainset, cfg.mbo_config(scheme), Rng(seed).child("mbo"))
    ids = cell_ids(cfg, scheme)
    m = result.metrics
    lat = latent_rows(ids, seed, "initial", m.initial_latent) + latent_rows(ids, seed, "final", m.final_latent)
    return JobOutput(metric_rows(ids, seed, m), lat, result if keep_result else None)
