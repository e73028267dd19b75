"""The model-based optimisation loop, weighting schemes and run diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np
from scipy import stats

from .datagen import Dataset
from .generative import (
    PgvaeHyper,
    VaeModel,
    encode,
    fit,
    log_marginal_likelihood,
    sample_designs,
)
from .nn import init_mlp
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pgvae:
    name: ClassVar[str] = "pgvae"


@dataclass(frozen=True)
class Rwr:
    gamma: float = 10.0
    name: ClassVar[str] = "rwr"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("RWR gamma must be positive")


@dataclass(frozen=True)
class FwRwr(Rwr):
    """RWR that also weights the initial fit on the training set."""

    name: ClassVar[str] = "fwrwr"


@dataclass(frozen=True)
class Cbas:
    quantile: float = 90.0
    mc_samples: int = 20
    name: ClassVar[str] = "cbas"

    def __post_init__(self):
        if not 0 < self.quantile < 100:
            raise ValueError("CbAS quantile must lie in (0, 100)")
        if self.mc_samples < 1:
            raise ValueError("CbAS needs at least one Monte Carlo sample")


WeightScheme = Union[Pgvae, Rwr, FwRwr, Cbas]
SCHEMES = {"pgvae": Pgvae, "rwr": Rwr, "fwrwr": FwRwr, "cbas": Cbas}


@dataclass
class MboConfig:
    n_samples: int = 200
    iterations: int = 20
    initial_epochs: int = 200
    epochs: int = 50
    warm_start: bool = True
    scheme: WeightScheme = field(default_factory=Pgvae)
    hyper: PgvaeHyper = field(default_factory=PgvaeHyper)
    threshold: float = -np.inf
    batch_size: int = 64
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples per iteration")
        if self.iterations < 1:
            raise ValueError("need at least one MBO iteration")


@dataclass
class LatentStructureReport:
    coords: np.ndarray  # (n, 2) PCA projection of latent means
    components: np.ndarray  # (2, latent_dim)
    neg_sq_norm: np.ndarray  # -|mu|^2 per row
    y: np.ndarray
    spearman: float
    slope: float
    intercept: float
    residual_rms: float
    degenerate: bool = False


@dataclass
class RunMetrics:
    max: list[float] = field(default_factory=list)
    p75: list[float] = field(default_factory=list)
    p95: list[float] = field(default_factory=list)
    cum_max: list[float] = field(default_factory=list)
    cum_p75: list[float] = field(default_factory=list)
    cum_p95: list[float] = field(default_factory=list)
    n_eff: list[float] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    base: dict[str, float] = field(default_factory=dict)
    best_design: np.ndarray | None = None
    initial_latent: LatentStructureReport | None = None
    final_latent: LatentStructureReport | None = None

    SERIES: ClassVar[tuple[str, ...]] = ("max", "p75", "p95", "cum_max", "cum_p75", "cum_p95", "n_eff")


@dataclass
class MboResult:
    metrics: RunMetrics
    model: VaeModel
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass
class AggregateMetrics:
    n_runs: int
    mean: dict[str, np.ndarray]
    cum_max_ci: np.ndarray  # 95% half-width per iteration

    @property
    def final_max(self) -> float:
        return float(self.mean["cum_max"][-1])

    @property
    def final_ci(self) -> float:
        return float(self.cum_max_ci[-1])


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile, ``p`` in [0, 100]."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise ValueError("p must lie in [0, 100]")
    return float(np.percentile(values, p))


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def rwr_weights(y, gamma: float) -> np.ndarray:
    """Softmax of ``gamma * y`` after min-max scaling ``y`` to [0, 1].

    The scaling makes ``gamma`` independent of the oracle's units.  A
    constant batch gets uniform weights.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("scores must be finite")
    span = y.max() - y.min()
    if not span > 0:
        return np.full(len(y), 1.0 / len(y))
    e = np.exp(gamma * (y - y.max()) / span)
    return e / e.sum()


def cbas_weights_from_log_density(y, log_p_baseline, log_p_current, threshold: float) -> np.ndarray:
    """Density ratio times the above-threshold indicator, normalised.

    When no score reaches ``threshold`` all weight goes to the best sample.
    """
    y = np.asarray(y, dtype=np.float64)
    above = y >= threshold
    if not above.any():
        log.warning("no sample reaches the CbAS threshold %.6g; weighting the best sample only", threshold)
        w = np.zeros(len(y))
        w[int(np.argmax(y))] = 1.0
        return w
    log_ratio = np.where(above, np.asarray(log_p_baseline) - np.asarray(log_p_current), -np.inf)
    w = np.exp(log_ratio - log_ratio[above].max())
    return w / w.sum()


def cbas_threshold(y, quantile: float, y_min: float, previous: float = -np.inf) -> float:
    return max(y_min, previous, percentile(y, quantile))


def cbas_weights(
    y,
    x: np.ndarray,
    current: VaeModel,
    baseline: VaeModel,
    quantile: float,
    y_min: float,
    rng: Rng,
    previous_threshold: float = -np.inf,
    mc_samples: int = 20,
) -> tuple[np.ndarray, float]:
    """CbAS weights for model inputs ``x``; returns ``(weights, threshold)``.

    Both log-densities are importance-sampled with ``mc_samples`` shared
    standard-normal draws pushed through each model's own encoder.
    """
    q = cbas_threshold(y, quantile, y_min, previous_threshold)
    eps = rng.normal((mc_samples, len(x), current.latent_dim))
    log_cur = log_marginal_likelihood(current, x, eps)
    log_base = log_cur if baseline is current else log_marginal_likelihood(baseline, x, eps)
    return cbas_weights_from_log_density(y, log_base, log_cur, q), q


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return float(1.0 / np.sum(w * w))


def _reinit(model: VaeModel, rng: Rng) -> VaeModel:
    return VaeModel(
        model.encoder_spec, init_mlp(model.encoder_spec, rng.child("encoder")),
        model.decoder_spec, init_mlp(model.decoder_spec, rng.child("decoder")),
        model.latent_dim, model.decoder_kind,
    )


def run_mbo(
    model: VaeModel,
    oracle,
    trainset: Dataset,
    cfg: MboConfig,
    rng: Rng,
    latent_reports: bool = True,
) -> MboResult:
    """Initial fit on ``trainset`` followed by ``cfg.iterations`` sample/score/refit rounds.

    ``model`` is trained in place (and replaced on cold restarts); the
    returned result holds the final model.  Metrics cover only generated
    samples; the training set's percentiles are kept separately as ``base``.
    """
    if len(trainset) == 0:
        raise ValueError("empty training set")
    scheme = cfg.scheme
    hyper = cfg.hyper if isinstance(scheme, Pgvae) else PgvaeHyper(cfg.hyper.tau, 0.0)
    fit_kw = dict(lr=cfg.learning_rate, batch_size=cfg.batch_size)

    metrics = RunMetrics()
    metrics.base = {
        "max": float(trainset.y.max()),
        "p75": percentile(trainset.y, 75),
        "p95": percentile(trainset.y, 95),
    }
    x_train = model.to_input(trainset.designs)
    w0 = rwr_weights(trainset.y, scheme.gamma) if isinstance(scheme, FwRwr) else None
    fit(model, x_train, trainset.y, w0, hyper, cfg.initial_epochs, rng.child("fit0"), **fit_kw)
    if latent_reports:
        metrics.initial_latent = latent_structure_report(model, trainset, cfg.hyper)
    baseline = model.copy() if isinstance(scheme, Cbas) else None

    samples = []
    all_y = []
    best_y, best_design = -np.inf, None
    threshold = -np.inf
    for t in range(1, cfg.iterations + 1):
        designs, _ = sample_designs(model, cfg.n_samples, rng.child(f"sample{t}"))
        y = np.asarray(oracle.score(designs), dtype=np.float64)
        x = model.to_input(designs)
        if isinstance(scheme, Pgvae):
            w = uniform_weights(len(y))
        elif isinstance(scheme, Rwr):
            w = rwr_weights(y, scheme.gamma)
        else:
            w, threshold = cbas_weights(
                y, x, model, baseline, scheme.quantile, cfg.threshold,
                rng.child(f"cbas{t}"), threshold, scheme.mc_samples,
            )
            metrics.thresholds.append(threshold)
        if not w.sum() > 0:
            raise ValueError(f"iteration {t}: all sample weights are zero")

        all_y.append(y)
        union = np.concatenate(all_y)
        metrics.max.append(float(y.max()))
        metrics.p75.append(percentile(y, 75))
        metrics.p95.append(percentile(y, 95))
        metrics.cum_max.append(float(union.max()))
        metrics.cum_p75.append(percentile(union, 75))
        metrics.cum_p95.append(percentile(union, 95))
        metrics.n_eff.append(effective_sample_size(w))
        k = int(np.argmax(y))
        if y[k] > best_y:
            best_y, best_design = y[k], designs[k].copy()
        samples.append((designs, y, w))

        if t < cfg.iterations:
            if not cfg.warm_start:
                model = _reinit(model, rng.child(f"init{t}"))
            fit(model, x, y, w, hyper, cfg.epochs, rng.child(f"fit{t}"), **fit_kw)

    metrics.best_design = best_design
    if latent_reports:
        metrics.final_latent = latent_structure_report(model, trainset, cfg.hyper)
    return MboResult(metrics, model, samples)


def t_half_width(values, level: float = 0.95) -> float:
    """Student-t confidence half-width of the mean."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise ValueError("need at least 2 values for a confidence interval")
    sd = values.std(ddof=1)
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * sd / np.sqrt(n))


def aggregate_runs(runs: list[RunMetrics]) -> AggregateMetrics:
    if len(runs) < 2:
        raise ValueError("aggregation needs at least 2 runs")
    mean = {s: np.mean([getattr(r, s) for r in runs], axis=0) for s in RunMetrics.SERIES}
    for key in sorted(set.intersection(*(set(r.base) for r in runs))):
        mean["base_" + key] = np.array([np.mean([r.base[key] for r in runs])])
    cum = np.array([r.cum_max for r in runs])
    ci = np.array([t_half_width(cum[:, j]) for j in range(cum.shape[1])])
    return AggregateMetrics(len(runs), mean, ci)


def power_iteration_pca(
    data: np.ndarray, k: int = 2, tol: float = 1e-9, max_iter: int = 10_000
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Top-``k`` principal directions by power iteration with deflation.

    Returns ``(components, variances, degenerate)``; rows of ``components``
    beyond the data dimension, or with zero variance, are left as zeros.
    """
    centred = data - data.mean(axis=0)
    dim = data.shape[1]
    cov = centred.T @ centred / max(len(data) - 1, 1)
    comps = np.zeros((k, dim))
    variances = np.zeros(k)
    total = np.trace(cov)
    if not total > 1e-12:
        return comps, variances, True
    start = Rng(0).normal(dim)
    for j in range(min(k, dim)):
        v = start / np.linalg.norm(start)
        for _ in range(max_iter):
            u = cov @ v
            norm = np.linalg.norm(u)
            if norm <= 1e-15 * total:
                v = None
                break
            u /= norm
            if np.linalg.norm(u - v) < tol or np.linalg.norm(u + v) < tol:
                v = u
                break
            v = u
        if v is None:
            break
        lam = float(v @ cov @ v)
        comps[j], variances[j] = v, lam
        cov = cov - lam * np.outer(v, v)
    return comps, variances, False


def latent_structure_report(model: VaeModel, dataset: Dataset, hyper: PgvaeHyper) -> LatentStructureReport:
    """How closely the latent means follow ``|mu|^2 / 2 = C - tau * y``.

    ``hyper`` is accepted for symmetry with the training call; the fitted
    slope is reported as-is so it can be compared against ``hyper.tau``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    mu = encode(model, model.to_input(dataset.designs)).mu
    return latent_report_from_means(mu, dataset.y)


def latent_report_from_means(mu: np.ndarray, y) -> LatentStructureReport:
    y = np.asarray(y, dtype=np.float64)
    comps, _, degenerate = power_iteration_pca(mu)
    coords = (mu - mu.mean(axis=0)) @ comps.T
    half_sq = 0.5 * np.sum(mu * mu, axis=1)
    if np.ptp(half_sq) > 0 and np.ptp(y) > 0:
        rho = float(stats.spearmanr(-half_sq, y).statistic)
    else:
        rho = 0.0
    if np.ptp(y) > 0:
        a, b = np.polyfit(y, half_sq, 1)
        resid = half_sq - (a * y + b)
        slope, intercept = float(-a), float(b)
    else:
        slope, intercept = 0.0, float(half_sq.mean())
        resid = half_sq - intercept
    rms = float(np.sqrt(np.mean(resid**2)))
    return LatentStructureReport(coords, comps, -2.0 * half_sq, y, rho, slope, intercept, rms, degenerate)
