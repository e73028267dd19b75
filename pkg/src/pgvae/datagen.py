"""Training-set construction: imbalance sampling, tagging, encodings, CSV input.

Percentiles everywhere use linear interpolation between order statistics
(numpy's default): for sorted ``v`` of length ``n`` the ``p``-th percentile
sits at fractional index ``(n - 1) * p / 100``.

Property ranges are half-open, ``lo <= y < hi``, except that an upper
percentile bound of 100 includes the maximum.  Adjacent ranges such as
``(0.0001, 0.001)`` and ``(0.001, 0.01)`` therefore never share a row.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .oracles import DEFAULT_ALPHABET, GmmOracle, gmm_eval
from .rng import Rng


@dataclass
class Dataset:
    designs: np.ndarray  # (n, d) floats, or (n, L) int symbol indices
    y: np.ndarray
    name: str = "dataset"
    alphabet: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.designs.ndim != 2:
            raise ValueError("designs must be a 2-D array")
        if len(self.designs) != len(self.y):
            raise ValueError("designs and properties differ in length")

    @property
    def is_sequence(self) -> bool:
        return self.alphabet is not None

    def __len__(self):
        return len(self.y)

    def subset(self, idx, name: str | None = None) -> "Dataset":
        return Dataset(self.designs[idx], self.y[idx], name or self.name, self.alphabet, dict(self.meta))


@dataclass(frozen=True)
class RangeSpec:
    kind: str  # "percentile" | "absolute"
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in ("percentile", "absolute"):
            raise ValueError(f"unknown range kind {self.kind!r}")
        if not self.lo < self.hi:
            raise ValueError(f"range needs lo < hi, got ({self.lo}, {self.hi})")
        if self.kind == "percentile" and not (0 <= self.lo and self.hi <= 100):
            raise ValueError("percentile bounds must lie in [0, 100]")

    def mask(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "absolute":
            return (y >= self.lo) & (y < self.hi)
        lo, hi = np.percentile(y, [self.lo, self.hi])
        upper = y <= hi if self.hi == 100 else y < hi
        return (y >= lo) & upper


@dataclass(frozen=True)
class ImbalanceSpec:
    low: RangeSpec
    high: RangeSpec
    rho: float
    n_low: int

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.n_low < 1:
            raise ValueError("n_low must be >= 1")
        if self.low.kind == self.high.kind == "percentile" and self.low.hi > self.high.lo:
            raise ValueError("percentile ranges overlap")


@dataclass(frozen=True)
class SamplingInterval:
    start: float = 0.5
    end: float = 1.0

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("sampling interval needs 0 <= start < end")


@dataclass(frozen=True)
class TagSpec:
    h_tag: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    alphabet_size: int = 20

    @property
    def tag_length(self) -> int:
        return len(self.h_tag)

    def __post_init__(self):
        if any(not 0 <= s < self.alphabet_size for s in self.h_tag):
            raise ValueError("tag symbols out of alphabet range")


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def normalize_properties(y) -> np.ndarray:
    """Affine map sending min to 0 and max to 1."""
    y = np.asarray(y, dtype=np.float64)
    lo, hi = y.min(), y.max()
    if not hi > lo:
        raise ValueError("cannot normalise a constant property vector")
    return (y - lo) / (hi - lo)


def sample_gmm_trainset(
    o: GmmOracle,
    n: int,
    rho: float,
    rng: Rng,
    si: SamplingInterval | None = None,
    mode1_std: float = 0.6,
) -> Dataset:
    """``n`` draws around the first mode, ``round(rho * n)`` uniform near the second."""
    si = si or SamplingInterval()
    n_high = round_half_up(rho * n)
    if n < 1 or n_high < 1:
        raise ValueError(f"rho * N = {rho * n} rounds to zero high-mode samples")
    x_low = o.mu1 + mode1_std * rng.normal(n)
    x_high = rng.uniform(o.mu2 + si.start * o.sigma2, o.mu2 + si.end * o.sigma2, size=n_high)
    x = np.concatenate([x_low, x_high])[:, None]
    return Dataset(x, gmm_eval(o, x[:, 0]), "gmm", meta={"n_low": n, "n_high": n_high})


def build_imbalanced_subset(d: Dataset, spec: ImbalanceSpec, rng: Rng) -> Dataset:
    """Sample without replacement from the low and high property ranges."""
    n_high = round_half_up(spec.rho * spec.n_low)
    if n_high < 1:
        raise ValueError(f"rho * n_low = {spec.rho * spec.n_low} rounds to zero high-range rows")
    low_pool = np.flatnonzero(spec.low.mask(d.y))
    high_pool = np.flatnonzero(spec.high.mask(d.y) & ~spec.low.mask(d.y))
    for label, pool, need in (("low range", low_pool, spec.n_low), ("high range", high_pool, n_high)):
        if len(pool) == 0:
            raise ValueError(f"{label} {getattr(spec, label.split()[0])} is empty")
        if len(pool) < need:
            raise ValueError(f"{label} holds {len(pool)} rows but {need} were requested")
    lo_idx = low_pool[rng.choice(len(low_pool), spec.n_low)]
    hi_idx = high_pool[rng.choice(len(high_pool), n_high)]
    out = d.subset(np.concatenate([lo_idx, hi_idx]))
    out.meta.update(n_low=spec.n_low, n_high=n_high)
    return out


def semi_synthetic_transform(
    d: Dataset, threshold: float, tags: TagSpec, rng: Rng, kind: str = "absolute"
) -> Dataset:
    """Append ``tags.h_tag`` to rows at/above the threshold, random tags below.

    ``kind="percentile"`` resolves the threshold against ``d.y`` first.
    """
    if not d.is_sequence:
        raise ValueError("semi-synthetic tagging needs a sequence dataset")
    cut = float(np.percentile(d.y, threshold)) if kind == "percentile" else threshold
    high = d.y >= cut
    if high.all() or not high.any():
        raise ValueError(f"threshold {threshold} ({kind}) leaves the H or L set empty")
    tag_len = tags.tag_length
    suffix = rng.integers(0, tags.alphabet_size, size=(len(d), tag_len))
    suffix[high] = np.asarray(tags.h_tag)
    designs = np.hstack([d.designs, suffix]).astype(np.int64)
    out = Dataset(designs, d.y.copy(), d.name + "-tagged", d.alphabet, dict(d.meta))
    out.meta["h_mask"] = high
    return out


def synthetic_sequence_dataset(
    length: int = 4,
    alphabet_size: int = 20,
    rng: Rng | None = None,
    sharpness: float | None = None,
    epistasis: float = 0.0,
    name: str = "synthetic",
) -> Dataset:
    """Every sequence of ``length`` sites with a planted Potts-style property.

    Each site gets N(0, 1) preferences per symbol and each site pair gets
    N(0, epistasis^2) couplings per symbol pair; ``E`` is their sum.  With
    ``sharpness=None`` the property is ``E`` min-max normalised; otherwise ``y = exp(sharpness * (E - E_max))``, which puts
    most sequences near zero.  Either way the optimum is exactly 1.
    """
    rng = rng or Rng(0)
    site_pref = rng.normal((length, alphabet_size))
    grids = np.indices((alphabet_size,) * length).reshape(length, -1).T
    energy = site_pref[np.arange(length), grids].sum(axis=1)
    if epistasis > 0:
        for a in range(length):
            for b in range(a + 1, length):
                coupling = epistasis * rng.normal((alphabet_size, alphabet_size))
                energy += coupling[grids[:, a], grids[:, b]]
    if sharpness is None:
        y = normalize_properties(energy)
    else:
        y = np.exp(sharpness * (energy - energy.max()))
    return Dataset(grids.astype(np.int64), y, name, DEFAULT_ALPHABET[:alphabet_size])


def one_hot_encode(seqs, alphabet_size: int) -> np.ndarray:
    seqs = np.asarray(seqs)
    if seqs.ndim != 2:
        raise ValueError("sequences must be a 2-D array of symbol indices")
    if seqs.size and (seqs.min() < 0 or seqs.max() >= alphabet_size):
        raise ValueError(f"symbol outside [0, {alphabet_size})")
    n, length = seqs.shape
    out = np.zeros((n, length * alphabet_size))
    cols = np.arange(length) * alphabet_size + seqs
    out[np.arange(n)[:, None], cols] = 1.0
    return out


def one_hot_decode(x: np.ndarray, alphabet_size: int) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(len(x), -1, alphabet_size).argmax(axis=-1)


def load_dataset_csv(path, schema: str, alphabet: str = DEFAULT_ALPHABET, name: str | None = None) -> Dataset:
    """Read ``sequence,property`` or ``x0,...,x{d-1},property`` files."""
    if schema not in ("sequence", "continuous"):
        raise ValueError(f"unknown schema {schema!r}")
    path = Path(path)
    index = {c: i for i, c in enumerate(alphabet)}
    designs, ys = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[-1] != "property":
            raise ValueError(f"{path}:1: last column must be 'property'")
        if schema == "sequence" and header != ["sequence", "property"]:
            raise ValueError(f"{path}:1: expected header 'sequence,property'")
        if schema == "continuous" and header[:-1] != [f"x{i}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}:1: expected header 'x0,...,x{{d-1}},property'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ys.append(float(row[-1]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric property {row[-1]!r}") from None
            if schema == "sequence":
                seq = row[0].strip()
                try:
                    designs.append([index[c] for c in seq])
                except KeyError as exc:
                    raise ValueError(f"{path}:{lineno}: symbol {exc.args[0]!r} not in alphabet") from None
                if len(designs[-1]) != len(designs[0]):
                    raise ValueError(f"{path}:{lineno}: sequence length differs from line 2")
            else:
                try:
                    designs.append([float(v) for v in row[:-1]])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric coordinate") from None
    if not designs:
        raise ValueError(f"{path}: no data rows")
    dtype = np.int64 if schema == "sequence" else np.float64
    return Dataset(
        np.array(designs, dtype=dtype), np.array(ys), name or path.stem,
        alphabet if schema == "sequence" else None,
    )
