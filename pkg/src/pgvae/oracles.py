"""Property oracles.

Each oracle exposes ``score(designs) -> np.ndarray`` over a batch so the
MBO loop can treat them uniformly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import ShapeError

DEFAULT_ALPHABET = "ACDEFGHIKLMNPQRSTVWY"


@dataclass(frozen=True)
class GmmOracle:
    """Sum of two unnormalised Gaussian bumps, so the peak height is ~w2."""

    mu1: float = 0.0
    sigma1: float = 0.25
    w1: float = 1.0
    mu2: float = 15.0
    sigma2: float = 1.0
    w2: float = 2.5

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError("GMM standard deviations must be positive")
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError("GMM amplitudes must be positive")

    def score(self, designs) -> np.ndarray:
        x = np.asarray(designs, dtype=np.float64).reshape(-1)
        return gmm_eval(self, x)


def gmm_eval(o: GmmOracle, x):
    x = np.asarray(x, dtype=np.float64)
    return o.w1 * np.exp(-((x - o.mu1) ** 2) / (2 * o.sigma1**2)) + o.w2 * np.exp(
        -((x - o.mu2) ** 2) / (2 * o.sigma2**2)
    )


def _gmm_slope(o: GmmOracle, x: float) -> float:
    return float(
        -o.w1 * (x - o.mu1) / o.sigma1**2 * np.exp(-((x - o.mu1) ** 2) / (2 * o.sigma1**2))
        - o.w2 * (x - o.mu2) / o.sigma2**2 * np.exp(-((x - o.mu2) ** 2) / (2 * o.sigma2**2))
    )


def gmm_global_optimum(o: GmmOracle) -> tuple[float, float]:
    """Grid search then bisection on the sign of the derivative."""
    lo = min(o.mu1 - 4 * o.sigma1, o.mu2 - 4 * o.sigma2)
    hi = max(o.mu1 + 4 * o.sigma1, o.mu2 + 4 * o.sigma2)
    step = min(o.sigma1, o.sigma2) / 100
    grid = np.arange(lo, hi + step, step)
    k = int(np.argmax(gmm_eval(o, grid)))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    # the maximiser is bracketed by the grid neighbours: slope >= 0 at a, <= 0 at b
    for _ in range(60):
        m = 0.5 * (a + b)
        if _gmm_slope(o, m) > 0:
            a = m
        else:
            b = m
    x_star = 0.5 * (a + b)
    candidates = [x_star, grid[k]]
    x_best = max(candidates, key=lambda t: float(gmm_eval(o, t)))
    return float(x_best), float(gmm_eval(o, x_best))


def canonical_key(design, alphabet: str | None) -> str:
    """Symbol string for sequences; 6-decimal rounding for vectors."""
    arr = np.asarray(design)
    if alphabet is not None:
        return "".join(alphabet[int(s)] for s in arr.reshape(-1))
    return ",".join(f"{v:.6f}" for v in np.round(arr.astype(np.float64).reshape(-1), 6) + 0.0)


@dataclass
class LookupOracle:
    """Ground-truth table: known designs score their value, anything else 0."""

    table: dict[str, float] = field(default_factory=dict)
    alphabet: str | None = DEFAULT_ALPHABET

    def __post_init__(self):
        for k, v in self.table.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"lookup value for {k!r} is outside [0, 1]: {v}")

    @classmethod
    def from_dataset(cls, dataset) -> "LookupOracle":
        table = {}
        for design, y in zip(dataset.designs, dataset.y):
            key = canonical_key(design, dataset.alphabet)
            if key in table:
                raise ValueError(f"duplicate design {key!r} in lookup dataset")
            table[key] = float(y)
        return cls(table, dataset.alphabet)

    @classmethod
    def from_csv(cls, path, schema: str = "sequence", alphabet: str = DEFAULT_ALPHABET) -> "LookupOracle":
        from .datagen import load_dataset_csv

        return cls.from_dataset(load_dataset_csv(path, schema, alphabet=alphabet))

    def score(self, designs) -> np.ndarray:
        return np.array([lookup_eval(self, d) for d in designs], dtype=np.float64)


def lookup_eval(o: LookupOracle, design) -> float:
    return o.table.get(canonical_key(design, o.alphabet), 0.0)


@dataclass
class ReferenceFieldOracle:
    """Scores a field by the negative log weighted MSE to a target field."""

    target: np.ndarray
    weights: np.ndarray | None = None
    floor: float = 1e-12

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.weights is None:
            self.weights = np.ones_like(self.target)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != self.target.shape:
            raise ShapeError("weight field and target field shapes differ")
        if np.any(self.weights < 0) or not self.weights.sum() > 0:
            raise ValueError("field weights must be non-negative with a positive sum")
        if not self.floor > 0:
            raise ValueError("floor must be positive")

    @classmethod
    def from_csv(cls, target_path, weights_path=None, floor: float = 1e-12) -> "ReferenceFieldOracle":
        target = read_grid_csv(target_path)
        weights = read_grid_csv(weights_path) if weights_path else None
        return cls(target, weights, floor)

    def score(self, designs) -> np.ndarray:
        flat = np.asarray(designs, dtype=np.float64).reshape(len(designs), -1)
        return np.array([reference_field_eval(self, u.reshape(self.target.shape)) for u in flat])


def reference_field_eval(o: ReferenceFieldOracle, u) -> float:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != o.target.shape:
        raise ShapeError(f"field shape {u.shape} != target shape {o.target.shape}")
    wmse = np.sum(o.weights * (u - o.target) ** 2) / np.sum(o.weights)
    return float(-np.log(wmse + o.floor))


def read_grid_csv(path) -> np.ndarray:
    """Headerless CSV of reals, one grid row per line."""
    rows = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric grid entry") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: grid rows are empty or ragged")
    return np.array(rows)
