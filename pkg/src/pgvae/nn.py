"""Dense MLPs with hand-written backprop, Adam, and a finite-difference checker.

Matrices are float64 numpy arrays, row per sample.  Weights are stored as
``(fan_in, fan_out)`` so a layer is ``h @ W + b``.  Hidden layers use
LeakyReLU; the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import Rng


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ValueError("an MLP needs at least an input and an output dim")
        if min(self.layer_dims) < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.layer_dims}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"LeakyReLU slope must lie in (0, 1), got {self.slope}")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(spec: MlpSpec, rng: Rng) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer


def mlp_forward(params: MlpParams, spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"layer 0: expected input of width {spec.in_dim}, got shape {x.shape}")
    inputs, pre = [], []
    h = x
    last = spec.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape[0] != h.shape[1]:
            raise ShapeError(f"layer {k}: weight expects width {w.shape[0]}, got {h.shape[1]}")
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        h = a if k == last else np.maximum(a, spec.slope * a)
    return h, MlpCache(inputs, pre)


def mlp_backward(
    params: MlpParams, spec: MlpSpec, cache: MlpCache, upstream: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input."""
    if upstream.shape != cache.pre[-1].shape:
        raise ShapeError(
            f"layer {spec.n_layers - 1}: upstream grad shape {upstream.shape} "
            f"!= output shape {cache.pre[-1].shape}"
        )
    n = spec.n_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    g = upstream
    for k in range(n - 1, -1, -1):
        if k != n - 1:
            g = np.where(cache.pre[k] > 0, g, spec.slope * g)
        gw[k] = cache.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return MlpParams(gw, gb), g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr, **kw)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and optimizer-state block counts differ")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeError(f"parameter block {i}: grad shape {g.shape} != param shape {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block {i}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst_block: int
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_errors: list[float] = field(default_factory=list)


def finite_diff_gradcheck(
    loss_fn: Callable[[Sequence[np.ndarray]], tuple[float, Sequence[np.ndarray]]],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> GradcheckResult:
    """Compare analytic gradients to central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be deterministic,
    i.e. any noise it uses has to be frozen by the caller.  Parameters are
    perturbed in place and restored.  The relative error per coordinate is
    ``|a - fd| / max(|a|, |fd|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss0, grads = loss_fn(params)
    if not np.isfinite(loss0):
        raise NonFiniteError("loss is not finite at the base point")
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    worst = GradcheckResult(0.0, -1, (), 0.0, 0.0)
    block_errors = []
    for bi, p in enumerate(params):
        block_worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            lp, _ = loss_fn(params)
            p[idx] = orig - eps
            lm, _ = loss_fn(params)
            p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteError(f"loss not finite when perturbing block {bi} at {idx}")
            fd = (lp - lm) / (2.0 * eps)
            a = grads[bi][idx]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            block_worst = max(block_worst, err)
            if err > worst.max_rel_error or worst.worst_block < 0:
                worst = GradcheckResult(err, bi, idx, float(a), float(fd))
        block_errors.append(block_worst)
    worst.rel_errors = block_errors
    return worst
