"""Registered losses checked against central finite differences.

Every loss is rebuilt on a small random instance (batch 4) with its
reparameterisation noise frozen, so ``finite_diff_gradcheck`` sees a
deterministic function of the model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datagen import one_hot_encode
from .generative import (
    CategoricalDecoder,
    GaussianDecoder,
    PgvaeHyper,
    VaeModel,
    _pair_residuals,
    build_vae,
    encode,
    pgvae_objective,
    relationship_loss,
)
from .nn import GradcheckResult, finite_diff_gradcheck, mlp_backward, mlp_forward
from .rng import Rng

TOLERANCE = 1e-4
BATCH = 4


@dataclass
class CheckOutcome:
    name: str
    result: GradcheckResult

    @property
    def passed(self) -> bool:
        return self.result.max_rel_error < TOLERANCE


def _instance(kind, rng: Rng) -> tuple[VaeModel, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    model = build_vae(kind, 2, rng.child("model"), encoder_hidden=(5,))
    if isinstance(kind, CategoricalDecoder):
        x = one_hot_encode(rng.integers(0, kind.alphabet, size=(BATCH, kind.length)), kind.alphabet)
    else:
        x = rng.normal((BATCH, kind.out_dim))
    y = rng.uniform(size=BATCH)
    w = rng.uniform(0.5, 1.5, size=BATCH)
    eps = rng.normal((BATCH, model.latent_dim))
    return model, x, y, w / w.sum(), eps


def _objective_loss(kind, hyper: PgvaeHyper, seed: int):
    model, x, y, w, eps = _instance(kind, Rng(seed))

    def loss_fn(_params):
        loss, grads = pgvae_objective(model, x, y if hyper.lambda_r > 0 else None, w, hyper, eps=eps)
        return loss.total, grads

    return loss_fn, model.params()


def _relationship_only(seed: int, tau: float = 5.0):
    """``L_r`` of the encoder means alone, back-propagated through the encoder."""
    rng = Rng(seed)
    model, x, y, _, _ = _instance(GaussianDecoder(3), rng)
    d = model.latent_dim

    def loss_fn(_params):
        out, cache = mlp_forward(model.encoder, model.encoder_spec, x)
        mu = out[:, :d]
        qc = _pair_residuals(mu, y, tau)
        n = len(y)
        g_mu = -(4.0 / (n - 1)) * qc[:, None] * mu
        upstream = np.hstack([g_mu, np.zeros_like(g_mu)])
        grads, _ = mlp_backward(model.encoder, model.encoder_spec, cache, upstream)
        value = relationship_loss(encode(model, x), y, tau)
        return value, grads.arrays()

    return loss_fn, model.encoder.arrays()


def registered_losses() -> dict[str, Callable[[], tuple]]:
    """Name -> zero-arg factory returning ``(loss_fn, params)``."""
    gauss, cat = GaussianDecoder(3), CategoricalDecoder(3, 4)
    plain, guided = PgvaeHyper(5.0, 0.0), PgvaeHyper(5.0, 10.0)
    return {
        "elbo-gaussian": lambda: _objective_loss(gauss, plain, 1),
        "elbo-categorical": lambda: _objective_loss(cat, plain, 2),
        "relationship": lambda: _relationship_only(3),
        "pgvae-gaussian": lambda: _objective_loss(gauss, guided, 4),
        "pgvae-categorical": lambda: _objective_loss(cat, guided, 5),
    }


def _corrupted(loss_fn, scale: float = 1.01):
    def wrapped(params):
        loss, grads = loss_fn(params)
        return loss, [g * scale for g in grads]

    return wrapped


def run_suite(corrupt: str | None = None, eps: float = 1e-5) -> list[CheckOutcome]:
    """Check every registered loss; ``corrupt`` names one to sabotage (test hook)."""
    losses = registered_losses()
    if corrupt is not None and corrupt not in losses:
        raise KeyError(f"unknown loss {corrupt!r}")
    out = []
    for name, factory in losses.items():
        loss_fn, params = factory()
        if name == corrupt:
            loss_fn = _corrupted(loss_fn)
        out.append(CheckOutcome(name, finite_diff_gradcheck(loss_fn, params, eps)))
    return out
