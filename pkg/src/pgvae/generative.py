"""VAE search model and the property-guided objective.

The encoder maps a design to ``2 * latent_dim`` numbers (means, then
log-variances).  Two decoders are supported: a Gaussian with fixed
observation stddev for continuous designs, and independent per-position
softmaxes for symbol sequences (one-hot flattened, position-major).

Losses follow the minimisation convention::

    total = sum_i w_i * (recon_i + kl_i) + (lambda_r / tau**2) * L_r

where ``L_r`` is the mean over unordered pairs of squared residuals between
log-prior gaps of the latent means and ``tau``-scaled property gaps.
Gaussian reconstruction drops the ``log(2 pi s^2)/2`` constant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.special import logsumexp

from .nn import AdamState, MlpParams, MlpSpec, NonFiniteError, ShapeError, adam_step, init_mlp, mlp_backward, mlp_forward
from .rng import Rng

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
_LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianDecoder:
    out_dim: int
    stddev: float = 1.0

    def __post_init__(self):
        if self.out_dim < 1 or self.stddev <= 0:
            raise ValueError("GaussianDecoder needs out_dim >= 1 and stddev > 0")

    @property
    def flat_dim(self) -> int:
        return self.out_dim


@dataclass(frozen=True)
class CategoricalDecoder:
    length: int
    alphabet: int

    def __post_init__(self):
        if self.length < 1 or self.alphabet < 2:
            raise ValueError("CategoricalDecoder needs length >= 1 and alphabet >= 2")

    @property
    def flat_dim(self) -> int:
        return self.length * self.alphabet


DecoderKind = Union[GaussianDecoder, CategoricalDecoder]


@dataclass(frozen=True)
class PgvaeHyper:
    tau: float = 5.0
    lambda_r: float = 10.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lambda_r < 0:
            raise ValueError(f"lambda_r must be non-negative, got {self.lambda_r}")

    @property
    def rel_coef(self) -> float:
        return self.lambda_r / self.tau**2


@dataclass
class LatentBatch:
    mu: np.ndarray
    logvar: np.ndarray


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    relationship: float
    total: float

    @staticmethod
    def mean(items: list["LossBreakdown"]) -> "LossBreakdown":
        return LossBreakdown(
            *(float(np.mean([getattr(b, f) for b in items])) for f in ("recon", "kl", "relationship", "total"))
        )


@dataclass
class VaeModel:
    encoder_spec: MlpSpec
    encoder: MlpParams
    decoder_spec: MlpSpec
    decoder: MlpParams
    latent_dim: int
    decoder_kind: DecoderKind

    def __post_init__(self):
        if self.encoder_spec.out_dim != 2 * self.latent_dim:
            raise ShapeError("encoder output dim must be 2 * latent_dim")
        if self.decoder_spec.in_dim != self.latent_dim:
            raise ShapeError("decoder input dim must equal latent_dim")
        if self.decoder_spec.out_dim != self.decoder_kind.flat_dim:
            raise ShapeError("decoder output dim does not match the decoder kind")
        if self.encoder_spec.in_dim != self.decoder_kind.flat_dim:
            raise ShapeError("encoder input dim does not match the design encoding")
        self._pack()

    def _pack(self) -> None:
        # all parameter blocks become views into one flat vector so the
        # optimizer can update them with a few vector ops
        blocks = self.params()
        self.flat = np.concatenate([b.ravel() for b in blocks])
        views, offset = [], 0
        for b in blocks:
            views.append(self.flat[offset:offset + b.size].reshape(b.shape))
            offset += b.size
        k = 2 * self.encoder_spec.n_layers
        self.encoder = MlpParams(views[0:k:2], views[1:k:2])
        self.decoder = MlpParams(views[k::2], views[k + 1::2])

    def params(self) -> list[np.ndarray]:
        return self.encoder.arrays() + self.decoder.arrays()

    def block_of(self, flat_index: int) -> int:
        sizes = np.cumsum([p.size for p in self.params()])
        return int(np.searchsorted(sizes, flat_index, side="right"))

    def copy(self) -> "VaeModel":
        return replace(self, encoder=self.encoder.copy(), decoder=self.decoder.copy())

    @property
    def is_sequence(self) -> bool:
        return isinstance(self.decoder_kind, CategoricalDecoder)

    def to_input(self, designs: np.ndarray) -> np.ndarray:
        """Model-input matrix for raw designs (one-hot for symbol sequences)."""
        if self.is_sequence:
            from .datagen import one_hot_encode

            return one_hot_encode(designs, self.decoder_kind.alphabet)
        return np.asarray(designs, dtype=np.float64).reshape(len(designs), -1)


def build_vae(
    decoder_kind: DecoderKind,
    latent_dim: int,
    rng: Rng,
    encoder_hidden=(64,),
    decoder_hidden=None,
    slope: float = 0.01,
) -> VaeModel:
    """Fresh VAE; the decoder mirrors the encoder unless told otherwise."""
    in_dim = decoder_kind.flat_dim
    if decoder_hidden is None:
        decoder_hidden = tuple(reversed(encoder_hidden))
    enc_spec = MlpSpec((in_dim, *encoder_hidden, 2 * latent_dim), slope)
    dec_spec = MlpSpec((latent_dim, *decoder_hidden, in_dim), slope)
    return VaeModel(
        enc_spec, init_mlp(enc_spec, rng.child("encoder")),
        dec_spec, init_mlp(dec_spec, rng.child("decoder")),
        latent_dim, decoder_kind,
    )


# Reference layouts: hidden widths and latent size per dataset family.
ARCHITECTURES = {
    "protein": dict(encoder_hidden=(64,), latent_dim=20),
    "pinn": dict(encoder_hidden=(64,), latent_dim=10),
    "gmm": dict(encoder_hidden=(64, 64), latent_dim=2),
}


def encode(model: VaeModel, x: np.ndarray) -> LatentBatch:
    out, _ = mlp_forward(model.encoder, model.encoder_spec, x)
    d = model.latent_dim
    return LatentBatch(out[:, :d], np.clip(out[:, d:], LOGVAR_MIN, LOGVAR_MAX))


def decode(model: VaeModel, z: np.ndarray) -> np.ndarray:
    """Decoder means (Gaussian) or logits (categorical), flattened."""
    out, _ = mlp_forward(model.decoder, model.decoder_spec, z)
    return out


def reparameterize(lat: LatentBatch, rng: Rng, eps: np.ndarray | None = None) -> np.ndarray:
    if eps is None:
        eps = rng.normal(lat.mu.shape)
    return lat.mu + np.exp(0.5 * lat.logvar) * eps


def kl_diag_gaussian(lat: LatentBatch) -> np.ndarray:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) per row."""
    # expm1 keeps the sigma^2 - 1 - log sigma^2 term non-negative near 0
    return 0.5 * np.sum(lat.mu**2 + np.expm1(lat.logvar) - lat.logvar, axis=1)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def check_one_hot(x: np.ndarray, kind: CategoricalDecoder) -> None:
    blocks = x.reshape(len(x), kind.length, kind.alphabet)
    if not (np.all((blocks == 0) | (blocks == 1)) and np.all(blocks.sum(axis=-1) == 1)):
        raise ValueError("sequence input is not one-hot per position")


def _recon_from_output(kind: DecoderKind, x: np.ndarray, out: np.ndarray) -> np.ndarray:
    if isinstance(kind, GaussianDecoder):
        return 0.5 * np.sum((x - out) ** 2, axis=1) / kind.stddev**2
    n = len(x)
    logp = _log_softmax(out.reshape(n, kind.length, kind.alphabet))
    return -np.sum(x.reshape(logp.shape) * logp, axis=(1, 2))


def reconstruction_loss(model: VaeModel, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-row negative log-likelihood of ``x`` under the decoder at ``z``."""
    if x.shape[1] != model.decoder_kind.flat_dim or len(x) != len(z):
        raise ShapeError(f"x shape {x.shape} incompatible with decoder / z shape {z.shape}")
    if model.is_sequence:
        check_one_hot(x, model.decoder_kind)
    return _recon_from_output(model.decoder_kind, x, decode(model, z))


def _pair_residuals(mu: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    """Centred per-row residual ``q_i - mean(q)`` with ``q = -|mu|^2/2 - tau*y``."""
    q = -0.5 * np.sum(mu * mu, axis=1) - tau * y
    return q - q.mean()


def relationship_loss(lat: LatentBatch, y: np.ndarray, tau: float) -> float:
    """Mean squared pairwise mismatch between log-prior gaps and property gaps.

    Uses the identity ``sum_{i<j} (q_i - q_j)^2 = n * sum_i (q_i - qbar)^2``,
    so the result equals twice the sample variance of ``q``.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise ValueError("relationship loss needs a batch of at least 2")
    if len(lat.mu) != n:
        raise ShapeError("latent batch and property vector lengths differ")
    if not np.all(np.isfinite(y)):
        raise ValueError("properties must be finite")
    qc = _pair_residuals(lat.mu, y, tau)
    return float(2.0 * np.sum(qc * qc) / (n - 1))


def pgvae_objective(
    model: VaeModel,
    x: np.ndarray,
    y: np.ndarray | None,
    weights: np.ndarray,
    hyper: PgvaeHyper,
    rng: Rng | None = None,
    eps: np.ndarray | None = None,
    grad: bool = True,
) -> tuple[LossBreakdown, list[np.ndarray] | None]:
    """Loss breakdown and gradients (ordered as ``model.params()``).

    ``eps`` freezes the reparameterisation noise; otherwise it is drawn
    from ``rng``.  ``y`` may be omitted only when ``hyper.lambda_r == 0``,
    in which case the relationship term is reported as 0.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")
    n = len(x)
    d = model.latent_dim
    kind = model.decoder_kind

    enc_out, enc_cache = mlp_forward(model.encoder, model.encoder_spec, x)
    mu = enc_out[:, :d]
    raw_lv = enc_out[:, d:]
    lv = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
    std = np.exp(0.5 * lv)
    if eps is None:
        eps = rng.normal(mu.shape)
    z = mu + std * eps
    dec_out, dec_cache = mlp_forward(model.decoder, model.decoder_spec, z)

    var_m1 = np.expm1(lv)
    kl_i = 0.5 * np.sum(mu * mu + var_m1 - lv, axis=1)
    recon_i = _recon_from_output(kind, x, dec_out)
    if isinstance(kind, GaussianDecoder):
        diff = dec_out - x
        inv_s2 = 1.0 / kind.stddev**2
    else:
        logp = _log_softmax(dec_out.reshape(n, kind.length, kind.alphabet))

    recon = float(w @ recon_i)
    kl = float(w @ kl_i)
    use_rel = y is not None and n >= 2
    if hyper.lambda_r > 0 and not use_rel:
        raise ValueError("relationship term needs properties and a batch of at least 2")
    if use_rel:
        y = np.asarray(y, dtype=np.float64)
        qc = _pair_residuals(mu, y, hyper.tau)
        l_r = float(2.0 * np.sum(qc * qc) / (n - 1))
    else:
        l_r = 0.0
    coef = hyper.rel_coef
    breakdown = LossBreakdown(recon, kl, l_r, recon + kl + coef * l_r)
    if not grad:
        return breakdown, None

    wc = w[:, None]
    if isinstance(kind, GaussianDecoder):
        g_out = wc * diff * inv_s2
    else:
        probs = np.exp(logp)
        g_out = (wc[:, :, None] * (probs - x.reshape(probs.shape))).reshape(n, -1)
    dec_grads, g_z = mlp_backward(model.decoder, model.decoder_spec, dec_cache, g_out)

    g_mu = g_z + wc * mu
    g_lv = g_z * eps * 0.5 * std + wc * 0.5 * var_m1
    if coef > 0:
        g_mu = g_mu - (coef * 4.0 / (n - 1)) * qc[:, None] * mu
    g_lv = g_lv * ((raw_lv >= LOGVAR_MIN) & (raw_lv <= LOGVAR_MAX))
    enc_grads, _ = mlp_backward(model.encoder, model.encoder_spec, enc_cache, np.hstack([g_mu, g_lv]))
    return breakdown, enc_grads.arrays() + dec_grads.arrays()


def train_epoch(
    model: VaeModel,
    x: np.ndarray,
    y: np.ndarray | None,
    weights: np.ndarray | None,
    hyper: PgvaeHyper,
    opt: AdamState,
    rng: Rng,
    batch_size: int = 64,
) -> LossBreakdown:
    """One shuffled pass of minibatch Adam on the weighted objective.

    Weights are normalised over the rows that carry positive weight (zero
    weight rows are dropped) and rescaled by ``n / |batch|`` inside each
    minibatch, so uniform weights give the per-sample mean loss.  Batches
    come from ``np.array_split`` and therefore differ in size by at most
    one row; relationship pairs are formed within a minibatch.
    """
    n_all = len(x)
    if weights is None:
        keep = np.arange(n_all)
        w = np.full(n_all, 1.0 / n_all)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights < 0) or not weights.sum() > 0:
            raise ValueError("weights must be non-negative with a positive sum")
        keep = np.flatnonzero(weights > 0)
        w = weights[keep] / weights[keep].sum()
    n = len(keep)
    n_batches = max(1, -(-n // batch_size))
    if hyper.lambda_r > 0:
        if n < 2:
            raise ValueError("relationship loss needs at least 2 training rows")
        n_batches = min(n_batches, n // 2)
    order = rng.permutation(n)
    losses = []
    for idx in np.array_split(order, n_batches):
        rows = keep[idx]
        wb = w[idx] * (n / len(idx))
        yb = None if y is None else y[rows]
        loss, grads = pgvae_objective(model, x[rows], yb, wb, hyper, rng)
        if opt.lr > 0:
            g = np.concatenate([b.ravel() for b in grads])
            try:
                adam_step([model.flat], [g], opt)
            except NonFiniteError:
                bad = int(np.flatnonzero(~np.isfinite(g))[0])
                raise NonFiniteError(f"non-finite gradient in parameter block {model.block_of(bad)}") from None
        losses.append(loss)
    return LossBreakdown.mean(losses)


def fit(
    model: VaeModel,
    x: np.ndarray,
    y: np.ndarray | None,
    weights: np.ndarray | None,
    hyper: PgvaeHyper,
    epochs: int,
    rng: Rng,
    lr: float = 1e-3,
    batch_size: int = 64,
) -> list[LossBreakdown]:
    """Run ``epochs`` of :func:`train_epoch` with a fresh Adam state."""
    opt = AdamState.fresh([model.flat], lr=lr)
    return [train_epoch(model, x, y, weights, hyper, opt, rng, batch_size) for _ in range(epochs)]


def sample_designs(
    model: VaeModel, n: int, rng: Rng, noise: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` designs from the prior pushed through the decoder.

    Continuous designs are decoder means unless ``noise`` adds the
    observation noise.  Sequences are int arrays of symbol indices with one
    draw per position from the softmax.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.normal((n, model.latent_dim))
    out = decode(model, z)
    kind = model.decoder_kind
    if isinstance(kind, GaussianDecoder):
        if noise:
            out = out + kind.stddev * rng.normal(out.shape)
        return out, z
    logits = out.reshape(n, kind.length, kind.alphabet)
    probs = np.exp(_log_softmax(logits))
    u = rng.uniform(size=(n, kind.length, 1))
    seqs = np.minimum((np.cumsum(probs, axis=-1) <= u).sum(axis=-1), kind.alphabet - 1)
    return seqs.astype(np.int64), z


def log_marginal_likelihood(model: VaeModel, x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Importance-sampled ``log p(x)`` with the encoder as proposal.

    ``eps`` has shape ``(M, n, latent_dim)``; the same draws can be shared
    between models so that identical models give identical estimates.
    Unlike the training loss, the Gaussian constant is included here.
    """
    lat = encode(model, x)
    std = np.exp(0.5 * lat.logvar)
    kind = model.decoder_kind
    terms = []
    for e in eps:
        z = lat.mu + std * e
        out = decode(model, z)
        if isinstance(kind, GaussianDecoder):
            log_px = -_recon_from_output(kind, x, out) - 0.5 * kind.out_dim * (_LOG2PI + 2 * np.log(kind.stddev))
        else:
            log_px = -_recon_from_output(kind, x, out)
        log_pz = -0.5 * np.sum(z * z, axis=1)
        log_qz = -0.5 * np.sum(e * e + lat.logvar, axis=1)
        terms.append(log_px + log_pz - log_qz)
    return logsumexp(np.stack(terms), axis=0) - np.log(len(eps))
