"""Adversarial auto-encoder: networks, losses, training schedule, checkpoints.

Shapes (defaults): encoder 256 -> 96 (lrelu) -> 16, decoder 16 -> 96 (lrelu)
-> 256 (sigmoid), discriminator 16 -> 96 (lrelu) -> 1 (sigmoid).

Each minibatch runs three updates in order:

1. Adam on encoder + decoder, minimizing the reconstruction cross-entropy.
2. SGD on the discriminator, minimizing the GAN discriminator loss plus an
   annealed gradient-norm penalty on its logit.
3. Adam on the encoder alone, minimizing ``-log D(Q(X))``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import EmptyDataset, HistoryTooShort, ShapeMismatch, VersionMismatch

INPUT_DIM = 256
HIDDEN_UNITS = 96
LATENT_DIM = 16


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean isotropic normal prior over the latent space."""

    dim: int = LATENT_DIM
    var: float = 1.0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("prior variance must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) * np.sqrt(self.var)


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr_ae: float = 1e-3
    lr_gen: float = 1e-3
    lr_disc: float = 1e-2
    gamma0: float = 0.1
    gamma_decay: float = 0.99
    seed: int = 0
    stable_window: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be >= 0")
        if min(self.lr_ae, self.lr_gen, self.lr_disc) < 0:
            raise ValueError("learning rates must be >= 0")
        if self.epochs < self.stable_window:
            raise ValueError("epochs must be at least the stable window length")

    def gamma(self, epoch: int) -> float:
        """Penalty weight for 1-based ``epoch``; the first epoch uses ``gamma0``."""
        return self.gamma0 * self.gamma_decay ** (epoch - 1)


@dataclass
class AAEModel:
    encoder: nn.MLP
    decoder: nn.MLP
    discriminator: nn.MLP
    prior: PriorSpec = field(default_factory=PriorSpec)

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        input_dim: int = INPUT_DIM,
        hidden: int = HIDDEN_UNITS,
        latent: int = LATENT_DIM,
        slope: float = nn.DEFAULT_SLOPE,
        prior_var: float = 1.0,
    ) -> "AAEModel":
        lrelu = nn.Activation("lrelu", slope)
        enc = nn.MLP.create(rng, [input_dim, hidden, latent], [lrelu, nn.IDENTITY])
        dec = nn.MLP.create(rng, [latent, hidden, input_dim], [lrelu, nn.SIGMOID])
        disc = nn.MLP.create(rng, [latent, hidden, 1], [lrelu, nn.SIGMOID])
        return cls(enc, dec, disc, PriorSpec(latent, prior_var))

    @property
    def input_dim(self) -> int:
        return self.encoder.in_units

    @property
    def hidden(self) -> int:
        return self.encoder.layers[0].out_units

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_units

    @property
    def slope(self) -> float:
        return self.encoder.activations[0].slope

    def params(self) -> list[np.ndarray]:
        """Encoder, decoder, then discriminator arrays (W, b per layer)."""
        return self.encoder.params() + self.decoder.params() + self.discriminator.params()

    def copy(self) -> "AAEModel":
        return AAEModel(self.encoder.copy(), self.decoder.copy(), self.discriminator.copy(), self.prior)

    def astype(self, dtype) -> "AAEModel":
        return AAEModel(self.encoder.astype(dtype), self.decoder.astype(dtype), self.discriminator.astype(dtype), self.prior)

    def encode(self, X):
        return self.encoder(_check_dim(X, self.input_dim))

    def decode(self, z):
        return self.decoder(_check_dim(z, self.latent_dim))

    def discriminate(self, z):
        """Probability that ``z`` was drawn from the prior; scalar for a single vector."""
        p = self.discriminator(_check_dim(z, self.latent_dim))
        return p[..., 0] if np.ndim(z) > 1 else float(p[0])


def _check_dim(x, dim):
    x = np.asarray(x)
    if x.shape[-1] != dim:
        raise ShapeMismatch(f"expected last dimension {dim}, got {x.shape[-1]}")
    return x


# -- losses -----------------------------------------------------------------


def _softplus(a):
    return np.logaddexp(0.0, a)


def loss_ae(model: AAEModel, X) -> float:
    X = np.atleast_2d(X)
    return nn.cross_entropy(X, model.decoder(model.encoder(X)))


def loss_ae_grads(model: AAEModel, X):
    """Returns ``(loss, encoder_grads, decoder_grads)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z, enc_cache = model.encoder.forward_cached(X)
    Xhat, dec_cache = model.decoder.forward_cached(z)
    loss = nn.cross_entropy(X, Xhat)
    g_logits = nn.cross_entropy_grad_logits(X, Xhat)
    dec_grads, g_z = model.decoder.backward(dec_cache, g_logits, skip_last_activation=True)
    enc_grads, _ = model.encoder.backward(enc_cache, g_z)
    return loss, enc_grads, dec_grads


def _logit_input_grads(disc: nn.MLP, cache):
    """Per-sample gradient of the discriminator logit w.r.t. its input.

    Returns ``(s, V, G)``: the leaky-ReLU derivative mask ``s`` (n, H), the
    back-projected output weights ``V = s * w_out`` (n, H), and the input
    gradients ``G = V @ W_in`` (n, d).
    """
    if len(disc.layers) != 2:
        raise ValueError("penalty gradients are implemented for one hidden layer")
    _, pre0, post0 = cache[0]
    s = disc.activations[0].derivative(pre0, post0)
    V = s * disc.layers[1].W[0]
    G = V @ disc.layers[0].W
    return s, V, G


def gradient_penalty(model: AAEModel, z_real, z_fake) -> float:
    """Weighted squared gradient norm of the discriminator logit.

    ``mean_real[(1 - D)^2 |grad logit|^2] + mean_fake[D^2 |grad logit|^2]``
    """
    z_real = np.atleast_2d(z_real)
    z_fake = np.atleast_2d(z_fake)
    disc = model.discriminator
    D_r, cache_r = disc.forward_cached(z_real)
    D_f, cache_f = disc.forward_cached(z_fake)
    _, _, G_r = _logit_input_grads(disc, cache_r)
    _, _, G_f = _logit_input_grads(disc, cache_f)
    sq_r = (G_r * G_r).sum(axis=1)
    sq_f = (G_f * G_f).sum(axis=1)
    return float(np.mean((1.0 - D_r[:, 0]) ** 2 * sq_r) + np.mean(D_f[:, 0] ** 2 * sq_f))


def loss_d(model: AAEModel, X, z_real, gamma: float) -> float:
    return loss_d_grads(model, X, z_real, gamma, need_grads=False)[0]


def loss_d_grads(model: AAEModel, X, z_real, gamma: float, need_grads: bool = True):
    """Discriminator loss and its gradients w.r.t. the discriminator params.

    ``(1/2n) sum[-log D(z~) - log(1 - D(Q(X)))] + (gamma/2) * R_D``.
    Returns ``(loss, disc_grads)`` (``disc_grads`` is None without ``need_grads``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z_real = np.atleast_2d(np.asarray(z_real, dtype=np.float64))
    n = len(X)
    if len(z_real) != n:
        raise ShapeMismatch("need as many prior samples as inputs")
    z_fake = model.encoder(X)
    disc = model.discriminator
    D_all, cache = disc.forward_cached(np.vstack([z_real, z_fake]))
    logit = cache[-1][1][:, 0]
    D = D_all[:, 0]
    real, fake = slice(0, n), slice(n, 2 * n)

    adv = (np.sum(_softplus(-logit[real])) + np.sum(_softplus(logit[fake]))) / (2 * n)
    s, V, G = _logit_input_grads(disc, cache)
    sq = (G * G).sum(axis=1)
    weight = np.concatenate([(1.0 - D[real]) ** 2, D[fake] ** 2])
    penalty = np.sum(weight * sq) / n
    loss = float(adv + 0.5 * gamma * penalty)
    if not need_grads:
        return loss, None

    g_logit = np.empty(2 * n)
    g_logit[real] = -(1.0 - D[real]) / (2 * n)
    g_logit[fake] = D[fake] / (2 * n)
    # the weights depend on the logit through D
    d_weight = np.concatenate([-2.0 * D[real] * (1.0 - D[real]) ** 2, 2.0 * D[fake] ** 2 * (1.0 - D[fake])])
    g_logit += 0.5 * gamma * d_weight * sq / n
    grads, _ = disc.backward(cache, g_logit[:, None], skip_last_activation=True)

    # the squared norm depends on the weights directly (s is piecewise constant)
    k = 0.5 * gamma * weight / n
    W_in = disc.layers[0].W
    grads[0] = grads[0] + 2.0 * (k[:, None] * V).T @ G
    grads[2] = grads[2] + 2.0 * (k[:, None] * s * (G @ W_in.T)).sum(axis=0)[None, :]
    return loss, grads


def loss_q(model: AAEModel, X) -> float:
    return loss_q_grads(model, X, need_grads=False)[0]


def loss_q_grads(model: AAEModel, X, need_grads: bool = True):
    """Generator loss ``mean(-log D(Q(X)))`` and its encoder gradients."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    z, enc_cache = model.encoder.forward_cached(X)
    D, d_cache = model.discriminator.forward_cached(z)
    logit = d_cache[-1][1][:, 0]
    loss = float(np.mean(_softplus(-logit)))
    if not need_grads:
        return loss, None
    g_logit = -(1.0 - D[:, 0]) / n
    _, g_z = model.discriminator.backward(d_cache, g_logit[:, None], skip_last_activation=True)
    enc_grads, _ = model.encoder.backward(enc_cache, g_z)
    return loss, enc_grads


# -- training ---------------------------------------------------------------


@dataclass
class Optimizers:
    ae: nn.Adam
    disc: nn.SGD
    gen: nn.Adam

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Optimizers":
        return cls(nn.Adam(cfg.lr_ae), nn.SGD(cfg.lr_disc), nn.Adam(cfg.lr_gen))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Independent stream per epoch, so a resumed run replays identically."""
    return np.random.default_rng([seed, epoch])


def train_epoch(model: AAEModel, data, cfg: TrainConfig, opt: Optimizers, epoch: int, rng=None):
    """One pass over ``data`` (an (N, input_dim) array of normal-gait inputs).

    Parameters are updated in place. Returns the mean ``(L_AE, L_D, L_Q)``
    over minibatches, each measured just before its own update.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) == 0:
        raise EmptyDataset("no training samples")
    if rng is None:
        rng = epoch_rng(cfg.seed, epoch)
    gamma = cfg.gamma(epoch)
    order = rng.permutation(len(data))
    enc_params = model.encoder.params()
    ae_params = enc_params + model.decoder.params()
    disc_params = model.discriminator.params()
    totals = np.zeros(3)
    n_batches = 0
    for start in range(0, len(data), cfg.batch_size):
        Xb = data[order[start:start + cfg.batch_size]]

        l_ae, g_enc, g_dec = loss_ae_grads(model, Xb)
        opt.ae.step(ae_params, g_enc + g_dec)

        z_real = model.prior.sample(rng, len(Xb))
        l_d, g_disc = loss_d_grads(model, Xb, z_real, gamma)
        opt.disc.step(disc_params, g_disc)

        l_q, g_gen = loss_q_grads(model, Xb)
        opt.gen.step(enc_params, g_gen)

        totals += (l_ae, l_d, l_q)
        n_batches += 1
    return tuple(totals / n_batches)


def train(model: AAEModel, data, cfg: TrainConfig, opt: Optimizers | None = None, history=None,
          start_epoch: int = 1, callback=None):
    """Train for epochs ``start_epoch .. cfg.epochs``.

    ``callback(model, epoch, history)`` runs after every epoch; it may copy
    the model but must not mutate it. Returns ``(history, optimizers)`` with
    ``history`` an (epochs, 3) array of ``L_AE, L_D, L_Q``.
    """
    if opt is None:
        opt = Optimizers.from_config(cfg)
    rows = [] if history is None else [tuple(r) for r in np.asarray(history)]
    for epoch in range(start_epoch, cfg.epochs + 1):
        rows.append(train_epoch(model, data, cfg, opt, epoch))
        hist = np.asarray(rows, dtype=np.float64)
        if not np.all(np.isfinite(hist[-1])):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        if callback is not None:
            callback(model, epoch, hist)
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3), opt


def select_stable_window(history, window: int = 100) -> tuple[int, int]:
    """Pick the contiguous epoch range where ``L_D + L_Q`` varies least.

    Returns 1-based inclusive ``(first_epoch, last_epoch)``; ties go to the
    earliest window.
    """
    history = np.asarray(history, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(history) < window:
        raise HistoryTooShort(f"{len(history)} epochs recorded, window needs {window}")
    adversarial = history[:, 1] + history[:, 2]
    var = np.lib.stride_tricks.sliding_window_view(adversarial, window).var(axis=1)
    best = int(np.argmin(var))
    return best + 1, best + window


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"GAAE1"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<5sB32sIIIIIddB")
_FLAG_STATS = 1
_FLAG_OPT = 2


@dataclass
class Checkpoint:
    """Model snapshot plus training bookkeeping.

    ``index_stats`` holds the training means of the three measures and the
    exponent used for the prior measure: ``(s_ae, s_p, s_d, u)``.
    """

    model: AAEModel
    epoch: int
    history: np.ndarray
    config_digest: str = "0" * 64
    index_stats: tuple[float, float, float, float] | None = None
    optimizers: Optimizers | None = None


def config_digest(items) -> str:
    """SHA-256 over ``key=value`` lines sorted by key."""
    text = "".join(f"{k}={items[k]}\n" for k in sorted(items))
    return hashlib.sha256(text.encode()).hexdigest()


def _f64(arrays):
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    history = np.asarray(ckpt.history, dtype=np.float64).reshape(-1, 3)
    flags = (_FLAG_STATS if ckpt.index_stats is not None else 0) | (_FLAG_OPT if ckpt.optimizers is not None else 0)
    parts = [
        _CKPT_HEADER.pack(
            CKPT_MAGIC, CKPT_VERSION, bytes.fromhex(ckpt.config_digest),
            model.input_dim, model.hidden, model.latent_dim, ckpt.epoch, len(history),
            model.slope, model.prior.var, flags,
        ),
        _f64([history]),
    ]
    if ckpt.index_stats is not None:
        parts.append(_f64([np.asarray(ckpt.index_stats, dtype=np.float64)]))
    parts.append(_f64(model.params()))
    if ckpt.optimizers is not None:
        opt = ckpt.optimizers
        enc_dec = model.encoder.params() + model.decoder.params()
        enc = model.encoder.params()
        for adam, ref in ((opt.ae, enc_dec), (opt.gen, enc)):
            parts.append(struct.pack("<Q", adam.step_count))
            m = adam.m or [np.zeros_like(p) for p in ref]
            v = adam.v or [np.zeros_like(p) for p in ref]
            parts.append(_f64(m + v))
        parts.append(struct.pack("<Q", opt.disc.step_count))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise VersionMismatch("checkpoint is truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def floats(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def decode_checkpoint(blob: bytes, cfg: TrainConfig | None = None) -> Checkpoint:
    if len(blob) < _CKPT_HEADER.size or blob[:5] != CKPT_MAGIC:
        raise VersionMismatch("not a GAAE1 checkpoint")
    rd = _Reader(blob)
    (_, version, digest, input_dim, hidden, latent, epoch, n_hist, slope, prior_var, flags) = \
        _CKPT_HEADER.unpack(rd.take(_CKPT_HEADER.size))
    if version != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CKPT_VERSION}")
    history = rd.floats((n_hist, 3))
    stats = tuple(float(v) for v in rd.floats((4,))) if flags & _FLAG_STATS else None
    model = AAEModel.create(np.random.default_rng(0), input_dim, hidden, latent, slope, prior_var)
    for p in model.params():
        p[...] = rd.floats(p.shape)
    opt = None
    if flags & _FLAG_OPT:
        cfg = cfg or TrainConfig(epochs=max(epoch, 1), stable_window=1)
        opt = Optimizers.from_config(cfg)
        enc_dec = model.encoder.params() + model.decoder.params()
        enc = model.encoder.params()
        for adam, ref in ((opt.ae, enc_dec), (opt.gen, enc)):
            (adam.step_count,) = struct.unpack("<Q", rd.take(8))
            adam.m = [rd.floats(p.shape) for p in ref]
            adam.v = [rd.floats(p.shape) for p in ref]
        (opt.disc.step_count,) = struct.unpack("<Q", rd.take(8))
    if rd.pos != len(blob):
        raise VersionMismatch("trailing bytes after checkpoint payload")
    return Checkpoint(model, epoch, history, digest.hex(), stats, opt)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path, cfg: TrainConfig | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), cfg)
