"""Per-frame gait measures and their weighted combination.

For an input histogram ``X`` with latent code ``z = Q(X)`` and
reconstruction ``Xhat``:

* ``y_ae`` - RMSE between ``X`` and ``Xhat``; grows with abnormality.
* ``y_p``  - prior density at ``z`` divided by the density at the origin,
  ``exp(-|z|^2 / (2 var))``; shrinks with abnormality.
* ``y_d``  - discriminator output ``D(z)``; shrinks with abnormality.

The combined index is ``w_ae*y_ae + w_p*y_p**u + w_d*y_d`` with
``w_i = sum(s) / s_i`` and ``s_i`` the training-set mean of measure ``i``
(after the exponent for ``y_p``). Measures left out of the mask get weight
zero and do not enter ``sum(s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aae import AAEModel, PriorSpec
from .errors import ShapeMismatch, ZeroMeanMeasure
from .histogram import Histogram, flatten

MEASURES = ("ae", "p", "d")
DEFAULT_EXPONENT = 1.0 / 8.0


@dataclass
class FrameMeasures:
    """Measures for one frame (floats) or many frames (aligned 1-D arrays).

    ``y_p`` is stored untransformed; the exponent is applied in :func:`combine`.
    """

    y_ae: float | np.ndarray
    y_p: float | np.ndarray
    y_d: float | np.ndarray
    combined: float | np.ndarray = float("nan")

    def __len__(self):
        return int(np.size(self.y_ae))

    def take(self, idx) -> "FrameMeasures":
        return FrameMeasures(*(np.asarray(getattr(self, f))[idx] for f in ("y_ae", "y_p", "y_d", "combined")))


@dataclass(frozen=True)
class IndexConfig:
    exponent: float = DEFAULT_EXPONENT
    mask: tuple[str, ...] = MEASURES

    def __post_init__(self):
        if not 0.0 < self.exponent <= 1.0:
            raise ValueError("exponent must lie in (0, 1]")
        bad = set(self.mask) - set(MEASURES)
        if bad or not self.mask:
            raise ValueError(f"mask must be a non-empty subset of {MEASURES}, got {self.mask}")


@dataclass(frozen=True)
class WeightVector:
    w_ae: float
    w_p: float
    w_d: float
    s_ae: float
    s_p: float
    s_d: float
    exponent: float = DEFAULT_EXPONENT

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.w_ae, self.w_p, self.w_d)

    @property
    def stats(self) -> tuple[float, float, float]:
        return (self.s_ae, self.s_p, self.s_d)


def measure_ae(X, Xhat):
    """RMSE over the last axis: ``|X - Xhat|_2 / sqrt(m)``."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise ShapeMismatch(f"{X.shape} vs {Xhat.shape}")
    out = np.sqrt(np.mean((X - Xhat) ** 2, axis=-1))
    return float(out) if out.ndim == 0 else out


def measure_prior(z, prior: PriorSpec):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != prior.dim:
        raise ShapeMismatch(f"latent dimension {z.shape[-1]} vs prior {prior.dim}")
    out = np.exp(-np.sum(z * z, axis=-1) / (2.0 * prior.var))
    return float(out) if out.ndim == 0 else out


def measure_disc(model: AAEModel, z):
    return model.discriminate(z)


def apply_exponent(y_p, u: float = DEFAULT_EXPONENT):
    if not 0.0 < u <= 1.0:
        raise ValueError("exponent must lie in (0, 1]")
    return np.power(y_p, u)


def weights_from_stats(stats, mask=MEASURES, exponent: float = DEFAULT_EXPONENT) -> WeightVector:
    """Build weights from training means ``stats = (s_ae, s_p, s_d)``.

    ``s_p`` must already be the mean of ``y_p ** exponent``.
    """
    stats = tuple(float(s) for s in stats)
    active = [name in mask for name in MEASURES]
    for name, on, s in zip(MEASURES, active, stats):
        if on and not s > 0:
            raise ZeroMeanMeasure(f"training mean of measure {name!r} is {s}")
    kept = [s for s, on in zip(stats, active) if on]
    # summing the ratios keeps symmetric stats exact, e.g. (0.1, 0.1, 0.1) -> 3.0
    w = [math.fsum(sj / s for sj in kept) if on else 0.0 for s, on in zip(stats, active)]
    return WeightVector(*w, *stats, exponent=exponent)


def training_stats(measures: FrameMeasures, exponent: float = DEFAULT_EXPONENT) -> tuple[float, float, float]:
    if len(measures) == 0:
        raise ValueError("no training measures")
    return (
        float(np.mean(measures.y_ae)),
        float(np.mean(apply_exponent(measures.y_p, exponent))),
        float(np.mean(measures.y_d)),
    )


def compute_weights(measures: FrameMeasures, mask=MEASURES, exponent: float = DEFAULT_EXPONENT) -> WeightVector:
    """Weights from training-frame measures; see module docstring."""
    return weights_from_stats(training_stats(measures, exponent), mask, exponent)


def combine(m: FrameMeasures, w: WeightVector):
    """Weighted sum, with ``y_p`` raised to the weight vector's exponent."""
    out = w.w_ae * np.asarray(m.y_ae) + w.w_p * apply_exponent(np.asarray(m.y_p), w.exponent) + w.w_d * np.asarray(m.y_d)
    return float(out) if np.ndim(out) == 0 else out


def raw_measures(model: AAEModel, X, dtype=np.float64) -> FrameMeasures:
    """The three measures for a batch of flattened histograms (no combination).

    ``dtype=np.float32`` runs the forward passes in single precision.
    """
    X = np.atleast_2d(np.asarray(X, dtype=dtype))
    if X.shape[1] != model.input_dim:
        raise ShapeMismatch(f"expected {model.input_dim} inputs, got {X.shape[1]}")
    net = model if dtype == np.float64 else model.astype(dtype)
    z = net.encode(X)
    Xhat = net.decode(z)
    y_d = net.discriminate(z)
    return FrameMeasures(
        measure_ae(X, Xhat),
        measure_prior(z.astype(np.float64), model.prior),
        np.asarray(y_d, dtype=np.float64),
    )


def score_frames(model: AAEModel, weights: WeightVector, X, dtype=np.float64) -> FrameMeasures:
    m = raw_measures(model, X, dtype)
    m.combined = combine(m, weights)
    return m


def score_frame(model: AAEModel, weights: WeightVector, x) -> FrameMeasures:
    """Score one histogram (a :class:`Histogram` or its flattened vector); returns scalar fields."""
    if isinstance(x, Histogram):
        x = flatten(x)
    m = score_frames(model, weights, np.asarray(x)[None, :])
    return FrameMeasures(float(m.y_ae[0]), float(m.y_p[0]), float(m.y_d[0]), float(m.combined[0]))
