"""Small fully-connected network toolkit with hand-written backprop.

Batches are row-major: an input batch has shape ``(n, in_units)`` and a
layer computes ``x @ W.T + b`` with ``W`` of shape ``(out_units, in_units)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

EPS = 1e-7
DEFAULT_SLOPE = 0.2


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray

    @property
    def in_units(self) -> int:
        return self.W.shape[1]

    @property
    def out_units(self) -> int:
        return self.W.shape[0]

    def params(self):
        return [self.W, self.b]


def init_dense(rng: np.random.Generator, n_in: int, n_out: int) -> Dense:
    """Glorot-uniform weights, zero biases."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    W = rng.uniform(-limit, limit, size=(n_out, n_in))
    return Dense(W, np.zeros(n_out))


@dataclass(frozen=True)
class Activation:
    kind: str  # "lrelu" | "sigmoid" | "identity"
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.kind not in ("lrelu", "sigmoid", "identity"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "lrelu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky ReLU slope must lie in (0, 1)")

    def __call__(self, a):
        if self.kind == "lrelu":
            return np.where(a > 0, a, self.slope * a)
        if self.kind == "sigmoid":
            return sigmoid(a)
        return a

    def derivative(self, a, out):
        """d act / d a, given pre-activation ``a`` and output ``out``."""
        if self.kind == "lrelu":
            return np.where(a > 0, 1.0, self.slope)
        if self.kind == "sigmoid":
            return out * (1.0 - out)
        return np.ones_like(a)


LRELU = Activation("lrelu")
SIGMOID = Activation("sigmoid")
IDENTITY = Activation("identity")


def sigmoid(a):
    # split by sign so exp never overflows
    a = np.asarray(a, dtype=np.result_type(a, np.float32))
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def forward(layer: Dense, act: Activation, x):
    """``act(W x + b)`` for a single vector or a batch of row vectors."""
    x = np.asarray(x)
    if x.shape[-1] != layer.in_units:
        raise ShapeMismatch(f"layer expects {layer.in_units} inputs, got {x.shape[-1]}")
    return act(x @ layer.W.T + layer.b)


@dataclass
class MLP:
    """A stack of dense layers, each followed by its activation."""

    layers: list[Dense]
    activations: list[Activation]

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ValueError("one activation per layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_units != nxt.in_units:
                raise ShapeMismatch("consecutive layer sizes do not chain")

    @classmethod
    def create(cls, rng, sizes, activations):
        layers = [init_dense(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(layers, list(activations))

    @property
    def in_units(self) -> int:
        return self.layers[0].in_units

    @property
    def out_units(self) -> int:
        return self.layers[-1].out_units

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "MLP":
        return MLP([Dense(l.W.copy(), l.b.copy()) for l in self.layers], list(self.activations))

    def astype(self, dtype) -> "MLP":
        return MLP([Dense(l.W.astype(dtype), l.b.astype(dtype)) for l in self.layers], list(self.activations))

    def __call__(self, x):
        out = np.asarray(x)
        if out.shape[-1] != self.in_units:
            raise ShapeMismatch(f"network expects {self.in_units} inputs, got {out.shape[-1]}")
        for layer, act in zip(self.layers, self.activations):
            out = act(out @ layer.W.T + layer.b)
        return out

    def forward_cached(self, x):
        """Forward pass keeping what :meth:`backward` needs.

        Returns ``(output, cache)`` where the cache holds, per layer, the
        layer input, the pre-activation and the activation output.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_units:
            raise ShapeMismatch(f"network expects {self.in_units} inputs, got {x.shape[1]}")
        cache = []
        out = x
        for layer, act in zip(self.layers, self.activations):
            pre = out @ layer.W.T + layer.b
            post = act(pre)
            cache.append((out, pre, post))
            out = post
        return out, cache

    def backward(self, cache, grad_out, skip_last_activation=False):
        """Backpropagate ``dL/d output``.

        With ``skip_last_activation`` the incoming gradient is taken to be
        with respect to the last pre-activation (e.g. a logit), which avoids
        dividing through a saturated sigmoid.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` aligned to
        :meth:`params`.
        """
        grads: list[np.ndarray] = []
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            layer, act = self.layers[i], self.activations[i]
            inp, pre, post = cache[i]
            if not (skip_last_activation and i == len(self.layers) - 1):
                g = g * act.derivative(pre, post)
            grads.append(g.sum(axis=0))
            grads.append(g.T @ inp)
            g = g @ layer.W
        grads.reverse()
        return grads, g


def cross_entropy(X, Xhat) -> float:
    """Mean binary cross-entropy over all elements, with ``Xhat`` clamped to [EPS, 1-EPS]."""
    X = np.asarray(X, dtype=np.float64)
    Xc = np.clip(np.asarray(Xhat, dtype=np.float64), EPS, 1.0 - EPS)
    if X.shape != Xc.shape:
        raise ShapeMismatch(f"{X.shape} vs {Xc.shape}")
    return float(np.mean(-X * np.log(Xc) - (1.0 - X) * np.log(1.0 - Xc)))


def cross_entropy_grad_logits(X, Xhat):
    """Gradient of :func:`cross_entropy` w.r.t. the pre-sigmoid logits of ``Xhat``.

    Elements where the clamp is active contribute zero gradient.
    """
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    live = (Xhat > EPS) & (Xhat < 1.0 - EPS)
    return np.where(live, Xhat - X, 0.0) / X.size


# -- optimizers -------------------------------------------------------------


@dataclass
class SGD:
    lr: float
    step_count: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def step(self, params, grads):
        """In-place ``p -= lr * g``."""
        for p, g in zip(params, grads):
            p -= self.lr * g
        self.step_count += 1


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def step(self, params, grads):
        """In-place bias-corrected Adam update; moment buffers are created lazily."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
