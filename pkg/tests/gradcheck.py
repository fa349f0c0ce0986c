"""Central finite differences, shared by the gradient tests."""

import numpy as np

H = 1e-5


def numeric_grad(f, param, h=H):
    """d f / d param by central differences, perturbing ``param`` in place."""
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        orig = param[idx]
        param[idx] = orig + h
        up = f()
        param[idx] = orig - h
        down = f()
        param[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-6):
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from dividing
    round-off noise by round-off noise.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def kink_safe_step(model, X, z_real, h=H):
    """Shrink ``h`` so no leaky-ReLU pre-activation can cross zero.

    A weight perturbation of size h moves a pre-activation by at most
    h times the largest absolute input to that layer, so the step is
    capped at a tenth of the closest margin.
    """
    margin = np.inf
    z_fake = model.encode(X)
    for net, inp in ((model.encoder, X), (model.decoder, z_fake), (model.discriminator, z_real),
                     (model.discriminator, z_fake)):
        _, cache = net.forward_cached(inp)
        for (layer_in, pre, _), act in zip(cache, net.activations):
            if act.kind == "lrelu":
                scale = max(1.0, float(np.abs(layer_in).max()))
                margin = min(margin, float(np.abs(pre).min()) / scale)
    return min(h, 0.1 * margin)
