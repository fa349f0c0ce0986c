import math

import numpy as np
import pytest

from gaitaae import aae, nn, synth, pipeline
from gaitaae.errors import EmptyDataset, HistoryTooShort, ShapeMismatch, VersionMismatch
from gradcheck import kink_safe_step, numeric_grad, rel_error


def small_model(seed=0):
    return aae.AAEModel.create(np.random.default_rng(seed), input_dim=16, hidden=8, latent=4)


def zero_model(**kw):
    model = aae.AAEModel.create(np.random.default_rng(0), **kw)
    for p in model.params():
        p[...] = 0.0
    return model


def lrelu(a, slope=0.2):
    return a if a > 0 else slope * a


def mlp_oracle(net, x):
    """Layer-by-layer loops with explicit activations."""
    out = list(x)
    for layer, act in zip(net.layers, net.activations):
        pre = [sum(layer.W[i, j] * out[j] for j in range(len(out))) + layer.b[i] for i in range(layer.out_units)]
        if act.kind == "lrelu":
            out = [lrelu(a, act.slope) for a in pre]
        elif act.kind == "sigmoid":
            out = [1 / (1 + math.exp(-a)) for a in pre]
        else:
            out = pre
    return np.array(out)


def test_architecture_parameter_counts():
    model = aae.AAEModel.create(np.random.default_rng(0))
    assert model.encoder.n_params() == (256 * 96 + 96) + (96 * 16 + 16)
    assert model.decoder.n_params() == (16 * 96 + 96) + (96 * 256 + 256)
    assert model.discriminator.n_params() == (16 * 96 + 96) + (96 * 1 + 1)
    assert [l.W.shape for l in model.encoder.layers] == [(96, 256), (16, 96)]
    assert model.latent_dim == 16


def test_zero_weight_model_outputs():
    model = zero_model()
    model.encoder.layers[1].b[...] = np.arange(16) / 10
    z = model.encode(np.ones(256))
    np.testing.assert_array_equal(z, np.arange(16) / 10)
    np.testing.assert_array_equal(model.decode(np.zeros(16)), np.full(256, 0.5))
    assert model.discriminate(np.zeros(16)) == 0.5


def test_forward_passes_match_loop_oracle():
    rng = np.random.default_rng(1)
    model = small_model(1)
    x = rng.uniform(size=16)
    z = model.encode(x)
    np.testing.assert_allclose(z, mlp_oracle(model.encoder, x), atol=1e-12)
    np.testing.assert_allclose(model.decode(z), mlp_oracle(model.decoder, z), atol=1e-12)
    assert model.discriminate(z) == pytest.approx(mlp_oracle(model.discriminator, z)[0], abs=1e-12)
    p = model.discriminate(rng.normal(size=(50, 4)))
    assert p.shape == (50,) and np.all((p > 0) & (p < 1))


def test_shape_checks():
    model = small_model()
    with pytest.raises(ShapeMismatch):
        model.encode(np.zeros(15))
    with pytest.raises(ShapeMismatch):
        model.decode(np.zeros(5))


def test_losses_at_half():
    model = zero_model(input_dim=16, hidden=8, latent=4)
    X = np.full((5, 16), 0.5)
    z_real = np.random.default_rng(0).normal(size=(5, 4))
    assert aae.loss_ae(model, X) == pytest.approx(math.log(2), abs=1e-15)
    assert aae.loss_d(model, X, z_real, 0.0) == pytest.approx(math.log(2), abs=1e-15)
    # zero weights -> zero input gradient -> the penalty vanishes
    assert aae.gradient_penalty(model, z_real, model.encode(X)) == 0.0
    assert aae.loss_d(model, X, z_real, 5.0) == pytest.approx(math.log(2), abs=1e-15)
    assert aae.loss_q(model, X) == pytest.approx(math.log(2), abs=1e-15)


def test_loss_q_vanishes_when_discriminator_is_fooled():
    model = zero_model(input_dim=16, hidden=8, latent=4)
    model.discriminator.layers[1].b[...] = 40.0
    assert aae.loss_q(model, np.full((3, 16), 0.2)) < 1e-15


def test_loss_ae_approaches_zero_for_perfect_reconstruction():
    model = zero_model(input_dim=4, hidden=2, latent=2)
    X = np.array([[1.0, 0.0, 1.0, 0.0]])
    losses = []
    for scale in (2.0, 5.0, 10.0):
        model.decoder.layers[1].b[...] = scale * (2 * X[0] - 1)
        losses.append(aae.loss_ae(model, X))
    assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-4


def test_loss_ae_matches_per_sample_mean():
    rng = np.random.default_rng(2)
    model = small_model(2)
    X = rng.uniform(size=(6, 16))
    per_sample = [nn.cross_entropy(x, model.decode(model.encode(x))) for x in X]
    assert aae.loss_ae(model, X) == pytest.approx(np.mean(per_sample), abs=1e-12)


def input_grad_fd(model, z, h=1e-6):
    """Finite-difference gradient of the discriminator logit at ``z``."""
    def logit(v):
        p = model.discriminate(v)
        return math.log(p / (1 - p))

    g = np.zeros_like(z)
    for j in range(len(z)):
        e = np.zeros_like(z)
        e[j] = h
        g[j] = (logit(z + e) - logit(z - e)) / (2 * h)
    return g


def test_gradient_penalty_matches_finite_difference_oracle():
    rng = np.random.default_rng(3)
    model = small_model(3)
    z_real = rng.normal(size=(5, 4))
    z_fake = rng.normal(size=(5, 4)) * 2
    expected_real = np.mean([(1 - model.discriminate(z)) ** 2 * np.sum(input_grad_fd(model, z) ** 2) for z in z_real])
    expected_fake = np.mean([model.discriminate(z) ** 2 * np.sum(input_grad_fd(model, z) ** 2) for z in z_fake])
    got = aae.gradient_penalty(model, z_real, z_fake)
    assert got >= 0
    assert got == pytest.approx(expected_real + expected_fake, rel=1e-4)


def test_loss_d_matches_summation_oracle():
    rng = np.random.default_rng(4)
    model = small_model(4)
    X = rng.uniform(size=(5, 16))
    z_real = rng.normal(size=(5, 4))
    z_fake = [model.encode(x) for x in X]
    gamma = 0.3
    adv = sum(-math.log(model.discriminate(zr)) - math.log(1 - model.discriminate(zf)) for zr, zf in zip(z_real, z_fake))
    penalty = aae.gradient_penalty(model, z_real, np.array(z_fake))
    expected = adv / (2 * 5) + gamma / 2 * penalty
    assert aae.loss_d(model, X, z_real, gamma) == pytest.approx(expected, abs=1e-12)
    assert aae.loss_d(model, X, z_real, 0.0) == pytest.approx(adv / 10, abs=1e-12)


def test_loss_q_matches_oracle():
    rng = np.random.default_rng(5)
    model = small_model(5)
    X = rng.uniform(size=(7, 16))
    expected = np.mean([-math.log(model.discriminate(model.encode(x))) for x in X])
    assert aae.loss_q(model, X) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_all_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    model = small_model(100 + seed)
    X = rng.uniform(size=(6, 16))
    z_real = rng.normal(size=(6, 4))
    h = kink_safe_step(model, X, z_real)

    _, g_enc, g_dec = aae.loss_ae_grads(model, X)
    for p, g in zip(model.encoder.params() + model.decoder.params(), g_enc + g_dec):
        assert rel_error(g, numeric_grad(lambda: aae.loss_ae(model, X), p, h)) < 1e-4

    _, g_disc = aae.loss_d_grads(model, X, z_real, 0.8)
    for p, g in zip(model.discriminator.params(), g_disc):
        assert rel_error(g, numeric_grad(lambda: aae.loss_d(model, X, z_real, 0.8), p, h)) < 1e-4

    _, g_gen = aae.loss_q_grads(model, X)
    for p, g in zip(model.encoder.params(), g_gen):
        assert rel_error(g, numeric_grad(lambda: aae.loss_q(model, X), p, h)) < 1e-4


def params_of(net):
    return [p.copy() for p in net.params()]


def test_optimizer_partition():
    rng = np.random.default_rng(6)
    model = small_model(6)
    X = rng.uniform(size=(8, 16))
    enc, dec = params_of(model.encoder), params_of(model.decoder)
    _, g = aae.loss_d_grads(model, X, rng.normal(size=(8, 4)), 0.1)
    nn.SGD(0.5).step(model.discriminator.params(), g)
    for a, b in zip(enc + dec, model.encoder.params() + model.decoder.params()):
        np.testing.assert_array_equal(a, b)
    disc, dec = params_of(model.discriminator), params_of(model.decoder)
    enc_before = params_of(model.encoder)
    _, g = aae.loss_q_grads(model, X)
    nn.Adam(0.1).step(model.encoder.params(), g)
    for a, b in zip(disc + dec, model.discriminator.params() + model.decoder.params()):
        np.testing.assert_array_equal(a, b)
    assert any(np.any(a != b) for a, b in zip(enc_before, model.encoder.params()))


def tiny_config(**kw):
    base = dict(epochs=3, batch_size=16, stable_window=1, seed=7)
    base.update(kw)
    return aae.TrainConfig(**base)


def test_zero_learning_rates_leave_model_unchanged():
    rng = np.random.default_rng(8)
    model = small_model(8)
    before = [p.copy() for p in model.params()]
    cfg = tiny_config(lr_ae=0.0, lr_gen=0.0, lr_disc=0.0)
    aae.train_epoch(model, rng.uniform(size=(40, 16)), cfg, aae.Optimizers.from_config(cfg), 1)
    for a, b in zip(before, model.params()):
        np.testing.assert_array_equal(a, b)


def test_history_grows_one_row_per_epoch_and_is_deterministic():
    data = np.random.default_rng(9).uniform(size=(40, 16))
    cfg = tiny_config()
    seen = []
    hist1, _ = aae.train(small_model(9), data, cfg, callback=lambda m, e, h: seen.append(len(h)))
    assert seen == [1, 2, 3] and hist1.shape == (3, 3)
    m1, m2 = small_model(9), small_model(9)
    aae.train(m1, data, cfg)
    aae.train(m2, data, cfg)
    for a, b in zip(m1.params(), m2.params()):
        np.testing.assert_array_equal(a, b)


def test_resume_continues_identically():
    data = np.random.default_rng(10).uniform(size=(40, 16))
    cfg = tiny_config(epochs=4)
    straight = small_model(10)
    hist_a, _ = aae.train(straight, data, cfg)

    resumed = small_model(10)
    hist_b, opt = aae.train(resumed, data, tiny_config(epochs=2))
    blob = aae.encode_checkpoint(aae.Checkpoint(resumed, 2, hist_b, optimizers=opt))
    ckpt = aae.decode_checkpoint(blob, cfg)
    hist_c, _ = aae.train(ckpt.model, data, cfg, opt=ckpt.optimizers, history=ckpt.history, start_epoch=3)
    np.testing.assert_array_equal(hist_a, hist_c)
    for a, b in zip(straight.params(), ckpt.model.params()):
        np.testing.assert_array_equal(a, b)


def test_empty_dataset():
    cfg = tiny_config()
    with pytest.raises(EmptyDataset):
        aae.train_epoch(small_model(), np.zeros((0, 16)), cfg, aae.Optimizers.from_config(cfg), 1)


def test_reconstruction_loss_decreases_on_synthetic_gaits():
    specs = [s for s in synth.default_benchmark(synth.BenchmarkConfig(points_per_frame=1500)) if s.split == "train"][:2]
    specs = [synth.SequenceSpec(s.sequence_id, s.subject, s.split, s.mode, s.params, 100) for s in specs]
    X = np.vstack([d.X for d in pipeline.build_dataset(specs)])
    assert X.shape == (200, 256)
    cfg = aae.TrainConfig(epochs=20, stable_window=1, seed=3)
    hist, _ = aae.train(aae.AAEModel.create(np.random.default_rng(3)), X, cfg)
    assert hist[-1, 0] < hist[0, 0]
    assert hist[-5:, 0].mean() < hist[:5, 0].mean()


def brute_force_window(history, window):
    best, best_var = None, None
    for start in range(len(history) - window + 1):
        vals = [history[i][1] + history[i][2] for i in range(start, start + window)]
        mean = sum(vals) / window
        var = sum((v - mean) ** 2 for v in vals) / window
        if best_var is None or var < best_var - 1e-15:
            best, best_var = start, var
    return best + 1, best + window


def test_stable_window_selection():
    flat = np.full((30, 3), 0.5)
    assert aae.select_stable_window(flat, 10) == (1, 10)
    rng = np.random.default_rng(11)
    hist = np.column_stack([np.ones(60), 0.7 + 0.01 * rng.normal(size=60), 0.7 + 0.01 * rng.normal(size=60)])
    hist[10, 1] += 3.0  # early spike
    hist[50, 2] += 3.0  # late spike
    w = aae.select_stable_window(hist, 20)
    assert w == brute_force_window(hist, 20)
    assert not (w[0] <= 11 <= w[1]) and not (w[0] <= 51 <= w[1])
    with pytest.raises(HistoryTooShort):
        aae.select_stable_window(hist, 61)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    model = aae.AAEModel.create(rng)
    hist = rng.normal(size=(5, 3))
    digest = aae.config_digest({"a": 1})
    ckpt = aae.Checkpoint(model, 5, hist, digest, (0.1, 0.2, 0.3, 0.125))
    path = tmp_path / "m.gaae"
    aae.save_checkpoint(path, ckpt)
    blob = path.read_bytes()
    assert blob[:5] == b"GAAE1" and blob[5] == 1
    back = aae.load_checkpoint(path)
    aae.save_checkpoint(tmp_path / "again.gaae", back)
    assert (tmp_path / "again.gaae").read_bytes() == blob
    assert back.epoch == 5 and back.config_digest == digest and back.index_stats == (0.1, 0.2, 0.3, 0.125)
    X = rng.uniform(size=(100, 256))
    np.testing.assert_array_equal(back.model.decode(back.model.encode(X)), model.decode(model.encode(X)))
    np.testing.assert_array_equal(back.model.discriminate(model.encode(X)), model.discriminate(model.encode(X)))
    with pytest.raises(VersionMismatch):
        aae.decode_checkpoint(b"XAAE1" + blob[5:])
    with pytest.raises(VersionMismatch):
        aae.decode_checkpoint(blob[:5] + bytes([9]) + blob[6:])
    with pytest.raises(VersionMismatch):
        aae.decode_checkpoint(blob[:-8])


def test_prior_spec():
    prior = aae.PriorSpec(16, 2.0)
    z = prior.sample(np.random.default_rng(0), 20000)
    assert z.shape == (20000, 16)
    assert z.var() == pytest.approx(2.0, rel=0.03)
    with pytest.raises(ValueError):
        aae.PriorSpec(16, 0.0)


def test_gamma_annealing():
    cfg = aae.TrainConfig(epochs=10, stable_window=1, gamma0=0.1)
    assert cfg.gamma(1) == 0.1
    assert cfg.gamma(3) == pytest.approx(0.1 * 0.99**2)
