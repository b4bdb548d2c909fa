import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hbrom.exceptions import GradientExplosionError, ShapeError, TapeInvalidationError
from hbrom.neural import (
    AdamWState,
    GruParams,
    MlpParams,
    adamw_step,
    clip_global_norm,
    gru_init,
    gru_step,
    gru_vjp,
    mlp_forward,
    mlp_init,
    mlp_vjp,
    vae_init,
    vae_sample,
    vae_vjp,
)


def _fd(fn, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (fn(up) - fn(dn)) / (2 * eps)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# ---------------------------------------------------------------- MLP


def test_mlp_zero_params():
    net = MlpParams((3, 5, 2))
    assert np.array_equal(mlp_forward(net, np.ones(3))[0], np.zeros(2))


def test_mlp_identity_layer():
    net = MlpParams((3, 3))
    net.set_parameter("W0", np.eye(3))
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(mlp_forward(net, x)[0], x)


def test_mlp_naive_oracle(rng):
    net = mlp_init((2, 8, 2), rng=rng)
    x = rng.normal(size=2)
    W0, b0, W1, b1 = net["W0"], net["b0"], net["W1"], net["b1"]
    hidden = [math.tanh(sum(W0[j, k] * x[k] for k in range(2)) + b0[j]) for j in range(8)]
    want = [sum(W1[i, j] * hidden[j] for j in range(8)) + b1[i] for i in range(2)]
    assert np.max(np.abs(mlp_forward(net, x)[0] - want)) <= 1e-12


def test_mlp_linear_vjp(rng):
    net = MlpParams((3, 2))
    W = rng.normal(size=(2, 3))
    net.set_parameter("W0", W)
    x, v = rng.normal(size=3), rng.normal(size=2)
    _, tape = mlp_forward(net, x)
    gx, g = mlp_vjp(tape, v)
    assert np.allclose(gx, W.T @ v)
    assert np.allclose(g["W0"], np.outer(v, x))


def test_mlp_zero_cotangent(rng):
    net = mlp_init((3, 4, 2), rng=rng)
    _, tape = mlp_forward(net, rng.normal(size=3))
    gx, g = mlp_vjp(tape, np.zeros(2))
    assert not np.any(gx) and not any(np.any(v) for v in g.values())


@pytest.mark.parametrize("activation", ["tanh", "relu", "softplus", "sigmoid"])
def test_mlp_vjp_finite_differences(rng, activation):
    net = mlp_init((3, 6, 6, 2), activation, rng=rng)
    x = rng.normal(size=(4, 3))
    v = rng.normal(size=(4, 2))
    _, tape = mlp_forward(net, x)
    gx, g = mlp_vjp(tape, v)
    assert _rel(gx, _fd(lambda xx: np.sum(mlp_forward(net, xx)[0] * v), x)) <= 1e-5
    for name, value in net.named_parameters().items():
        probe = mlp_init(net.sizes, activation)
        probe.load_parameters(net.named_parameters())

        def f(p, name=name, probe=probe):
            probe.set_parameter(name, p)
            return np.sum(mlp_forward(probe, x)[0] * v)

        assert _rel(g[name], _fd(f, value)) <= 1e-5


def test_mlp_tape_invalidation(rng):
    net = mlp_init((2, 3, 2), rng=rng)
    _, tape = mlp_forward(net, np.ones(2))
    net.set_parameter("b0", np.ones(3))
    with pytest.raises(TapeInvalidationError):
        mlp_vjp(tape, np.ones(2))


def test_mlp_shape_errors(rng):
    net = mlp_init((2, 3, 2), rng=rng)
    with pytest.raises(ShapeError):
        mlp_forward(net, np.ones(3))
    with pytest.raises(ShapeError):
        net.set_parameter("W0", np.ones((2, 2)))


# ---------------------------------------------------------------- GRU


def test_gru_zero_params_halves_state():
    cell = GruParams(2, 3)
    h = np.array([1.0, -2.0, 4.0])
    assert np.array_equal(gru_step(cell, h, np.ones(2))[0], 0.5 * h)
    assert np.array_equal(gru_step(cell, np.zeros(3), np.ones(2))[0], np.zeros(3))


def test_gru_vjp_finite_differences(rng):
    cell = gru_init(3, 4, rng=rng)
    h, x, v = rng.normal(size=(2, 4)), rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    _, tape = gru_step(cell, h, x)
    gh, gx, g = gru_vjp(tape, v)
    assert _rel(gh, _fd(lambda hh: np.sum(gru_step(cell, hh, x)[0] * v), h)) <= 1e-5
    assert _rel(gx, _fd(lambda xx: np.sum(gru_step(cell, h, xx)[0] * v), x)) <= 1e-5
    for name, value in cell.named_parameters().items():
        probe = GruParams(3, 4)
        probe.load_parameters(cell.named_parameters())

        def f(p, name=name, probe=probe):
            probe.set_parameter(name, p)
            return np.sum(gru_step(probe, h, x)[0] * v)

        assert _rel(g[name], _fd(f, value)) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-0.999, 0.999)), arrays(np.float64, 2, elements=st.floats(-50, 50)))
def test_gru_stays_in_unit_box(h, x):
    cell = gru_init(2, 3, seed=4)
    out = gru_step(cell, h, x)[0]
    assert np.all(np.abs(out) < 1)


# ---------------------------------------------------------------- VAE head


def test_vae_standard_normal_posterior():
    head = vae_init(3, 2)
    for k in head.named_parameters():
        head.set_parameter(k, np.zeros_like(head[k]))
    z, kl, _ = vae_sample(head, np.ones(3), np.zeros(2))
    assert np.array_equal(z, np.zeros(2)) and kl == 0.0


def test_vae_mean_only():
    head = vae_init(1, 2)
    for k in head.named_parameters():
        head.set_parameter(k, np.zeros_like(head[k]))
    m = np.array([0.3, -1.2])
    head.set_parameter("b_mu", m)
    z, kl, _ = vae_sample(head, np.ones(1), np.zeros(2))
    assert np.array_equal(z, m)
    assert kl == pytest.approx(0.5 * m @ m, abs=1e-15)


def test_vae_kl_formula(rng):
    head = vae_init(4, 3, rng=rng)
    enc = rng.normal(size=4)
    _, kl, _ = vae_sample(head, enc, rng.normal(size=3))
    mu = head["W_mu"] @ enc + head["b_mu"]
    lv = head["W_lv"] @ enc + head["b_lv"]
    want = sum(0.5 * (math.exp(lv[i]) + mu[i] ** 2 - 1 - lv[i]) for i in range(3))
    assert abs(kl - want) <= 1e-12


def test_vae_vjp_finite_differences(rng):
    head = vae_init(4, 3, rng=rng)
    enc, noise, v = rng.normal(size=(2, 4)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    w = 0.7

    def loss(e):
        z, kl, _ = vae_sample(head, e, noise)
        return np.sum(z * v) + w * np.sum(kl)

    _, _, tape = vae_sample(head, enc, noise)
    genc, g = vae_vjp(tape, v, w)
    assert _rel(genc, _fd(loss, enc)) <= 1e-5
    probe = vae_init(4, 3)
    probe.load_parameters(head.named_parameters())
    for name, value in head.named_parameters().items():

        def f(p, name=name):
            probe.set_parameter(name, p)
            z, kl, _ = vae_sample(probe, enc, noise)
            return np.sum(z * v) + w * np.sum(kl)

        assert _rel(g[name], _fd(f, value)) <= 1e-5
        probe.set_parameter(name, value)


# ---------------------------------------------------------------- AdamW


def test_adamw_zero_gradient_no_decay():
    p = {"w": np.array([1.0, 2.0])}
    state = AdamWState(lr=0.1, weight_decay=0.0)
    out = adamw_step(p, {"w": np.zeros(2)}, state)
    assert np.array_equal(out["w"], p["w"])
    assert not np.any(state.m["w"]) and not np.any(state.v["w"])


def test_adamw_first_step():
    state = AdamWState(lr=0.1, weight_decay=0.0)
    out = adamw_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, state)
    assert out["w"] == pytest.approx(-0.1, abs=1e-8)


def test_adamw_decoupled_decay():
    state = AdamWState(lr=0.1, weight_decay=0.1)
    p = {"w": np.array(3.0)}
    for _ in range(5):
        p = adamw_step(p, {"w": np.array(0.0)}, state)
    assert p["w"] == pytest.approx(3.0 * 0.99**5, rel=1e-14)


def test_adamw_matches_reference_loop(rng):
    grads = rng.normal(size=(20, 3))
    state = AdamWState(lr=0.05, weight_decay=0.0)
    p = {"w": np.zeros(3)}
    for g in grads:
        p = adamw_step(p, {"w": g}, state)
    w, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p["w"], w, rtol=1e-13, atol=1e-15)


def test_adamw_module_update_bumps_version(rng):
    net = mlp_init((2, 2), rng=rng)
    v0 = net.version
    adamw_step(net, {"W0": np.ones((2, 2))}, AdamWState())
    assert net.version > v0


def test_adamw_explosion_names_block():
    with pytest.raises(GradientExplosionError, match="enc.W"):
        adamw_step({"enc.W": np.zeros(2)}, {"enc.W": np.array([1.0, np.inf])}, AdamWState())


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, total = clip_global_norm(g, 1.0)
    assert total == 5.0
    assert np.allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
