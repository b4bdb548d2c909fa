"""Small differentiable building blocks with hand-written reverse mode.

Every block stores its parameters as named numpy arrays. Forward functions
return an output plus a *tape*; the matching ``*_vjp`` function consumes the
tape and a cotangent and returns input and parameter gradients. Arrays are
batched along the leading axis (a 1-D input is treated as a batch of one and
squeezed back).

Parameter arrays are kept read-only. Updates go through :func:`adamw_step`,
which bumps the owning container's version so stale tapes are detected.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import GradientExplosionError, ShapeError, TapeInvalidationError

__all__ = [
    "Module",
    "MlpParams",
    "GruParams",
    "VaeHead",
    "AdamWState",
    "ACTIVATIONS",
    "mlp_init",
    "mlp_forward",
    "mlp_vjp",
    "gru_init",
    "gru_step",
    "gru_vjp",
    "vae_init",
    "vae_sample",
    "vae_vjp",
    "adamw_step",
    "clip_global_norm",
]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(float)),
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "softplus": (lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid(x)),
}


class Module:
    """Container of named, read-only parameter arrays with a version counter."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self._version = 0

    def _add(self, name, value):
        arr = np.array(value, dtype=float)
        arr.flags.writeable = False
        self._params[name] = arr

    def _add_child(self, name, child):
        self._children[name] = child

    def __getitem__(self, name):
        return self._params[name]

    @property
    def version(self):
        return self._version

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = dict(self._params)
        for cname, child in self._children.items():
            for k, v in child.named_parameters().items():
                out[f"{cname}.{k}"] = v
        return out

    def set_parameter(self, name, value):
        if "." in name:
            head, rest = name.split(".", 1)
            self._children[head].set_parameter(rest, value)
            self._version += 1
            return
        old = self._params[name]
        value = np.asarray(value, dtype=float)
        if value.shape != old.shape:
            raise ShapeError(f"parameter {name}: expected shape {old.shape}, got {value.shape}")
        self._add(name, value)
        self._version += 1

    def load_parameters(self, params):
        for k, v in params.items():
            self.set_parameter(k, v)

    def num_parameters(self):
        return sum(v.size for v in self.named_parameters().values())


def _check_tape(tape):
    if tape.owner.version != tape.version:
        raise TapeInvalidationError(
            "parameters were modified after this tape was recorded; rerun the forward pass"
        )


def _batch(x, width, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {x.shape}")
    return xb, single


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------- MLP


class MlpParams(Module):
    """Fully connected network ``y = W_L act(... act(W_1 x + b_1) ...) + b_L``.

    ``sizes`` lists the widths including input and output, so a 2-8-2 net
    has ``sizes=(2, 8, 2)`` and two affine layers. The output layer is linear.
    """

    def __init__(self, sizes, activation="tanh"):
        super().__init__()
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ShapeError(f"invalid layer sizes {sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self._add(f"W{i}", np.zeros((b, a)))
            self._add(f"b{i}", np.zeros(b))

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def in_width(self):
        return self.sizes[0]

    @property
    def out_width(self):
        return self.sizes[-1]


def mlp_init(sizes, activation="tanh", rng=None, seed=0) -> MlpParams:
    rng = rng if rng is not None else np.random.default_rng(seed)
    p = MlpParams(sizes, activation)
    for i, (a, b) in enumerate(zip(p.sizes[:-1], p.sizes[1:])):
        p._add(f"W{i}", _uniform(rng, a, (b, a)))
        p._add(f"b{i}", _uniform(rng, a, (b,)))
    return p


@dataclass
class MlpTape:
    owner: MlpParams
    version: int
    single: bool
    inputs: list  # input to each affine layer
    pre: list  # pre-activations of hidden layers


def mlp_forward(params: MlpParams, x):
    xb, single = _batch(x, params.in_width, "mlp input")
    act, _ = ACTIVATIONS[params.activation]
    inputs, pre = [], []
    h = xb
    L = params.n_layers
    for i in range(L):
        inputs.append(h)
        z = h @ params[f"W{i}"].T + params[f"b{i}"]
        if i < L - 1:
            pre.append(z)
            h = act(z)
        else:
            h = z
    tape = MlpTape(params, params.version, single, inputs, pre)
    return (h[0] if single else h), tape


def mlp_vjp(tape: MlpTape, cotangent):
    """Return ``(grad_x, grads)`` where ``grads`` maps parameter names to arrays.

    Parameter gradients are summed over the batch.
    """
    _check_tape(tape)
    p = tape.owner
    v, _ = _batch(cotangent, p.out_width, "mlp cotangent")
    if v.shape[0] != tape.inputs[0].shape[0]:
        raise ShapeError("cotangent batch size does not match the tape")
    _, dact = ACTIVATIONS[p.activation]
    grads = {}
    for i in reversed(range(p.n_layers)):
        if i < p.n_layers - 1:
            z = tape.pre[i]
            v = v * dact(z, tape.inputs[i + 1])
        grads[f"W{i}"] = v.T @ tape.inputs[i]
        grads[f"b{i}"] = v.sum(axis=0)
        v = v @ p[f"W{i}"]
    gx = v[0] if tape.single else v
    return gx, {k: grads[k] for k in p.named_parameters()}


# ---------------------------------------------------------------- GRU


class GruParams(Module):
    """GRU cell (reset gate applied to the hidden projection, as in cuDNN)."""

    def __init__(self, in_width, hidden):
        super().__init__()
        self.in_width = int(in_width)
        self.hidden = int(hidden)
        for g in "rzn":
            self._add(f"W_i{g}", np.zeros((hidden, in_width)))
            self._add(f"W_h{g}", np.zeros((hidden, hidden)))
            self._add(f"b_i{g}", np.zeros(hidden))
            self._add(f"b_h{g}", np.zeros(hidden))


def gru_init(in_width, hidden, rng=None, seed=0) -> GruParams:
    rng = rng if rng is not None else np.random.default_rng(seed)
    p = GruParams(in_width, hidden)
    for name, arr in p.named_parameters().items():
        p._add(name, _uniform(rng, hidden, arr.shape))
    return p


@dataclass
class GruTape:
    owner: GruParams
    version: int
    single: bool
    x: np.ndarray
    h: np.ndarray
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    hn: np.ndarray  # W_hn h + b_hn


def gru_step(params: GruParams, h_prev, x):
    """One GRU update. Returns ``(h_next, tape)``.

    r = sig(W_ir x + b_ir + W_hr h + b_hr)
    z = sig(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
    """
    xb, single = _batch(x, params.in_width, "gru input")
    hb, hsingle = _batch(h_prev, params.hidden, "gru hidden")
    if single != hsingle or xb.shape[0] != hb.shape[0]:
        raise ShapeError("gru input and hidden batch shapes differ")
    P = params
    r = _sigmoid(xb @ P["W_ir"].T + P["b_ir"] + hb @ P["W_hr"].T + P["b_hr"])
    z = _sigmoid(xb @ P["W_iz"].T + P["b_iz"] + hb @ P["W_hz"].T + P["b_hz"])
    hn = hb @ P["W_hn"].T + P["b_hn"]
    n = np.tanh(xb @ P["W_in"].T + P["b_in"] + r * hn)
    out = (1.0 - z) * n + z * hb
    tape = GruTape(P, P.version, single, xb, hb, r, z, n, hn)
    return (out[0] if single else out), tape


def gru_vjp(tape: GruTape, cotangent):
    """Return ``(grad_h_prev, grad_x, grads)``."""
    _check_tape(tape)
    P = tape.owner
    v, _ = _batch(cotangent, P.hidden, "gru cotangent")
    x, h, r, z, n, hn = tape.x, tape.h, tape.r, tape.z, tape.n, tape.hn
    dn = v * (1.0 - z) * (1.0 - n * n)
    dz = v * (h - n) * z * (1.0 - z)
    dhn = dn * r
    dr = dn * hn * r * (1.0 - r)
    grads = {
        "W_ir": dr.T @ x,
        "W_hr": dr.T @ h,
        "b_ir": dr.sum(0),
        "b_hr": dr.sum(0),
        "W_iz": dz.T @ x,
        "W_hz": dz.T @ h,
        "b_iz": dz.sum(0),
        "b_hz": dz.sum(0),
        "W_in": dn.T @ x,
        "W_hn": dhn.T @ h,
        "b_in": dn.sum(0),
        "b_hn": dhn.sum(0),
    }
    gh = v * z + dr @ P["W_hr"] + dz @ P["W_hz"] + dhn @ P["W_hn"]
    gx = dr @ P["W_ir"] + dz @ P["W_iz"] + dn @ P["W_in"]
    if tape.single:
        gh, gx = gh[0], gx[0]
    return gh, gx, {k: grads[k] for k in P.named_parameters()}


# ---------------------------------------------------------------- VAE head

LOGVAR_CLAMP = 10.0


class VaeHead(Module):
    """Linear maps from an encoding to a latent mean and log-variance."""

    def __init__(self, in_width, latent):
        super().__init__()
        self.in_width = int(in_width)
        self.latent = int(latent)
        self._add("W_mu", np.zeros((latent, in_width)))
        self._add("b_mu", np.zeros(latent))
        self._add("W_lv", np.zeros((latent, in_width)))
        self._add("b_lv", np.zeros(latent))


def vae_init(in_width, latent, rng=None, seed=0) -> VaeHead:
    rng = rng if rng is not None else np.random.default_rng(seed)
    p = VaeHead(in_width, latent)
    for name, arr in p.named_parameters().items():
        p._add(name, _uniform(rng, in_width, arr.shape))
    return p


@dataclass
class VaeTape:
    owner: VaeHead
    version: int
    single: bool
    enc: np.ndarray
    mu: np.ndarray
    lv_raw: np.ndarray
    lv: np.ndarray
    noise: np.ndarray


def vae_sample(head: VaeHead, encoding, noise):
    """Reparameterized sample ``mu + exp(logvar / 2) * noise``.

    Returns ``(latent, kl, tape)`` with ``kl`` the per-example divergence from
    the standard normal prior (a scalar for 1-D input).
    """
    enc, single = _batch(encoding, head.in_width, "vae encoding")
    eps, _ = _batch(noise, head.latent, "vae noise")
    if eps.shape[0] != enc.shape[0]:
        raise ShapeError("noise batch size does not match encoding")
    mu = enc @ head["W_mu"].T + head["b_mu"]
    lv_raw = enc @ head["W_lv"].T + head["b_lv"]
    lv = np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    latent = mu + np.exp(0.5 * lv) * eps
    kl = 0.5 * np.sum(np.exp(lv) + mu * mu - 1.0 - lv, axis=1)
    tape = VaeTape(head, head.version, single, enc, mu, lv_raw, lv, eps)
    if single:
        return latent[0], float(kl[0]), tape
    return latent, kl, tape


def vae_vjp(tape: VaeTape, grad_latent, grad_kl):
    """Gradients given cotangents for the latent and the per-example kl."""
    _check_tape(tape)
    P = tape.owner
    g, _ = _batch(grad_latent, P.latent, "vae cotangent")
    gk = np.broadcast_to(np.asarray(grad_kl, dtype=float), (g.shape[0],))[:, None]
    std = np.exp(0.5 * tape.lv)
    dmu = g + gk * tape.mu
    dlv = g * tape.noise * 0.5 * std + gk * 0.5 * (np.exp(tape.lv) - 1.0)
    dlv = dlv * (np.abs(tape.lv_raw) < LOGVAR_CLAMP)
    grads = {
        "W_mu": dmu.T @ tape.enc,
        "b_mu": dmu.sum(0),
        "W_lv": dlv.T @ tape.enc,
        "b_lv": dlv.sum(0),
    }
    genc = dmu @ P["W_mu"] + dlv @ P["W_lv"]
    return (genc[0] if tape.single else genc), grads


# ---------------------------------------------------------------- AdamW


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("lr and eps must be positive, weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def clip_global_norm(grads, max_norm):
    total = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def adamw_step(params, grads, state: AdamWState, clip_norm=None):
    """One AdamW update.

    ``params`` is a :class:`Module` (updated in place, version bumped) or a
    plain dict of arrays (a new dict is returned). Weight decay is decoupled:
    ``p <- p (1 - lr wd)`` precedes the Adam step.
    """
    module = params if isinstance(params, Module) else None
    named = params.named_parameters() if module is not None else dict(params)
    for name, g in grads.items():
        if name not in named:
            raise ShapeError(f"gradient for unknown parameter block {name!r}")
        if np.shape(g) != named[name].shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise GradientExplosionError(f"non-finite gradient in parameter block {name!r}")
    if clip_norm is not None:
        grads, _ = clip_global_norm(grads, clip_norm)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = {}
    for name, p in named.items():
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=float)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        new = p * (1.0 - state.lr * state.weight_decay)
        new = new - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        out[name] = new
    if module is not None:
        module.load_parameters(out)
        return module
    return out
