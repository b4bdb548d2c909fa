"""Continuous-depth latent models (NODE, HBNODE, GHBNODE), adjoint gradients,
and linearized spectral utilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .exceptions import ContractError, DegenerateSpectrumError, ShapeError
from .neural import ACTIVATIONS, MlpParams, Module, mlp_forward, mlp_init, mlp_vjp
from .odeint import Dopri5Config, dense_eval, dopri5_integrate, spectrum_ratio

__all__ = [
    "MODEL_KINDS",
    "OdeModel",
    "AdjointTrace",
    "AdjointResult",
    "rhs",
    "adjoint_rhs",
    "integrate",
    "adjoint_gradient",
    "hb_companion",
    "spectral_ratio",
    "pairing_check",
]

MODEL_KINDS = ("node", "hbnode", "ghbnode")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class OdeModel(Module):
    """Latent vector field of one of the three model kinds.

    The network ``f`` maps ``h`` (width ``d``) to ``R^d`` and is autonomous.
    For ``hbnode`` and ``ghbnode`` the state is ``h`` followed by ``m``.
    Damping is ``gamma = epsilon * sigmoid(omega)``; for ``ghbnode`` the decay
    is ``xi = softplus(chi)``.
    """

    def __init__(
        self,
        kind,
        d,
        layers=2,
        hidden=64,
        activation="tanh",
        epsilon=1.0,
        sigma="tanh",
        omega=0.0,
        chi=0.0,
        net: MlpParams | None = None,
        rng=None,
        seed=0,
    ):
        super().__init__()
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        if int(d) < 1 or int(layers) < 1:
            raise ValueError("d and layers must be positive")
        if sigma not in ACTIVATIONS:
            raise ValueError(f"unknown activation {sigma!r}")
        self.kind = kind
        self.d = int(d)
        self.epsilon = float(epsilon)
        self.sigma = sigma
        if net is None:
            sizes = (self.d,) + (int(hidden),) * (int(layers) - 1) + (self.d,)
            net = mlp_init(sizes, activation, rng=rng, seed=seed)
        elif net.in_width != self.d or net.out_width != self.d:
            raise ShapeError("network must map R^d to R^d")
        self.net = net
        self._add_child("net", net)
        if kind != "node":
            self._add("omega", np.array(float(omega)))
        if kind == "ghbnode":
            self._add("chi", np.array(float(chi)))

    @property
    def width(self):
        return self.d if self.kind == "node" else 2 * self.d

    @property
    def gamma(self):
        if self.kind == "node":
            return 0.0
        return self.epsilon * float(_sigmoid(self["omega"]))

    @property
    def xi(self):
        if self.kind != "ghbnode":
            return 0.0
        return float(np.logaddexp(0.0, self["chi"]))

    def _split(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.width:
            raise ShapeError(f"state width {z.shape[-1]} does not match model width {self.width}")
        if self.kind == "node":
            return z, None
        return z[..., : self.d], z[..., self.d :]

    def __call__(self, t, z):
        return rhs(self, z, t)

    def vjp(self, z, a):
        """Return ``(a^T dF/dz, {name: a^T dF/dparam})`` summed over the batch."""
        h, m = self._split(z)
        a = np.asarray(a, dtype=float)
        if self.kind == "node":
            _, tape = mlp_forward(self.net, h)
            gz, gnet = mlp_vjp(tape, a)
            return gz, {f"net.{k}": v for k, v in gnet.items()}
        d = self.d
        ah, am = a[..., :d], a[..., d:]
        _, tape = mlp_forward(self.net, h)
        gh, gnet = mlp_vjp(tape, am)
        grads = {f"net.{k}": v for k, v in gnet.items()}
        s = float(_sigmoid(self["omega"]))
        dgamma = self.epsilon * s * (1.0 - s)
        grads["omega"] = np.array(-np.sum(am * m) * dgamma)
        gamma = self.epsilon * s
        if self.kind == "hbnode":
            gm = ah - gamma * am
        else:
            xi = self.xi
            gh = gh - xi * am
            act, dact = ACTIVATIONS[self.sigma]
            gm = ah * dact(m, act(m)) - gamma * am
            grads["chi"] = np.array(-np.sum(am * h) * float(_sigmoid(self["chi"])))
        gz = np.concatenate([gh, gm], axis=-1)
        return gz, grads


def rhs(model: OdeModel, state, t=0.0):
    """Time derivative of the latent state for the model's kind."""
    h, m = model._split(state)
    f, _ = mlp_forward(model.net, h)
    if model.kind == "node":
        return f
    if model.kind == "hbnode":
        return np.concatenate([m, -model.gamma * m + f], axis=-1)
    act, _ = ACTIVATIONS[model.sigma]
    return np.concatenate([act(m), -model.gamma * m + f - model.xi * h], axis=-1)


def adjoint_rhs(model: OdeModel, state, a):
    """``da/dt = -a^T dF/dz`` evaluated at ``state``."""
    gz, _ = model.vjp(state, a)
    return -gz


def integrate(model: OdeModel, z0, t_obs, cfg: Dopri5Config | None = None):
    """Forward solve from 0 to ``t_obs[-1]``, landing exactly on each ``t_obs``."""
    t_obs = np.atleast_1d(np.asarray(t_obs, dtype=float))
    if t_obs.size == 0 or t_obs[0] <= 0 or np.any(np.diff(t_obs) <= 0):
        raise ValueError("observation times must be positive and strictly increasing")
    z0 = np.asarray(z0, dtype=float)
    model._split(z0)
    return dopri5_integrate(
        lambda t, z: rhs(model, z, t), z0, 0.0, float(t_obs[-1]), cfg, tstops=t_obs[:-1]
    )


@dataclass(frozen=True)
class AdjointTrace:
    times: np.ndarray
    norms: np.ndarray

    @property
    def norm_t0(self):
        return float(self.norms[0])

    @property
    def norm_tT(self):
        return float(self.norms[-1])


@dataclass
class AdjointResult:
    grad_theta: dict
    grad_omega: float
    grad_chi: float
    trace: AdjointTrace
    backward_nfe: int
    a0: np.ndarray

    def __iter__(self):
        return iter((self.grad_theta, self.grad_omega, self.grad_chi, self.trace, self.backward_nfe))


def adjoint_gradient(
    model: OdeModel,
    traj,
    loss_grad_terminal,
    cfg: Dopri5Config | None = None,
    obs_times=None,
    obs_grads=(),
    n_checkpoints=50,
) -> AdjointResult:
    """Gradients of a loss on the trajectory via one backward augmented sweep.

    ``loss_grad_terminal`` is dL/dz(T). Losses that also depend on states at
    earlier observation times pass those times in ``obs_times`` (excluding T)
    with matching gradients in ``obs_grads``; each such gradient is added to
    the adjoint as the sweep passes its time. The forward state along the
    sweep comes from the trajectory's dense output.

    ``grad_theta`` maps every parameter name (network blocks, ``omega``,
    ``chi``) to its gradient; ``a0`` is dL/dz(0).
    """
    cfg = cfg or Dopri5Config()
    shape = np.shape(traj.ys[0])
    if not shape or shape[-1] != model.width:
        raise ContractError("trajectory state width does not match the model")
    if traj.ts[0] != 0.0 or traj.t1 <= 0:
        raise ContractError("trajectory must run forward from t=0")
    aT = np.asarray(loss_grad_terminal, dtype=float)
    if aT.shape != shape:
        raise ContractError(f"terminal loss gradient has shape {aT.shape}, expected {shape}")
    T = float(traj.t1)
    obs_times = [] if obs_times is None else [float(t) for t in obs_times]
    if len(obs_times) != len(obs_grads):
        raise ContractError("obs_times and obs_grads differ in length")
    if any(not 0 < t < T for t in obs_times) or np.any(np.diff(obs_times) <= 0):
        raise ContractError("observation times must be increasing and inside (0, T)")

    names = list(model.named_parameters())
    sizes = [model.named_parameters()[k].size for k in names]
    n_a = int(np.prod(shape))
    offsets = np.cumsum([n_a] + sizes)

    def back_rhs(t, y):
        z = dense_eval(traj, t)
        a = y[:n_a].reshape(shape)
        gz, grads = model.vjp(z, a)
        out = np.empty_like(y)
        out[:n_a] = gz.ravel()
        for k, lo, hi in zip(names, offsets[:-1], offsets[1:]):
            out[lo:hi] = grads[k].ravel()
        return -out

    bounds = [0.0] + obs_times + [T]
    jumps = list(obs_grads)
    y = np.zeros(offsets[-1])
    y[:n_a] = aT.ravel()
    segments = []
    nfe = 0
    for k in range(len(bounds) - 1, 0, -1):
        seg = dopri5_integrate(back_rhs, y, bounds[k], bounds[k - 1], cfg)
        nfe += seg.nfe
        segments.append(seg)
        y = seg.y1.copy()
        if k - 1 > 0:
            g = np.asarray(jumps[k - 2], dtype=float)
            if g.shape != shape:
                raise ContractError("observation gradient shape does not match state")
            y[:n_a] += g.ravel()

    times = np.linspace(0.0, T, n_checkpoints)
    norms = np.empty(n_checkpoints)
    for i, t in enumerate(times):
        # Segments are stored latest first; take the first one covering t.
        for seg in segments:
            if seg.t1 <= t <= seg.t0:
                norms[i] = np.linalg.norm(dense_eval(seg, t)[:n_a])
                break
    norms[0] = np.linalg.norm(y[:n_a])

    grads = {k: y[lo:hi].reshape(model.named_parameters()[k].shape) for k, lo, hi in zip(names, offsets[:-1], offsets[1:])}
    g_omega = float(grads["omega"]) if "omega" in grads else 0.0
    g_chi = float(grads["chi"]) if "chi" in grads else 0.0
    return AdjointResult(
        grad_theta=grads,
        grad_omega=g_omega,
        grad_chi=g_chi,
        trace=AdjointTrace(times, norms),
        backward_nfe=nfe,
        a0=y[:n_a].reshape(shape),
    )


# ---------------------------------------------------------------- linear analysis


def hb_companion(A, gamma):
    """Block matrix ``[[0, I], [A, -gamma I]]`` of the linear heavy-ball system."""
    A = numkit.as_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ShapeError("A must be square")
    B = np.zeros((2 * n, 2 * n))
    B[:n, n:] = np.eye(n)
    B[n:, :n] = A
    B[n:, n:] = -gamma * np.eye(n)
    return B


def spectral_ratio(M):
    """Largest over smallest eigenvalue magnitude (ignoring those below 1e-10 of the max)."""
    M = numkit.as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ShapeError("matrix must be square")
    est = spectrum_ratio(numkit.eigvals(M))
    if est.degenerate:
        raise DegenerateSpectrumError("all eigenvalues are zero")
    return est.ratio


def _pair_greedy(ev, target):
    n = len(ev)
    cand = sorted(
        (abs(ev[i] + ev[j] - target), i, j) for i in range(n) for j in range(i + 1, n)
    )
    used = np.zeros(n, dtype=bool)
    pairs = []
    for _, i, j in cand:
        if not used[i] and not used[j]:
            used[i] = used[j] = True
            pairs.append((i, j))
    return pairs


def pairing_check(jacobian, gamma, xi, sigma_jac, t_minus_T):
    """Eigenvalue pair sums of ``-M`` for a constant integrand.

    ``-M = (T - t) [[0, S], [F - xi I, -gamma I]]`` with ``F`` the Jacobian of
    the network and ``S`` that of the gating activation. Eigenvalues are
    matched greedily, smallest deviation of the pair sum from
    ``(t - T) gamma`` first. Returns the pair sums (complex).
    """
    F = numkit.as_matrix(jacobian)
    S = numkit.as_matrix(sigma_jac)
    d = F.shape[0]
    if F.shape != (d, d) or S.shape != (d, d):
        raise ShapeError("jacobian and sigma_jac must be square of equal size")
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = S
    J[d:, :d] = F - xi * np.eye(d)
    J[d:, d:] = -gamma * np.eye(d)
    minus_M = -t_minus_T * J
    if minus_M.shape[0] % 2:
        raise ShapeError("-M must have even dimension")
    ev = numkit.eigvals(minus_M)
    target = t_minus_T * gamma
    return [ev[i] + ev[j] for i, j in _pair_greedy(ev, target)]
