"""Training pipelines that learn POD coefficient dynamics with latent ODEs.

The network is always encoder -> latent ODE -> decoder:

* a GRU reads the input window of coefficients;
* a linear map (or a VAE head) turns the last encoder state into the initial
  latent state ``z0`` (``h`` for NODE, ``h`` and ``m`` for the heavy-ball kinds);
* the latent ODE runs with unit time per output sample, and the integrator
  lands exactly on every output time;
* a GRU decoder reads ``h`` at the output times and a linear readout (an MLP
  when ``dec_layers > 1``) produces the predicted coefficients.

ODE parameters get gradients from the adjoint sweep; the recurrent parts use
backpropagation through time.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.preprocessing import StandardScaler

from .dynamics import MODEL_KINDS, OdeModel, adjoint_gradient, integrate, rhs
from .exceptions import (
    BudgetError,
    ConfigError,
    DivergenceError,
    GradientExplosionError,
    InstabilityError,
    InsufficientDataError,
    ShapeError,
    StepSizeError,
)
from .neural import (
    AdamWState,
    Module,
    VaeHead,
    adamw_step,
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
from .odeint import Dopri5Config, stiffness_estimate

__all__ = [
    "TASKS",
    "WindowDataset",
    "TrainConfig",
    "EpochRecord",
    "TrainRun",
    "Seq2SeqNet",
    "LatentODE",
    "make_windows",
    "prepare_task",
    "train_seq2seq",
    "train_vae_onestep",
    "rollout",
    "evaluate",
]

TASKS = ("vks_steady_vae", "vks_full_seq", "kpp_seq", "euler_param_seq")


# ---------------------------------------------------------------- windows


@dataclass(frozen=True, eq=False)
class WindowDataset:
    """Input/label windows over a coefficient series.

    ``starts[w]`` is the 0-based index of window ``w``'s first input sample;
    its labels follow immediately after the inputs.
    """

    inputs: np.ndarray
    labels: np.ndarray
    starts: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    stride: int = 1
    split_point: int | None = None

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0] or self.inputs.shape[0] != len(self.starts):
            raise ShapeError("inputs, labels and starts disagree on the window count")
        if self.inputs.shape[2] != self.labels.shape[2]:
            raise ShapeError("inputs and labels differ in width")
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("train and validation windows overlap")

    @property
    def seq_in(self):
        return self.inputs.shape[1]

    @property
    def seq_out(self):
        return self.labels.shape[1]

    def label_indices(self, w):
        s = self.starts[w] + self.seq_in
        return np.arange(s, s + self.seq_out)

    def input_indices(self, w):
        return np.arange(self.starts[w], self.starts[w] + self.seq_in)

    @property
    def X_train(self):
        return self.inputs[self.train_idx]

    @property
    def y_train(self):
        return self.labels[self.train_idx]

    @property
    def X_val(self):
        return self.inputs[self.val_idx]

    @property
    def y_val(self):
        return self.labels[self.val_idx]


def make_windows(coeffs, seq_in, seq_out=1, stride=1, split_point=None) -> WindowDataset:
    """Sliding windows over ``coeffs`` (``n_t x r``).

    A window is a training window when all its labels come before
    ``split_point`` and a validation window when its first input is at or
    after ``split_point``; windows straddling the split are dropped from both
    sets. Without a split every window is a training window.
    """
    C = np.asarray(coeffs, dtype=float)
    if C.ndim != 2:
        raise ShapeError("coefficients must be a 2-D (n_t, r) array")
    n_t = C.shape[0]
    if seq_in < 1 or seq_out < 1 or stride < 1:
        raise ValueError("seq_in, seq_out and stride must be positive")
    if n_t < seq_in + seq_out:
        raise InsufficientDataError(f"{n_t} samples cannot hold a window of {seq_in}+{seq_out}")
    starts = np.arange(0, n_t - seq_in - seq_out + 1, stride)
    X = np.stack([C[s : s + seq_in] for s in starts])
    Y = np.stack([C[s + seq_in : s + seq_in + seq_out] for s in starts])
    if split_point is None:
        train = np.arange(len(starts))
        val = np.array([], dtype=int)
    else:
        last_label = starts + seq_in + seq_out - 1
        train = np.flatnonzero(last_label < split_point)
        val = np.flatnonzero(starts >= split_point)
    return WindowDataset(X, Y, starts, train, val, stride, split_point)


# ---------------------------------------------------------------- configuration

_PRESETS = {
    # desk profile trims the epochs
    "kpp_seq": dict(
        model="hbnode", layers=2, hidden=64, seq_in=4, seq_out=1, lr=0.01, residual=True,
        epochs={"paper": 500, "desk": 100},
    ),
    "euler_param_seq": dict(
        model="ghbnode", layers=6, hidden=16, seq_in=150, seq_out=30, lr=0.01, residual=True,
        epochs={"paper": 100, "desk": 100}, batch_size=16,
    ),
    "vks_full_seq": dict(
        model="hbnode", layers=12, hidden=64, seq_in=9, seq_out=1, lr=0.001, residual=True,
        epochs={"paper": 500, "desk": 100},
    ),
    "vks_steady_vae": dict(
        model="hbnode", layers=12, hidden=32, seq_in=1, seq_out=1, lr=0.00153,
        epochs={"paper": 2000, "desk": 200}, latent=6, enc_hidden=10,
        dec_hidden=41, dec_layers=4, vae=True, residual=True,
    ),
}


@dataclass
class TrainConfig:
    task: str = "kpp_seq"
    model: str = "hbnode"
    layers: int = 2
    hidden: int = 64
    seq_in: int = 4
    seq_out: int = 1
    lr: float = 0.01
    epochs: int = 100
    rtol: float = 1e-8
    atol: float = 1e-10
    seed: int = 1
    kl_weight: float = 1e-3
    r: int = 8
    latent: int = 8
    enc_hidden: int = 16
    dec_hidden: int = 16
    dec_layers: int = 1
    vae: bool = False
    residual: bool = False
    vae_noise: float = 1.0
    weight_decay: float = 0.01
    batch_size: int | None = None
    clip_norm: float | None = None
    epsilon: float = 1.0
    profile: str = "desk"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.epochs < 1 or self.r < 1 or self.layers < 1 or self.latent < 1:
            raise ConfigError("epochs, r, layers and latent must be at least 1")
        for name in ("lr", "rtol", "atol", "epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.kl_weight < 0 or self.weight_decay < 0 or self.vae_noise < 0:
            raise ConfigError("kl_weight, weight_decay and vae_noise must be non-negative")
        if self.profile not in ("desk", "paper"):
            raise ConfigError(f"unknown profile {self.profile!r}")

    @classmethod
    def preset(cls, task, profile="desk", **overrides):
        if task not in _PRESETS:
            raise ConfigError(f"unknown task {task!r}")
        base = dict(_PRESETS[task])
        base["epochs"] = base["epochs"][profile]
        base.update(task=task, profile=profile)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    fwd_nfe: int
    bwd_nfe: int
    stiffness: float
    adj_norm_t0: float
    adj_norm_tT: float
    h_norm_max: float = float("nan")
    seconds: float = 0.0


@dataclass
class TrainRun:
    records: list = field(default_factory=list)
    seed: int = 0
    config: TrainConfig | None = None
    model: "LatentODE | None" = None
    checkpoint: str | None = None
    adjoint_traces: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def final_val_mse(self):
        return self.records[-1].val_mse

    def all_finite(self):
        cols = ("train_mse", "val_mse", "fwd_nfe", "bwd_nfe", "stiffness", "adj_norm_t0", "adj_norm_tT", "h_norm_max")
        return all(np.all(np.isfinite(self.column(c))) for c in cols)


# ---------------------------------------------------------------- network


class Seq2SeqNet(Module):
    def __init__(
        self, r, kind="hbnode", latent=8, layers=2, hidden=64, enc_hidden=16,
        dec_hidden=16, dec_layers=1, vae=False, epsilon=1.0, activation="tanh", seed=0,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.r = int(r)
        self.vae = bool(vae)
        self.enc = gru_init(r, enc_hidden, rng=rng)
        self.ode = OdeModel(kind, latent, layers=layers, hidden=hidden, activation=activation, epsilon=epsilon, rng=rng)
        w = self.ode.width
        self.head = vae_init(enc_hidden, w, rng=rng) if vae else mlp_init((enc_hidden, w), "identity", rng=rng)
        self.dec = gru_init(latent, dec_hidden, rng=rng)
        sizes = (dec_hidden,) * dec_layers + (r,)
        self.out = mlp_init(sizes, "tanh", rng=rng)
        for name in ("enc", "head", "ode", "dec", "out"):
            self._add_child(name, getattr(self, name))


@dataclass
class _Pass:
    pred: np.ndarray
    kl: np.ndarray
    traj: object
    enc_tapes: list
    head_tape: object
    dec_tapes: list
    out_tapes: list
    t_obs: np.ndarray
    z0: np.ndarray


def _forward(net: Seq2SeqNet, X, n_out, ode_cfg, noise=None, residual=False) -> _Pass:
    B, n_in, r = X.shape
    if r != net.r:
        raise ShapeError(f"input width {r} does not match network width {net.r}")
    h = np.zeros((B, net.enc.hidden))
    enc_tapes = []
    for k in range(n_in):
        h, tp = gru_step(net.enc, h, X[:, k])
        enc_tapes.append(tp)
    if net.vae:
        eps = np.zeros((B, net.ode.width)) if noise is None else noise
        z0, kl, head_tape = vae_sample(net.head, h, eps)
    else:
        z0, head_tape = mlp_forward(net.head, h)
        kl = np.zeros(B)
    t_obs = np.arange(1, n_out + 1, dtype=float)
    traj = integrate(net.ode, z0, t_obs, ode_cfg)
    index = {t: i for i, t in enumerate(traj.ts)}
    d = net.ode.d
    g = np.zeros((B, net.dec.hidden))
    dec_tapes, out_tapes, preds = [], [], []
    for t in t_obs:
        z = traj.ys[index[t]]
        g, tp = gru_step(net.dec, g, z[:, :d])
        y, to = mlp_forward(net.out, g)
        dec_tapes.append(tp)
        out_tapes.append(to)
        preds.append(y)
    pred = np.stack(preds, axis=1)
    if residual:
        pred = pred + X[:, -1:, :]
    return _Pass(pred, kl, traj, enc_tapes, head_tape, dec_tapes, out_tapes, t_obs, z0)


def _backward(net: Seq2SeqNet, fp: _Pass, dpred, dkl, ode_cfg):
    grads = {}

    def acc(prefix, gp):
        for k, v in gp.items():
            key = f"{prefix}.{k}"
            grads[key] = grads[key] + v if key in grads else v

    B = dpred.shape[0]
    d, w = net.ode.d, net.ode.width
    gg = np.zeros((B, net.dec.hidden))
    dz = [None] * len(fp.t_obs)
    for k in reversed(range(len(fp.t_obs))):
        g_out, gp = mlp_vjp(fp.out_tapes[k], dpred[:, k])
        acc("out", gp)
        gh, gx, gp = gru_vjp(fp.dec_tapes[k], gg + g_out)
        acc("dec", gp)
        gg = gh
        dz[k] = np.zeros((B, w))
        dz[k][:, :d] = gx
    res = adjoint_gradient(net.ode, fp.traj, dz[-1], ode_cfg, obs_times=fp.t_obs[:-1], obs_grads=dz[:-1])
    acc("ode", res.grad_theta)
    if net.vae:
        ge, gp = vae_vjp(fp.head_tape, res.a0, dkl)
    else:
        ge, gp = mlp_vjp(fp.head_tape, res.a0)
    acc("head", gp)
    gh = ge
    for tp in reversed(fp.enc_tapes):
        gh, _, gp = gru_vjp(tp, gh)
        acc("enc", gp)
    return grads, res


def _h_norm_max(net, traj):
    d = net.ode.d
    return float(max(np.max(np.linalg.norm(np.asarray(y)[..., :d], axis=-1)) for y in traj.ys))


def _relabel(exc, ids):
    msg = f"{exc} (batch windows {list(ids[:8])}{'...' if len(ids) > 8 else ''})"
    if isinstance(exc, InstabilityError):
        return type(exc)(msg, step=exc.step, value=exc.value)
    return type(exc)(msg)


class LatentODE(BaseEstimator):
    """Encoder / latent ODE / decoder sequence model trained with AdamW.

    ``fit(X, y)`` takes input windows ``X`` of shape ``(n, seq_in, r)`` and
    labels ``y`` of shape ``(n, seq_out, r)``. Per-epoch metrics land in
    ``run_`` (a :class:`TrainRun`).
    """

    def __init__(
        self, kind="hbnode", latent=8, layers=2, hidden=64, enc_hidden=16, dec_hidden=16,
        dec_layers=1, vae=False, lr=0.01, epochs=100, weight_decay=0.01, rtol=1e-8,
        atol=1e-10, kl_weight=1e-3, batch_size=None, clip_norm=None, epsilon=1.0,
        activation="tanh", residual=False, vae_noise=1.0, seed=0,
    ):
        self.kind = kind
        self.latent = latent
        self.layers = layers
        self.hidden = hidden
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.dec_layers = dec_layers
        self.vae = vae
        self.lr = lr
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.rtol = rtol
        self.atol = atol
        self.kl_weight = kl_weight
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.epsilon = epsilon
        self.activation = activation
        self.residual = residual
        self.vae_noise = vae_noise
        self.seed = seed

    @classmethod
    def from_config(cls, cfg: TrainConfig):
        return cls(
            kind=cfg.model, latent=cfg.latent, layers=cfg.layers, hidden=cfg.hidden,
            enc_hidden=cfg.enc_hidden, dec_hidden=cfg.dec_hidden, dec_layers=cfg.dec_layers,
            vae=cfg.vae, lr=cfg.lr, epochs=cfg.epochs, weight_decay=cfg.weight_decay,
            rtol=cfg.rtol, atol=cfg.atol, kl_weight=cfg.kl_weight, batch_size=cfg.batch_size,
            clip_norm=cfg.clip_norm, epsilon=cfg.epsilon, residual=cfg.residual,
            vae_noise=cfg.vae_noise, seed=cfg.seed,
        )

    def _ode_cfg(self):
        return Dopri5Config(rtol=self.rtol, atol=self.atol)

    def _build(self, r):
        return Seq2SeqNet(
            r, self.kind, self.latent, self.layers, self.hidden, self.enc_hidden,
            self.dec_hidden, self.dec_layers, self.vae, self.epsilon, self.activation, self.seed,
        )

    @staticmethod
    def _check(X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ShapeError("inputs must have shape (n_windows, seq_in, r)")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs contain non-finite values")
        if y is not None:
            y = np.asarray(y, dtype=float)
            if y.ndim != 3 or y.shape[0] != X.shape[0] or y.shape[2] != X.shape[2]:
                raise ShapeError("labels must have shape (n_windows, seq_out, r)")
        return X, y

    def fit(self, X, y, X_val=None, y_val=None, callback=None):
        X, y = self._check(X, y)
        if X_val is not None:
            X_val, y_val = self._check(X_val, y_val)
        self.net_ = self._build(X.shape[2])
        self.seq_out_ = y.shape[1]
        self.n_features_in_ = X.shape[2]
        self.run_ = TrainRun(seed=self.seed, model=self)
        opt = AdamWState(lr=self.lr, weight_decay=self.weight_decay)
        rng = np.random.default_rng(self.seed + 7919)
        cfg = self._ode_cfg()
        n = X.shape[0]
        bs = n if self.batch_size is None else min(int(self.batch_size), n)
        for epoch in range(1, int(self.epochs) + 1):
            t_start = time.perf_counter()
            order = np.arange(n) if bs == n else rng.permutation(n)
            fwd = bwd = 0
            sq_err = 0.0
            h_max = 0.0
            trace = None
            for lo in range(0, n, bs):
                ids = order[lo : lo + bs]
                Xb, yb = X[ids], y[ids]
                noise = self.vae_noise * rng.standard_normal((len(ids), self.net_.ode.width)) if self.vae else None
                try:
                    fp = _forward(self.net_, Xb, self.seq_out_, cfg, noise, self.residual)
                except (InstabilityError, StepSizeError, BudgetError) as exc:
                    raise _relabel(exc, ids) from exc
                diff = fp.pred - yb
                mse = float(np.mean(diff * diff))
                loss = mse + self.kl_weight * float(np.mean(fp.kl))
                if not np.isfinite(loss):
                    err = DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
                    err.run = self.run_
                    raise err
                dpred = 2.0 * diff / diff.size
                dkl = np.full(len(ids), self.kl_weight / len(ids))
                try:
                    grads, res = _backward(self.net_, fp, dpred, dkl, cfg)
                except (InstabilityError, StepSizeError, BudgetError) as exc:
                    raise _relabel(exc, ids) from exc
                try:
                    adamw_step(self.net_, grads, opt, clip_norm=self.clip_norm)
                except GradientExplosionError as exc:
                    err = DivergenceError(f"{exc} at epoch {epoch}", epoch=epoch)
                    err.run = self.run_
                    raise err from exc
                fwd += fp.traj.nfe
                bwd += res.backward_nfe
                sq_err += mse * diff.size
                h_max = max(h_max, _h_norm_max(self.net_, fp.traj))
                if trace is None:
                    trace = res.trace
                    z_mean = fp.z0.mean(axis=0)
            train_mse = sq_err / y.size
            val_mse = float("nan")
            if X_val is not None and len(X_val):
                pv = self._predict_pass(X_val)
                val_mse = float(np.mean((pv.pred - y_val) ** 2))
                h_max = max(h_max, _h_norm_max(self.net_, pv.traj))
            ode = self.net_.ode
            stiff = stiffness_estimate(lambda t, z: rhs(ode, z, t), z_mean).ratio
            rec = EpochRecord(
                epoch=epoch, train_mse=train_mse, val_mse=val_mse, fwd_nfe=fwd, bwd_nfe=bwd,
                stiffness=float(stiff), adj_norm_t0=trace.norm_t0, adj_norm_tT=trace.norm_tT,
                h_norm_max=h_max, seconds=time.perf_counter() - t_start,
            )
            self.run_.records.append(rec)
            self.run_.adjoint_traces.append(trace)
            if not np.isfinite(train_mse) or (X_val is not None and not np.isfinite(val_mse)):
                err = DivergenceError(f"non-finite metrics at epoch {epoch}", epoch=epoch)
                err.run = self.run_
                raise err
            if callback is not None:
                callback(rec)
        return self

    def _predict_pass(self, X):
        return _forward(self.net_, X, self.seq_out_, self._ode_cfg(), None, self.residual)

    def predict(self, X):
        """Mean-path predictions of shape ``(n, seq_out, r)``."""
        if not hasattr(self, "net_"):
            raise AttributeError("model is not fitted")
        X, _ = self._check(X)
        return self._predict_pass(X).pred

    def score(self, X, y):
        return -float(np.mean((self.predict(X) - np.asarray(y)) ** 2))


# ---------------------------------------------------------------- tasks


@dataclass
class PreparedTask:
    """Windows plus what is needed to map back to the raw series.

    ``raw`` is the task's slice of the raw coefficients (a list of arrays for
    ``euler_param_seq``); ``offset`` is the slice's start index in the full
    series and ``split`` the split index inside the slice.
    """

    data: WindowDataset
    scaler: StandardScaler
    raw: object = None
    offset: int = 0
    split: int | None = None

    def seed_window(self, seq_in):
        """Raw inputs just before the split and the index that follows them."""
        if isinstance(self.raw, list):
            member = self.raw[int(self.data.val_idx[0])]
            return member[:seq_in], seq_in
        return self.raw[self.split - seq_in : self.split], self.offset + self.split


def _scale(fit_rows):
    scaler = StandardScaler()
    scaler.fit(fit_rows)
    # modes with negligible variance (rank-deficient data) keep unit scale
    tiny = scaler.var_ <= 1e-20 * max(scaler.var_.max(), 1e-300)
    scaler.scale_ = np.where(tiny, 1.0, scaler.scale_)
    return scaler


def prepare_task(task, coeffs, cfg: TrainConfig | None = None, data_seed=0) -> PreparedTask:
    """Window and standardize coefficients following a task's protocol.

    ``coeffs`` is an ``(n_t, r)`` array, or for ``euler_param_seq`` a list of
    per-parameter arrays. Each mode is standardized with the mean and
    standard deviation of the training interval.

    * ``kpp_seq``: at most the first 1000 samples, windows of ``seq_in``
      inputs and one label, split at 80%.
    * ``vks_full_seq``: the first 120 samples, split at 80.
    * ``vks_steady_vae``: one-step pairs on samples 100-200, split at 75.
    * ``euler_param_seq``: one window per parameter (inputs 0-149, labels
      150-179); a fixed shuffle holds out 10% of the parameters.
    """
    cfg = cfg or TrainConfig.preset(task)
    if task != cfg.task:
        raise ConfigError(f"task {task!r} does not match the configuration's {cfg.task!r}")
    if task == "euler_param_seq":
        series = [np.asarray(c, dtype=float)[:, : cfg.r] for c in coeffs]
        M = len(series)
        if M < 2:
            raise InsufficientDataError("need at least two parameter trajectories")
        perm = np.random.default_rng(data_seed).permutation(M)
        n_val = max(1, int(round(0.1 * M)))
        train_p, val_p = np.sort(perm[:-n_val]), np.sort(perm[-n_val:])
        n_in, n_out = cfg.seq_in, cfg.seq_out
        if any(len(s) < n_in + n_out for s in series):
            raise InsufficientDataError("trajectories are too short for the label interval")
        scaler = _scale(np.concatenate([series[p][:n_in] for p in train_p]))
        X = np.stack([scaler.transform(s[:n_in]) for s in series])
        Y = np.stack([scaler.transform(s[n_in : n_in + n_out]) for s in series])
        ds = WindowDataset(X, Y, np.zeros(M, dtype=int), train_p, val_p, 1, None)
        return PreparedTask(ds, scaler, series, 0, None)
    C = np.asarray(coeffs, dtype=float)[:, : cfg.r]
    offset = 0
    if task == "kpp_seq":
        C = C[:1000]
        split = int(round(0.8 * len(C)))
    elif task == "vks_full_seq":
        C = C[:120]
        split = 80
    else:
        offset = 100
        C = C[100:201]
        split = 75
    if len(C) < split + cfg.seq_in + cfg.seq_out:
        raise InsufficientDataError(f"{task} needs more samples than the {len(C)} available")
    scaler = _scale(C[:split])
    ds = make_windows(scaler.transform(C), cfg.seq_in, cfg.seq_out, 1, split)
    return PreparedTask(ds, scaler, C, offset, split)


def train_seq2seq(data: WindowDataset, cfg: TrainConfig, callback=None) -> TrainRun:
    """Fit a :class:`LatentODE` on the dataset's training windows."""
    if data.seq_in != cfg.seq_in or data.seq_out != cfg.seq_out:
        raise ConfigError("dataset window lengths do not match the configuration")
    est = LatentODE.from_config(cfg)
    X_val = data.X_val if len(data.val_idx) else None
    y_val = data.y_val if len(data.val_idx) else None
    est.fit(data.X_train, data.y_train, X_val, y_val, callback=callback)
    est.run_.config = cfg
    return est.run_


def train_vae_onestep(coeffs, cfg: TrainConfig, callback=None) -> TrainRun:
    """One-step VAE pipeline on the steady phase of a coefficient series."""
    if cfg.task != "vks_steady_vae":
        raise ConfigError("train_vae_onestep expects the vks_steady_vae task")
    cfg = replace(cfg, vae=True, seq_in=1, seq_out=1)
    prepared = prepare_task(cfg.task, coeffs, cfg)
    run = train_seq2seq(prepared.data, cfg, callback=callback)
    run.scaler = prepared.scaler
    return run


def rollout(model: LatentODE, seed_window, horizon):
    """Autoregressive continuation of ``seed_window`` (``seq_in x r``).

    Each prediction block is appended to the window, which then slides
    forward. Uses the deterministic mean path.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    window = np.array(seed_window, dtype=float)
    r = window.shape[1]
    out = np.zeros((0, r))
    while out.shape[0] < horizon:
        block = model.predict(window[None])[0]
        out = np.concatenate([out, block])
        window = np.concatenate([window, block])[-window.shape[0] :]
    return out[:horizon]


def evaluate(prediction, truth):
    """MSE overall and per mode (last axis)."""
    p = np.asarray(prediction, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} differs from truth {t.shape}")
    sq = (p - t) ** 2
    per_mode = sq.reshape(-1, sq.shape[-1]).mean(axis=0) if sq.ndim else sq
    return {"mse": float(sq.mean()), "per_mode_mse": per_mode}
