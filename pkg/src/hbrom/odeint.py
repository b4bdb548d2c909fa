"""Adaptive Dormand-Prince 5(4) integration with evaluation counting,
dense output, and Jacobian-based stiffness estimates."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .exceptions import (
    BudgetError,
    EvaluationError,
    InstabilityError,
    RangeError,
    StepSizeError,
)

__all__ = [
    "Dopri5Config",
    "Trajectory",
    "dopri5_integrate",
    "dense_eval",
    "jacobian_fd",
    "stiffness_estimate",
    "StiffnessEstimate",
]

# Dormand-Prince tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b - b_hat (5th minus embedded 4th order weights).
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Continuous extension (Hairer, Norsett & Wanner, DOPRI5 dense output).
_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)


@dataclass
class Dopri5Config:
    rtol: float = 1e-8
    atol: float = 1e-10
    h0: float | None = None
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0
    max_steps: int = 100_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


@dataclass
class Trajectory:
    """Accepted steps of one integration, with dense-output coefficients.

    ``coeffs[i]`` holds the five interpolation vectors for the step from
    ``ts[i]`` to ``ts[i + 1]``.
    """

    ts: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)
    nfe: int = 0
    n_accepted: int = 0
    n_rejected: int = 0

    @property
    def t0(self):
        return self.ts[0]

    @property
    def t1(self):
        return self.ts[-1]

    @property
    def y1(self):
        return self.ys[-1]

    @property
    def direction(self):
        return 1.0 if self.ts[-1] >= self.ts[0] else -1.0

    def __call__(self, t):
        return dense_eval(self, t)


def _rms(x):
    # scaled so that tiny atol values cannot overflow the squares
    top = float(np.max(np.abs(x))) if x.size else 0.0
    if top == 0.0 or not np.isfinite(top):
        return top
    return top * float(np.sqrt(np.mean(np.square(x / top))))


def _initial_step(rhs, t0, y0, f0, direction, cfg, span):
    scale = cfg.atol + cfg.rtol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    # components starting at zero with a tiny atol can push the estimate below
    # the underflow guard; the error controller corrects a floored guess
    floor = 1e4 * np.finfo(float).eps * max(abs(t0), span, 1.0)
    # the probe must stay inside the interval (callers may only define rhs there)
    h0 = min(max(h0, floor), span)
    y1 = y0 + direction * h0 * f0
    f1 = rhs(t0 + direction * h0, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        # no slope and no curvature: nothing limits the first step
        return span
    h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(max(min(100 * h0, h1), floor), span)


def dopri5_integrate(rhs, y0, t0, t1, cfg=None, tstops=(), dense=True) -> Trajectory:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` (either direction).

    ``y0`` may have any shape; ``rhs`` receives and returns arrays of that
    shape. Steps are shortened to land exactly on every time in ``tstops``
    that lies strictly inside the interval, so the stored states there are
    integrator states rather than interpolants.

    Evaluation accounting: one evaluation at ``t0``, one more for the
    automatic initial-step probe (skipped when ``cfg.h0`` is given), and six
    per attempted step (accepted or rejected) thanks to first-same-as-last
    stage reuse.
    """
    cfg = cfg or Dopri5Config()
    if t0 == t1:
        raise ValueError("t0 and t1 must differ")
    y = np.array(y0, dtype=float, copy=True)
    if not np.all(np.isfinite(y)):
        raise ValueError("initial state has non-finite entries")
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)

    traj = Trajectory(ts=[float(t0)], ys=[y.copy()])

    def f(t, state):
        traj.nfe += 1
        out = np.asarray(rhs(t, state), dtype=float)
        if not np.all(np.isfinite(out)):
            raise InstabilityError(
                f"vector field returned non-finite values at t={t:.6g}", step=traj.n_accepted
            )
        return out

    stops = sorted(
        (s for s in tstops if (s - t0) * direction > 0 and (t1 - s) * direction > 0),
        key=lambda s: (s - t0) * direction,
    )
    stops.append(t1)
    stop_i = 0

    t = float(t0)
    k1 = f(t, y)
    h = abs(cfg.h0) if cfg.h0 is not None else _initial_step(f, t, y, k1, direction, cfg, abs(t1 - t0))
    h = min(h, span)
    last_rejected = False
    k = [None] * 7
    while True:
        target = stops[stop_i]
        remaining = abs(target - t)
        h_min = 16 * np.finfo(float).eps * max(abs(t), 1.0)
        if h < h_min:
            raise StepSizeError(f"step size underflow at t={t:.6g} (h={h:.3e})")
        if traj.n_accepted + traj.n_rejected >= cfg.max_steps:
            raise BudgetError(f"exceeded {cfg.max_steps} steps at t={t:.6g}")
        clipped = h >= remaining * (1 - 1e-12)
        h_step = remaining if clipped else h
        hs = direction * h_step

        k[0] = k1
        for s in range(1, 7):
            acc = y.copy()
            for j, a in enumerate(_A[s]):
                if a:
                    acc += hs * a * k[j]
            k[s] = f(t + _C[s] * hs, acc)
            if s == 6:
                y_new = acc
        err_vec = hs * sum(e * kj for e, kj in zip(_E, k) if e)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / scale)
        if np.isnan(err):
            raise InstabilityError(f"non-finite error estimate at t={t:.6g}", step=traj.n_accepted)

        if err <= 1.0:
            t_new = target if clipped else t + hs
            if dense:
                dy = y_new - y
                bspl = hs * k[0] - dy
                traj.coeffs.append(
                    (
                        y.copy(),
                        dy,
                        bspl,
                        dy - hs * k[6] - bspl,
                        hs * sum(d * kj for d, kj in zip(_D, k) if d),
                    )
                )
            traj.n_accepted += 1
            t, y, k1 = t_new, y_new, k[6]
            traj.ts.append(t)
            traj.ys.append(y.copy())
            factor = cfg.max_factor if err == 0 else min(
                cfg.max_factor, max(cfg.min_factor, cfg.safety * err ** -0.2)
            )
            if last_rejected:
                factor = min(factor, 1.0)
            last_rejected = False
            # A step clipped to land on a stop does not shrink the next proposal.
            h = max(h, h_step) * factor if clipped else h_step * factor
            if clipped:
                stop_i += 1
                if stop_i == len(stops):
                    break
        else:
            traj.n_rejected += 1
            last_rejected = True
            h = h_step * max(cfg.min_factor, cfg.safety * err ** -0.2)
    return traj


def dense_eval(traj: Trajectory, t):
    """State at time ``t`` from the trajectory's continuous extension.

    Returns the stored state bit-exactly when ``t`` is an accepted step time.
    """
    ts = traj.ts
    lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
    if not lo <= t <= hi:
        raise RangeError(f"t={t} outside trajectory span [{lo}, {hi}]")
    if traj.direction > 0:
        i = bisect.bisect_right(ts, t) - 1
    else:
        neg = [-x for x in ts]
        i = bisect.bisect_right(neg, -t) - 1
    i = min(max(i, 0), len(ts) - 1)
    if ts[i] == t:
        return traj.ys[i].copy()
    if not traj.coeffs:
        raise RangeError("trajectory was integrated without dense output")
    i = min(i, len(traj.coeffs) - 1)
    r1, r2, r3, r4, r5 = traj.coeffs[i]
    theta = (t - ts[i]) / (ts[i + 1] - ts[i])
    theta1 = 1.0 - theta
    return r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))


def jacobian_fd(rhs, y, t=0.0, eps=None):
    """Central-difference Jacobian of ``rhs(t, y)`` with respect to flat ``y``.

    Uses one Richardson extrapolation level (steps ``h`` and ``h/2``) so the
    truncation error is fourth order. The default step is
    ``1e-3 * max(1, |y_i|)`` per component.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    f0 = np.asarray(rhs(t, y.copy()), dtype=float).ravel()
    J = np.empty((f0.size, n))
    for i in range(n):
        h = eps if eps is not None else 1e-3 * max(1.0, abs(y[i]))
        if h <= 0:
            raise ValueError("eps must be positive")
        cols = []
        for step in (h, h / 2):
            yp = y.copy()
            ym = y.copy()
            yp[i] += step
            ym[i] -= step
            fp = np.asarray(rhs(t, yp), dtype=float).ravel()
            fm = np.asarray(rhs(t, ym), dtype=float).ravel()
            cols.append((fp - fm) / (2 * step))
        J[:, i] = (4 * cols[1] - cols[0]) / 3
    if not np.all(np.isfinite(J)):
        raise EvaluationError("finite-difference Jacobian has non-finite entries")
    return J


@dataclass(frozen=True)
class StiffnessEstimate:
    ratio: float
    max_abs: float
    min_abs: float
    degenerate: bool = False

    def __float__(self):
        return float(self.ratio)


def spectrum_ratio(eigenvalues, cutoff=1e-10) -> StiffnessEstimate:
    mags = np.abs(np.asarray(eigenvalues))
    top = float(mags.max()) if mags.size else 0.0
    if top == 0.0:
        return StiffnessEstimate(1.0, 0.0, 0.0, degenerate=True)
    kept = mags[mags >= cutoff * top]
    low = float(kept.min())
    return StiffnessEstimate(top / low, top, low, degenerate=False)


def stiffness_estimate(rhs, y, t=0.0, eps=None, jacobian=None) -> StiffnessEstimate:
    """Ratio of extreme eigenvalue magnitudes of the vector field's Jacobian.

    Magnitudes below ``1e-10`` of the largest are excluded. When every
    eigenvalue is zero the estimate is 1 with ``degenerate=True``.
    """
    J = jacobian if jacobian is not None else jacobian_fd(rhs, y, t, eps)
    return spectrum_ratio(numkit.eigvals(J))
