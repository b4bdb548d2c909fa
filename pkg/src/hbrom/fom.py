"""Finite-volume full-order models that produce snapshot data.

Two solvers share the same machinery (WENO-5 reconstruction, SSP-RK3 time
stepping with exact landing on output times):

* the 2-D KPP scalar conservation law ``u_t + (sin u)_x + (cos u)_y = 0``
  with a local Lax-Friedrichs flux;
* the 1-D Euler equations with an HLL flux and a parameterized shock-entropy
  initial state.

A synthetic travelling-wave generator stands in for imported vortex-street
data when testing the downstream pipeline.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, InstabilityError, PositivityError

__all__ = [
    "GAMMA_GAS",
    "Grid2D",
    "KppConfig",
    "EulerParams",
    "EulerConfig",
    "SnapshotSet",
    "kpp_flux",
    "kpp_initial",
    "weno5_reconstruct",
    "llf_flux",
    "kpp_simulate",
    "euler_initial",
    "primitive_to_conserved",
    "conserved_to_primitive",
    "euler_flux",
    "hll_flux",
    "euler_simulate",
    "euler_ensemble",
    "euler_desk_grid",
    "euler_paper_grid",
    "synthetic_vks",
]

GAMMA_GAS = 1.4
WENO_EPS = 1e-6
SOURCES = ("kpp", "euler", "vks_import", "synthetic")


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x_range: tuple = (-2.0, 2.0)
    y_range: tuple = (-2.5, 1.5)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("grid needs at least one cell per direction")
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ConfigError("grid ranges must be increasing")

    @property
    def dx(self):
        return (self.x_range[1] - self.x_range[0]) / self.nx

    @property
    def dy(self):
        return (self.y_range[1] - self.y_range[0]) / self.ny

    def centers(self):
        """Cell-centre coordinates as ``(X, Y)`` arrays of shape ``(ny, nx)``."""
        x = self.x_range[0] + (np.arange(self.nx) + 0.5) * self.dx
        y = self.y_range[0] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y)


@dataclass(frozen=True)
class KppConfig:
    grid: Grid2D = field(default_factory=lambda: Grid2D(50, 50))
    t_final: float = 10.0
    n_snapshots: int = 1250
    cfl: float = 0.4
    reconstruction: str = "weno5"

    def __post_init__(self):
        if not self.t_final > 0:
            raise ConfigError("t_final must be positive")
        if self.n_snapshots < 2:
            raise ConfigError("need at least two snapshots")
        if not 0 < self.cfl < 1:
            raise ConfigError("cfl must lie in (0, 1)")
        if self.reconstruction not in ("weno5", "first_order"):
            raise ConfigError(f"unknown reconstruction {self.reconstruction!r}")

    @classmethod
    def desk(cls, **kw):
        return cls(grid=Grid2D(32, 32), n_snapshots=300, **kw)

    @classmethod
    def paper(cls, **kw):
        return cls(**kw)


@dataclass(frozen=True)
class EulerParams:
    eta_u: float
    eta_rho: float

    def __post_init__(self):
        if not 2.0 <= self.eta_u <= 3.0:
            raise ConfigError(f"eta_u={self.eta_u} outside [2, 3]")
        if not 3.0 <= self.eta_rho <= 4.0:
            raise ConfigError(f"eta_rho={self.eta_rho} outside [3, 4]")


@dataclass(frozen=True)
class EulerConfig:
    n_cells: int = 1000
    t_final: float = 1.8
    n_snapshots: int = 180
    cfl: float = 0.4
    x_range: tuple = (-5.0, 5.0)
    reconstruction: str = "weno5"

    def __post_init__(self):
        if self.n_cells < 5:
            raise ConfigError("need at least five cells")
        if not self.t_final > 0:
            raise ConfigError("t_final must be positive")
        if self.n_snapshots < 2:
            raise ConfigError("need at least two snapshots")
        if not 0 < self.cfl < 1:
            raise ConfigError("cfl must lie in (0, 1)")
        if self.reconstruction not in ("weno5", "first_order"):
            raise ConfigError(f"unknown reconstruction {self.reconstruction!r}")

    @classmethod
    def desk(cls, **kw):
        return cls(n_cells=200, **kw)

    @classmethod
    def paper(cls, **kw):
        return cls(**kw)

    @property
    def dx(self):
        return (self.x_range[1] - self.x_range[0]) / self.n_cells

    def centers(self):
        return self.x_range[0] + (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Rows are snapshots in time; columns are spatial degrees of freedom.

    ``fields`` lists ``(name, size)`` segments in column order.
    """

    times: np.ndarray
    data: np.ndarray
    fields: tuple
    params: EulerParams | None = None
    source: str = "synthetic"

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("snapshot data must be 2-D")
        if times.shape != (data.shape[0],):
            raise ValueError("one time stamp per snapshot row is required")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        fields = tuple((str(n), int(s)) for n, s in self.fields)
        if sum(s for _, s in fields) != data.shape[1]:
            raise ValueError("field sizes must sum to the number of columns")
        if not np.all(np.isfinite(data)):
            raise ValueError("snapshot data has non-finite entries")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        times.flags.writeable = False
        data.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fields", fields)

    @property
    def n_t(self):
        return self.data.shape[0]

    @property
    def n_dof(self):
        return self.data.shape[1]

    def field(self, name):
        start = 0
        for n, s in self.fields:
            if n == name:
                return self.data[:, start : start + s]
            start += s
        raise KeyError(name)

    def replace(self, **kw):
        args = dict(times=self.times, data=self.data, fields=self.fields, params=self.params, source=self.source)
        args.update(kw)
        return SnapshotSet(**args)


# ---------------------------------------------------------------- reconstruction


def _weno5(v0, v1, v2, v3, v4):
    p0 = (2 * v0 - 7 * v1 + 11 * v2) / 6
    p1 = (-v1 + 5 * v2 + 2 * v3) / 6
    p2 = (2 * v2 + 5 * v3 - v4) / 6
    b0 = 13 / 12 * (v0 - 2 * v1 + v2) ** 2 + 0.25 * (v0 - 4 * v1 + 3 * v2) ** 2
    b1 = 13 / 12 * (v1 - 2 * v2 + v3) ** 2 + 0.25 * (v1 - v3) ** 2
    b2 = 13 / 12 * (v2 - 2 * v3 + v4) ** 2 + 0.25 * (3 * v2 - 4 * v3 + v4) ** 2
    a0 = 0.1 / (WENO_EPS + b0) ** 2
    a1 = 0.6 / (WENO_EPS + b1) ** 2
    a2 = 0.3 / (WENO_EPS + b2) ** 2
    return (a0 * p0 + a1 * p1 + a2 * p2) / (a0 + a1 + a2)


def weno5_reconstruct(stencil):
    """Left state at the right interface of the centre cell of a 5-cell stencil.

    ``stencil`` holds the averages ``(v[i-2], ..., v[i+2])`` and the result
    approximates ``v`` at ``x[i+1/2]``. Arrays with a leading axis of length 5
    are reconstructed elementwise.
    """
    s = np.asarray(stencil, dtype=float)
    if s.shape[0] != 5:
        raise ValueError("a WENO-5 stencil has five cells")
    out = _weno5(*s)
    return float(out) if out.ndim == 0 else out


def _faces(v, axis, order):
    """Left/right interface states along ``axis`` of an array padded by 3 ghosts.

    Returns states at the ``n + 1`` faces bounding the ``n`` interior cells.
    """
    n = v.shape[axis] - 6

    def sl(k, length):
        return np.take(v, np.arange(k, k + length), axis=axis)

    if order == "first_order":
        return sl(2, n + 1), sl(3, n + 1)
    m = n + 1
    left = _weno5(sl(0, m), sl(1, m), sl(2, m), sl(3, m), sl(4, m))
    right = _weno5(sl(5, m), sl(4, m), sl(3, m), sl(2, m), sl(1, m))
    return left, right


def _ssp_rk3(u, dt, L):
    u1 = u + dt * L(u)
    u2 = 0.75 * u + 0.25 * (u1 + dt * L(u1))
    return u / 3.0 + 2.0 / 3.0 * (u2 + dt * L(u2))


def _output_times(t_final, n):
    return np.linspace(0.0, t_final, n)


def _march(u0, times, dt_of, step, check):
    """Advance ``u0`` through ``times`` with exact landing; collects snapshots."""
    snaps = [u0.copy()]
    u = u0
    t = float(times[0])
    n_steps = 0
    for t_out in times[1:]:
        while t < t_out:
            dt = dt_of(u)
            if not dt > 0 or not math.isfinite(dt):
                raise ConfigError(f"time step {dt} is not positive")
            if t + dt >= t_out - 1e-12 * max(1.0, abs(t_out)):
                dt = t_out - t
                t_next = float(t_out)
            else:
                t_next = t + dt
            u = step(u, dt)
            n_steps += 1
            check(u, n_steps)
            t = t_next
        snaps.append(u.copy())
    return np.array(snaps)


# ---------------------------------------------------------------- KPP


def kpp_flux(u):
    """Physical flux ``(sin u, cos u)``."""
    return np.sin(u), np.cos(u)


def kpp_initial(x, y):
    """Disc initial data: ``14 pi / 4`` inside the unit circle, ``pi / 4`` outside."""
    inside = np.asarray(x) ** 2 + np.asarray(y) ** 2 < 1.0
    out = np.where(inside, 14 * np.pi / 4, np.pi / 4)
    return float(out) if out.ndim == 0 else out


def llf_flux(uL, uR, alpha_max, flux_fn=kpp_flux):
    """Local Lax-Friedrichs flux, applied to each component of ``flux_fn``.

    Returns a tuple with one numerical flux per flux component.
    """
    if np.any(np.asarray(alpha_max) < 0):
        raise ValueError("alpha_max must be non-negative")
    fL = flux_fn(uL)
    fR = flux_fn(uR)
    if not isinstance(fL, tuple):
        fL, fR = (fL,), (fR,)
    jump = np.asarray(uR) - np.asarray(uL)
    return tuple(0.5 * (a + b) - 0.5 * alpha_max * jump for a, b in zip(fL, fR))


def kpp_simulate(cfg: KppConfig | None = None, initial=None) -> SnapshotSet:
    """Run the KPP model and return ``cfg.n_snapshots`` uniformly spaced snapshots.

    ``initial`` optionally overrides the disc data with an ``(ny, nx)`` array.
    Boundaries use zero-gradient ghost cells. The LLF dissipation uses the
    global bound ``alpha = 1`` since both flux derivatives are bounded by one.
    """
    cfg = cfg or KppConfig()
    g = cfg.grid
    if initial is None:
        X, Y = g.centers()
        u0 = kpp_initial(X, Y)
    else:
        u0 = np.array(initial, dtype=float)
        if u0.shape != (g.ny, g.nx):
            raise ConfigError(f"initial data must have shape {(g.ny, g.nx)}")
    dx, dy = g.dx, g.dy
    dt_max = cfg.cfl * min(dx, dy)
    order = cfg.reconstruction

    def L(u):
        p = np.pad(u, 3, mode="edge")
        ux = p[3:-3, :]
        uL, uR = _faces(ux, 1, order)
        Fx = llf_flux(uL, uR, 1.0, np.sin)[0]
        uy = p[:, 3:-3]
        uL, uR = _faces(uy, 0, order)
        Fy = llf_flux(uL, uR, 1.0, np.cos)[0]
        return -(Fx[:, 1:] - Fx[:, :-1]) / dx - (Fy[1:, :] - Fy[:-1, :]) / dy

    def check(u, n):
        if not np.all(np.isfinite(u)):
            bad = np.max(np.abs(u[np.isfinite(u)])) if np.any(np.isfinite(u)) else np.nan
            raise InstabilityError(f"non-finite KPP state at step {n} (max |u| = {bad})", step=n, value=bad)

    times = _output_times(cfg.t_final, cfg.n_snapshots)
    snaps = _march(u0, times, lambda u: dt_max, lambda u, dt: _ssp_rk3(u, dt, L), check)
    return SnapshotSet(
        times=times,
        data=snaps.reshape(len(times), -1),
        fields=(("u", g.nx * g.ny),),
        source="kpp",
    )


# ---------------------------------------------------------------- Euler


def primitive_to_conserved(rho, u, p, gamma=GAMMA_GAS):
    rho, u, p = (np.asarray(a, dtype=float) for a in (rho, u, p))
    return np.stack([rho, rho * u, p / (gamma - 1) + 0.5 * rho * u * u])


def conserved_to_primitive(U, gamma=GAMMA_GAS):
    U = np.asarray(U, dtype=float)
    rho = U[0]
    u = U[1] / rho
    p = (gamma - 1) * (U[2] - 0.5 * rho * u * u)
    return np.stack([rho, u, p])


def euler_initial(params: EulerParams, x):
    """Conserved state ``(rho, rho u, E)`` of the shock-entropy data at ``x``."""
    x = np.asarray(x, dtype=float)
    left = x < -4.0
    u = np.where(left, params.eta_u, 0.0)
    rho = np.where(left, params.eta_rho, 1.0 + 0.2 * np.sin(np.pi * x))
    p = np.where(left, 31.0 / 3.0, 1.0)
    return primitive_to_conserved(rho, u, p)


def euler_flux(U, gamma=GAMMA_GAS):
    rho, u, p = conserved_to_primitive(U, gamma)
    return np.stack([rho * u, rho * u * u + p, (U[2] + p) * u])


def _admissible(U, gamma, where="state"):
    rho, u, p = conserved_to_primitive(U, gamma)
    if np.any(~(rho > 0)) or np.any(~(p > 0)):
        raise PositivityError(f"inadmissible {where}: non-positive density or pressure")
    return rho, u, p


def hll_flux(UL, UR, gamma=GAMMA_GAS):
    """HLL numerical flux between conserved states (arrays with leading axis 3)."""
    UL = np.asarray(UL, dtype=float)
    UR = np.asarray(UR, dtype=float)
    rL, uL, pL = _admissible(UL, gamma, "left state")
    rR, uR, pR = _admissible(UR, gamma, "right state")
    cL = np.sqrt(gamma * pL / rL)
    cR = np.sqrt(gamma * pR / rR)
    SL = np.minimum(uL - cL, uR - cR)
    SR = np.maximum(uL + cL, uR + cR)
    FL = np.stack([rL * uL, rL * uL * uL + pL, (UL[2] + pL) * uL])
    FR = np.stack([rR * uR, rR * uR * uR + pR, (UR[2] + pR) * uR])
    denom = np.where(SR > SL, SR - SL, 1.0)
    # FL plus a correction that vanishes exactly when UL == UR
    Fm = FL + SL * (FL - FR + SR * (UR - UL)) / denom
    return np.where(SL >= 0, FL, np.where(SR <= 0, FR, Fm))


def euler_simulate(params: EulerParams, cfg: EulerConfig | None = None, initial=None) -> SnapshotSet:
    """Shock-entropy run; rows hold ``rho | rho u | E`` concatenated.

    Ghost cells on both ends are frozen at the initial boundary-cell state.
    WENO-5 acts on primitive variables; at any interface where the
    reconstructed density or pressure is not positive the scheme falls back
    to the first-order cell states.

    ``initial`` optionally overrides the initial data with a ``(3, n_cells)``
    conserved array.
    """
    cfg = cfg or EulerConfig()
    g = GAMMA_GAS
    x = cfg.centers()
    U0 = euler_initial(params, x) if initial is None else np.array(initial, dtype=float)
    if U0.shape != (3, cfg.n_cells):
        raise ConfigError(f"initial data must have shape {(3, cfg.n_cells)}")
    _admissible(U0, g, "initial data")
    ghost_l = np.repeat(U0[:, :1], 3, axis=1)
    ghost_r = np.repeat(U0[:, -1:], 3, axis=1)
    dx = cfg.dx

    def L(U):
        P = conserved_to_primitive(np.concatenate([ghost_l, U, ghost_r], axis=1), g)
        if cfg.reconstruction == "weno5":
            WL, WR = _faces(P, 1, "weno5")
            fL, fR = _faces(P, 1, "first_order")
            bad = (WL[0] <= 0) | (WL[2] <= 0) | (WR[0] <= 0) | (WR[2] <= 0)
            bad |= ~np.isfinite(WL).all(axis=0) | ~np.isfinite(WR).all(axis=0)
            WL = np.where(bad, fL, WL)
            WR = np.where(bad, fR, WR)
        else:
            WL, WR = _faces(P, 1, "first_order")
        F = hll_flux(primitive_to_conserved(*WL, g), primitive_to_conserved(*WR, g), g)
        return -(F[:, 1:] - F[:, :-1]) / dx

    def dt_of(U):
        rho, u, p = conserved_to_primitive(U, g)
        smax = np.max(np.abs(u) + np.sqrt(g * p / rho))
        return cfg.cfl * dx / smax

    def check(U, n):
        if not np.all(np.isfinite(U)):
            raise InstabilityError(f"non-finite Euler state at step {n}", step=n)
        rho, _, p = conserved_to_primitive(U, g)
        if np.any(rho <= 0) or np.any(p <= 0):
            raise PositivityError(
                f"positivity lost at step {n} (min rho {rho.min():.3g}, min p {p.min():.3g})",
                step=n,
                value=float(min(rho.min(), p.min())),
            )

    times = _output_times(cfg.t_final, cfg.n_snapshots)
    n_done = [0]

    def counted_step(U, dt):
        n_done[0] += 1
        try:
            return _ssp_rk3(U, dt, L)
        except PositivityError as exc:
            raise PositivityError(f"positivity lost at step {n_done[0]}", step=n_done[0]) from exc

    snaps = _march(U0, times, dt_of, counted_step, check)
    n = cfg.n_cells
    return SnapshotSet(
        times=times,
        data=snaps.reshape(len(times), 3 * n),
        fields=(("rho", n), ("rho_u", n), ("E", n)),
        params=params,
        source="euler",
    )


def euler_desk_grid():
    """The 4 x 5 uniform parameter grid on [2, 3] x [3, 4] (20 members)."""
    return [EulerParams(float(a), float(b)) for a in np.linspace(2, 3, 4) for b in np.linspace(3, 4, 5)]


def euler_paper_grid():
    """The 10 x 10 uniform parameter grid on [2, 3] x [3, 4] (100 members)."""
    return [EulerParams(float(a), float(b)) for a in np.linspace(2, 3, 10) for b in np.linspace(3, 4, 10)]


def _euler_job(args):
    params, cfg = args
    return euler_simulate(params, cfg)


def euler_ensemble(params_list, cfg: EulerConfig | None = None, jobs=1):
    """Simulate every parameter; ``jobs > 1`` runs members in worker processes."""
    cfg = cfg or EulerConfig()
    work = [(p, cfg) for p in params_list]
    if jobs <= 1:
        return [_euler_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_euler_job, work))


# ---------------------------------------------------------------- synthetic VKS


def synthetic_vks(n_dof=256, n_t=400, frequencies=(0.3, 0.3 * math.sqrt(2)), transient_len=100, dt=1.0):
    """Travelling-wave surrogate with a transient phase then steady oscillation.

    Frequency ``w_j`` drives the wave ``cos(k_j x - w_j t)`` with wavenumber
    ``k_j = j + 1`` on a periodic grid of ``n_dof`` points. During the first
    ``transient_len`` samples the wave amplitudes ramp up smoothly while a
    non-oscillating base mode decays to zero.
    """
    if not n_t > transient_len >= 0:
        raise ValueError("need n_t > transient_len >= 0")
    if n_dof < 2 * len(frequencies) + 2:
        raise ValueError("n_dof too small to hold orthogonal modes")
    x = 2 * np.pi * np.arange(n_dof) / n_dof
    t = np.arange(n_t) * dt
    tt = transient_len * dt
    if transient_len > 0:
        s = np.clip(t / tt, 0.0, 1.0)
        ramp = s * s * (3 - 2 * s)
        base = 1.0 - ramp
    else:
        ramp = np.ones_like(t)
        base = np.zeros_like(t)
    data = np.zeros((n_t, n_dof))
    k_base = len(frequencies) + 1
    for j, w in enumerate(frequencies):
        amp = 1.0 / (j + 1)
        data += amp * ramp[:, None] * np.cos((j + 1) * x[None, :] - w * t[:, None])
    data += 2.0 * base[:, None] * np.cos(k_base * x)[None, :]
    return SnapshotSet(times=t, data=data, fields=(("u", n_dof),), source="synthetic")
