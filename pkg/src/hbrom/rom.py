"""Snapshot reduction: centering, POD by the method of snapshots, and lifted DMD.

Functional entry points (``pod_fit``, ``dmd_fit``, ...) operate on
:class:`~hbrom.fom.SnapshotSet` or plain ``(n_t, n_dof)`` arrays. The
:class:`POD` and :class:`DMD` estimators wrap them with a scikit-learn
interface.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import numkit
from .exceptions import (
    DegenerateSpectrumError,
    InsufficientDataError,
    OrderError,
    RankDeficiencyError,
    RankDeficiencyWarning,
    ShapeError,
)
from .fom import SnapshotSet

__all__ = [
    "PodBasis",
    "LiftSpec",
    "DmdModel",
    "center_snapshots",
    "pod_fit",
    "relative_info",
    "pod_reconstruct",
    "lift",
    "dmd_fit",
    "dmd_predict",
    "POD",
    "DMD",
]


def _data(S):
    if isinstance(S, SnapshotSet):
        return S.data
    X = np.asarray(S, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"snapshot matrix must be 2-D, got shape {X.shape}")
    return X


def center_snapshots(S):
    """Subtract the temporal mean of every degree of freedom.

    Returns ``(fluct, mean)``; ``fluct`` has the input's type.
    """
    X = _data(S)
    if X.shape[0] < 2:
        raise InsufficientDataError("centering needs at least two snapshots")
    mean = X.mean(axis=0)
    fluct = X - mean
    if isinstance(S, SnapshotSet):
        fluct = S.replace(data=fluct)
    return fluct, mean


# ---------------------------------------------------------------- POD


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Leading POD modes of a snapshot ensemble.

    ``modes`` has unit-norm columns. ``coeffs[j, i]`` is the coordinate of
    snapshot ``j`` on mode ``i``, so ``fluct ~= coeffs @ modes.T``.
    """

    mean: np.ndarray
    eigenvalues: np.ndarray
    coeffs: np.ndarray
    modes: np.ndarray

    @property
    def r(self):
        return self.modes.shape[1]

    def info(self, r=None):
        return relative_info(self.eigenvalues, self.r if r is None else r)

    def project(self, X):
        """Coefficients of new snapshots (mean removed, then projected)."""
        X = _data(X)
        if X.shape[1] != self.modes.shape[0]:
            raise ShapeError("snapshot width does not match the basis")
        return (X - self.mean) @ self.modes


def pod_fit(fluct, r, mean=None) -> PodBasis:
    """POD of already-centered snapshots via the ``n_t x n_t`` covariance.

    ``K = Y Y^T = A diag(lam) A^T``; mode ``i`` is ``Y^T a_i / sqrt(lam_i)``
    and its coefficients are ``sqrt(lam_i) a_i``. ``mean`` is stored for
    reconstruction (zero if not given).
    """
    Y = _data(fluct)
    n_t, n_dof = Y.shape
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= min(n_t, n_dof):
        raise OrderError(f"order r={r} must lie in [1, {min(n_t, n_dof)}]")
    K = Y @ Y.T
    K = 0.5 * (K + K.T)
    res = numkit.sym_eig(K)
    lam = np.maximum(res.eigenvalues, 0.0)
    if lam[0] <= 0:
        raise DegenerateSpectrumError("snapshot fluctuations are identically zero")
    eff = int(np.sum(lam > 1e-12 * lam[0]))
    if eff < r:
        warnings.warn(
            f"eigenvalue {r} is below 1e-12 of the largest; effective rank is {eff}",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    A = res.eigenvectors[:, :r]
    modes = np.zeros((n_dof, r))
    coeffs = np.zeros((n_t, r))
    for i in range(min(r, eff)):
        s = np.sqrt(lam[i])
        modes[:, i] = Y.T @ A[:, i] / s
        coeffs[:, i] = s * A[:, i]
    if eff < r:
        # Complete the basis so the modes stay orthonormal; their coefficients are zero.
        modes[:, eff:] = _orth_complement(modes[:, :eff], r - eff)
    mean = np.zeros(n_dof) if mean is None else np.asarray(mean, dtype=float)
    for arr in (mean, lam, coeffs, modes):
        arr.flags.writeable = False
    return PodBasis(mean=mean, eigenvalues=lam, coeffs=coeffs, modes=modes)


def _orth_complement(Q, k):
    n = Q.shape[0]
    out = []
    basis = [Q[:, i] for i in range(Q.shape[1])]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        for b in basis:
            e -= (b @ e) * b
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            e /= nrm
            basis.append(e)
            out.append(e)
            if len(out) == k:
                break
    return np.array(out).T


def relative_info(eigenvalues, r):
    """Fraction of eigenvalue mass captured by the leading ``r`` values."""
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam < 0) or np.any(np.diff(lam) > 0):
        raise ValueError("eigenvalues must be non-negative and non-increasing")
    if not 1 <= r <= lam.size:
        raise OrderError(f"r={r} must lie in [1, {lam.size}]")
    total = lam.sum()
    if total <= 0:
        raise DegenerateSpectrumError("all eigenvalues are zero")
    return float(min(1.0, lam[:r].sum() / total))


def pod_reconstruct(basis: PodBasis, coeff_rows):
    """Snapshots ``coeffs @ modes.T + mean`` for coefficient rows of width ``r``."""
    C = np.atleast_2d(np.asarray(coeff_rows, dtype=float))
    if C.shape[1] != basis.r:
        raise ShapeError(f"coefficient width {C.shape[1]} does not match r={basis.r}")
    return C @ basis.modes.T + basis.mean


# ---------------------------------------------------------------- lifting

_LIFTS = {
    "identity": lambda x: x,
    "cos": np.cos,
    "sin": np.sin,
    "square": np.square,
    "cube": lambda x: x * x * x,
}
_ALIASES = {"id": "identity", "sq": "square", "x2": "square", "x3": "cube"}


@dataclass(frozen=True)
class LiftSpec:
    """Ordered elementwise lifts; ``identity`` must come first, exactly once."""

    names: tuple = ("identity",)

    def __post_init__(self):
        names = tuple(_ALIASES.get(n, n) for n in self.names)
        if not names:
            raise ValueError("lift spec is empty")
        unknown = [n for n in names if n not in _LIFTS]
        if unknown:
            raise ValueError(f"unknown lifts {unknown}")
        if names[0] != "identity" or names.count("identity") != 1:
            raise ValueError("identity must appear exactly once, first")
        if len(set(names)) != len(names):
            raise ValueError("duplicate lifts")
        object.__setattr__(self, "names", names)

    @classmethod
    def parse(cls, text):
        """Parse ``"cos,sin,sq,cube"``; identity is prepended when missing."""
        names = [n.strip() for n in str(text).split(",") if n.strip()]
        names = [_ALIASES.get(n, n) for n in names]
        if "identity" not in names:
            names = ["identity"] + names
        return cls(tuple(names))

    @classmethod
    def paper(cls):
        return cls(("identity", "cos", "sin", "square", "cube"))

    def __len__(self):
        return len(self.names)


def lift(S, spec: LiftSpec):
    """Apply every lift elementwise and concatenate the results column-wise."""
    X = _data(S)
    out = np.concatenate([_LIFTS[n](X) for n in spec.names], axis=1)
    if isinstance(S, SnapshotSet):
        fields = tuple(
            (name if n == "identity" else f"{n}({name})", size)
            for n in spec.names
            for name, size in S.fields
        )
        return S.replace(data=out, fields=fields)
    return out


# ---------------------------------------------------------------- DMD


@dataclass(frozen=True, eq=False)
class DmdModel:
    """Rank-``r`` DMD of lifted snapshots.

    ``basis`` holds the leading left singular vectors of the first shifted
    matrix; ``modes = basis @ W`` where ``W`` are eigenvectors of ``atilde``.
    ``amplitudes`` fit the first snapshot, ``last_amplitudes`` the last one
    (the starting point of forecasts).
    """

    lift: LiftSpec
    mean: np.ndarray
    n_dof: int
    atilde: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray
    amplitudes: np.ndarray
    last_amplitudes: np.ndarray
    fit_residual: float
    singular_values: np.ndarray

    @property
    def r(self):
        return self.atilde.shape[0]

    def reconstruct(self, k):
        """Training-interval representation ``sum_i phi_i lam_i^k b_i`` (k from 0)."""
        return _assemble(self, self.amplitudes, k)


def dmd_fit(fluct, r, spec: LiftSpec | None = None, mean=None) -> DmdModel:
    """Fit a rank-``r`` linear one-step operator to lifted snapshots.

    Snapshots are rows of ``fluct`` (no centering is done here; pass the
    per-dof ``mean`` that was removed, if any, so forecasts can add it back).
    """
    spec = spec or LiftSpec()
    X = _data(fluct)
    n_t, n_dof = X.shape
    if n_t < 3:
        raise InsufficientDataError("DMD needs at least three snapshots")
    Z = lift(X, spec).T  # columns are time snapshots
    U0, U1 = Z[:, :-1], Z[:, 1:]
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= min(U0.shape):
        raise OrderError(f"rank r={r} must lie in [1, {min(U0.shape)}]")
    Xs, s, V = numkit.svd(U0)
    if s[0] <= 0 or s[r - 1] < 1e-12 * s[0]:
        raise RankDeficiencyError(
            f"singular value {r} of the snapshot matrix is below 1e-12 of the largest"
        )
    Xr, sr, Vr = Xs[:, :r], s[:r], V[:, :r]
    atilde = Xr.T @ U1 @ Vr / sr
    lam, W = numkit.eig(atilde)
    modes = Xr @ W
    b0 = np.linalg.solve(W, Xr.T @ Z[:, 0].astype(complex))
    bl = np.linalg.solve(W, Xr.T @ Z[:, -1].astype(complex))
    pred = Xr @ (atilde @ (Xr.T @ U0))
    resid = float(np.linalg.norm(U1 - pred) / max(np.linalg.norm(U1), np.finfo(float).tiny))
    mean = np.zeros(n_dof) if mean is None else np.asarray(mean, dtype=float)
    if mean.shape != (n_dof,):
        raise ShapeError("mean must have one entry per original degree of freedom")
    return DmdModel(
        lift=spec,
        mean=mean,
        n_dof=n_dof,
        atilde=atilde,
        basis=Xr,
        eigenvalues=lam,
        modes=modes,
        amplitudes=b0,
        last_amplitudes=bl,
        fit_residual=resid,
        singular_values=s,
    )


def _assemble(model: DmdModel, amps, k):
    z = model.modes @ (model.eigenvalues ** k * amps)
    scale = max(np.linalg.norm(z), np.finfo(float).tiny)
    imag = np.linalg.norm(z.imag) / scale
    if imag > 1e-8:
        raise ArithmeticError(f"DMD reconstruction has imaginary residue {imag:.2e}")
    return z.real[: model.n_dof] + model.mean


def dmd_predict(model: DmdModel, k):
    """Forecast ``k`` steps past the end of training: ``A^k u(t_train)``.

    ``k = 0`` gives the projection of the last training snapshot. Only the
    identity segment of the lifted state is returned, with the mean re-added.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    return _assemble(model, model.last_amplitudes, k)


# ---------------------------------------------------------------- estimators


class POD(TransformerMixin, BaseEstimator):
    """Proper orthogonal decomposition as a scikit-learn transformer.

    Parameters
    ----------
    n_components : int
        Retained order ``r``.
    center : bool
        Subtract the temporal mean before decomposing.

    Attributes
    ----------
    basis_ : PodBasis
    components_ : ndarray of shape (n_components, n_features)
    eigenvalues_ : ndarray of shape (n_samples,)
    mean_ : ndarray of shape (n_features,)
    """

    def __init__(self, n_components=8, center=True):
        self.n_components = n_components
        self.center = center

    def fit(self, X, y=None):
        X = check_array(_data(X), ensure_min_samples=2)
        if self.center:
            Y, mean = center_snapshots(X)
        else:
            Y, mean = X, np.zeros(X.shape[1])
        self.basis_ = pod_fit(Y, int(self.n_components), mean=mean)
        self.components_ = self.basis_.modes.T
        self.eigenvalues_ = self.basis_.eigenvalues
        self.mean_ = self.basis_.mean
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(_data(X))
        return self.basis_.project(X)

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return pod_reconstruct(self.basis_, X)

    def relative_info(self, r=None):
        check_is_fitted(self, "basis_")
        return self.basis_.info(r)


class DMD(BaseEstimator):
    """Lifted dynamic mode decomposition with a scikit-learn interface.

    ``fit`` takes snapshots as rows (time increasing). ``predict(steps)``
    returns forecasts ``steps`` samples past the last training snapshot.
    """

    def __init__(self, rank=8, lifts=("identity",), center=True):
        self.rank = rank
        self.lifts = lifts
        self.center = center

    def fit(self, X, y=None):
        X = check_array(_data(X), ensure_min_samples=3)
        if self.center:
            Y, mean = center_snapshots(X)
        else:
            Y, mean = X, np.zeros(X.shape[1])
        spec = LiftSpec.parse(self.lifts) if isinstance(self.lifts, str) else LiftSpec(tuple(self.lifts))
        self.model_ = dmd_fit(Y, int(self.rank), spec, mean=mean)
        self.eigenvalues_ = self.model_.eigenvalues
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, steps):
        check_is_fitted(self, "model_")
        steps = np.atleast_1d(np.asarray(steps, dtype=int))
        return np.array([dmd_predict(self.model_, int(k)) for k in steps])
