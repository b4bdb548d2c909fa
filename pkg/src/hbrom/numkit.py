"""Dense linear algebra kernels: Jacobi eigensolver, one-sided Jacobi SVD,
and a real-Schur (Francis QR) solver for nonsymmetric spectra.

Matrices are plain 2-D float64 ``numpy`` arrays. Every routine is pure:
inputs are copied before being worked on.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .exceptions import ConvergenceError, ShapeError, SymmetryError

__all__ = [
    "SymEigResult",
    "as_matrix",
    "sym_eig",
    "svd",
    "eigvals",
    "eig",
    "hessenberg",
    "balance",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SymEigResult:
    """Eigenvalues (non-increasing) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors


def as_matrix(a, name="matrix"):
    m = np.array(a, dtype=float, copy=True)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


@lru_cache(maxsize=64)
def _round_robin(n):
    """Pairings for a parallel Jacobi sweep: n-1 rounds of n/2 disjoint pairs.

    ``n`` must be even; callers pad odd sizes with a dummy index.
    """
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        top, bottom = players[: n // 2], players[n // 2 :][::-1]
        p = np.array([min(a, b) for a, b in zip(top, bottom)])
        q = np.array([max(a, b) for a, b in zip(top, bottom)])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _round_robin_arrays(n):
    rounds = _round_robin(n)
    return (np.ascontiguousarray(np.array([r[0] for r in rounds], dtype=np.int64)),
            np.ascontiguousarray(np.array([r[1] for r in rounds], dtype=np.int64)))


@njit(cache=True)
def _jacobi_sweep(A, V, P, Q, skip):
    """One sweep of round-robin Jacobi rotations, in place. Returns whether any rotation ran."""
    n = A.shape[0]
    half = P.shape[1]
    cs = np.empty(half)
    sn = np.empty(half)
    act = np.zeros(half, dtype=np.bool_)
    rotated = False
    for r in range(P.shape[0]):
        any_active = False
        for i in range(half):
            p = P[r, i]
            q = Q[r, i]
            apq = A[p, q]
            if abs(apq) <= skip or abs(apq) <= 2.2e-19 * np.sqrt(abs(A[p, p] * A[q, q])):
                act[i] = False
                continue
            tau = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = 1.0 / (abs(tau) + np.sqrt(1.0 + tau * tau))
            if tau < 0:
                t = -t
            c = 1.0 / np.sqrt(1.0 + t * t)
            cs[i] = c
            sn[i] = t * c
            act[i] = True
            any_active = True
        if not any_active:
            continue
        rotated = True
        for i in range(half):
            if act[i]:
                p = P[r, i]
                q = Q[r, i]
                c = cs[i]
                s = sn[i]
                for k in range(n):
                    x = A[p, k]
                    y = A[q, k]
                    A[p, k] = c * x - s * y
                    A[q, k] = s * x + c * y
        for k in range(n):
            for i in range(half):
                if act[i]:
                    p = P[r, i]
                    q = Q[r, i]
                    c = cs[i]
                    s = sn[i]
                    x = A[k, p]
                    y = A[k, q]
                    A[k, p] = c * x - s * y
                    A[k, q] = s * x + c * y
                    x = V[k, p]
                    y = V[k, q]
                    V[k, p] = c * x - s * y
                    V[k, q] = s * x + c * y
        for i in range(half):
            if act[i]:
                A[P[r, i], Q[r, i]] = 0.0
                A[Q[r, i], P[r, i]] = 0.0
    return rotated


def _fix_signs(vectors):
    """Scale each column so that its largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(S, tol=1e-12, max_sweeps=100, sym_tol=1e-10) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so that each round touches
    ``n/2`` disjoint index pairs and can be applied as one vectorized update.
    Iterates until the off-diagonal Frobenius mass drops below
    ``tol * ||S||_F``.

    Raises
    ------
    ShapeError
        If ``S`` is not square.
    SymmetryError
        If ``S`` departs from symmetry by more than ``sym_tol`` (relative).
    ConvergenceError
        If ``max_sweeps`` sweeps do not reach the tolerance.
    """
    A = as_matrix(S, "S")
    n, m = A.shape
    if n != m:
        raise ShapeError(f"sym_eig needs a square matrix, got {A.shape}")
    fro = np.linalg.norm(A)
    if n and np.max(np.abs(A - A.T)) > sym_tol * max(fro, np.finfo(float).tiny):
        raise SymmetryError("matrix is not symmetric within tolerance")
    if n == 0:
        return SymEigResult(np.zeros(0), np.zeros((0, 0)))
    A = 0.5 * (A + A.T)
    if n == 1:
        return SymEigResult(A[0].copy(), np.ones((1, 1)))

    size = n + (n % 2)
    if size != n:
        A = np.pad(A, ((0, 1), (0, 1)))
    V = np.eye(size)
    P, Q = _round_robin_arrays(size)
    target = tol * fro
    # Any entry below `skip` can be left alone: n^2 of them still sum below target.
    skip = 0.5 * target / size
    sweeps = 0
    while True:
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= target:
            break
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off:.3e}, target {target:.3e})"
            )
        sweeps += 1
        if not _jacobi_sweep(A, V, P, Q, skip):
            break

    # A padded dummy index never rotates (its row is zero), so slicing drops it.
    w = np.diag(A)[:n].copy()
    V = V[:n, :n]
    order = np.argsort(-w, kind="stable")
    return SymEigResult(w[order], _fix_signs(V[:, order]), sweeps)


def _complete_orthonormal(Q, k):
    """Replace columns k.. of Q with an orthonormal completion of Q[:, :k]."""
    m, n = Q.shape
    basis = [Q[:, j] for j in range(k)]
    for e in range(m):
        if len(basis) == n:
            break
        v = np.zeros(m)
        v[e] = 1.0
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
    return np.column_stack(basis) if basis else np.zeros((m, 0))


def _one_sided_jacobi(G, tol, max_sweeps):
    """Orthogonalize the columns of G (m x n, m >= n); returns (G, V, sweeps)."""
    m, n = G.shape
    size = n + (n % 2)
    if size != n:
        G = np.pad(G, ((0, 0), (0, 1)))
    V = np.eye(size)
    rounds = _round_robin(size) if size > 1 else ()
    sweeps = 0
    while True:
        rotated = False
        for p, q in rounds:
            gp, gq = G[:, p], G[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            gp, gq = G[:, p], G[:, q]
            G[:, p] = gp * c - gq * s
            G[:, q] = gp * s + gq * c
            vp, vq = V[:, p], V[:, q]
            V[:, p] = vp * c - vq * s
            V[:, q] = vp * s + vq * c
        if not rotated:
            break
        sweeps += 1
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"one-sided Jacobi SVD did not converge in {max_sweeps} sweeps")
    return G[:, :n], V[:n, :n], sweeps


def svd(M, tol=1e-15, max_sweeps=100):
    """Thin SVD ``M = U diag(s) V^T`` by one-sided (Hestenes) Jacobi.

    Rotations act on the shorter dimension. Very tall inputs are first
    compressed with a QR factorization so the rotations work on a square
    triangular factor.

    Returns
    -------
    U : (m, k) array, column-orthonormal
    s : (k,) array, non-negative, non-increasing
    V : (n, k) array, column-orthonormal

    with ``k = min(m, n)``.
    """
    A = as_matrix(M, "M")
    m, n = A.shape
    if m == 0 or n == 0:
        raise ShapeError(f"svd of an empty matrix {A.shape}")
    if m < n:
        U, s, V = svd(A.T, tol=tol, max_sweeps=max_sweeps)
        return V, s, U

    R, Q = A, None
    if m > n + n // 2:
        Q, R = np.linalg.qr(A, mode="reduced")
    G, V, _ = _one_sided_jacobi(R.copy(), tol, max_sweeps)
    s = np.linalg.norm(G, axis=0)
    order = np.argsort(-s, kind="stable")
    s, G, V = s[order], G[:, order], V[:, order]
    k = int(np.count_nonzero(s > _EPS * max(m, n) * s[0])) if s[0] > 0 else 0
    U = np.zeros_like(G)
    U[:, :k] = G[:, :k] / s[:k]
    if k < n:
        U = _complete_orthonormal(U, k)
    if Q is not None:
        U = Q @ U
    # Sign convention on V; U follows so that M = U S V^T is preserved.
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return U * signs, s, V * signs


def balance(A):
    """Parlett-Reinsch balancing by powers of two; returns the balanced copy."""
    a = as_matrix(A)
    n = a.shape[0]
    radix, sqrdx = 2.0, 4.0
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(a[:, i])) - abs(a[i, i])
            r = np.sum(np.abs(a[i, :])) - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g, f, s = r / radix, 1.0, c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def hessenberg(A):
    """Upper Hessenberg form by Householder reflections (similarity)."""
    H = as_matrix(A)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
        H[k + 2 :, k] = 0.0
    return H


def _hqr(a, max_its=None):
    """Eigenvalues of an upper Hessenberg matrix by Francis double-shift QR.

    Works in place on ``a``; the converged 1x1 and 2x2 diagonal blocks of the
    real Schur form yield the eigenvalues.
    """
    n = a.shape[0]
    if max_its is None:
        max_its = 30 * max(10, n)
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.sum(np.abs(np.triu(a, -1)))
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = np.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + np.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if its >= max_its:
                raise ConvergenceError("Francis QR iteration did not converge")
            if its > 0 and its % 10 == 0:
                t += x
                a[np.arange(nn + 1), np.arange(nn + 1)] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            k = m
            while k <= nn - 1:
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = np.copysign(np.sqrt(p * p + q * q + r * r), p)
                if s != 0.0:
                    if k == m:
                        if l != m:
                            a[k, k - 1] = -a[k, k - 1]
                    else:
                        a[k, k - 1] = -s * x
                    p += s
                    x = p / s
                    y = q / s
                    z = r / s
                    q /= p
                    r /= p
                    row = a[k, k : nn + 1] + q * a[k + 1, k : nn + 1]
                    if k != nn - 1:
                        row = row + r * a[k + 2, k : nn + 1]
                        a[k + 2, k : nn + 1] -= row * z
                    a[k + 1, k : nn + 1] -= row * y
                    a[k, k : nn + 1] -= row * x
                    mmin = min(nn, k + 3)
                    col = x * a[l : mmin + 1, k] + y * a[l : mmin + 1, k + 1]
                    if k != nn - 1:
                        col = col + z * a[l : mmin + 1, k + 2]
                        a[l : mmin + 1, k + 2] -= col * r
                    a[l : mmin + 1, k + 1] -= col * q
                    a[l : mmin + 1, k] -= col
                k += 1
    return wr + 1j * wi


def eigvals(A):
    """Complex eigenvalues of a real square matrix (balance, Hessenberg, QR).

    Ordered by decreasing modulus; conjugate pairs are exact conjugates.
    """
    a = as_matrix(A, "A")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigvals needs a square matrix, got {a.shape}")
    if a.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    lam = _hqr(hessenberg(balance(a)))
    order = np.lexsort((-lam.imag, -lam.real, -np.abs(lam)))
    return lam[order]


def eig(A, iterations=3, seed=0):
    """Eigenvalues and unit eigenvectors of a real square matrix.

    Eigenvalues come from :func:`eigvals`; eigenvectors from shifted
    inverse iteration, orthogonalized within clusters of repeated
    eigenvalues. Eigenvectors of conjugate eigenvalues are exact conjugates.
    """
    a = as_matrix(A, "A")
    n = a.shape[0]
    lam = eigvals(a)
    norm = max(np.linalg.norm(a), 1.0)
    rng = np.random.default_rng(seed)
    vecs = np.zeros((n, n), dtype=complex)
    done = np.zeros(n, dtype=bool)
    for i in range(n):
        if done[i]:
            continue
        mu = lam[i] + 1e3 * _EPS * norm * (1 + 1j if lam[i].imag else 1)
        cluster = [j for j in range(i) if done[j] and abs(lam[j] - lam[i]) <= 1e-8 * norm]
        x = rng.standard_normal(n) + (1j * rng.standard_normal(n) if lam[i].imag else 0)
        shifted = a - mu * np.eye(n)
        for _ in range(iterations):
            for j in cluster:
                x = x - (np.vdot(vecs[:, j], x)) * vecs[:, j]
            x = np.linalg.solve(shifted, x)
            x /= np.linalg.norm(x)
        for j in cluster:
            x = x - (np.vdot(vecs[:, j], x)) * vecs[:, j]
        x /= np.linalg.norm(x)
        # Fix the phase: largest-magnitude entry real and positive.
        k = np.argmax(np.abs(x))
        x *= np.conj(x[k]) / abs(x[k])
        if not lam[i].imag:
            x = x.real.astype(complex)
        vecs[:, i] = x
        done[i] = True
        if lam[i].imag:
            for j in range(i + 1, n):
                if not done[j] and lam[j] == np.conj(lam[i]):
                    vecs[:, j] = np.conj(x)
                    done[j] = True
                    break
    return lam, vecs
