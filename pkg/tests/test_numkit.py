import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hbrom import numkit
from hbrom.exceptions import ShapeError, SymmetryError


def _sym(rng, n):
    A = rng.normal(size=(n, n))
    return A + A.T


def test_sym_eig_identity():
    lam, V = numkit.sym_eig(np.eye(3))
    assert np.allclose(lam, 1.0)
    assert np.allclose(V.T @ V, np.eye(3), atol=1e-12)


def test_sym_eig_diagonal_permuted_axes():
    lam, V = numkit.sym_eig(np.diag([4.0, 1.0, 9.0]))
    assert np.array_equal(lam, [9.0, 4.0, 1.0])
    assert np.array_equal(np.abs(V), np.eye(3)[:, [2, 0, 1]])


def test_sym_eig_round_trip(rng):
    S = _sym(rng, 8)
    lam, V = numkit.sym_eig(S)
    assert np.linalg.norm(V @ np.diag(lam) @ V.T - S) <= 1e-8 * np.linalg.norm(S)
    assert np.all(np.diff(lam) <= 0)
    assert np.allclose(V.T @ V, np.eye(8), atol=1e-10)


def test_sym_eig_sign_convention(rng):
    _, V = numkit.sym_eig(_sym(rng, 6))
    for col in V.T:
        assert col[np.argmax(np.abs(col))] > 0


def test_sym_eig_errors():
    with pytest.raises(ShapeError):
        numkit.sym_eig(np.ones((2, 3)))
    with pytest.raises(SymmetryError):
        numkit.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-10, 10)))
def test_sym_eig_residual_property(A):
    S = A + A.T
    lam, V = numkit.sym_eig(S)
    scale = max(np.linalg.norm(S), 1.0)
    assert np.max(np.abs(S @ V - V * lam)) <= 1e-8 * scale
    assert np.allclose(lam, np.sort(np.linalg.eigvalsh(S))[::-1], atol=1e-9 * scale)


def test_sym_eig_deterministic(rng):
    S = _sym(rng, 7)
    a, b = numkit.sym_eig(S), numkit.sym_eig(S)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_svd_zero():
    _, s, _ = numkit.svd(np.zeros((2, 3)))
    assert np.array_equal(s, np.zeros(2))


def test_svd_diagonal():
    _, s, _ = numkit.svd(np.diag([3.0, 2.0]))
    assert np.allclose(s, [3.0, 2.0], atol=1e-14)


def test_svd_cross_oracle(rng):
    M = rng.normal(size=(6, 10))
    U, s, V = numkit.svd(M)
    lam = numkit.sym_eig(M @ M.T).eigenvalues
    assert np.allclose(s, np.sqrt(lam), rtol=1e-8)
    assert np.linalg.norm(U * s @ V.T - M) <= 1e-8 * np.linalg.norm(M)
    assert np.allclose(U.T @ U, np.eye(6), atol=1e-10)
    assert np.allclose(V.T @ V, np.eye(6), atol=1e-10)


@pytest.mark.parametrize("shape", [(40, 5), (5, 40), (300, 4)])
def test_svd_shapes(rng, shape):
    M = rng.normal(size=shape)
    U, s, V = numkit.svd(M)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert np.linalg.norm(U * s @ V.T - M) <= 1e-8 * np.linalg.norm(M)


def test_svd_empty():
    with pytest.raises(ShapeError):
        numkit.svd(np.zeros((0, 3)))


def test_eigvals_matches_numpy(rng):
    for n in (1, 2, 5, 16, 30):
        A = rng.normal(size=(n, n))
        got = numkit.eigvals(A)
        want = np.linalg.eigvals(A)
        assert np.allclose(np.sort_complex(got), np.sort_complex(want), atol=1e-9 * max(1, np.abs(want).max()))


def test_eigvals_conjugate_pairs_exact():
    lam = numkit.eigvals(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert np.allclose(np.abs(lam), 1.0)
    assert lam[0] == np.conj(lam[1])


def test_eig_vectors(rng):
    A = rng.normal(size=(6, 6))
    lam, W = numkit.eig(A)
    assert np.max(np.abs(A @ W - W * lam)) <= 1e-8 * np.linalg.norm(A)
