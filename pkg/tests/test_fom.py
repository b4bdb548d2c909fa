import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbrom import fom, rom
from hbrom.exceptions import ConfigError, PositivityError


def weno_js(v):
    # Jiang-Shu weights written out stencil by stencil
    eps = 1e-6
    polys = [
        (1 / 3) * v[0] - (7 / 6) * v[1] + (11 / 6) * v[2],
        -(1 / 6) * v[1] + (5 / 6) * v[2] + (1 / 3) * v[3],
        (1 / 3) * v[2] + (5 / 6) * v[3] - (1 / 6) * v[4],
    ]
    smooth = [
        (13 / 12) * (v[0] - 2 * v[1] + v[2]) ** 2 + (1 / 4) * (v[0] - 4 * v[1] + 3 * v[2]) ** 2,
        (13 / 12) * (v[1] - 2 * v[2] + v[3]) ** 2 + (1 / 4) * (v[1] - v[3]) ** 2,
        (13 / 12) * (v[2] - 2 * v[3] + v[4]) ** 2 + (1 / 4) * (3 * v[2] - 4 * v[3] + v[4]) ** 2,
    ]
    alphas = [d / (eps + b) ** 2 for d, b in zip((0.1, 0.6, 0.3), smooth)]
    return sum(a * p for a, p in zip(alphas, polys)) / sum(alphas)


def total_variation(frame):
    return np.abs(np.diff(frame, axis=0)).sum() + np.abs(np.diff(frame, axis=1)).sum()


# ---------------------------------------------------------------- KPP pieces


def test_kpp_flux_values():
    assert fom.kpp_flux(0.0) == (0.0, 1.0)
    s, c = fom.kpp_flux(math.pi / 2)
    assert s == 1.0 and abs(c) < 1e-16
    s, c = fom.kpp_flux(math.pi / 4)
    assert s == pytest.approx(math.sqrt(2) / 2) and c == pytest.approx(math.sqrt(2) / 2)


def test_kpp_initial_data():
    assert fom.kpp_initial(0.0, 0.0) == 14 * math.pi / 4
    assert fom.kpp_initial(2.0, 0.0) == math.pi / 4
    assert fom.kpp_initial(1.0, 0.0) == math.pi / 4


def test_weno_constant_and_linear():
    assert fom.weno5_reconstruct([2.5] * 5) == 2.5
    assert fom.weno5_reconstruct([1, 2, 3, 4, 5]) == pytest.approx(3.5, abs=1e-6)


def test_weno_jump_against_reference():
    got = fom.weno5_reconstruct([0, 0, 0, 1, 1])
    assert 0 <= got <= 1 and got < 0.5
    assert got == pytest.approx(weno_js([0, 0, 0, 1, 1]), abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5))
def test_weno_matches_reference(v):
    assert fom.weno5_reconstruct(v) == pytest.approx(weno_js(v), rel=1e-12, abs=1e-12)


def test_weno_vectorized(rng):
    V = rng.normal(size=(5, 7))
    out = fom.weno5_reconstruct(V)
    assert np.allclose(out, [weno_js(V[:, j]) for j in range(7)], rtol=1e-12)


def test_llf_examples():
    assert fom.llf_flux(0.3, 0.3, 1.0) == fom.kpp_flux(0.3)
    fx = fom.llf_flux(0.0, math.pi, 1.0, np.sin)[0]
    assert fx == pytest.approx(-math.pi / 2, abs=1e-15)
    fx, fy = fom.llf_flux(0.2, 1.1, 0.0)
    assert fx == pytest.approx(0.5 * (math.sin(0.2) + math.sin(1.1)))
    assert fy == pytest.approx(0.5 * (math.cos(0.2) + math.cos(1.1)))
    with pytest.raises(ValueError):
        fom.llf_flux(0.0, 1.0, -1.0)


def test_kpp_constant_state_preserved():
    cfg = fom.KppConfig(grid=fom.Grid2D(10, 10), t_final=1.0, n_snapshots=5)
    snap = fom.kpp_simulate(cfg, initial=np.full((10, 10), math.pi / 4))
    assert np.max(np.abs(snap.data - math.pi / 4)) <= 1e-12


def test_kpp_config_errors():
    with pytest.raises(ConfigError):
        fom.KppConfig(cfl=1.5)
    with pytest.raises(ConfigError):
        fom.KppConfig(reconstruction="weno7")
    with pytest.raises(ConfigError):
        fom.kpp_simulate(fom.KppConfig(grid=fom.Grid2D(4, 4)), initial=np.zeros((3, 3)))


def test_kpp_desk_shape_and_determinism(kpp_desk):
    assert (kpp_desk.n_t, kpp_desk.n_dof) == (300, 1024)
    again = fom.kpp_simulate(fom.KppConfig.desk())
    assert np.array_equal(again.data, kpp_desk.data)


@pytest.mark.slow
def test_kpp_full_run_bounds_and_total_variation(kpp_full):
    snap, _ = kpp_full
    assert snap.data.shape == (1250, 2500)
    assert snap.data.min() >= math.pi / 4 - 0.5
    assert snap.data.max() <= 14 * math.pi / 4 + 0.5
    low = fom.kpp_simulate(fom.KppConfig.paper(reconstruction="first_order"))
    tv = lambda s: sum(total_variation(row.reshape(50, 50)) for row in s.data)
    assert tv(low) < tv(snap)


# ---------------------------------------------------------------- Euler pieces


def test_euler_initial_data():
    p = fom.EulerParams(2.0, 3.0)
    rho, u, pr = fom.conserved_to_primitive(fom.euler_initial(p, np.array([-4.5, 0.5, 1.0])))
    assert np.allclose([rho[0], u[0], pr[0]], [3.0, 2.0, 31 / 3])
    assert np.allclose([rho[1], u[1], pr[1]], [1.2, 0.0, 1.0])
    assert np.allclose([rho[2], u[2], pr[2]], [1.0, 0.0, 1.0])


def test_hll_consistency_and_supersonic(rng):
    for _ in range(10):
        U = fom.primitive_to_conserved(rng.uniform(0.1, 3), rng.uniform(-2, 2), rng.uniform(0.1, 5))
        assert np.array_equal(fom.hll_flux(U, U), fom.euler_flux(U))
    UL = fom.primitive_to_conserved(1.0, 5.0, 1.0)
    UR = fom.primitive_to_conserved(0.5, 4.0, 0.8)
    assert np.array_equal(fom.hll_flux(UL, UR), fom.euler_flux(UL))


def test_hll_sod_hand_formula():
    UL = fom.primitive_to_conserved(1.0, 0.0, 1.0)
    UR = fom.primitive_to_conserved(0.125, 0.0, 0.1)
    s = math.sqrt(1.4)
    # symmetric wave speeds -s, s: F = (FL + FR)/2 - s/2 (UR - UL)
    want = [0.4375 * s, 0.55, 1.125 * s]
    assert np.allclose(fom.hll_flux(UL, UR), want, rtol=1e-14)


def test_hll_rejects_inadmissible():
    with pytest.raises(PositivityError):
        fom.hll_flux(np.array([1.0, 0.0, -1.0]), np.array([1.0, 0.0, 2.5]))


def test_euler_constant_state():
    cfg = fom.EulerConfig(n_cells=40, t_final=0.3, n_snapshots=4)
    U0 = np.tile(fom.primitive_to_conserved(2.0, 1.5, 3.0)[:, None], (1, 40))
    snap = fom.euler_simulate(fom.EulerParams(2.5, 3.5), cfg, initial=U0)
    assert np.max(np.abs(snap.data - snap.data[0])) <= 1e-12


def test_euler_param_validation():
    with pytest.raises(ConfigError):
        fom.EulerParams(5.0, 3.0)
    with pytest.raises(PositivityError):
        fom.euler_simulate(fom.EulerParams(2, 3), fom.EulerConfig(n_cells=10), initial=-np.ones((3, 10)))


def test_euler_ensemble_positive_and_distinct(euler_desk_ensemble):
    assert len(euler_desk_ensemble) == 20
    for snap in euler_desk_ensemble:
        assert (snap.n_t, snap.n_dof) == (180, 600)
        rho, _, p = fom.conserved_to_primitive(snap.data.reshape(180, 3, 200).transpose(1, 0, 2))
        assert rho.min() > 0 and p.min() > 0
    a, b = euler_desk_ensemble[0], euler_desk_ensemble[-1]
    assert np.linalg.norm(a.data - b.data) > 0


def test_grids():
    desk, full = fom.euler_desk_grid(), fom.euler_paper_grid()
    assert len(desk) == 20 and len(full) == 100
    assert len({(p.eta_u, p.eta_rho) for p in full}) == 100


# ---------------------------------------------------------------- synthetic VKS


def _info(snap, r):
    fluct, mean = rom.center_snapshots(snap)
    lam = np.linalg.svd(fluct.data, compute_uv=False) ** 2
    return rom.relative_info(lam, r)


def test_vks_single_frequency_rank_two():
    snap = fom.synthetic_vks(n_t=200, frequencies=(0.3,), transient_len=0)
    assert _info(snap, 2) == pytest.approx(1.0, abs=1e-12)


def test_vks_two_frequencies_rank_four():
    snap = fom.synthetic_vks(n_t=300, transient_len=0)
    assert _info(snap, 4) == pytest.approx(1.0, abs=1e-10)


def test_vks_transient_then_steady():
    snap = fom.synthetic_vks()
    x = 2 * np.pi * np.arange(256) / 256
    base = snap.data @ np.cos(3 * x) / 128
    assert np.all(np.diff(base[:101]) < 0)
    assert np.allclose(base[100:], 0, atol=1e-12)
    energy = np.sum(snap.data[100:] ** 2, axis=1)
    assert np.allclose(energy, energy[0], rtol=1e-10)


def test_vks_deterministic_and_errors():
    assert np.array_equal(fom.synthetic_vks().data, fom.synthetic_vks().data)
    with pytest.raises(ValueError):
        fom.synthetic_vks(n_t=10, transient_len=20)
