"""Shared fixtures and the acceptance summary printed after the run.

Tests marked ``@pytest.mark.criterion(n, title)`` are collected into a
table of pass/fail lines; a test can attach a measured value with
``record_property("detail", "...")``.
"""
import time

import numpy as np
import pytest

from hbrom import fom, rom

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    failed = rep.failed
    if rep.when == "call" or (failed and rep.when == "setup"):
        detail = dict(item.user_properties).get("detail", "")
        _RESULTS[n] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, title, detail = _RESULTS[n]
        line = f"[{status}] criterion {n:2d}: {title}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def kpp_full():
    """Full-size KPP run (50 x 50, T = 10) and its wall time in seconds."""
    t0 = time.perf_counter()
    snap = fom.kpp_simulate(fom.KppConfig.paper())
    return snap, time.perf_counter() - t0


@pytest.fixture(scope="session")
def kpp_desk():
    return fom.kpp_simulate(fom.KppConfig.desk())


@pytest.fixture(scope="session")
def kpp_desk_pod(kpp_desk):
    fluct, mean = rom.center_snapshots(kpp_desk)
    return rom.pod_fit(fluct, 8, mean=mean)


@pytest.fixture(scope="session")
def euler_desk_ensemble():
    return fom.euler_ensemble(fom.euler_desk_grid(), fom.EulerConfig.desk())


@pytest.fixture(scope="session")
def vks_coeffs():
    snap = fom.synthetic_vks()
    fluct, mean = rom.center_snapshots(snap)
    with pytest.warns(rom.RankDeficiencyWarning):
        basis = rom.pod_fit(fluct, 8, mean=mean)
    return basis.coeffs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
