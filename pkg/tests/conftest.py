import math

import numpy as np
import pytest

from bosepair.experiment import RunConfig, solve_trajectories
from bosepair.lattice import build_potential, make_grid

COS_POTENTIAL = {"kind": "symmetrized-product", "profile": {"name": "cos", "amplitude": 0.4}}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid4():
    return make_grid(4, 2 * math.pi)


@pytest.fixture(scope="session")
def cos_potential(grid4):
    return build_potential(grid4, COS_POTENTIAL)


@pytest.fixture(scope="session")
def short_run():
    """M=4, T=0.1 trajectories shared by the pair, cancellation and experiment tests."""
    cfg = RunConfig(T=0.1, dt=1e-3, N_list=(2, 4), report_every=50, norm_stride=10)
    return cfg, solve_trajectories(cfg)


def random_field(rng, M):
    return rng.standard_normal(M) + 1j * rng.standard_normal(M)


def random_symmetric(rng, M, scale=1.0):
    k = scale * (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M)))
    return 0.5 * (k + k.T)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line; the lines are repeated in the terminal summary."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
