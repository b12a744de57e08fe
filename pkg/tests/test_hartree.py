import math

import numpy as np
import pytest

from bosepair.hartree import ConservationError, hartree_energy, solve_hartree, step_hartree
from bosepair.lattice import build_potential, field_from_function, make_grid, mass

COS = {"kind": "symmetrized-product", "profile": {"name": "cos", "amplitude": 0.4}}


def _phi0(g):
    return field_from_function(
        g, lambda x: 1 + 0.5 * np.cos(x) + 0.3j * np.sin(x) + 0.2 * np.cos(2 * x), normalize=True
    )


def test_free_evolution_matches_fourier_solution():
    g = make_grid(8, 2 * math.pi)
    phi0 = _phi0(g)
    tr = solve_hartree(g, phi0, build_potential(g, {"kind": "zero"}), 1.0, 1e-2)
    # i phi_t + Lap phi = 0: each Fourier mode picks up exp(-i n^2 t)
    exact = np.fft.ifft(np.exp(1j * g.laplacian_symbol) * np.fft.fft(phi0))
    assert np.max(np.abs(tr.final - exact)) < 1e-12


def test_conservation_on_fine_grid():
    g = make_grid(8, 2 * math.pi)
    tr = solve_hartree(g, _phi0(g), build_potential(g, COS), 1.0, 1e-3)
    assert tr.mass_drift() <= 1e-10
    assert tr.energy_drift() <= 1e-8


def test_strang_order():
    g = make_grid(8, 2 * math.pi)
    v = build_potential(g, COS)
    phi0 = _phi0(g)
    ref = solve_hartree(g, phi0, v, 0.5, 1e-4).final
    errs = [np.linalg.norm(solve_hartree(g, phi0, v, 0.5, dt).final - ref) for dt in (1e-2, 5e-3)]
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_time_reversal():
    g = make_grid(6, 2 * math.pi)
    v = build_potential(g, COS)
    phi = _phi0(g)
    back = step_hartree(g, step_hartree(g, phi, v, 0.05), v, -0.05)
    np.testing.assert_allclose(back, phi, atol=1e-13)


def test_conservation_breach_is_raised():
    g = make_grid(8, 2 * math.pi)
    with pytest.raises(ConservationError, match="conservation breach"):
        solve_hartree(g, _phi0(g), build_potential(g, COS), 0.1, 0.05, mass_tol=0.0)


def test_plane_wave_energy():
    g = make_grid(8, 2 * math.pi)
    phi = field_from_function(g, lambda x: np.exp(2j * x), normalize=True)
    # kinetic n^2 with unit mass; v = 0
    assert hartree_energy(g, phi, build_potential(g, {"kind": "zero"})) == pytest.approx(4.0)
    assert mass(phi) == pytest.approx(1.0)


def test_bad_step():
    g = make_grid(4, 1.0)
    with pytest.raises(ValueError):
        solve_hartree(g, np.ones(4), build_potential(g, {"kind": "zero"}), 1.0, 0.3)
