"""3-body Hartree equation ``i phi_t + Lap phi + 1/2 phi W[phi] = 0`` on a periodic grid.

``W_i = sum_jl v_ijl |phi_j|^2 |phi_l|^2``.  The nonlinear part is a real,
local phase, so Strang splitting with exact Fourier half-steps is unitary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Grid, check_field, density_contractions, hartree_nonlinearity, laplacian_apply, mass

__all__ = [
    "ConservationError",
    "HartreeTrajectory",
    "hartree_rhs",
    "step_hartree",
    "hartree_energy",
    "solve_hartree",
]


class ConservationError(RuntimeError):
    """Mass drift beyond tolerance; the time step is too large."""


def hartree_rhs(grid: Grid, phi, v) -> np.ndarray:
    """``phi_t = i (Lap phi + 1/2 phi W)``."""
    phi = check_field(grid, phi)
    return 1j * (laplacian_apply(grid, phi) + hartree_nonlinearity(grid, phi, v))


def _free(grid: Grid, phi, t):
    return np.fft.ifft(np.exp(1j * t * grid.laplacian_symbol) * np.fft.fft(phi))


def step_hartree(grid: Grid, phi, v, dt: float) -> np.ndarray:
    """One Strang step: free half step, nonlinear phase, free half step.

    ``dt`` may be negative; the scheme is symmetric, so a ``-dt`` step undoes
    a ``+dt`` step.
    """
    phi = _free(grid, check_field(grid, phi), 0.5 * dt)
    _, W = density_contractions(grid, phi, v)
    phi = phi * np.exp(0.5j * dt * W)
    return _free(grid, phi, 0.5 * dt)


def hartree_energy(grid: Grid, phi, v) -> float:
    """``<phi, -Lap phi> - (1/6) sum v |phi|^2 |phi|^2 |phi|^2``."""
    phi = check_field(grid, phi)
    kinetic = -np.vdot(phi, laplacian_apply(grid, phi)).real
    _, W = density_contractions(grid, phi, v)
    return float(kinetic - np.dot(W, np.abs(phi) ** 2) / 6.0)


@dataclass(frozen=True, eq=False)
class HartreeTrajectory:
    times: np.ndarray
    states: np.ndarray
    dt: float
    mass: np.ndarray
    energy: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))

    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))


def _n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return n


def solve_hartree(grid: Grid, phi0, v, T: float, dt: float, mass_tol: float = 1e-8) -> HartreeTrajectory:
    if not (T > 0 and dt > 0):
        raise ValueError("need T > 0 and dt > 0")
    n = _n_steps(T, dt)
    phi = np.array(check_field(grid, phi0), dtype=complex)
    states = np.empty((n + 1, grid.M), dtype=complex)
    states[0] = phi
    for j in range(n):
        phi = step_hartree(grid, phi, v, dt)
        states[j + 1] = phi
    masses = np.array([mass(s) for s in states])
    energies = np.array([hartree_energy(grid, s, v) for s in states])
    drift = np.max(np.abs(masses - masses[0]))
    if drift > mass_tol:
        raise ConservationError(f"conservation breach: mass drift {drift:.3e} > {mass_tol:.1e}")
    return HartreeTrajectory(dt * np.arange(n + 1), states, dt, masses, energies)
