"""Pair-excitation kernel ``k(t)`` and the derived kernels ``g, m, u, c, d``.

The unknown is ``k`` itself.  ``u = sinh(k)`` and ``c = cosh(k)`` (with the
alternating ``k, conj(k)`` series) are the off-diagonal and diagonal blocks
of ``exp([[0, k], [conj(k), 0]])``, and their time derivatives are Frechet
derivatives of that block exponential.  At each RK4 stage ``kdot`` solves the
real-linear system "pair-creation coefficient = 0".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .lattice import Grid, _potential_array, check_field, density_contractions

__all__ = [
    "PairState",
    "PairTrajectory",
    "SingularSolveError",
    "kernel_g",
    "kernel_m",
    "sinh_cosh",
    "sinh_cosh_dot",
    "coeff_residual",
    "quotient_residual",
    "hyperbolic_residual",
    "solve_kdot",
    "step_k",
    "solve_pairex",
    "kernel_d",
    "chi0",
    "chi1",
]


class SingularSolveError(np.linalg.LinAlgError):
    """The kdot system is rank deficient (poor cosh conditioning or dt too large)."""


def kernel_g(grid: Grid, phi, v) -> np.ndarray:
    """``g = -Lap - rho_ij conj(phi_i) phi_j - W_i delta_ij / 2``."""
    phi = check_field(grid, phi)
    rho, W = density_contractions(grid, phi, v)
    return -grid.laplacian - rho * np.outer(phi.conj(), phi) - 0.5 * np.diag(W)


def kernel_m(grid: Grid, phi, v) -> np.ndarray:
    """``m = rho_ij conj(phi_i) conj(phi_j)``."""
    phi = check_field(grid, phi)
    rho, _ = density_contractions(grid, phi, v)
    return rho * np.outer(phi.conj(), phi.conj())


def _block(k, kdot=None):
    M = k.shape[0]
    K = np.zeros((2 * M, 2 * M), dtype=complex)
    K[:M, M:] = k
    K[M:, :M] = np.conj(k)
    return K


def sinh_cosh(k) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(u, c) = (sinh(k), cosh(k))`` from the block exponential."""
    k = np.asarray(k, dtype=complex)
    M = k.shape[0]
    E = expm(_block(k))
    return E[:M, M:], E[:M, :M]


def sinh_cosh_dot(k, kdot) -> tuple[np.ndarray, np.ndarray]:
    """Directional derivatives ``(u_t, c_t)`` along ``kdot``.

    Uses ``expm([[K, E], [0, K]])``, whose upper-right block is the Frechet
    derivative of ``expm`` at ``K`` in direction ``E``.
    """
    k = np.asarray(k, dtype=complex)
    M = k.shape[0]
    K, E = _block(k), _block(np.asarray(kdot, dtype=complex))
    big = np.block([[K, E], [np.zeros_like(K), K]])
    L = expm(big)[: 2 * M, 2 * M :]
    return L[:M, M:], L[:M, :M]


def hyperbolic_residual(u, c) -> float:
    """``max |c c - u conj(u) - I|``."""
    return float(np.max(np.abs(c @ c - u @ u.conj() - np.eye(c.shape[0]))))


def _coeff_static(u, c, g, m):
    """kdot-independent part of the pair-creation coefficient."""
    return u @ g.T @ c.conj() + g @ u @ c.conj() + (c @ g - g @ c) @ u - u @ m.conj() @ u - c @ m @ c.conj()


def coeff_residual(k, kdot, g, m, u=None, c=None) -> np.ndarray:
    """Pair-creation coefficient

    ``(i u_t + u g^T + g u) conj(c) - (i c_t - [c, g]) u - u conj(m) u - c m conj(c)``.
    """
    if u is None or c is None:
        u, c = sinh_cosh(k)
    u_t, c_t = sinh_cosh_dot(k, kdot)
    return 1j * (u_t @ c.conj() - c_t @ u) + _coeff_static(u, c, g, m)


def quotient_residual(k, kdot, g, m, u=None, c=None) -> np.ndarray:
    """``(i u_t + u g^T + g u - (I+p) m) - (i p_t + [g, p] + u conj(m)) (I+p)^{-1} u``."""
    if u is None or c is None:
        u, c = sinh_cosh(k)
    u_t, c_t = sinh_cosh_dot(k, kdot)
    lhs = 1j * u_t + u @ g.T + g @ u - c @ m
    rhs = (1j * c_t + g @ c - c @ g + u @ m.conj()) @ np.linalg.solve(c, u)
    return lhs - rhs


def kernel_d(k, kdot, g, m, u=None, c=None) -> np.ndarray:
    """``d = (i u_t + u g^T + g u) conj(u) - (i c_t + [g, c]) c - u conj(m) c - c m conj(u)``."""
    if u is None or c is None:
        u, c = sinh_cosh(k)
    u_t, c_t = sinh_cosh_dot(k, kdot)
    return (
        (1j * u_t + u @ g.T + g @ u) @ u.conj()
        - (1j * c_t + g @ c - c @ g) @ c
        - u @ m.conj() @ c
        - c @ m @ u.conj()
    )


def _sym_basis(M: int):
    basis = []
    for i in range(M):
        for j in range(i, M):
            E = np.zeros((M, M))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def solve_kdot(k, g, m, rcond: float = 1e-10) -> np.ndarray:
    """Solve ``coeff_residual(k, kdot) = 0`` for symmetric ``kdot``.

    The map ``kdot -> i (u_t conj(c) - c_t u)`` is real-linear; its matrix is
    built column by column on the real and imaginary symmetric directions.
    """
    k = np.asarray(k, dtype=complex)
    M = k.shape[0]
    u, c = sinh_cosh(k)
    rhs = -_coeff_static(u, c, g, m)
    basis = _sym_basis(M)
    cols = []
    for E in basis:
        for z in (1.0, 1j):
            u_t, c_t = sinh_cosh_dot(k, z * E)
            J = 1j * (u_t @ c.conj() - c_t @ u)
            cols.append(np.concatenate([J.real.ravel(), J.imag.ravel()]))
    A = np.array(cols).T
    b = np.concatenate([rhs.real.ravel(), rhs.imag.ravel()])
    x, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if sv[-1] < rcond * sv[0]:
        raise SingularSolveError(f"kdot system is singular (condition {sv[0] / sv[-1]:.3e})")
    kdot = np.zeros((M, M), dtype=complex)
    for n, E in enumerate(basis):
        kdot += (x[2 * n] + 1j * x[2 * n + 1]) * E
    return kdot


@dataclass(frozen=True, eq=False)
class PairState:
    t: float
    k: np.ndarray
    u: np.ndarray
    c: np.ndarray
    kdot: np.ndarray | None = None

    @classmethod
    def from_k(cls, t, k, kdot=None):
        k = np.asarray(k, dtype=complex)
        u, c = sinh_cosh(k)
        return cls(t, k, u, c, kdot)

    @property
    def p(self) -> np.ndarray:
        return self.c - np.eye(self.c.shape[0])


def _rate(grid, v, phi, k):
    return solve_kdot(k, kernel_g(grid, phi, v), kernel_m(grid, phi, v))


def step_k(grid: Grid, ps: PairState, phi_stages, v, dt: float) -> PairState:
    """One RK4 step.  ``phi_stages = (phi(t), phi(t + dt/2), phi(t + dt))``.

    ``ps.kdot`` is filled in for the starting state; the returned state has
    ``kdot = None`` until the next step (or :func:`with_rate`) computes it.
    """
    p0, ph, p1 = phi_stages
    k = ps.k
    k1 = ps.kdot if ps.kdot is not None else _rate(grid, v, p0, k)
    k2 = _rate(grid, v, ph, k + 0.5 * dt * k1)
    k3 = _rate(grid, v, ph, k + 0.5 * dt * k2)
    k4 = _rate(grid, v, p1, k + dt * k3)
    k_new = k + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return PairState.from_k(ps.t + dt, k_new)


def with_rate(grid: Grid, ps: PairState, phi, v) -> PairState:
    return PairState(ps.t, ps.k, ps.u, ps.c, _rate(grid, v, phi, ps.k))


@dataclass(eq=False)
class PairTrajectory:
    """``k`` and solved ``kdot`` on the uniform time grid ``times``."""

    times: np.ndarray
    k: np.ndarray
    kdot: np.ndarray
    phis: np.ndarray
    dt: float
    symmetry_defect: np.ndarray = field(default=None)

    def state(self, n: int) -> PairState:
        return PairState.from_k(self.times[n], self.k[n], self.kdot[n])


def solve_pairex(grid: Grid, v, phis_half, dt: float, k0=None) -> PairTrajectory:
    """Integrate the k-equation with RK4 from ``k0`` (default 0).

    ``phis_half[j]`` is the Hartree field at time ``j * dt / 2``; the output
    grid has ``(len(phis_half) - 1) // 2 + 1`` points spaced ``dt``.
    """
    phis_half = np.asarray(phis_half, dtype=complex)
    n_steps = (phis_half.shape[0] - 1) // 2
    M = grid.M
    k0 = np.zeros((M, M), dtype=complex) if k0 is None else np.asarray(k0, dtype=complex)
    ks = np.empty((n_steps + 1, M, M), dtype=complex)
    kd = np.empty_like(ks)
    defect = np.zeros(n_steps + 1)
    ps = with_rate(grid, PairState.from_k(0.0, k0), phis_half[0], v)
    for n in range(n_steps):
        ks[n], kd[n] = ps.k, ps.kdot
        nxt = step_k(grid, ps, phis_half[2 * n : 2 * n + 3], v, dt)
        defect[n + 1] = float(np.max(np.abs(nxt.k - nxt.k.T)))
        ps = with_rate(grid, nxt, phis_half[2 * n + 2], v)
    ks[n_steps], kd[n_steps] = ps.k, ps.kdot
    times = dt * np.arange(n_steps + 1)
    return PairTrajectory(times, ks, kd, phis_half[::2].copy(), dt, defect)


def chi0(grid: Grid, phi, v) -> float:
    """``(1/3) sum v_ijl |phi_i|^2 |phi_j|^2 |phi_l|^2``."""
    phi = check_field(grid, phi)
    n = np.abs(phi) ** 2
    return float(np.einsum("ijl,i,j,l->", _potential_array(grid, v), n, n, n) / 3.0)


def chi1(d) -> float:
    """Phase rate ``+tr(d) / 2`` (real part).

    Writing the symmetrized ``d`` term in normal order leaves the constant
    ``-tr(d)/2`` in the quadratic generator, so ``<Omega, L_Q Omega> = -tr(d)/2``;
    removing it from ``L`` requires ``chi1 = +tr(d)/2``.
    """
    return float(0.5 * np.trace(d).real)
