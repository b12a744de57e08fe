"""Periodic 1-D lattice, 3-body potential tensors and mode-representation helpers.

Conventions
-----------
Fields are stored as ``phi_i = sqrt(dx) * phi(x_i)`` and two-point kernels as
``K_ij = dx * K(x_i, x_j)``.  With these weights, kernel composition is a
plain matrix product, the delta function is the identity matrix, and
``sum(|phi_i|^2)`` is the continuum mass.  Potential tensors carry no weight:
``v_ijl = v(x_i - x_j, x_j - x_l)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "PotentialTensor",
    "GridError",
    "PotentialError",
    "make_grid",
    "build_potential",
    "field_from_function",
    "mass",
    "laplacian_apply",
    "hartree_nonlinearity",
    "check_field",
    "check_kernel",
]


class GridError(ValueError):
    """Invalid grid or a field/kernel that does not live on the given grid."""


class PotentialError(ValueError):
    """Potential specification that violates the 3-body symmetry requirements."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``M`` sites on ``[0, L)``."""

    M: int
    L: float

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise GridError(f"degenerate grid: need M >= 2, got M={self.M}")
        if not self.L > 0:
            raise GridError(f"degenerate grid: need L > 0, got L={self.L}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "L", float(self.L))

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.M) * self.dx

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers ``2 pi n / L`` in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.M, d=self.dx)

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        return -self.wavenumbers**2

    @cached_property
    def laplacian(self) -> np.ndarray:
        """Dense spectral Laplacian in mode representation (real symmetric)."""
        eye = np.eye(self.M)
        lap = np.fft.ifft(self.laplacian_symbol[:, None] * np.fft.fft(eye, axis=0), axis=0)
        lap = lap.real
        lap = 0.5 * (lap + lap.T)
        lap.setflags(write=False)
        return lap

    def periodic_difference(self, a, b) -> np.ndarray:
        """``a - b`` wrapped into ``[-L/2, L/2)``."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return (d + 0.5 * self.L) % self.L - 0.5 * self.L


def make_grid(M: int, L: float) -> Grid:
    return Grid(M, L)


def check_field(grid: Grid, phi) -> np.ndarray:
    phi = np.asarray(phi)
    if phi.shape != (grid.M,):
        raise GridError(f"field shape {phi.shape} does not match grid with M={grid.M}")
    return phi


def check_kernel(grid: Grid, kernel) -> np.ndarray:
    kernel = np.asarray(kernel)
    if kernel.shape != (grid.M, grid.M):
        raise GridError(f"kernel shape {kernel.shape} does not match grid with M={grid.M}")
    return kernel


def field_from_function(grid: Grid, f: Callable[[np.ndarray], np.ndarray], normalize: bool = False) -> np.ndarray:
    """Sample a continuum wavefunction into mode representation."""
    phi = np.sqrt(grid.dx) * np.asarray(f(grid.sites), dtype=complex)
    if normalize:
        phi = phi / np.sqrt(mass(phi))
    return phi


def mass(phi) -> float:
    return float(np.vdot(phi, phi).real)


@dataclass(frozen=True, eq=False)
class PotentialTensor:
    """Real, fully symmetric 3-body potential ``v[i, j, l]`` on a grid."""

    grid: Grid
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        M = self.grid.M
        if v.shape != (M, M, M):
            raise GridError(f"potential shape {v.shape} does not match grid with M={M}")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    def symmetry_residual(self) -> float:
        return max(
            float(np.max(np.abs(self.v - np.transpose(self.v, perm))))
            for perm in itertools.permutations(range(3))
        )

    def __array__(self, dtype=None, copy=None):
        return self.v if dtype is None else self.v.astype(dtype)


def _wrap_profile(grid: Grid, w: Callable) -> np.ndarray:
    """Matrix ``w(x_i - x_j)`` with periodic wrap; rejects non-even ``w``."""
    x = grid.sites
    d = grid.periodic_difference(x[:, None], x[None, :])
    w_fwd = np.asarray(w(d), dtype=float)
    w_bwd = np.asarray(w(grid.periodic_difference(0.0, d)), dtype=float)
    scale = max(1.0, float(np.max(np.abs(w_fwd))))
    if np.max(np.abs(w_fwd - w_bwd)) > 1e-12 * scale:
        raise PotentialError("pair profile w must be even: w(r) != w(-r) on the grid")
    return w_fwd


_PROFILES = {
    "cos": lambda p, L: (lambda r: p.get("amplitude", 1.0) * np.cos(2 * np.pi * p.get("harmonic", 1) * r / L)),
    "gaussian": lambda p, L: (
        lambda r: p.get("amplitude", 1.0) * np.exp(-0.5 * (np.asarray(r) / p.get("width", 1.0)) ** 2)
    ),
}


def build_potential(grid: Grid, spec) -> PotentialTensor:
    """Build a symmetric 3-body potential.

    ``spec`` is a mapping with a ``kind`` key:

    * ``{"kind": "zero"}``
    * ``{"kind": "constant", "value": c}``
    * ``{"kind": "symmetrized-product", "profile": w}`` where ``w`` is an even
      callable of the periodic distance, or a dict
      ``{"name": "cos" | "gaussian", ...}`` giving a named profile.  The result
      is ``w(x-y) w(y-z) + w(y-z) w(z-x) + w(z-x) w(x-y)``.
    * ``{"kind": "table", "values": array}`` for an explicit ``M x M x M`` table,
      which must already be symmetric to 1e-12.
    * ``{"kind": "random-symmetric", "seed": s, "scale": a}``: Gaussian entries
      averaged over the six index permutations (test potentials).
    """
    kind = spec.get("kind")
    M = grid.M
    if kind == "zero":
        v = np.zeros((M, M, M))
    elif kind == "constant":
        v = np.full((M, M, M), float(spec.get("value", 1.0)))
    elif kind == "symmetrized-product":
        profile = spec["profile"]
        if isinstance(profile, dict):
            name = profile.get("name")
            if name not in _PROFILES:
                raise PotentialError(f"unknown profile {name!r}; known: {sorted(_PROFILES)}")
            profile = _PROFILES[name](profile, grid.L)
        w = _wrap_profile(grid, profile)
        # w is symmetric, so w[l, i] = w(z - x)
        v = (
            np.einsum("ij,jl->ijl", w, w)
            + np.einsum("jl,li->ijl", w, w)
            + np.einsum("li,ij->ijl", w, w)
        )
    elif kind == "random-symmetric":
        rng = np.random.default_rng(spec.get("seed", 0))
        raw = float(spec.get("scale", 1.0)) * rng.standard_normal((M, M, M))
        v = sum(raw.transpose(p) for p in itertools.permutations(range(3))) / 6.0
    elif kind == "table":
        v = np.asarray(spec["values"], dtype=float)
        if v.shape != (M, M, M):
            raise PotentialError(f"table shape {v.shape} does not match grid with M={M}")
        pot = PotentialTensor(grid, v)
        if pot.symmetry_residual() > 1e-12:
            raise PotentialError(
                f"table violates 3-body permutation symmetry (residual {pot.symmetry_residual():.3e})"
            )
        return pot
    else:
        raise PotentialError(f"unknown potential kind {kind!r}")
    return PotentialTensor(grid, v)


def laplacian_apply(grid: Grid, f) -> np.ndarray:
    """Spectral Laplacian of a field, or of a kernel in its first variable."""
    f = np.asarray(f)
    if f.ndim == 1:
        check_field(grid, f)
        return np.fft.ifft(grid.laplacian_symbol * np.fft.fft(f))
    check_kernel(grid, f)
    return np.fft.ifft(grid.laplacian_symbol[:, None] * np.fft.fft(f, axis=0), axis=0)


def _potential_array(grid: Grid, v) -> np.ndarray:
    if isinstance(v, PotentialTensor):
        if v.grid != grid:
            raise GridError("potential lives on a different grid")
        return v.v
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.M,) * 3:
        raise GridError(f"potential shape {v.shape} does not match grid with M={grid.M}")
    return v


def density_contractions(grid: Grid, phi, v):
    """Return ``(rho, W)`` with ``rho_ij = sum_l v_ijl |phi_l|^2`` and
    ``W_i = sum_jl v_ijl |phi_j|^2 |phi_l|^2``."""
    v = _potential_array(grid, v)
    n = np.abs(check_field(grid, phi)) ** 2
    rho = v @ n
    return rho, rho @ n


def hartree_nonlinearity(grid: Grid, phi, v) -> np.ndarray:
    """``psi_i = 1/2 phi_i sum_jl v_ijl |phi_j|^2 |phi_l|^2``."""
    _, W = density_contractions(grid, phi, v)
    return 0.5 * np.asarray(phi) * W
