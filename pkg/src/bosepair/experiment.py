"""End-to-end check of the mean-field + pair-excitation error estimate.

For each particle number ``N`` the exact state ``exp(i t H_N) exp(-sqrt(N) A(0)) Omega``
is compared with ``exp(-sqrt(N) A(t)) exp(-B(t)) exp(-i theta(t)) Omega`` where
``theta = int_0^t (N chi0 + chi1) ds``.  The right-hand side

    int f / (6 N^{3/2}) + int g / (6 N^2) + int h / (12 N) + int i / (36 N^{1/2})

uses ``f, g, h, i = |e^B C e^{-B} Omega|`` for ``C = [A,V], V, [A,[A,V]], [A,[A,[A,V]]]``.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from .coherent import apply_exp, coherent_state, op_A, op_B
from .commutators import closed_form, interaction_operator
from .fock import DimensionBudgetError, FockSpace, assemble_H, evolve, one_body, operator_from_tensor, vacuum
from .hartree import HartreeTrajectory, solve_hartree
from .lattice import Grid, PotentialTensor, build_potential, check_field, density_contractions, make_grid, mass
from .pairex import (
    PairState,
    PairTrajectory,
    chi0,
    chi1,
    coeff_residual,
    kernel_d,
    kernel_g,
    kernel_m,
    solve_pairex,
)

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "EstimateReport",
    "Trajectories",
    "make_field",
    "solve_trajectories",
    "conjugated_norms",
    "norm_series",
    "phase_series",
    "approximate_state",
    "lhs_error",
    "rhs_bound",
    "ltilde_check",
    "cancellation_check",
    "default_cutoff",
    "tail_mass",
    "run_sweep",
    "fit_slope",
]

NORM_NAMES = ("f", "g", "h", "i")
RHS_COEFF = {"f": (1 / 6, 1.5), "g": (1 / 6, 2.0), "h": (1 / 12, 1.0), "i": (1 / 36, 0.5)}


@dataclass(frozen=True)
class RunConfig:
    M: int = 4
    L: float = 2 * math.pi
    potential: dict = field(
        default_factory=lambda: {"kind": "symmetrized-product", "profile": {"name": "cos", "amplitude": 0.4}}
    )
    phi0: dict = field(
        default_factory=lambda: {"kind": "trig", "cos": [1.0, 0.5, 0.2], "sin": [0.0, [0.0, 0.3]]}
    )
    N_list: tuple = (2, 4, 8, 16)
    T: float = 0.5
    dt: float = 1e-3
    report_every: int = 100
    norm_stride: int = 1
    norm_n_max: int = 10
    cutoff_extra: int = 4
    cutoff_sigmas: float = 6.0
    max_dim: int = 2_000_000
    tail_coherent: float = 1e-8
    tail_state: float = 1e-6
    krylov_tol: float = 1e-12
    slope_max: float = -0.4

    def __post_init__(self):
        if not self.N_list:
            raise ValueError("N_list must be nonempty")
        for name in ("L", "T", "dt", "tail_coherent", "tail_state", "krylov_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.report_every < 1 or self.norm_stride < 1:
            raise ValueError("report_every and norm_stride must be >= 1")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        if n % self.norm_stride:
            raise ValueError("norm_stride must divide the number of steps")
        object.__setattr__(self, "N_list", tuple(sorted(self.N_list)))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def grid(self) -> Grid:
        return make_grid(self.M, self.L)


def _as_complex(x) -> complex:
    if isinstance(x, (list, tuple)):
        return complex(x[0], x[1])
    return complex(x)


def make_field(grid: Grid, spec: dict) -> np.ndarray:
    """Initial field of unit mass (or ``spec["mass"]``).

    Kinds: ``plane-wave`` (``harmonic``), ``trig`` (``cos``/``sin`` coefficient
    lists, complex entries as ``[re, im]``), ``gaussian`` (``center``,
    ``width``, ``harmonic``), ``random-smooth`` (``seed``, ``modes``).
    """
    kind = spec.get("kind")
    x = grid.sites
    if kind == "plane-wave":
        vals = np.exp(2j * np.pi * spec.get("harmonic", 1) * x / grid.L)
    elif kind == "trig":
        vals = np.zeros(grid.M, dtype=complex)
        for n, a in enumerate(spec.get("cos", [])):
            vals += _as_complex(a) * np.cos(2 * np.pi * n * x / grid.L)
        for n, b in enumerate(spec.get("sin", [])):
            vals += _as_complex(b) * np.sin(2 * np.pi * n * x / grid.L)
    elif kind == "gaussian":
        d = grid.periodic_difference(x, spec.get("center", grid.L / 2))
        vals = np.exp(-0.5 * (d / spec.get("width", 1.0)) ** 2 + 2j * np.pi * spec.get("harmonic", 0) * x / grid.L)
    elif kind == "random-smooth":
        rng = np.random.default_rng(spec.get("seed", 0))
        modes = min(int(spec.get("modes", 2)), grid.M // 2)
        vals = np.zeros(grid.M, dtype=complex)
        for n in range(-modes, modes + 1):
            c = complex(rng.normal(), rng.normal()) / (1 + abs(n))
            vals += c * np.exp(2j * np.pi * n * x / grid.L)
    else:
        raise ValueError(f"unknown phi0 kind {kind!r}")
    phi = np.sqrt(grid.dx) * vals
    if mass(phi) == 0:
        raise ValueError("initial field vanishes")
    return phi * np.sqrt(spec.get("mass", 1.0) / mass(phi))


@dataclass(eq=False)
class Trajectories:
    """N-independent data: Hartree field and pair kernel on the run grid."""

    grid: Grid
    potential: PotentialTensor
    hartree: HartreeTrajectory
    pair: PairTrajectory

    @property
    def times(self) -> np.ndarray:
        return self.pair.times

    @property
    def phis(self) -> np.ndarray:
        return self.pair.phis


def solve_trajectories(config: RunConfig) -> Trajectories:
    """Hartree at step ``dt/2`` (RK4 stage points), then the k-equation at ``dt``."""
    grid = config.grid
    pot = build_potential(grid, config.potential)
    phi0 = make_field(grid, config.phi0)
    hs = solve_hartree(grid, phi0, pot, config.T, config.dt / 2)
    pair = solve_pairex(grid, pot, hs.states, config.dt)
    return Trajectories(grid, pot, hs, pair)


def _d_at(grid, pot, phi, ps: PairState):
    return kernel_d(ps.k, ps.kdot, kernel_g(grid, phi, pot), kernel_m(grid, phi, pot), ps.u, ps.c)


def phase_series(tr: Trajectories) -> dict:
    """``chi0(t)``, ``chi1(t)`` and the imaginary part of ``tr d`` along the run."""
    grid, pot = tr.grid, tr.potential
    c0, c1, im = [], [], []
    for n, phi in enumerate(tr.phis):
        d = _d_at(grid, pot, phi, tr.pair.state(n))
        c0.append(chi0(grid, phi, pot))
        c1.append(chi1(d))
        im.append(float(np.trace(d).imag))
    return {"chi0": np.array(c0), "chi1": np.array(c1), "trace_d_imag": np.array(im)}


def phase_integral(times, chi0s, chi1s, N, upto: int) -> float:
    """``int_0^t (N chi0 + chi1) ds`` by the trapezoid rule on the run grid."""
    if upto == 0:
        return 0.0
    return float(trapezoid(N * chi0s[: upto + 1] + chi1s[: upto + 1], times[: upto + 1]))


def tail_mass(space: FockSpace, psi) -> float:
    """Probability in the top particle-number layer ``n = n_max``."""
    return float(np.sum(np.abs(psi[space.totals == space.n_max]) ** 2))


def conjugated_norms(space: FockSpace, grid: Grid, k, phi, v, tol: float = 1e-12) -> dict:
    """``|e^B C e^{-B} Omega|`` for ``C`` in (level 1, V, level 2, level 3), named f, g, h, i."""
    B = op_B(space, k)
    w = apply_exp(B, -1.0, vacuum(space), tol=tol)
    ops = {
        "f": closed_form(space, grid, phi, v, 1),
        "g": interaction_operator(space, grid, v),
        "h": closed_form(space, grid, phi, v, 2),
        "i": closed_form(space, grid, phi, v, 3),
    }
    return {name: float(np.linalg.norm(apply_exp(B, 1.0, C @ w, tol=tol))) for name, C in ops.items()}


def norm_series(tr: Trajectories, n_max: int, stride: int = 1, tol: float = 1e-12) -> dict:
    """f, g, h, i sampled every ``stride`` steps on a small Fock space."""
    space = FockSpace(tr.grid.M, n_max)
    idx = np.arange(0, len(tr.times), stride)
    out = {name: np.empty(idx.size) for name in NORM_NAMES}
    tails = np.empty(idx.size)
    for j, n in enumerate(idx):
        vals = conjugated_norms(space, tr.grid, tr.pair.k[n], tr.phis[n], tr.potential, tol)
        for name in NORM_NAMES:
            out[name][j] = vals[name]
        tails[j] = tail_mass(space, apply_exp(op_B(space, tr.pair.k[n]), -1.0, vacuum(space), tol=tol))
    out["t"] = tr.times[idx]
    out["squeeze_tail"] = tails
    return out


def rhs_bound(times, series: dict, N: float, upto_time: float | None = None) -> dict:
    """Trapezoid integrals of f, g, h, i up to ``upto_time`` and the combined bound."""
    times = np.asarray(times)
    mask = times <= (times[-1] if upto_time is None else upto_time) + 1e-12
    ints = {
        name: float(trapezoid(np.asarray(series[name])[mask], times[mask])) if mask.sum() > 1 else 0.0
        for name in NORM_NAMES
    }
    rhs = sum(c * ints[name] / N**p for name, (c, p) in RHS_COEFF.items())
    return {"rhs": rhs, **{f"{name}_int": ints[name] for name in NORM_NAMES}}


def approximate_state(space: FockSpace, phi, k, theta: float, N: float, tol: float = 1e-12) -> np.ndarray:
    """``exp(-sqrt(N) A(phi)) exp(-B(k)) exp(-i theta) Omega``."""
    w = apply_exp(op_B(space, k), -1.0, vacuum(space), tol=tol) * np.exp(-1j * theta)
    return apply_exp(op_A(space, phi), -np.sqrt(N), w, tol=tol)


def lhs_error(space: FockSpace, psi_exact, phi, k, theta: float, N: float, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    approx = approximate_state(space, phi, k, theta, N, tol)
    return float(np.linalg.norm(approx - psi_exact)), approx


def default_cutoff(N: float, sigmas: float = 6.0, extra: int = 4) -> int:
    return int(math.ceil(N + sigmas * math.sqrt(N))) + extra


def _cutoff_for(config: RunConfig, phi0, N: float):
    """Smallest cutoff (from the rule upward) whose coherent tail passes the gate."""
    n_max = default_cutoff(N * mass(phi0), config.cutoff_sigmas, config.cutoff_extra)
    while True:
        space = FockSpace(config.M, n_max, max_dim=config.max_dim)
        psi0 = coherent_state(space, phi0, N, tol=config.krylov_tol)
        tail = tail_mass(space, psi0)
        if tail < config.tail_coherent:
            return space, psi0, tail
        try:
            FockSpace(config.M, n_max + 1, max_dim=config.max_dim)
        except DimensionBudgetError:
            return space, psi0, tail
        n_max += 1


def _sweep_one(args):
    config, N, times, phis, ks, chi0s, chi1s, report_idx = args
    grid = config.grid
    tol = config.krylov_tol
    pot = build_potential(grid, config.potential)
    space, psi, coh_tail = _cutoff_for(config, phis[0], N)
    HN = assemble_H(space, grid, pot, N)[2]
    rows = []
    prev = 0
    n_exp = 1
    for n in report_idx:
        if n > prev:
            psi = evolve(HN, psi, times[n] - times[prev], tol=tol)
            prev = n
            n_exp += 1
        theta = phase_integral(times, chi0s, chi1s, N, n)
        lhs, approx = lhs_error(space, psi, phis[n], ks[n], theta, N, tol)
        # diagnostics: no phase at all, and the opposite sign of the chi1 part
        unphased = approx * np.exp(1j * theta)
        theta_flip = phase_integral(times, chi0s, -chi1s, N, n)
        state_tail = max(tail_mass(space, psi), tail_mass(space, approx))
        rows.append(
            {
                "N": N,
                "t": float(times[n]),
                "lhs": lhs,
                "lhs_no_phase": float(np.linalg.norm(unphased - psi)),
                "lhs_flipped_chi1": float(np.linalg.norm(unphased * np.exp(-1j * theta_flip) - psi)),
                "chi_phase": theta,
                "tail_mass": state_tail,
                "coherent_tail": coh_tail,
                "norm_defect": max(abs(np.linalg.norm(psi) - 1), abs(np.linalg.norm(approx) - 1)),
                "n_max": space.n_max,
                "dim": space.dim,
                # truncation enters the amplitude as sqrt(tail); each exponential adds its Krylov tolerance
                "slack": math.sqrt(coh_tail) + math.sqrt(state_tail) + (n_exp + 2) * tol,
            }
        )
    return rows


@dataclass
class EstimateReport:
    rows: list
    slope: float | None
    slope_defined: bool
    norms: dict
    phases: dict
    meta: dict = field(default_factory=dict)

    @property
    def valid_rows(self):
        return [r for r in self.rows if r["valid"]]

    def all_bounded(self) -> bool:
        return all(r["lhs"] <= r["rhs"] + r["slack"] for r in self.valid_rows)


def fit_slope(Ns, lhs, floor: float = 1e-10):
    """Least-squares slope of ``log lhs`` vs ``log N``; ``None`` if undefined."""
    Ns, lhs = np.asarray(Ns, float), np.asarray(lhs, float)
    ok = lhs > floor
    if ok.sum() < 2 or np.unique(Ns[ok]).size < 2:
        return None
    return float(np.polyfit(np.log(Ns[ok]), np.log(lhs[ok]), 1)[0])


def run_sweep(config: RunConfig, jobs: int | None = None, trajectories: Trajectories | None = None) -> EstimateReport:
    """Solve the N-independent trajectories once, then compare exact and approximate states per N."""
    tr = trajectories or solve_trajectories(config)
    phases = phase_series(tr)
    norms = norm_series(tr, config.norm_n_max, config.norm_stride, config.krylov_tol)
    times = tr.times
    report_idx = sorted(set(range(0, config.n_steps + 1, config.report_every)) | {config.n_steps})
    tasks = [
        (config, N, times, tr.phis, tr.pair.k, phases["chi0"], phases["chi1"], report_idx)
        for N in config.N_list
    ]
    jobs = jobs or min(len(tasks), os.cpu_count() or 1)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    rows = []
    for block in results:
        for row in block:
            bound = rhs_bound(norms["t"], norms, row["N"], row["t"])
            row["valid"] = row["coherent_tail"] < config.tail_coherent and row["tail_mass"] < config.tail_state
            row.update(bound)
            rows.append(row)
    rows.sort(key=lambda r: (r["N"], r["t"]))
    final = [r for r in rows if r["valid"] and abs(r["t"] - times[-1]) < 1e-12]
    slope = fit_slope([r["N"] for r in final], [r["lhs"] for r in final])
    meta = {
        "max_norm_defect": max(r["norm_defect"] for r in rows),
        "max_trace_d_imag": float(np.max(np.abs(phases["trace_d_imag"]))),
        "max_squeeze_tail": float(np.max(norms["squeeze_tail"])),
        "hartree_mass_drift": tr.hartree.mass_drift(),
        "hartree_energy_drift": tr.hartree.energy_drift(),
    }
    return EstimateReport(rows, slope, slope is not None, norms, phases, meta)


def ltilde_check(space: FockSpace, grid: Grid, v, phi, ps: PairState, N: float, tol: float = 1e-12) -> dict:
    """Assemble the full ``L~`` densely and compare ``L~ Omega`` with the four conjugated terms.

    Also reports the Hermiticity defect of ``H_G - sum d_xy a*_y a_x`` and
    ``|(H_G - sum d a* a) Omega|``, which vanishes because both parts are
    normal ordered.
    """
    phi = np.asarray(check_field(grid, phi), dtype=complex)
    g = kernel_g(grid, phi, v)
    m = kernel_m(grid, phi, v)
    d = kernel_d(ps.k, ps.kdot, g, m, ps.u, ps.c)
    rho, W = density_contractions(grid, phi, v)
    H0 = assemble_H(space, grid, v, 1.0)[0]
    # H_G = H0 + sum rho_xy conj(phi_y) phi_x a*_x a*_y + 1/2 sum W_x a*_x a_x
    hg = H0.matrix + one_body(space, rho * np.outer(phi, phi.conj()) + 0.5 * np.diag(W)).matrix
    dq = operator_from_tensor(space, -d.T, 1).matrix
    quad = (hg + dq).toarray()
    B = op_B(space, ps.k).toarray()
    eB, emB = expm(B), expm(-B)
    conj_ops = [
        (1 / (6 * N**2), interaction_operator(space, grid, v).toarray()),
        (1 / (6 * N**1.5), closed_form(space, grid, phi, v, 1).toarray()),
        (1 / (12 * N), closed_form(space, grid, phi, v, 2).toarray()),
        (1 / (36 * N**0.5), closed_form(space, grid, phi, v, 3).toarray()),
    ]
    ltilde = quad + sum(c * (eB @ C @ emB) for c, C in conj_ops)
    omega = vacuum(space)
    lhs = ltilde @ omega
    w = apply_exp(op_B(space, ps.k), -1.0, omega, tol=tol)
    four = sum(c * apply_exp(op_B(space, ps.k), 1.0, C @ w, tol=tol) for c, C in conj_ops)
    return {
        "ltilde_omega_residual": float(np.linalg.norm(lhs - four)),
        "quadratic_on_vacuum": float(np.linalg.norm(quad @ omega)),
        "quadratic_hermitian_residual": float(np.max(np.abs(quad - quad.conj().T))),
        "d_hermitian_residual": float(np.max(np.abs(d - d.conj().T))),
        "ltilde_omega_norm": float(np.linalg.norm(four)),
    }


def cancellation_check(space: FockSpace, tr: Trajectories, n: int, h_steps: int = 1, tol: float = 1e-12) -> dict:
    """Pair-creation part of ``L_Q`` at grid point ``n``, kernel level and operator level.

    Operator level: ``L_Q Omega = (1/i) (d/dt e^B) e^{-B} Omega + e^B (H0 + ad_A^4 V / 144) e^{-B} Omega``
    with a centered difference of ``e^{B(t)}`` over ``h_steps`` grid steps;
    the two-particle component of ``L_Q Omega`` is the pair-creation
    coefficient.  The Richardson combination of step ``h`` and ``2h`` removes
    the leading finite-difference error.
    """
    grid, pot = tr.grid, tr.potential
    ks, phi = tr.pair.k, tr.phis[n]
    ps = tr.pair.state(n)
    g, m = kernel_g(grid, phi, pot), kernel_m(grid, phi, pot)
    kernel_res = float(np.max(np.abs(coeff_residual(ps.k, ps.kdot, g, m, ps.u, ps.c))))
    if n - 2 * h_steps < 0 or n + 2 * h_steps >= len(tr.times):
        raise ValueError("grid point too close to the ends for centered differences")
    omega = vacuum(space)
    B = op_B(space, ks[n])
    w = apply_exp(B, -1.0, omega, tol=tol)
    H0 = assemble_H(space, grid, pot, 1.0)[0]
    quad = H0.matrix + closed_form(space, grid, phi, pot, 4).matrix / 144.0
    static = apply_exp(B, 1.0, quad @ w, tol=tol)

    def lq_omega(hs):
        h = hs * tr.pair.dt
        plus = apply_exp(op_B(space, ks[n + hs]), 1.0, w, tol=tol)
        minus = apply_exp(op_B(space, ks[n - hs]), 1.0, w, tol=tol)
        return -1j * (plus - minus) / (2 * h) + static

    x1, x2 = lq_omega(h_steps), lq_omega(2 * h_steps)
    xr = (4 * x1 - x2) / 3
    two = space.totals == 2
    d = _d_at(grid, pot, phi, ps)
    return {
        "t": float(tr.times[n]),
        "kernel_residual": kernel_res,
        "operator_residual_h": float(np.linalg.norm(x1[two])),
        "operator_residual_2h": float(np.linalg.norm(x2[two])),
        "operator_residual_richardson": float(np.linalg.norm(xr[two])),
        "vacuum_expectation": float(xr[0].real),
        "chi1": chi1(d),
    }
