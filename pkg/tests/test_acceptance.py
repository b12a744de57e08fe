"""Acceptance gate: one test and one printed pass/fail line per criterion.

Criterion 7 runs the full N sweep (several minutes on one core).
"""

import csv
import math
import time

import numpy as np
import pytest

from bosepair.coherent import SymplecticBlocks, op_B, quad_from_blocks
from bosepair.commutators import verify_lemma
from bosepair.experiment import RunConfig, cancellation_check, ltilde_check, solve_trajectories
from bosepair.fock import FockSpace
from bosepair.harness import main
from bosepair.hartree import solve_hartree
from bosepair.lattice import build_potential, field_from_function, make_grid
from bosepair.pairex import coeff_residual, hyperbolic_residual, kernel_g, kernel_m, quotient_residual, solve_pairex

from conftest import COS_POTENTIAL, random_field, random_symmetric


@pytest.fixture(scope="module")
def pair_run():
    cfg = RunConfig(M=4, T=0.5, dt=1e-3)
    return cfg, solve_trajectories(cfg)


def test_c1_commutator_lemma(acceptance_line):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    g = make_grid(2, 2 * math.pi)
    space = FockSpace(2, 8)
    worst_dev, worst_id, worst_im = 0.0, 0.0, 0.0
    for trial in range(5):
        v = build_potential(g, {"kind": "random-symmetric", "seed": trial})
        rep = verify_lemma(space, g, random_field(rng, 2), v)
        scale = max(1.0, abs(rep["level6_oracle_scalar_real"]))
        worst_dev = max(worst_dev, rep["max_rel_deviation"])
        worst_id = max(worst_id, rep["level6_identity_residual"] / scale)
        worst_im = max(worst_im, abs(rep["level6_oracle_scalar_imag"]) / scale)
    phi = random_field(rng, 2)
    phi /= np.linalg.norm(phi)
    unit = verify_lemma(space, g, phi, build_potential(g, {"kind": "constant", "value": 1.0}))
    err720 = abs(unit["level6_oracle_scalar_real"] - 720.0)
    elapsed = time.perf_counter() - start
    ok = worst_dev < 1e-9 and worst_id < 1e-9 and worst_im < 1e-9 and err720 < 1e-8 and elapsed < 60
    detail = (
        f"max rel dev {worst_dev:.2e} (<1e-9), level-6 off-identity {worst_id:.2e}, "
        f"|scalar-720| {err720:.2e} (<1e-8), {elapsed:.1f}s (<60s)"
    )
    assert acceptance_line("criterion 1 commutator closed forms", ok, detail)


def test_c2_quadratic_isomorphism(acceptance_line):
    rng = np.random.default_rng(7)
    space = FockSpace(2, 6)
    cols = space.sector_mask(space.n_max - 2)

    def blocks():
        d = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        return SymplecticBlocks(d, random_symmetric(rng, 2), random_symmetric(rng, 2))

    worst = 0.0
    for _ in range(20):
        S1, S2 = blocks(), blocks()
        Q1, Q2 = quad_from_blocks(space, S1).matrix, quad_from_blocks(space, S2).matrix
        diff = (Q1 @ Q2 - Q2 @ Q1).toarray() - quad_from_blocks(space, S1.bracket(S2)).toarray()
        worst = max(worst, float(np.max(np.abs(diff[:, cols]))))
    k = random_symmetric(rng, 2)
    exact = abs(quad_from_blocks(space, SymplecticBlocks(np.zeros((2, 2)), k, k.conj())).matrix - op_B(space, k).matrix).max()
    ok = worst < 1e-9 and exact == 0
    assert acceptance_line("criterion 2 quadratic isomorphism", ok, f"bracket residual {worst:.2e} (<1e-9), |Q(0,k,conj k)-B(k)| = {exact}")


def test_c3_hartree(acceptance_line):
    g = make_grid(8, 2 * math.pi)
    v = build_potential(g, COS_POTENTIAL)
    phi0 = field_from_function(g, lambda x: 1 + 0.5 * np.cos(x) + 0.3j * np.sin(x) + 0.2 * np.cos(2 * x), normalize=True)
    tr = solve_hartree(g, phi0, v, 1.0, 1e-3)
    free = solve_hartree(g, phi0, build_potential(g, {"kind": "zero"}), 1.0, 1e-3).final
    exact = np.fft.ifft(np.exp(1j * g.laplacian_symbol) * np.fft.fft(phi0))
    free_err = float(np.max(np.abs(free - exact)))
    ref = solve_hartree(g, phi0, v, 1.0, 1e-4).final
    e1, e2 = (np.linalg.norm(solve_hartree(g, phi0, v, 1.0, dt).final - ref) for dt in (2e-2, 1e-2))
    order = math.log2(e1 / e2)
    ok = tr.mass_drift() <= 1e-10 and tr.energy_drift() <= 1e-8 and free_err <= 1e-12 and order >= 1.9
    detail = (
        f"mass drift {tr.mass_drift():.2e} (<=1e-10), energy drift {tr.energy_drift():.2e} (<=1e-8), "
        f"free-field error {free_err:.2e} (<=1e-12), Strang order {order:.3f} (>=1.9)"
    )
    assert acceptance_line("criterion 3 Hartree solver", ok, detail)


def test_c4_pair_excitation(acceptance_line, pair_run):
    cfg, tr = pair_run
    hyp = coeff = quot = 0.0
    for n, phi in enumerate(tr.phis):
        ps = tr.pair.state(n)
        g, m = kernel_g(tr.grid, phi, tr.potential), kernel_m(tr.grid, phi, tr.potential)
        hyp = max(hyp, hyperbolic_residual(ps.u, ps.c))
        coeff = max(coeff, float(np.max(np.abs(coeff_residual(ps.k, ps.kdot, g, m, ps.u, ps.c)))))
        quot = max(quot, float(np.max(np.abs(quotient_residual(ps.k, ps.kdot, g, m, ps.u, ps.c)))))
    m0 = kernel_m(tr.grid, tr.phis[0], tr.potential)
    slope = []
    for dt in (2e-3, 1e-3):
        step = round(dt / 2 / tr.hartree.dt)
        short = solve_pairex(tr.grid, tr.potential, tr.hartree.states[: 2 * step + 1 : step], dt)
        slope.append(float(np.linalg.norm(short.k[1] / dt + 1j * m0)))
    ratio = slope[0] / slope[1]
    ok = hyp <= 1e-9 and coeff <= 1e-6 and quot <= 1e-6 and 1.8 <= ratio <= 2.2 and abs(tr.pair.k[0]).max() == 0
    detail = (
        f"hyperbolic {hyp:.2e} (<=1e-9), coeff {coeff:.2e} (<=1e-6), quotient {quot:.2e} (<=1e-6), "
        f"slope error {slope[1]:.2e} at dt=1e-3, halving ratio {ratio:.3f} (first order)"
    )
    assert acceptance_line("criterion 4 pair-excitation kernel", ok, detail)


def test_c5_cancellation(acceptance_line, pair_run):
    _, tr = pair_run
    space = FockSpace(4, 10)
    rows = [cancellation_check(space, tr, n) for n in (2, 100, 250, 400, len(tr.times) - 3)]
    kernel = max(r["kernel_residual"] for r in rows)
    ratios = [r["operator_residual_2h"] / r["operator_residual_h"] for r in rows]
    rich = max(r["operator_residual_richardson"] for r in rows)
    ok = kernel <= 1e-6 and all(3.0 <= q <= 5.0 for q in ratios) and rich <= 1e-8
    detail = (
        f"kernel residual {kernel:.2e} (<=1e-6), operator residual at dt {max(r['operator_residual_h'] for r in rows):.2e} "
        f"with step-doubling ratios {min(ratios):.3f}..{max(ratios):.3f} (O(dt^2) -> 4), Richardson {rich:.2e}"
    )
    assert acceptance_line("criterion 5 pair-creation cancellation", ok, detail)


def test_c6_ltilde_identity(acceptance_line):
    tr = solve_trajectories(RunConfig(M=3, T=0.1, dt=1e-3))
    n = len(tr.times) - 1
    rep = ltilde_check(FockSpace(3, 9), tr.grid, tr.potential, tr.phis[n], tr.pair.state(n), 4.0)
    ok = rep["ltilde_omega_residual"] <= 1e-8 and rep["quadratic_hermitian_residual"] <= 1e-12
    detail = (
        f"|L~Omega - four terms| {rep['ltilde_omega_residual']:.2e} (<=1e-8), "
        f"quadratic part Hermitian to {rep['quadratic_hermitian_residual']:.2e}, |L~Omega| {rep['ltilde_omega_norm']:.3e}"
    )
    assert acceptance_line("criterion 6 L~Omega identity", ok, detail)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_c7_scaling_experiment(acceptance_line, tmp_path):
    start = time.perf_counter()
    code = main(["sweep", "--out", str(tmp_path), "--jobs", "1"])
    elapsed = time.perf_counter() - start
    rows = _read_csv(tmp_path / "estimate.csv")
    diag = _read_csv(tmp_path / "estimate_diagnostics.csv")
    valid = [(r, d) for r, d in zip(rows, diag) if r["valid"] == "true"]
    bounded = all(float(r["lhs"]) <= float(r["rhs"]) + float(d["slack"]) for r, d in valid)
    strict = all(float(r["lhs"]) <= float(r["rhs"]) for r, _ in valid)
    final = [r for r, _ in valid if float(r["t"]) == 0.5]
    Ns = np.array([float(r["N"]) for r in final])
    lhs = np.array([float(r["lhs"]) for r in final])
    slope = float(np.polyfit(np.log(Ns), np.log(lhs), 1)[0])
    ok = code == 0 and len(valid) == len(rows) == 24 and bounded and slope <= -0.4 and elapsed <= 1800
    detail = (
        f"{len(valid)}/{len(rows)} rows valid, lhs <= rhs + slack on all (without slack: {strict}), "
        f"lhs(T) = {', '.join(f'{x:.4f}' for x in lhs)} for N = {Ns.astype(int).tolist()}, "
        f"slope {slope:.3f} (<=-0.4), {elapsed:.0f}s"
    )
    assert acceptance_line("criterion 7 N-scaling of the error estimate", ok, detail)


def test_c8_determinism(acceptance_line, tmp_path):
    args = ["sweep", "--set", "run.T=0.1", "--set", "run.N_list=[2,4]", "--set", "run.norm_stride=10",
            "--set", "run.report_every=50", "--out", str(tmp_path), "--jobs", "2"]
    names = ["estimate.csv", "estimate_diagnostics.csv", "norms.csv", "summary.json"]
    assert main(args) == 0
    first = {n: (tmp_path / n).read_bytes() for n in names}
    assert main(args) == 0
    same = [n for n in names if (tmp_path / n).read_bytes() == first[n]]
    assert main(["verify-lemma", "--out", str(tmp_path)]) == 0
    lemma = (tmp_path / "lemma_report.json").read_bytes()
    assert main(["verify-lemma", "--out", str(tmp_path)]) == 0
    ok = len(same) == len(names) and (tmp_path / "lemma_report.json").read_bytes() == lemma
    assert acceptance_line("criterion 8 byte-identical reruns", ok, f"identical: {', '.join(same)}, lemma_report.json")
