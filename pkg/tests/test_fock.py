import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosepair.fock import (
    DimensionBudgetError,
    FockOperator,
    FockSpace,
    OperatorFlagError,
    assemble_H,
    evolve,
    load_operator,
    mode_ops,
    number_operator,
    one_body,
    operator_from_tensor,
    save_operator,
    vacuum,
)
from bosepair.lattice import build_potential, make_grid


def test_small_basis_order():
    space = FockSpace(2, 1)
    np.testing.assert_array_equal(space.basis, [[0, 0], [1, 0], [0, 1]])
    assert space.lookup(0) == (0, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 7))
def test_dimension_and_index_roundtrip(M, n_max):
    space = FockSpace(M, n_max)
    assert space.dim == math.comb(n_max + M, M)
    np.testing.assert_array_equal(space.index(space.basis), np.arange(space.dim))
    assert np.all(np.diff(space.totals) >= 0)


def test_known_dimension():
    assert FockSpace(4, 20).dim == 10626


def test_index_outside_space():
    space = FockSpace(2, 3)
    np.testing.assert_array_equal(space.index([[4, 0], [-1, 1], [1, 1]]), [-1, -1, space.index([1, 1])[0]])


def test_dimension_budget():
    with pytest.raises(DimensionBudgetError):
        FockSpace(6, 40, max_dim=10_000)


def test_ccr_on_guarded_sector():
    space = FockSpace(3, 6)
    a, ad = mode_ops(space)
    cols = space.sector_mask(space.n_max - 1)
    for i in range(3):
        for j in range(3):
            comm = (a[i].matrix @ ad[j].matrix - ad[j].matrix @ a[i].matrix).toarray()[:, cols]
            expect = np.eye(space.dim)[:, cols] * (i == j)
            assert np.max(np.abs(comm - expect)) < 1e-14


def test_number_operator_from_modes():
    space = FockSpace(3, 4)
    a, ad = mode_ops(space)
    total = sum((ad[i] @ a[i]).matrix for i in range(3))
    assert abs(total - number_operator(space).matrix).max() < 1e-14
    assert abs(one_body(space, np.eye(3)).matrix - total).max() < 1e-14


def test_tensor_assembly_pair_creation_on_vacuum():
    space = FockSpace(2, 4)
    k = np.array([[1.0, 2.0], [2.0, 3.0]])
    out = operator_from_tensor(space, k, 2) @ vacuum(space)
    # a*_0 a*_0 -> sqrt(2)|2,0>, 2 a*_0 a*_1 + 2 a*_1 a*_0 -> 4 |1,1>, 3 a*_1 a*_1 -> 3 sqrt(2)|0,2>
    assert out[space.index([2, 0])[0]] == pytest.approx(math.sqrt(2))
    assert out[space.index([1, 1])[0]] == pytest.approx(4.0)
    assert out[space.index([0, 2])[0]] == pytest.approx(3 * math.sqrt(2))


def test_kind_flags_checked():
    space = FockSpace(2, 3)
    a, ad = mode_ops(space)
    with pytest.raises(OperatorFlagError):
        FockOperator(space, a[0].matrix, "hermitian")
    skew = FockOperator(space, a[0].matrix - ad[0].matrix, "skew")
    assert (skew * 1j).kind == "hermitian"
    with pytest.raises(OperatorFlagError):
        evolve(skew, vacuum(space), 1.0)


def test_hamiltonian_is_hermitian_and_conserves_number():
    g = make_grid(3, 2 * math.pi)
    space = FockSpace(3, 5)
    H0, V, HN = assemble_H(space, g, build_potential(g, {"kind": "random-symmetric", "seed": 1}), 3.0)
    for op in (H0, V, HN):
        assert op.kind == "hermitian"
        n = number_operator(space).matrix
        assert abs(op.matrix @ n - n @ op.matrix).max() < 1e-12
    # V annihilates states with fewer than three particles
    low = space.totals < 3
    assert abs(V.matrix[:, low]).max() == 0


def test_constant_potential_counts_triples():
    g = make_grid(2, 1.0)
    space = FockSpace(2, 5)
    _, V, _ = assemble_H(space, g, build_potential(g, {"kind": "constant", "value": 1.0}), 1.0)
    # V = n(n-1)(n-2) for v = 1
    n = space.totals
    np.testing.assert_allclose(V.matrix.diagonal(), n * (n - 1) * (n - 2), atol=1e-12)


def test_evolve_free_dynamics_preserves_norm(rng):
    g = make_grid(4, 2 * math.pi)
    space = FockSpace(4, 6)
    H0 = assemble_H(space, g, build_potential(g, {"kind": "zero"}), 1.0)[0]
    psi = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    psi /= np.linalg.norm(psi)
    out = evolve(H0, evolve(H0, psi, 0.8), -0.8)
    assert np.linalg.norm(out - psi) < 1e-11


def test_operator_dump_roundtrip(tmp_path):
    g = make_grid(3, 1.0)
    space = FockSpace(3, 4)
    H = assemble_H(space, g, build_potential(g, {"kind": "random-symmetric", "seed": 2}), 2.0)[2]
    path = tmp_path / "h.bin"
    save_operator(H, path)
    back = load_operator(path)
    assert back.kind == "hermitian" and back.space == space
    assert abs(back.matrix - H.matrix).max() == 0
    raw = path.read_bytes()
    save_operator(H, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == raw
    with pytest.raises(ValueError):
        load_operator(path, FockSpace(3, 5))
