"""Closed forms of ``[A,V], [A,[A,V]], ..., ad_A^6 V`` and a brute-force bracket oracle.

``A = A(phi)`` and ``V = sum v_xyz a*_x a*_y a*_z a_x a_y a_z``.  Level ``L``
is the ``L``-fold nested bracket with ``A`` on the left.  Every level is
Hermitian (``A`` is skew, ``V`` Hermitian) and level 6 is a real multiple of
the identity.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .coherent import op_A
from .fock import FockOperator, FockSpace, assemble_H, operator_from_tensor
from .lattice import Grid, _potential_array, check_field

__all__ = [
    "LEVELS",
    "SectorEmptyError",
    "closed_form",
    "oracle_bracket",
    "nested_oracle",
    "verify_lemma",
    "hartree_consistency_residual",
    "interaction_operator",
]

LEVELS = range(1, 7)
GUARD = 6


class SectorEmptyError(ValueError):
    pass


def _check_level(level: int) -> int:
    if level not in LEVELS:
        raise ValueError(f"commutator level must be in 1..6, got {level}")
    return int(level)


def interaction_operator(space: FockSpace, grid: Grid, v) -> FockOperator:
    return assemble_H(space, grid, v, 1.0)[1]


def _terms(v: np.ndarray, phi: np.ndarray, level: int):
    """Yield ``(tensor, n_create)`` pairs whose sum is the level-``level`` bracket."""
    M = phi.shape[0]
    I = np.eye(M)
    f, fb = phi, phi.conj()
    n = np.abs(phi) ** 2
    e = np.einsum
    if level == 1:
        # 3 v (conj(phi_x) a*_y a*_z a_x a_y a_z + phi_x a*_x a*_y a*_z a_y a_z)
        yield 3 * e("xyz,x,Yy,Zz->YZxyz", v, fb, I, I), 2
        yield 3 * e("xyz,x,yY,zZ->xyzYZ", v, f, I, I), 3
    elif level == 2:
        yield 6 * e("xyz,x,y,Zz->Zxyz", v, fb, fb, I), 1
        yield 12 * e("xyz,x,y,zZ->xzyZ", v, f, fb, I), 2
        yield 6 * e("xyz,x,y,zZ->xyzZ", v, f, f, I), 3
        yield 6 * e("xyz,x,Yy,Zz->YZyz", v, n, I, I), 2
    elif level == 3:
        w = e("xyz,x->yz", v, n)
        yield 36 * e("yz,y,Zz->Zyz", w, fb, I), 1
        yield 36 * e("yz,y,zZ->yzZ", w, f, I), 2
        yield 6 * e("xyz,x,y,z->xyz", v, fb, fb, fb), 0
        yield 6 * e("xyz,x,y,z->xyz", v, f, f, f), 3
        yield 18 * e("xyz,x,y,z->zxy", v, fb, fb, f), 1
        yield 18 * e("xyz,x,y,z->xyz", v, f, f, fb), 2
    elif level == 4:
        w = e("xyz,x->yz", v, n)
        yield 72 * e("yz,y,z->yz", w, fb, fb), 0
        yield 72 * e("yz,y,z->yz", w, f, f), 2
        yield 144 * e("yz,y,z->zy", w, fb, f), 1
        yield 72 * e("xyz,x,y,zZ->zZ", v, n, n, I), 1
    elif level == 5:
        w = e("xyz,x,y->z", v, n, n)
        yield 360 * w * fb, 0
        yield 360 * w * f, 1
    else:
        yield np.asarray(720 * e("xyz,x,y,z->", v, n, n, n)), 0


def closed_form(space: FockSpace, grid: Grid, phi, v, level: int) -> FockOperator:
    """Level-``level`` nested commutator assembled term by term from its closed form."""
    level = _check_level(level)
    phi = np.asarray(check_field(grid, phi), dtype=complex)
    varr = _potential_array(grid, v)
    mat = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for tensor, n_create in _terms(varr, phi, level):
        mat = mat + operator_from_tensor(space, tensor, n_create).matrix
    return FockOperator(space, mat, "hermitian")


def oracle_bracket(X: FockOperator, Y: FockOperator) -> FockOperator:
    """``XY - YX`` by sparse products."""
    if X.space != Y.space:
        raise ValueError("operators live on different Fock spaces")
    return FockOperator(X.space, X.matrix @ Y.matrix - Y.matrix @ X.matrix)


def nested_oracle(A: FockOperator, V: FockOperator, depth: int = 6) -> list[FockOperator]:
    """``[ad_A V, ad_A^2 V, ..., ad_A^depth V]`` by repeated brackets."""
    out, cur = [], V
    for _ in range(depth):
        cur = oracle_bracket(A, cur)
        out.append(cur)
    return out


def _max_abs(mat) -> float:
    mat = sp.csr_matrix(mat)
    return float(abs(mat).max()) if mat.nnz else 0.0


def verify_lemma(space: FockSpace, grid: Grid, phi, v) -> dict:
    """Compare every closed form with the iterated oracle on the guarded sector.

    Columns are restricted to basis states with at most ``n_max - 6``
    particles: a level-``L`` bracket of truncated matrices is exact on columns
    with at most ``n_max - L`` particles.
    """
    sector = space.n_max - GUARD
    if sector < 0:
        raise SectorEmptyError(f"sector empty: n_max={space.n_max} < {GUARD}")
    cols = np.nonzero(space.sector_mask(sector))[0]
    A = op_A(space, phi)
    V = interaction_operator(space, grid, v)
    oracle = nested_oracle(A, V, 6)
    levels = []
    for L in LEVELS:
        closed = closed_form(space, grid, phi, v, L).matrix[:, cols]
        ref = oracle[L - 1].matrix[:, cols]
        dev = _max_abs(closed - ref)
        scale = _max_abs(ref)
        levels.append(
            {
                "level": L,
                "abs_deviation": dev,
                "scale": scale,
                "rel_deviation": dev / scale if scale > 0 else dev,
                "hermitian_residual": _max_abs(
                    (oracle[L - 1].matrix - oracle[L - 1].matrix.conj().T)[:, cols][cols, :]
                ),
            }
        )
    # level-6 oracle must be a scalar multiple of the identity on the sector
    top = oracle[5].matrix[:, cols][cols, :].toarray()
    scalar = complex(np.mean(np.diag(top))) if cols.size else 0j
    off_identity = float(np.max(np.abs(top - scalar * np.eye(cols.size)))) if cols.size else 0.0
    closed_scalar = complex(next(_terms(_potential_array(grid, v), np.asarray(phi, complex), 6))[0])
    return {
        "M": space.M,
        "n_max": space.n_max,
        "sector_max_particles": sector,
        "sector_dim": int(cols.size),
        "space_dim": space.dim,
        "levels": levels,
        "level6_oracle_scalar_real": scalar.real,
        "level6_oracle_scalar_imag": scalar.imag,
        "level6_closed_scalar": closed_scalar.real,
        "level6_identity_residual": off_identity,
        "max_rel_deviation": max(x["rel_deviation"] for x in levels),
    }


def hartree_consistency_residual(space: FockSpace, grid: Grid, phi, phi_t, v) -> float:
    """Norm of ``(1/i) Adot + [A, H0] + ad_A^5 V / (6 * 5!)`` on the one-particle shift.

    The operator equals ``a(conj res) + a*(res)`` with
    ``res = i phi_t + Lap phi + 1/2 phi W``; applied to the vacuum it leaves
    ``a*(res) Omega``, whose norm is returned.
    """
    phi = np.asarray(check_field(grid, phi), dtype=complex)
    phi_t = np.asarray(check_field(grid, phi_t), dtype=complex)
    A = op_A(space, phi)
    A_dot = op_A(space, phi_t)
    H0 = assemble_H(space, grid, v, 1.0)[0]
    X = A_dot.matrix * (-1j) + oracle_bracket(A, H0).matrix + closed_form(space, grid, phi, v, 5).matrix / 720.0
    omega = np.zeros(space.dim, dtype=complex)
    omega[0] = 1.0
    out = X @ omega
    one = space.totals == 1
    return float(np.linalg.norm(out[one]))
