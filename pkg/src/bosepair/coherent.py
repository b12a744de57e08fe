"""Displacement and pair generators, and the quadratic map ``Q(d, k, l)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fock import FockOperator, FockSpace, OperatorFlagError, operator_from_tensor, vacuum
from .krylov import expi_hermitian

__all__ = [
    "SymplecticBlocks",
    "op_A",
    "op_B",
    "quad_from_blocks",
    "apply_exp",
    "coherent_state",
]

SYM_TOL = 1e-12


def _require_symmetric(name: str, x: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    if np.max(np.abs(x - x.T), initial=0.0) > SYM_TOL * scale:
        raise ValueError(f"{name} must be symmetric (residual {np.max(np.abs(x - x.T)):.3e})")


@dataclass(frozen=True, eq=False)
class SymplecticBlocks:
    """Block matrix ``S = [[d, k], [l, -d^T]]`` with symmetric ``k`` and ``l``."""

    d: np.ndarray
    k: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        for name in ("d", "k", "l"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex))
        _require_symmetric("k", self.k)
        _require_symmetric("l", self.l)

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.d, self.k], [self.l, -self.d.T]])

    @classmethod
    def from_matrix(cls, S) -> "SymplecticBlocks":
        S = np.asarray(S)
        M = S.shape[0] // 2
        d, k, l, dd = S[:M, :M], S[:M, M:], S[M:, :M], S[M:, M:]
        if np.max(np.abs(dd + d.T)) > 1e-10 * max(1.0, np.max(np.abs(S))):
            raise ValueError("lower-right block is not -d^T")
        return cls(d, 0.5 * (k + k.T), 0.5 * (l + l.T))

    def bracket(self, other: "SymplecticBlocks") -> "SymplecticBlocks":
        S1, S2 = self.matrix, other.matrix
        return SymplecticBlocks.from_matrix(S1 @ S2 - S2 @ S1)


def op_A(space: FockSpace, phi) -> FockOperator:
    """``A(phi) = a(conj phi) - a*(phi) = sum_i conj(phi_i) a_i - phi_i a*_i``."""
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (space.M,):
        raise ValueError(f"field of shape {phi.shape} on a space with M={space.M}")
    ann = operator_from_tensor(space, phi.conj(), 0)
    cre = operator_from_tensor(space, -phi, 1)
    return FockOperator(space, ann.matrix + cre.matrix, "skew")


def op_B(space: FockSpace, k) -> FockOperator:
    """``B(k) = 1/2 sum_ij (k_ij a_i a_j - conj(k_ij) a*_i a*_j)``; ``k`` must be symmetric."""
    k = np.asarray(k, dtype=complex)
    _require_symmetric("k", k)
    ann = operator_from_tensor(space, 0.5 * k, 0)
    cre = operator_from_tensor(space, -0.5 * k.conj(), 2)
    return FockOperator(space, ann.matrix + cre.matrix, "skew")


def quad_from_blocks(space: FockSpace, S: SymplecticBlocks) -> FockOperator:
    """``Q(d,k,l) = -sum d_xy (a_x a*_y + a*_y a_x)/2 + 1/2 sum k a a - 1/2 sum l a* a*``.

    The symmetrized ``d`` term is stored as ``-sum d_xy a*_y a_x - tr(d)/2``
    (same operator by the CCR).
    """
    pair_ann = operator_from_tensor(space, 0.5 * S.k, 0)
    pair_cre = operator_from_tensor(space, -0.5 * S.l, 2)
    hop = operator_from_tensor(space, -S.d.T, 1)
    const = -0.5 * np.trace(S.d) * sp.identity(space.dim, dtype=complex, format="csr")
    return FockOperator(space, pair_ann.matrix + pair_cre.matrix + hop.matrix + const)


def apply_exp(G: FockOperator, s: float, psi, tol: float = 1e-12) -> np.ndarray:
    """``exp(s G) psi`` for a skew-Hermitian-flagged generator ``G``."""
    if G.kind != "skew":
        raise OperatorFlagError("apply_exp requires a skew-hermitian-flagged generator")
    mat = G.matrix
    # exp(sG) = exp(i s H) with H = -iG Hermitian
    return expi_hermitian(lambda x: -1j * (mat @ x), psi, s, tol=tol)


def coherent_state(space: FockSpace, phi, N: float, tol: float = 1e-12) -> np.ndarray:
    """``exp(-sqrt(N) A(phi)) Omega``."""
    return apply_exp(op_A(space, phi), -np.sqrt(N), vacuum(space), tol=tol)
