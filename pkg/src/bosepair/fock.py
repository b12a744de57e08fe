"""Truncated bosonic Fock space over ``M`` modes with a total-particle cutoff.

Operators are assembled from normal-ordered coefficient tensors.  A tensor
``T`` with ``p + q`` axes stands for

    sum T[c_1..c_p, d_1..d_q] a*_{c_1} ... a*_{c_p} a_{d_1} ... a_{d_q}

and is folded into occupation-number transitions, vectorized over the basis.
Creation past ``n_max`` maps to zero (hard truncation), so every assembled
operator equals ``P X P`` for the untruncated ``X`` and the projector ``P``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .krylov import expi_hermitian
from .lattice import Grid, PotentialTensor, _potential_array

__all__ = [
    "BASIS_ORDER_TAG",
    "FockSpace",
    "FockOperator",
    "DimensionBudgetError",
    "OperatorFlagError",
    "enumerate_basis",
    "mode_ops",
    "operator_from_tensor",
    "number_operator",
    "assemble_H",
    "evolve",
    "vacuum",
    "save_operator",
    "load_operator",
]

BASIS_ORDER_TAG = "graded-revlex-v1"
DEFAULT_MAX_DIM = 2_000_000


class DimensionBudgetError(MemoryError):
    pass


class OperatorFlagError(ValueError):
    pass


def _compositions(n: int, M: int):
    if M == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, M - 1):
            yield (first,) + rest


class FockSpace:
    """Occupation basis ``(n_1..n_M)`` with ``sum n_i <= n_max``.

    Ordered by total particle number, then with the first mode most occupied
    first; the vacuum is index 0.
    """

    def __init__(self, M: int, n_max: int, max_dim: int = DEFAULT_MAX_DIM):
        if M < 1 or n_max < 0:
            raise ValueError(f"need M >= 1 and n_max >= 0, got M={M}, n_max={n_max}")
        dim = comb(n_max + M, M)
        if dim > max_dim:
            raise DimensionBudgetError(f"Fock dimension {dim} exceeds budget {max_dim} (M={M}, n_max={n_max})")
        self.M = int(M)
        self.n_max = int(n_max)
        self.dim = dim
        basis = np.array(
            [c for n in range(n_max + 1) for c in _compositions(n, M)], dtype=np.int64
        ).reshape(dim, M)
        basis.setflags(write=False)
        self.basis = basis
        self.totals = basis.sum(axis=1)
        self._radix = (n_max + 1) ** np.arange(M, dtype=np.int64)
        codes = basis @ self._radix
        self._order = np.argsort(codes, kind="stable")
        self._sorted_codes = codes[self._order]

    def __repr__(self):
        return f"FockSpace(M={self.M}, n_max={self.n_max}, dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, FockSpace) and (self.M, self.n_max) == (other.M, other.n_max)

    def __hash__(self):
        return hash((self.M, self.n_max))

    def index(self, states) -> np.ndarray:
        """Basis indices of occupation vectors (``-1`` if not in the space)."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        codes = states @ self._radix
        pos = np.searchsorted(self._sorted_codes, codes)
        pos = np.clip(pos, 0, self.dim - 1)
        found = (self._sorted_codes[pos] == codes) & np.all(states >= 0, axis=1) & (
            states.sum(axis=1) <= self.n_max
        )
        return np.where(found, self._order[pos], -1)

    def lookup(self, index: int) -> tuple:
        return tuple(int(x) for x in self.basis[index])

    def sector_mask(self, max_total: int) -> np.ndarray:
        """Boolean mask of basis states with at most ``max_total`` particles."""
        return self.totals <= max_total

    def transition(self, create, annihilate):
        """Matrix elements of ``prod a*^{create} prod a^{annihilate}`` (count vectors).

        Returns ``(rows, cols, values)`` for all basis columns where the result
        stays inside the space.
        """
        C = np.asarray(create, dtype=np.int64)
        D = np.asarray(annihilate, dtype=np.int64)
        n = self.basis
        ok = np.all(n >= D, axis=1)
        mid = n - D
        out = mid + C
        ok &= out.sum(axis=1) <= self.n_max
        cols = np.nonzero(ok)[0]
        n, mid, out = n[cols], mid[cols], out[cols]
        amp = np.ones(cols.size)
        for i in range(self.M):
            for r in range(D[i]):
                amp *= n[:, i] - r
            for r in range(C[i]):
                amp *= out[:, i] - r
        rows = self.index(out)
        return rows, cols, np.sqrt(amp)


def enumerate_basis(M: int, n_max: int, max_dim: int = DEFAULT_MAX_DIM) -> FockSpace:
    return FockSpace(M, n_max, max_dim=max_dim)


def vacuum(space: FockSpace) -> np.ndarray:
    psi = np.zeros(space.dim, dtype=complex)
    psi[0] = 1.0
    return psi


@dataclass(frozen=True, eq=False)
class FockOperator:
    """Sparse operator on a truncated Fock space.

    ``kind`` is ``"hermitian"``, ``"skew"`` or ``None``; a declared kind is
    checked against the matrix on construction.
    """

    space: FockSpace
    matrix: sp.csr_matrix
    kind: str | None = None

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix, dtype=complex)
        mat.sum_duplicates()
        object.__setattr__(self, "matrix", mat)
        if self.kind is not None:
            res = self.flag_residual(self.kind)
            scale = max(1.0, abs(mat).max() if mat.nnz else 0.0)
            if res > 1e-12 * scale:
                raise OperatorFlagError(f"operator is not {self.kind}: residual {res:.3e}")

    def flag_residual(self, kind: str) -> float:
        other = self.matrix.conj().T
        diff = self.matrix - other if kind == "hermitian" else self.matrix + other
        return float(abs(diff).max()) if diff.nnz else 0.0

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        if isinstance(other, FockOperator):
            return FockOperator(self.space, self.matrix @ other.matrix)
        return self.matrix @ other

    def __add__(self, other):
        kind = self.kind if self.kind == other.kind else None
        return FockOperator(self.space, self.matrix + other.matrix, kind)

    def __sub__(self, other):
        kind = self.kind if self.kind == other.kind else None
        return FockOperator(self.space, self.matrix - other.matrix, kind)

    def __mul__(self, c):
        kind = self.kind
        if kind is not None and np.imag(c) != 0:
            kind = None if np.real(c) != 0 else {"hermitian": "skew", "skew": "hermitian"}[kind]
        return FockOperator(self.space, self.matrix * c, kind)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def dagger(self):
        return FockOperator(self.space, self.matrix.conj().T.tocsr(), self.kind)

    def toarray(self):
        return self.matrix.toarray()

    @classmethod
    def zero(cls, space: FockSpace, kind: str | None = None):
        return cls(space, sp.csr_matrix((space.dim, space.dim), dtype=complex), kind)

    @classmethod
    def identity(cls, space: FockSpace, c: complex = 1.0):
        kind = "hermitian" if np.imag(c) == 0 else None
        return cls(space, sp.identity(space.dim, dtype=complex, format="csr") * c, kind)


def _fold(tensor: np.ndarray, n_create: int, M: int, atol: float):
    """Sum tensor entries with equal (creation multiset, annihilation multiset)."""
    terms: dict[tuple, complex] = {}
    idx = np.argwhere(np.abs(tensor) > atol)
    if idx.size == 0:
        return terms
    vals = tensor[tuple(idx.T)]
    counts = np.zeros((idx.shape[0], 2, M), dtype=np.int64)
    for ax in range(idx.shape[1]):
        side = 0 if ax < n_create else 1
        np.add.at(counts, (np.arange(idx.shape[0]), side, idx[:, ax]), 1)
    keys = counts.reshape(idx.shape[0], -1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    summed = np.zeros(uniq.shape[0], dtype=complex)
    np.add.at(summed, inverse.ravel(), vals)
    for key, val in zip(uniq, summed):
        if val != 0:
            terms[tuple(key)] = val
    return terms


def operator_from_tensor(space: FockSpace, tensor, n_create: int, kind: str | None = None, atol: float = 0.0):
    """Assemble ``sum T[c.., d..] a*_c.. a_d..`` (first ``n_create`` axes create)."""
    tensor = np.asarray(tensor, dtype=complex)
    M = space.M
    if tensor.ndim == 0:
        return FockOperator(space, sp.identity(space.dim, dtype=complex, format="csr") * complex(tensor), kind)
    if any(s != M for s in tensor.shape):
        raise ValueError(f"tensor shape {tensor.shape} does not match M={M}")
    rows, cols, vals = [], [], []
    for key, coeff in _fold(tensor, n_create, M, atol).items():
        C, D = np.array(key[:M]), np.array(key[M:])
        r, c, a = space.transition(C, D)
        keep = r >= 0
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(coeff * a[keep])
    if rows:
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(space.dim, space.dim),
        )
    else:
        mat = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    return FockOperator(space, mat, kind)


def mode_ops(space: FockSpace):
    """Return lists ``(a, adag)`` of annihilation and creation operators per mode."""
    eye = np.eye(space.M)
    a = [operator_from_tensor(space, eye[i], 0) for i in range(space.M)]
    adag = [operator_from_tensor(space, eye[i], 1) for i in range(space.M)]
    return a, adag


def number_operator(space: FockSpace) -> FockOperator:
    mat = sp.diags(space.totals.astype(complex), format="csr")
    return FockOperator(space, mat, "hermitian")


def one_body(space: FockSpace, h) -> FockOperator:
    """``sum_ij h_ij a*_i a_j``."""
    h = np.asarray(h)
    kind = "hermitian" if np.allclose(h, h.conj().T, atol=1e-14) else None
    return operator_from_tensor(space, h, 1, kind)


def assemble_H(space: FockSpace, grid: Grid, v, N: float):
    """Return ``(H0, V, HN)`` with ``H0 = sum Lap_ij a*_i a_j``,
    ``V = sum v_ijl a*_i a*_j a*_l a_i a_j a_l`` and ``HN = H0 + V / (6 N^2)``.

    ``H0`` keeps the sign of the Laplacian (negative semidefinite kinetic part).
    """
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    if space.M != grid.M:
        raise ValueError("Fock space and grid disagree on the number of modes")
    H0 = one_body(space, grid.laplacian)
    varr = _potential_array(grid, v)
    M = grid.M
    t = np.zeros((M,) * 6)
    i, j, l = np.indices((M, M, M))
    t[i, j, l, i, j, l] = varr
    V = operator_from_tensor(space, t, 3, "hermitian")
    HN = FockOperator(space, H0.matrix + V.matrix / (6.0 * N**2), "hermitian")
    return H0, V, HN


def evolve(H: FockOperator, psi, t: float, tol: float = 1e-12) -> np.ndarray:
    """``exp(i t H) psi`` for a Hermitian-flagged ``H`` (note the ``+i`` sign)."""
    if H.kind != "hermitian":
        raise OperatorFlagError("evolve requires a hermitian-flagged operator")
    mat = H.matrix
    return expi_hermitian(mat.dot, psi, t, tol=tol)


_DUMP_MAGIC = b"BPFOCK"
_DUMP_VERSION = 1


def save_operator(op: FockOperator, path) -> None:
    """Binary dump: magic, version, M, n_max, dim, nnz, kind, then COO triplets.

    All fields little-endian; rows/cols int64, values complex128.
    """
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    kind = {"hermitian": 1, "skew": 2}.get(op.kind, 0)
    header = _DUMP_MAGIC + struct.pack(
        "<HqqqqB", _DUMP_VERSION, op.space.M, op.space.n_max, op.space.dim, coo.nnz, kind
    )
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(coo.row[order].astype("<i8").tobytes())
        fh.write(coo.col[order].astype("<i8").tobytes())
        fh.write(coo.data[order].astype("<c16").tobytes())


def load_operator(path, space: FockSpace | None = None) -> FockOperator:
    raw = Path(path).read_bytes()
    if not raw.startswith(_DUMP_MAGIC):
        raise ValueError(f"{path}: not an operator dump")
    off = len(_DUMP_MAGIC)
    version, M, n_max, dim, nnz, kind = struct.unpack_from("<HqqqqB", raw, off)
    if version != _DUMP_VERSION:
        raise ValueError(f"{path}: unsupported dump version {version}")
    off += struct.calcsize("<HqqqqB")
    rows = np.frombuffer(raw, "<i8", nnz, off)
    cols = np.frombuffer(raw, "<i8", nnz, off + 8 * nnz)
    data = np.frombuffer(raw, "<c16", nnz, off + 16 * nnz)
    space = space or FockSpace(M, n_max)
    if (space.M, space.n_max) != (M, n_max):
        raise ValueError(f"{path}: dump is for M={M}, n_max={n_max}")
    mat = sp.csr_matrix((data, (rows, cols)), shape=(dim, dim))
    return FockOperator(space, mat, {1: "hermitian", 2: "skew"}.get(kind))
