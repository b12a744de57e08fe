"""Lanczos propagation of ``exp(i t H) psi`` for Hermitian ``H``.

The step size is adapted with the usual a-posteriori estimate
``beta * h_{m+1,m} * |[exp(i tau T_m) e_1]_m|``; the Krylov basis is
reorthogonalized in full so the propagated norm is exact to roundoff.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = ["KrylovStagnation", "expi_hermitian"]


class KrylovStagnation(RuntimeError):
    """Raised when the requested accuracy cannot be reached within budget."""


def _lanczos(matvec, v0: np.ndarray, m: int):
    n = v0.shape[0]
    m = min(m, n)
    V = np.empty((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v0
    for j in range(m):
        w = np.asarray(matvec(V[j]), dtype=complex)
        alpha[j] = np.vdot(V[j], w).real
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if b <= 1e-13 * max(1.0, abs(alpha[j])):
            return V[: j + 1], alpha[: j + 1], beta[:j], 0.0
        V[j + 1] = w / b
    return V[:m], alpha, beta[: m - 1], beta[m - 1]


def _tridiag_exp_e1(alpha, beta, tau):
    if alpha.size == 1:
        return np.array([np.exp(1j * tau * alpha[0])])
    w, Q = eigh_tridiagonal(alpha, beta)
    return Q @ (np.exp(1j * tau * w) * Q[0])


def expi_hermitian(matvec, psi, t: float, *, tol: float = 1e-12, m: int = 30, max_steps: int = 100_000):
    """Return ``exp(i t H) psi`` where ``matvec(x) = H @ x`` and ``H`` is Hermitian.

    ``tol`` bounds the estimated error per unit time relative to ``|psi|``.
    """
    psi = np.array(psi, dtype=complex)
    nrm = np.linalg.norm(psi)
    if t == 0 or nrm == 0:
        return psi
    sign = 1.0 if t > 0 else -1.0
    T = abs(t)
    done = 0.0
    tau = T
    steps = 0
    while done < T:
        steps += 1
        if steps > max_steps:
            raise KrylovStagnation(f"no convergence after {max_steps} substeps (t={t}, reached {done})")
        beta0 = np.linalg.norm(psi)
        V, alpha, beta, h_next = _lanczos(matvec, psi / beta0, m)
        tau = min(tau, T - done)
        while True:
            y = _tridiag_exp_e1(alpha, beta, sign * tau)
            err = beta0 * h_next * abs(y[-1])
            if err <= tol * nrm * tau / T or h_next == 0.0:
                break
            target = tol * nrm * tau / T
            tau *= min(0.5, max(0.1, 0.9 * (target / err) ** (1.0 / alpha.size)))
            if tau < 1e-14 * T:
                raise KrylovStagnation(f"substep collapsed to {tau:.3e} at t={done:.6g}")
        psi = beta0 * (y @ V)
        done += tau
        if h_next == 0.0:
            tau = T - done
        else:
            tau = min(2.0 * tau, T - done) if done < T else tau
    return psi
