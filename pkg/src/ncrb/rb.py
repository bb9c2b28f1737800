"""Classical reduced basis online solve and error reporting."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._backend import njit, select
from .fem import AffineOperator, output_compliant, solve_truth, theta
from .linalg import (
    NotPositiveDefiniteError,
    _chol_solve_nb,
    _cholesky_nb,
    _cholesky_np,
    chol_solve,
    cholesky,
    least_squares,
)
from .pod import PODBasis, ReducedOperator, parallel_map


@dataclass(frozen=True, eq=False)
class RBSolution:
    coef: np.ndarray
    mu: np.ndarray
    s: float
    seconds: float = 0.0

    def record(self) -> dict:
        N = len(self.coef)
        return {
            "mu": self.mu.tolist(),
            "coef": self.coef.tolist(),
            "s_N": self.s,
            "seconds": self.seconds,
            "flops": N**3 / 3 + (len(self.mu) + 1) * N**2,
        }


def solve_rb(red: ReducedOperator, mu) -> RBSolution:
    t0 = time.perf_counter()
    mu = np.asarray(mu, dtype=np.float64)
    A = red.matrix(mu)
    L = cholesky(A)
    coef = chol_solve(L, red.f)
    return RBSolution(coef, mu, float(coef @ red.f), time.perf_counter() - t0)


@njit
def _rb_batch_nb(blocks, f, thetas):
    M = thetas.shape[0]
    Q, N, _ = blocks.shape
    out = np.empty((M, N))
    status = -1
    for m in range(M):
        A = np.zeros((N, N))
        for q in range(Q):
            A += thetas[m, q] * blocks[q]
        L, piv, _ = _cholesky_nb(A)
        if piv >= 0:
            status = m
            break
        out[m] = _chol_solve_nb(L, f)
    return out, status


def _rb_batch_np(blocks, f, thetas):
    A = np.einsum("mq,qij->mij", thetas, blocks)
    out = np.empty((len(thetas), len(f)))
    for m in range(len(thetas)):
        L, piv, _ = _cholesky_np(A[m])
        if piv >= 0:
            return out, m
        out[m] = chol_solve(L, f)
    return out, -1


_rb_batch = select(_rb_batch_nb, _rb_batch_np)


def solve_rb_batch(red: ReducedOperator, mus) -> np.ndarray:
    """Reduced coefficients for many parameters, one row per parameter."""
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    U, status = _rb_batch(np.ascontiguousarray(red.blocks), red.f, np.ascontiguousarray(theta(mus)))
    if status >= 0:
        raise NotPositiveDefiniteError(int(status), float("nan"))
    return U


@dataclass(eq=False)
class TruthCache:
    """Truth solutions for a fixed test set, computed once and reused."""

    op: AffineOperator
    mus: np.ndarray
    tol: float = 1e-12
    threads: int = None
    U: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mus = np.atleast_2d(np.asarray(self.mus, dtype=np.float64))
        cols = parallel_map(lambda m: solve_truth(self.op, m, self.tol).u, self.mus, self.threads)
        self.U = np.column_stack(cols)

    def outputs(self) -> np.ndarray:
        return self.op.f @ self.U


def relative_errors(op: AffineOperator, Z, truth: TruthCache, coefs):
    """Relative energy, output and X errors of reduced coefficient rows against the truth."""
    energy, output, xerr = [], [], []
    for j, mu in enumerate(truth.mus):
        u = truth.U[:, j]
        A = op.matrix(mu)
        e = u - Z[:, : coefs.shape[1]] @ coefs[j]
        s = output_compliant(op, u)
        sN = float(op.f @ (Z[:, : coefs.shape[1]] @ coefs[j]))
        energy.append(np.sqrt(max(A.quad(e), 0.0) / A.quad(u)))
        output.append(abs(s - sN) / abs(s))
        xerr.append(np.sqrt(op.X.quad(e) / op.X.quad(u)))
    return np.array(energy), np.array(output), np.array(xerr)


def rb_errors(op: AffineOperator, basis: PODBasis, red: ReducedOperator, mus, N_values=None, truth=None):
    """Error table rows ``(N, mean_energy, max_energy, mean_output, max_output)``."""
    truth = truth if truth is not None else TruthCache(op, mus)
    if N_values is None:
        N_values = range(1, red.N + 1)
    rows = []
    for N in N_values:
        coefs = solve_rb_batch(red.truncate(N), truth.mus)
        en, out, _ = relative_errors(op, basis.Z, truth, coefs)
        rows.append((int(N), en.mean(), en.max(), out.mean(), out.max()))
    return rows


def compliant_identity_check(op: AffineOperator, basis: PODBasis, red: ReducedOperator, mu, truth_u=None):
    """Return ``(s - s_N, ||u_h - u_N||_a^2)``; for a compliant problem they agree."""
    mu = np.asarray(mu, dtype=np.float64)
    u = truth_u if truth_u is not None else solve_truth(op, mu).u
    sol = solve_rb(red, mu)
    uN = basis.Z[:, : red.N] @ sol.coef
    s = output_compliant(op, u)
    e = u - uN
    return s - sol.s, op.matrix(mu).quad(e)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x)), np.log(np.asarray(y))
    A = np.column_stack([lx, np.ones_like(lx)])
    return float(least_squares(A, ly)[0])
