"""Deterministic linear algebra used by the truth and reduced solvers.

Sparse matrices are symmetric CSR (:class:`SparseSym`). Dense symmetric
matrices are plain 2-D numpy arrays. Each hot loop has a numba kernel and a
numpy fallback; see :mod:`ncrb._backend`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import njit, select


class LinAlgError(RuntimeError):
    pass


class ConvergenceError(LinAlgError):
    """Iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NotPositiveDefiniteError(LinAlgError):
    def __init__(self, pivot, value):
        super().__init__(f"matrix is not positive definite: pivot {pivot} = {value:.3e}")
        self.pivot = pivot
        self.value = value


# ---------------------------------------------------------------------------
# sparse storage


@dataclass(frozen=True, eq=False)
class SparseSym:
    """Structurally symmetric CSR matrix with sorted, unique column indices."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    @classmethod
    def from_coo(cls, rows, cols, vals, n) -> "SparseSym":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = rows * n + cols
        uniq, inverse = np.unique(keys, return_inverse=True)
        data = np.bincount(inverse.ravel(), weights=np.asarray(vals, dtype=np.float64), minlength=len(uniq))
        r = uniq // n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
        return cls(indptr, (uniq % n).astype(np.int64), data, int(n))

    def with_data(self, data) -> "SparseSym":
        return SparseSym(self.indptr, self.indices, np.ascontiguousarray(data, dtype=np.float64), self.n)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def diagonal(self) -> np.ndarray:
        rows = self.row_ids()
        d = np.zeros(self.n)
        mask = rows == self.indices
        d[rows[mask]] = self.data[mask]
        return d

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            return np.column_stack([csr_matvec(self.indptr, self.indices, self.data, x[:, j]) for j in range(x.shape[1])])
        return csr_matvec(self.indptr, self.indices, self.data, x)

    __matmul__ = matvec

    def quad(self, u, v=None) -> float:
        v = u if v is None else v
        return float(np.dot(v, self.matvec(u)))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        np.add.at(out, (self.row_ids(), self.indices), self.data)
        return out

    def check_structure(self) -> None:
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != self.nnz:
            raise LinAlgError("inconsistent row offsets")
        for i in range(self.n):
            c = self.indices[self.indptr[i] : self.indptr[i + 1]]
            if np.any(np.diff(c) <= 0):
                raise LinAlgError(f"row {i}: column indices not strictly increasing")
        rows = self.row_ids()
        fwd = set(zip(rows.tolist(), self.indices.tolist()))
        if any((j, i) not in fwd for i, j in fwd):
            raise LinAlgError("pattern is not structurally symmetric")


@njit
def _csr_matvec_nb(indptr, indices, data, x):
    n = len(indptr) - 1
    y = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s
    return y


def _csr_matvec_np(indptr, indices, data, x):
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(rows, weights=data * x[indices], minlength=n)


csr_matvec = select(_csr_matvec_nb, _csr_matvec_np)


# ---------------------------------------------------------------------------
# residual evaluated in doubled precision (TwoSum / TwoProduct)


@njit
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit
def _split(a):
    c = 134217729.0 * a  # 2**27 + 1
    hi = c - (c - a)
    return hi, a - hi


@njit
def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit
def _residual_nb(indptr, indices, data, x, b):
    n = len(indptr) - 1
    r = np.empty(n)
    for i in range(n):
        s = b[i]
        c = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            p, pe = _two_prod(data[k], x[indices[k]])
            s, se = _two_sum(s, -p)
            c += se - pe
        r[i] = s + c
    return r


def _residual_np(indptr, indices, data, x, b):
    n = len(indptr) - 1
    prod = data.astype(np.longdouble) * x[indices].astype(np.longdouble)
    sums = np.zeros(n, dtype=np.longdouble)
    nonempty = np.diff(indptr) > 0
    if prod.size:
        sums[nonempty] = np.add.reduceat(prod, indptr[:-1][nonempty])
    return (b.astype(np.longdouble) - sums).astype(np.float64)


residual = select(_residual_nb, _residual_np)


# ---------------------------------------------------------------------------
# conjugate gradients


@njit
def _pcg_nb(indptr, indices, data, inv_diag, r0, target, max_iter):
    """Jacobi-preconditioned CG on A d = r0 until ||r|| <= target."""
    n = len(r0)
    d = np.zeros(n)
    r = r0.copy()
    z = inv_diag * r
    p = z.copy()
    rz = np.dot(r, z)
    it = 0
    rnorm = np.sqrt(np.dot(r, r))
    while rnorm > target and it < max_iter:
        q = _csr_matvec_nb(indptr, indices, data, p)
        pq = np.dot(p, q)
        if pq <= 0.0:
            break
        alpha = rz / pq
        d += alpha * p
        r -= alpha * q
        z = inv_diag * r
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.sqrt(np.dot(r, r))
        it += 1
    return d, it


def _pcg_np(indptr, indices, data, inv_diag, r0, target, max_iter):
    n = len(r0)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    d = np.zeros(n)
    r = r0.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    it = 0
    while np.sqrt(r @ r) > target and it < max_iter:
        q = np.bincount(rows, weights=data * p[indices], minlength=n)
        pq = p @ q
        if pq <= 0.0:
            break
        alpha = rz / pq
        d += alpha * p
        r -= alpha * q
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return d, it


_pcg = select(_pcg_nb, _pcg_np)


def cg_solve(A: SparseSym, b, tol=1e-12, max_iter=None, x0=None, return_info=False):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Jacobi-preconditioned CG wrapped in residual refinement: the true
    residual is re-evaluated in doubled precision after each CG pass, so the
    contract ``||b - A x|| <= tol * ||b||`` holds for the returned ``x``.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = A.n
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        x[:] = 0.0
        return (x, {"iterations": 0, "residual": 0.0}) if return_info else x
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NotPositiveDefiniteError(int(np.argmin(diag)), float(diag.min()))
    inv_diag = 1.0 / diag
    target = 0.5 * tol * bnorm
    total = 0
    r = residual(A.indptr, A.indices, A.data, x, b)
    rnorm = np.linalg.norm(r)
    for _ in range(20):
        if rnorm <= tol * bnorm or total >= max_iter:
            break
        d, it = _pcg(A.indptr, A.indices, A.data, inv_diag, r, target, max_iter - total)
        total += it
        x += d
        r_new = residual(A.indptr, A.indices, A.data, x, b)
        rnew_norm = np.linalg.norm(r_new)
        if it == 0 or rnew_norm >= rnorm:
            r, rnorm = r_new, rnew_norm
            break
        r, rnorm = r_new, rnew_norm
    relres = rnorm / bnorm
    if relres > tol:
        raise ConvergenceError(
            f"CG did not reach tol={tol:.1e} (relative residual {relres:.3e} after {total} iterations)",
            residual=relres,
            iterations=total,
        )
    if return_info:
        return x, {"iterations": total, "residual": relres}
    return x


# ---------------------------------------------------------------------------
# dense Cholesky


@njit
def _cholesky_nb(A):
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return L, j, s
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, -1, 0.0


def _cholesky_np(A):
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j] - L[j, :j] @ L[j, :j]
        if not s > 0.0:
            return L, j, s
        L[j, j] = np.sqrt(s)
        L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L, -1, 0.0


_cholesky = select(_cholesky_nb, _cholesky_np)


@njit
def _chol_solve_nb(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


def _chol_solve_np(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x


chol_solve = select(_chol_solve_nb, _chol_solve_np)


def cholesky(A) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefiniteError` naming the pivot."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    L, pivot, value = _cholesky(A)
    if pivot >= 0:
        raise NotPositiveDefiniteError(int(pivot), float(value))
    return L


def dense_cholesky_solve(A, b) -> np.ndarray:
    L = cholesky(A)
    return chol_solve(L, np.ascontiguousarray(b, dtype=np.float64))


# ---------------------------------------------------------------------------
# symmetric eigenproblem: cyclic Jacobi


@njit
def _rotate_nb(A, V, p, q, c, s):
    n = A.shape[0]
    for k in range(n):
        akp = A[k, p]
        akq = A[k, q]
        A[k, p] = c * akp - s * akq
        A[k, q] = s * akp + c * akq
    for k in range(n):
        apk = A[p, k]
        aqk = A[q, k]
        A[p, k] = c * apk - s * aqk
        A[q, k] = s * apk + c * aqk
    for k in range(n):
        vkp = V[k, p]
        vkq = V[k, q]
        V[k, p] = c * vkp - s * vkq
        V[k, q] = s * vkp + c * vkq


@njit
def _off_norm_nb(A):
    n = A.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += A[i, j] * A[i, j]
    return np.sqrt(s)


@njit
def _jacobi_nb(A, tol, max_sweeps):
    n = A.shape[0]
    A = A.copy()
    V = np.eye(n)
    scale = np.sqrt(np.sum(A * A))
    off = _off_norm_nb(A)
    sweeps = 0
    while off > tol * scale and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                if abs(apq) <= 1e-18 * np.sqrt(abs(A[p, p] * A[q, q])):
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotation in the (p, q) plane that zeroes A[p, q]
                _rotate_nb(A, V, p, q, c, s)
        sweeps += 1
        off = _off_norm_nb(A)
    return np.diag(A).copy(), V, off, sweeps


def _jacobi_np(A, tol, max_sweeps):
    n = A.shape[0]
    A = A.copy()
    V = np.eye(n)
    scale = np.sqrt(np.sum(A * A))

    def off_norm(M):
        # direct sum; subtracting the diagonal from the full norm cancels badly
        D = M - np.diag(np.diag(M))
        return np.sqrt(np.sum(D * D))

    off = off_norm(A)
    sweeps = 0
    while off > tol * scale and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                if abs(apq) <= 1e-18 * np.sqrt(abs(A[p, p] * A[q, q])):
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.copysign(1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0)), theta)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                R = np.array([[c, s], [-s, c]])
                A[:, [p, q]] = A[:, [p, q]] @ R
                A[[p, q], :] = R.T @ A[[p, q], :]
                V[:, [p, q]] = V[:, [p, q]] @ R
        sweeps += 1
        off = off_norm(A)
    return np.diag(A).copy(), V, off, sweeps


_jacobi = select(_jacobi_nb, _jacobi_np)


def sym_eigen_desc(A, tol=1e-15, max_sweeps=60):
    """Eigenpairs of a symmetric matrix, eigenvalues in descending order.

    Cyclic Jacobi with a fixed (row-major) pivot order, so the result is
    reproducible bit for bit. Each eigenvector is signed so that its entry of
    largest magnitude is positive.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(A)):
        raise LinAlgError("matrix has non-finite entries")
    scale = max(np.abs(A).max(initial=0.0), 1e-300)
    if np.abs(A - A.T).max(initial=0.0) > 1e-12 * scale:
        raise LinAlgError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    w, V, off, sweeps = _jacobi(A, tol, max_sweeps)
    if off > max(tol, 1e-13) * np.sqrt(np.sum(A * A)):
        raise ConvergenceError(f"Jacobi did not converge after {sweeps} sweeps (off-diagonal norm {off:.3e})", residual=off)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return w, V * signs


# ---------------------------------------------------------------------------
# least squares


def householder_qr(A):
    """Compact Householder QR: returns (reflectors, betas, R)."""
    A = np.array(A, dtype=np.float64)
    m, p = A.shape
    vs, betas = [], []
    for k in range(min(m, p)):
        x = A[k:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            v = np.zeros_like(x)
            v[0] = 1.0
            vs.append(v)
            betas.append(0.0)
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        beta = 2.0 / (v @ v)
        A[k:, k:] -= beta * np.outer(v, v @ A[k:, k:])
        vs.append(v)
        betas.append(beta)
    return vs, betas, np.triu(A[:p, :p]) if m >= p else np.triu(A)


def _apply_qt(vs, betas, B):
    B = np.array(B, dtype=np.float64)
    for k, (v, beta) in enumerate(zip(vs, betas)):
        if beta:
            B[k:] -= beta * np.outer(v, v @ B[k:])
    return B


def _back_substitute(R, B):
    p = R.shape[0]
    X = np.zeros_like(B)
    for i in range(p - 1, -1, -1):
        X[i] = (B[i] - R[i, i + 1 :] @ X[i + 1 :]) / R[i, i]
    return X


def least_squares(design, targets, rank_tol=1e-12):
    """Minimize ``||design @ C - targets||_F`` via Householder QR.

    Columns are scaled to unit norm before factorization. If the scaled
    triangular factor has a diagonal entry below ``rank_tol`` relative to
    the largest one, the problem is treated as rank deficient and solved as
    ridge regression with ``delta**2 = 1e-12 * (max column norm)**2``.
    """
    D = np.asarray(design, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    vector_target = T.ndim == 1
    if vector_target:
        T = T[:, None]
    m, p = D.shape
    if m < p:
        raise ValueError(f"underdetermined least squares: {m} rows < {p} columns")
    if T.shape[0] != m:
        raise ValueError("design and targets row counts differ")
    norms = np.linalg.norm(D, axis=0)
    norms[norms == 0] = 1.0
    Ds = D / norms
    vs, betas, R = householder_qr(Ds)
    rdiag = np.abs(np.diag(R))
    if rdiag.min() <= rank_tol * rdiag.max():
        delta = np.sqrt(1e-12) * 1.0  # scaled columns have unit norm
        Ds = np.vstack([Ds, delta * np.eye(p)])
        T_aug = np.vstack([T, np.zeros((p, T.shape[1]))])
        vs, betas, R = householder_qr(Ds)
        QtB = _apply_qt(vs, betas, T_aug)
    else:
        QtB = _apply_qt(vs, betas, T)
    C = _back_substitute(R, QtB[:p]) / norms[:, None]
    return C[:, 0] if vector_target else C
