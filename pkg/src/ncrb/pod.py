"""Offline stage: parameter sampling, truth snapshots, POD and Galerkin
projection of the affine operator."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fem import AffineOperator, DesignSet, solve_truth
from .linalg import ConvergenceError, sym_eigen_desc

DESK_M = {1: 200, 2: 200, 3: 500, 4: 500, 5: 500}


class PODError(ValueError):
    pass


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = int(os.environ.get("NCRB_THREADS", "1") or 1)
    return max(1, int(threads))


def parallel_map(fn, items, threads=None):
    """Ordered map; results are merged by index so thread count never changes them."""
    threads = resolve_threads(threads)
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def array_hash(*arrays) -> str:
    sha = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        sha.update(str(a.shape).encode())
        sha.update(a.tobytes())
    return sha.hexdigest()[:16]


# ---------------------------------------------------------------------------
# sampling


def sample_parameters(design: DesignSet, M: int, seed: int, law: str = "random") -> np.ndarray:
    """Draw ``M`` parameter vectors, one row each.

    ``law="random"``: sample ``i`` comes from its own generator seeded with
    ``(seed, i)``, so any prefix or subset is reproducible on its own.
    ``law="grid"``: a tensor grid with ``M`` points per active component,
    endpoints included (spacing follows each component's law).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    act = int(sum(design.active))
    if law == "random":
        u = np.empty((M, act))
        for i in range(M):
            u[i] = np.random.default_rng([int(seed), i]).random(act)
        return design.from_unit(u)
    if law == "grid":
        axis = np.linspace(0.0, 1.0, M) if M > 1 else np.array([0.5])
        mesh = np.meshgrid(*([axis] * act), indexing="ij")
        u = np.stack([m.ravel() for m in mesh], axis=1)
        return design.from_unit(u)
    raise ValueError(f"unknown sampling law {law!r}")


# ---------------------------------------------------------------------------
# snapshots


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    mus: np.ndarray  # (M, n_params)
    S: np.ndarray  # (N_h, M)
    seed: int = 0
    tol: float = 1e-12
    design: DesignSet = None

    @property
    def M(self) -> int:
        return self.S.shape[1]


def compute_snapshots(op: AffineOperator, mus, tol=1e-12, seed=0, design=None, threads=None) -> SnapshotSet:
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))

    def one(i):
        try:
            return solve_truth(op, mus[i], tol=tol).u
        except ConvergenceError as exc:
            raise ConvergenceError(f"snapshot {i} (mu={mus[i].tolist()}): {exc}", exc.residual) from exc

    cols = parallel_map(one, range(len(mus)), threads)
    return SnapshotSet(mus, np.column_stack(cols), seed, tol, design)


def build_correlation(S, X) -> np.ndarray:
    """C_ij = <u_i, u_j>_X for snapshot columns ``S``."""
    S = np.asarray(getattr(S, "S", S), dtype=np.float64)
    if S.shape[0] != X.n:
        raise ValueError(f"snapshot length {S.shape[0]} does not match X dimension {X.n}")
    C = S.T @ X.matvec(S)
    return 0.5 * (C + C.T)


# ---------------------------------------------------------------------------
# POD


def ric_truncation(eigenvalues, eps) -> int:
    """Smallest N whose relative information content is at least ``1 - eps**2``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = lam.sum()
    if total <= 0:
        raise PODError("all eigenvalues are zero")
    # tail sums are summed smallest-first so they stay accurate near 1e-12
    tails = np.cumsum(lam[::-1])[::-1] / total  # tails[j] = sum_{i>=j} / total
    tails = np.append(tails, 0.0)
    ok = np.nonzero(tails[1:] <= eps * eps)[0]
    return int(ok[0] + 1)


def information_content(eigenvalues) -> np.ndarray:
    """I(N) for N = 1..M."""
    lam = np.asarray(eigenvalues)
    return np.cumsum(lam) / lam.sum()


def x_gram_schmidt(Z, X, passes=2) -> np.ndarray:
    """Modified Gram-Schmidt in the X inner product, column order preserved."""
    Z = np.array(Z, dtype=np.float64)
    for _ in range(passes):
        for i in range(Z.shape[1]):
            for j in range(i):
                Z[:, i] -= (Z[:, j] @ X.matvec(Z[:, i])) * Z[:, j]
            Z[:, i] /= np.sqrt(Z[:, i] @ X.matvec(Z[:, i]))
    return Z


@dataclass(frozen=True, eq=False)
class PODBasis:
    eigenvalues: np.ndarray  # all M, descending, clamped at 0
    Z: np.ndarray  # (N_h, N), X-orthonormal
    eps: float = None

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues > 0))

    def truncate(self, N) -> "PODBasis":
        if not 0 <= N <= self.N:
            raise ValueError(f"cannot truncate a {self.N}-mode basis to {N}")
        return PODBasis(self.eigenvalues, self.Z[:, :N].copy(), self.eps)

    def content_hash(self) -> str:
        return array_hash(self.Z)


def pod(snapshots, X, eps=None, N=None, clamp=1e-14) -> PODBasis:
    """POD by the method of snapshots in the X inner product.

    Exactly one of ``eps`` (truncation by relative information content) or
    ``N`` (explicit size) may be given; with neither, every mode with a
    positive eigenvalue is kept. Modes are ``zeta_i = S V_i / sqrt(lambda_i)``
    followed by an X-orthonormalization pass.
    """
    if eps is not None and N is not None:
        raise ValueError("give eps or N, not both")
    S = np.asarray(getattr(snapshots, "S", snapshots), dtype=np.float64)
    C = build_correlation(S, X)
    lam, V = sym_eigen_desc(C)
    if lam[0] <= 0:
        raise PODError("degenerate snapshot set: no positive eigenvalue")
    lam = np.where(lam < clamp * lam[0], 0.0, lam)
    rank = int(np.count_nonzero(lam > 0))
    if eps is not None:
        n_keep = ric_truncation(lam, eps)
    elif N is not None:
        n_keep = int(N)
        if n_keep < 0 or n_keep > len(lam):
            raise ValueError(f"N={N} outside [0, {len(lam)}]")
    else:
        n_keep = rank
    n_keep = min(n_keep, rank)
    Z = S @ (V[:, :n_keep] / np.sqrt(lam[:n_keep]))
    Z = x_gram_schmidt(Z, X)
    return PODBasis(lam, Z, eps)


def projection_error_identity(snapshots, basis: PODBasis, X):
    """Both sides of the POD optimality identity.

    Returns ``(sum_mu ||u_mu - Pi_N u_mu||_X^2, sum_{i>N} lambda_i)``; the
    left side is computed from explicit residual vectors.
    """
    S = np.asarray(getattr(snapshots, "S", snapshots), dtype=np.float64)
    Z = basis.Z
    if Z.shape[1]:
        R = S - Z @ (Z.T @ X.matvec(S))
    else:
        R = S
    lhs = float(np.einsum("ij,ij->", R, X.matvec(R)))
    rhs = float(np.sort(basis.eigenvalues[basis.N :]).sum())
    return lhs, rhs


# ---------------------------------------------------------------------------
# reduced operator


@dataclass(frozen=True, eq=False)
class ReducedOperator:
    blocks: np.ndarray  # (Q, N, N)
    f: np.ndarray  # (N,)
    provenance: dict

    @property
    def N(self) -> int:
        return len(self.f)

    @property
    def Q(self) -> int:
        return self.blocks.shape[0]

    @property
    def basis_hash(self) -> str:
        return self.provenance.get("basis_hash", "")

    def matrix(self, mu) -> np.ndarray:
        from .fem import theta

        return np.tensordot(theta(mu), self.blocks, axes=1)

    def truncate(self, N) -> "ReducedOperator":
        """Galerkin system on the first ``N`` modes (the leading blocks)."""
        if not 1 <= N <= self.N:
            raise ValueError(f"cannot truncate N={self.N} to {N}")
        prov = dict(self.provenance)
        prov["basis_hash"] = f"{self.basis_hash}:{N}" if N < self.N else self.basis_hash
        prov["N"] = N
        return ReducedOperator(self.blocks[:, :N, :N].copy(), self.f[:N].copy(), prov)


def project_operators(op: AffineOperator, basis: PODBasis, **provenance) -> ReducedOperator:
    Z = basis.Z
    blocks = np.empty((op.Q, basis.N, basis.N))
    for q in range(op.Q):
        B = Z.T @ op.block(q).matvec(Z)
        blocks[q] = 0.5 * (B + B.T)
    prov = {"mesh_hash": op.mesh_hash, "basis_hash": basis.content_hash(), "N": basis.N, "eps": basis.eps}
    prov.update(provenance)
    return ReducedOperator(blocks, Z.T @ op.f, prov)


# ---------------------------------------------------------------------------
# N(eps) versus parameter dimension


def n_of_eps_curve(op: AffineOperator, p_values, eps_values, M=None, seed=0, tol=1e-12, threads=None):
    """Rows ``(P, eps, N)``: POD size needed for each accuracy and active parameter count.

    ``M=None`` picks the desk default for each P (see ``DESK_M``).
    """
    rows = []
    spectra = {}
    for p in p_values:
        design = DesignSet.default(op.n_fins, p)
        m = M if M is not None else DESK_M.get(p, 500)
        mus = sample_parameters(design, m, seed)
        snaps = compute_snapshots(op, mus, tol=tol, seed=seed, design=design, threads=threads)
        lam, _ = sym_eigen_desc(build_correlation(snaps, op.X))
        lam = np.where(lam < 1e-14 * lam[0], 0.0, lam)
        spectra[p] = lam
        for eps in eps_values:
            rows.append((p, float(eps), ric_truncation(lam, eps)))
    return rows, spectra
