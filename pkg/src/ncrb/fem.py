"""Affine P1 finite element discretization of the thermal fin problem.

The bilinear form splits as

    a(u, v; mu) = sum_q theta_q(mu) a_q(u, v),
    theta(mu) = (1, k_1, ..., k_nfins, Bi),

with a_0 the post stiffness, a_i the stiffness of subfin i and the last
block the Robin term on the exterior boundary. The load is the unit flux
on the root, which is also the output functional.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import EXT, ROOT, Mesh
from .linalg import ConvergenceError, SparseSym, cg_solve

DEFAULT_K_RANGE = (0.1, 10.0)
DEFAULT_BI_RANGE = (0.01, 1.0)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterVector:
    """Subfin conductivities (relative to the post) and the Biot number."""

    k: tuple
    Bi: float

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        if min(self.k + (self.Bi,)) <= 0 or not np.all(np.isfinite(self.as_array())):
            raise ParameterError(f"parameters must be finite and positive: {self}")

    @property
    def P(self) -> int:
        return len(self.k) + 1

    def as_array(self) -> np.ndarray:
        return np.array(self.k + (float(self.Bi),))

    @classmethod
    def from_array(cls, mu) -> "ParameterVector":
        mu = np.asarray(mu, dtype=np.float64)
        return cls(tuple(mu[:-1]), float(mu[-1]))

    def to_json(self) -> str:
        return json.dumps({"k": list(self.k), "Bi": self.Bi})

    @classmethod
    def from_json(cls, text) -> "ParameterVector":
        obj = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(obj["k"]), obj["Bi"])


def theta(mu) -> np.ndarray:
    """Affine coefficients (1, k_1..k_nfins, Bi) for one or many parameter rows."""
    mu = np.asarray(mu, dtype=np.float64)
    ones = np.ones(mu.shape[:-1] + (1,))
    return np.concatenate([ones, mu], axis=-1)


@dataclass(frozen=True)
class DesignSet:
    """Box of admissible parameters with a sampling law per component.

    Components not in ``active`` are frozen at the midpoint of their range,
    measured in the coordinate of their law (geometric mean for ``log``).
    """

    lo: tuple
    hi: tuple
    laws: tuple
    active: tuple = None

    def __post_init__(self):
        n = len(self.lo)
        if len(self.hi) != n or len(self.laws) != n:
            raise ParameterError("lo, hi and laws must have equal length")
        for lo, hi, law in zip(self.lo, self.hi, self.laws):
            if not 0 < lo < hi:
                raise ParameterError(f"invalid range [{lo}, {hi}]")
            if law not in ("log", "uniform"):
                raise ParameterError(f"unknown sampling law {law!r}")
        if self.active is None:
            object.__setattr__(self, "active", (True,) * n)
        object.__setattr__(self, "active", tuple(bool(a) for a in self.active))

    @property
    def P(self) -> int:
        """Number of varying components."""
        return int(sum(self.active))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @classmethod
    def default(cls, n_fins, n_active=None) -> "DesignSet":
        """Standard fin ranges; ``n_active=p`` varies Bi and the first p-1 conductivities."""
        lo = (DEFAULT_K_RANGE[0],) * n_fins + (DEFAULT_BI_RANGE[0],)
        hi = (DEFAULT_K_RANGE[1],) * n_fins + (DEFAULT_BI_RANGE[1],)
        laws = ("log",) * (n_fins + 1)
        if n_active is None:
            n_active = n_fins + 1
        if not 1 <= n_active <= n_fins + 1:
            raise ParameterError(f"n_active must lie in [1, {n_fins + 1}]")
        active = tuple(i < n_active - 1 for i in range(n_fins)) + (True,)
        return cls(lo, hi, laws, active)

    def midpoint(self) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        geo = np.sqrt(lo * hi)
        return np.where(np.array(self.laws) == "log", geo, 0.5 * (lo + hi))

    def from_unit(self, u) -> np.ndarray:
        """Map points of the unit cube (active coordinates only) into the design box."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        lo, hi = np.array(self.lo), np.array(self.hi)
        act = np.array(self.active)
        out = np.tile(self.midpoint(), (u.shape[0], 1))
        log = np.array(self.laws) == "log"
        full = np.zeros((u.shape[0], self.dim))
        full[:, act] = u
        vals = np.where(log, np.exp(np.log(lo) + full * (np.log(hi) - np.log(lo))), lo + full * (hi - lo))
        out[:, act] = vals[:, act]
        return out

    def contains(self, mu, rtol=1e-12) -> bool:
        mu = np.asarray(mu)
        return bool(np.all(mu >= np.array(self.lo) * (1 - rtol)) and np.all(mu <= np.array(self.hi) * (1 + rtol)))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "laws": list(self.laws), "active": list(self.active)}

    @classmethod
    def from_dict(cls, d) -> "DesignSet":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["laws"]), tuple(d.get("active", [True] * len(d["lo"]))))


@dataclass(frozen=True, eq=False)
class AffineOperator:
    indptr: np.ndarray
    indices: np.ndarray
    blocks: np.ndarray  # (Q, nnz) values of each A_q on the shared pattern
    f: np.ndarray
    x_data: np.ndarray  # H1 inner product on the shared pattern
    n_fins: int
    mesh_hash: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def Q(self) -> int:
        return self.blocks.shape[0]

    @property
    def n(self) -> int:
        return len(self.f)

    def block(self, q) -> SparseSym:
        return SparseSym(self.indptr, self.indices, self.blocks[q], self.n)

    @property
    def X(self) -> SparseSym:
        return SparseSym(self.indptr, self.indices, self.x_data, self.n)

    def matrix(self, mu) -> SparseSym:
        th = theta(mu)
        if th.shape != (self.Q,):
            raise ParameterError(f"expected {self.Q - 1} parameters, got {th.shape[0] - 1}")
        return SparseSym(self.indptr, self.indices, th @ self.blocks, self.n)


def _p1_local(mesh: Mesh):
    """Closed-form P1 stiffness (unit conductivity) and mass matrices per triangle."""
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    # b_i = y_j - y_k, c_i = x_k - x_j for cyclic (i, j, k)
    b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    area = mesh.signed_areas()
    K = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area)[:, None, None]
    M = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    return K, M


def _edge_mass(mesh: Mesh):
    L = mesh.edge_lengths()
    return np.array([[2.0, 1.0], [1.0, 2.0]])[None] * (L / 6.0)[:, None, None]


def assemble_affine(mesh: Mesh) -> AffineOperator:
    if np.any((mesh.regions < 0) | (mesh.regions > mesh.n_fins)):
        raise ValueError("mesh has untagged triangles")
    if np.any((mesh.edge_tags != ROOT) & (mesh.edge_tags != EXT)):
        raise ValueError("mesh has untagged boundary edges")
    n = mesh.n_nodes
    Q = mesh.n_fins + 2
    K, M = _p1_local(mesh)
    Me = _edge_mass(mesh)
    tri, edg = mesh.triangles, mesh.edges

    t_rows = np.repeat(tri, 3, axis=1).ravel()
    t_cols = np.tile(tri, (1, 3)).ravel()
    e_rows = np.repeat(edg, 2, axis=1).ravel()
    e_cols = np.tile(edg, (1, 2)).ravel()
    keys = np.concatenate([t_rows * n + t_cols, e_rows * n + e_cols])
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.ravel()
    nnz = len(uniq)
    t_pos, e_pos = inverse[: t_rows.size], inverse[t_rows.size :]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(uniq // n, minlength=n), out=indptr[1:])
    indices = (uniq % n).astype(np.int64)

    blocks = np.zeros((Q, nnz))
    kvals = K.reshape(len(tri), 9)
    for q in range(mesh.n_fins + 1):
        sel = np.repeat(mesh.regions == q, 9)
        blocks[q] = np.bincount(t_pos[sel], weights=kvals.ravel()[sel], minlength=nnz)
    ext = np.repeat(mesh.edge_tags == EXT, 4)
    blocks[Q - 1] = np.bincount(e_pos[ext], weights=Me.reshape(-1)[ext], minlength=nnz)

    x_data = np.bincount(t_pos, weights=(K + M).reshape(-1), minlength=nnz)

    f = np.zeros(n)
    root = mesh.edges[mesh.edge_tags == ROOT]
    L = mesh.edge_lengths()[mesh.edge_tags == ROOT]
    np.add.at(f, root[:, 0], 0.5 * L)
    np.add.at(f, root[:, 1], 0.5 * L)
    return AffineOperator(indptr, indices, blocks, f, x_data, mesh.n_fins, mesh.content_hash())


@dataclass(frozen=True, eq=False)
class TruthSolution:
    u: np.ndarray
    mu: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def solve_truth(op: AffineOperator, mu, tol=1e-12) -> TruthSolution:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (op.Q - 1,) or np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise ParameterError(f"inadmissible parameter vector {mu}")
    u, info = cg_solve(op.matrix(mu), op.f, tol=tol, return_info=True)
    return TruthSolution(u, mu, info["iterations"], info["residual"])


def output_compliant(op: AffineOperator, u) -> float:
    """Root-averaged temperature; the load vector doubles as the output functional."""
    u = getattr(u, "u", u)
    return float(op.f @ u)


def _checked_sqrt(q, what):
    if q < -1e-12:
        raise ValueError(f"negative {what} quadratic form {q:.3e}")
    return float(np.sqrt(max(q, 0.0)))


def energy_norm(op: AffineOperator, mu, v) -> float:
    v = np.asarray(getattr(v, "u", v), dtype=np.float64)
    return _checked_sqrt(op.matrix(mu).quad(v), "energy")


def x_norm(op: AffineOperator, v) -> float:
    v = np.asarray(getattr(v, "u", v), dtype=np.float64)
    return _checked_sqrt(op.X.quad(v), "X")


__all__ = [
    "AffineOperator",
    "ConvergenceError",
    "DesignSet",
    "ParameterError",
    "ParameterVector",
    "TruthSolution",
    "assemble_affine",
    "energy_norm",
    "output_compliant",
    "solve_truth",
    "theta",
    "x_norm",
]
