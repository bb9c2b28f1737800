"""Online nonlinear compressive RB solve.

Only the leading ``n`` coefficients are unknowns. The remaining ``N - n`` are
supplied by a decoder and the residual is projected onto the first ``n``
modes. The resulting fixed-point problem is solved by Picard iteration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .decoders.base import Decoder, Normalizer
from .fem import theta
from .linalg import chol_solve, cholesky
from .pod import PODBasis, ReducedOperator, parallel_map
from .rb import TruthCache, relative_errors, solve_rb

VARIANTS = ("block", "relaxed")
INITS = ("rb_n", "zero")


class ProvenanceError(ValueError):
    """Decoder and reduced operator come from different bases."""


class NCRBDivergenceError(ArithmeticError):
    def __init__(self, iteration):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class NCRBConfig:
    n: int
    variant: str = "block"
    gamma: float = None  # relaxed step; None -> 1 / max diag(A_nn)
    omega: float = 1.0
    tol: float = 1e-10
    max_iter: int = 100
    init: str = "rb_n"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class NCRBSolution:
    head: np.ndarray
    tail: np.ndarray
    mu: np.ndarray
    s: float
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    flops: float = 0.0
    seconds: float = 0.0
    variant: str = "block"

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.head, self.tail])

    def record(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "n": len(self.head),
            "variant": self.variant,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_history": list(self.residuals),
            "s": self.s,
            "flops": self.flops,
            "seconds": self.seconds,
        }


def check_provenance(red: ReducedOperator, decoder: Decoder, n: int) -> None:
    if not 1 <= n < red.N:
        raise ValueError(f"need 1 <= n < N={red.N}, got n={n}")
    if decoder.n_in != n or decoder.n_out != red.N - n:
        raise ProvenanceError(
            f"decoder maps {decoder.n_in} -> {decoder.n_out} coefficients, solver needs {n} -> {red.N - n}"
        )
    meta = decoder.meta
    if "basis_hash" in meta and meta["basis_hash"] != red.basis_hash:
        raise ProvenanceError(f"decoder basis {meta['basis_hash']} differs from operator basis {red.basis_hash}")
    if "N" in meta and int(meta["N"]) != red.N:
        raise ProvenanceError(f"decoder trained for N={meta['N']}, operator has N={red.N}")


def solve_ncrb(red: ReducedOperator, decoder: Decoder, mu, cfg: NCRBConfig, check=True) -> NCRBSolution:
    t0 = time.perf_counter()
    n, N = cfg.n, red.N
    if check:
        check_provenance(red, decoder, n)
    mu = np.asarray(mu, dtype=np.float64)
    # only the first n rows of the reduced matrix are needed
    th = theta(mu)
    rows = np.tensordot(th, red.blocks[:, :n, :], axes=1)
    A_nn, A_nt = rows[:, :n], rows[:, n:]
    f_n = red.f[:n]
    f_norm = float(np.linalg.norm(f_n)) or 1.0
    pc = decoder.predict_cost()
    flops = red.Q * n * N

    L = None
    if cfg.variant == "block" or cfg.init == "rb_n":
        L = cholesky(A_nn)
        flops += n**3 / 3
    if cfg.init == "rb_n":
        head = chol_solve(L, f_n)
        flops += n**2
    else:
        head = np.zeros(n)
    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / float(np.max(np.diag(A_nn)))

    tail = decoder.predict(head)
    flops += pc
    residuals, increments = [], []
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        if cfg.variant == "block":
            new = chol_solve(L, f_n - A_nt @ tail)
            if cfg.omega != 1.0:
                new = (1.0 - cfg.omega) * head + cfg.omega * new
        else:
            new = head + gamma * (f_n - A_nn @ head - A_nt @ tail)
        if not np.all(np.isfinite(new)):
            raise NCRBDivergenceError(k)
        inc = float(np.linalg.norm(new - head)) / max(float(np.linalg.norm(new)), np.finfo(float).tiny)
        head = new
        tail = decoder.predict(head)
        if not np.all(np.isfinite(tail)):
            raise NCRBDivergenceError(k)
        res = float(np.linalg.norm(f_n - A_nn @ head - A_nt @ tail)) / f_norm
        flops += 2 * n**2 + 2 * n * (N - n) + pc
        increments.append(inc)
        residuals.append(res)
        if inc <= cfg.tol and res <= cfg.tol:
            converged = True
            break
    coef = np.concatenate([head, tail])
    return NCRBSolution(
        head,
        tail,
        mu,
        float(coef @ red.f),
        k,
        converged,
        residuals,
        increments,
        flops,
        time.perf_counter() - t0,
        cfg.variant,
    )


# ---------------------------------------------------------------------------
# reference decoders


class _FixedDecoder(Decoder):
    variant = "fixed"

    def __init__(self, tail, n, meta=None):
        tail = np.asarray(tail, dtype=np.float64)
        super().__init__(n, len(tail), {}, Normalizer.identity(n), (-np.ones(n), np.ones(n)), meta)
        self.tail = tail

    def _predict(self, X):
        return np.tile(self.tail, (X.shape[0], 1))

    def predict_cost(self) -> float:
        return 0.0


class ZeroDecoder(_FixedDecoder):
    """Tail identically zero; NCRB then reduces to classical RB with n modes."""

    variant = "zero"

    def __init__(self, n, n_out, meta=None):
        super().__init__(np.zeros(n_out), n, meta)


class OracleDecoder(_FixedDecoder):
    """Returns the tail of the full reduced solution at one fixed parameter."""

    variant = "oracle"

    def __init__(self, red: ReducedOperator, mu, n, perturbation=None):
        tail = solve_rb(red, mu).coef[n:].copy()
        if perturbation is not None:
            tail = tail + np.asarray(perturbation, dtype=np.float64)
        super().__init__(tail, n, {"basis_hash": red.basis_hash, "N": red.N, "n": n})


# ---------------------------------------------------------------------------
# error tables and cost model


def ncrb_errors(op, basis: PODBasis, red: ReducedOperator, decoder: Decoder, mus, cfg: NCRBConfig, truth=None, threads=None):
    """Aggregate errors against truth; non-converged solves are counted and excluded from means."""
    truth = truth if truth is not None else TruthCache(op, mus, threads=threads)
    check_provenance(red, decoder, cfg.n)

    def one(mu):
        try:
            return solve_ncrb(red, decoder, mu, cfg, check=False)
        except NCRBDivergenceError:
            return None

    sols = parallel_map(one, list(truth.mus), threads)
    ok = np.array([s is not None and s.converged for s in sols])
    rec = {
        "n_solves": len(sols),
        "n_converged": int(ok.sum()),
        "convergence_rate": float(ok.mean()),
        "mean_iterations": float(np.mean([s.iterations for s in sols if s is not None])) if any(s is not None for s in sols) else float("nan"),
        "mean_energy": float("nan"),
        "max_energy": float("nan"),
        "mean_output": float("nan"),
        "max_output": float("nan"),
    }
    if ok.any():
        idx = np.flatnonzero(ok)
        sub = _SubTruth(truth.mus[idx], truth.U[:, idx])
        coefs = np.array([sols[i].coef for i in idx])
        en, out, _ = relative_errors(op, basis.Z, sub, coefs)
        rec.update(mean_energy=float(en.mean()), max_energy=float(en.max()), mean_output=float(out.mean()), max_output=float(out.max()))
    rec["solutions"] = sols
    return rec


@dataclass(eq=False)
class _SubTruth:
    mus: np.ndarray
    U: np.ndarray


def complexity_report(N, n, decoder, K, Q, rb_seconds=None, ncrb_seconds=None) -> dict:
    """Flop estimates for classical RB and NCRB.

    ``decoder`` is either a decoder or its per-call prediction cost. Both
    estimates include online assembly of the rows they need.
    """
    if min(N, n, Q) <= 0 or K < 0:
        raise ValueError("N, n, Q must be positive and K nonnegative")
    pc = float(decoder.predict_cost()) if hasattr(decoder, "predict_cost") else float(decoder)
    rb = N**3 / 3 + Q * N**2
    init = n**3 / 3 + Q * n * N
    ncrb = init + K * (n**2 + pc + n * (N - n))
    return {
        "N": int(N),
        "n": int(n),
        "K": int(K),
        "Q": int(Q),
        "predict_cost": pc,
        "rb_flops": rb,
        "ncrb_init_flops": init,
        "ncrb_flops": ncrb,
        "ncrb_cheaper": bool(ncrb < rb),
        "rb_seconds": rb_seconds,
        "ncrb_seconds": ncrb_seconds,
    }

