"""Training data for decoders, generated with the reduced model."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..fem import DesignSet
from ..matio import read_matrix, write_matrix
from ..pod import ReducedOperator, sample_parameters
from ..rb import solve_rb_batch


@dataclass(frozen=True, eq=False)
class CoefficientDataset:
    inputs: np.ndarray  # (M_t, n)
    targets: np.ndarray  # (M_t, n_out)
    meta: dict = field(default_factory=dict)
    mus: np.ndarray = None

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def in_min(self) -> np.ndarray:
        return self.inputs.min(axis=0)

    @property
    def in_max(self) -> np.ndarray:
        return self.inputs.max(axis=0)

    def provenance(self) -> dict:
        keys = ("basis_hash", "N", "n", "kind", "seed", "size")
        return {k: self.meta[k] for k in keys if k in self.meta}

    def subset(self, rows) -> "CoefficientDataset":
        mus = None if self.mus is None else self.mus[rows]
        meta = dict(self.meta, size=int(np.size(np.arange(self.size)[rows])))
        return CoefficientDataset(self.inputs[rows], self.targets[rows], meta, mus)

    def save(self, stem) -> None:
        stem = Path(stem)
        write_matrix(stem.with_suffix(".inputs.bin"), self.inputs)
        write_matrix(stem.with_suffix(".targets.bin"), self.targets)
        if self.mus is not None:
            write_matrix(stem.with_suffix(".mus.bin"), self.mus)
        stem.with_suffix(".json").write_text(json.dumps(self.meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, stem) -> "CoefficientDataset":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        mus_path = stem.with_suffix(".mus.bin")
        mus = read_matrix(mus_path) if mus_path.exists() else None
        return cls(read_matrix(stem.with_suffix(".inputs.bin")), read_matrix(stem.with_suffix(".targets.bin")), meta, mus)


def _meta(red, design, size, n, seed, kind):
    return {
        "kind": kind,
        "seed": int(seed),
        "size": int(size),
        "n": int(n),
        "N": int(red.N),
        "basis_hash": red.basis_hash,
        "design": design.to_dict(),
    }


def gen_dataset(red: ReducedOperator, design: DesignSet, size: int, n: int, seed: int) -> CoefficientDataset:
    """Split reduced solutions at sampled parameters into (first n, remaining N - n)."""
    if not 1 <= n < red.N:
        raise ValueError(f"need 1 <= n < N={red.N}, got n={n}")
    mus = sample_parameters(design, size, seed)
    U = solve_rb_batch(red, mus)
    return CoefficientDataset(U[:, :n].copy(), U[:, n:].copy(), _meta(red, design, size, n, seed, "decoder"), mus)


def gen_identification_dataset(red: ReducedOperator, design: DesignSet, size: int, m: int, seed: int) -> CoefficientDataset:
    """Inputs: first m reduced coefficients; targets: the active parameter components."""
    if not 1 <= m <= red.N:
        raise ValueError(f"need 1 <= m <= N={red.N}, got m={m}")
    mus = sample_parameters(design, size, seed)
    U = solve_rb_batch(red, mus)
    active = np.array(design.active)
    meta = _meta(red, design, size, m, seed, "identification")
    meta["active"] = active.tolist()
    return CoefficientDataset(U[:, :m].copy(), mus[:, active].copy(), meta, mus)
