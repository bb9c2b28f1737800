"""Inverse maps from leading reduced coefficients to the active parameters."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .base import Decoder, decoder_from_dict
from .dataset import CoefficientDataset
from .polynomial import fit_polynomial
from .spline import fit_spline1d
from .tree import fit_forest, fit_tree

FITTERS = {
    "polynomial": fit_polynomial,
    "spline1d": fit_spline1d,
    "tree": fit_tree,
    "forest": fit_forest,
}


def parameter_names(design) -> list[str]:
    n_fins = design.dim - 1
    names = [f"k{i + 1}" for i in range(n_fins)] + ["Bi"]
    return [nm for nm, a in zip(names, design.active) if a]


@dataclass(eq=False)
class IdentificationModel:
    """A regressor predicting parameters, optionally fitted on their logarithms."""

    decoder: Decoder
    log_targets: bool
    names: list

    def predict(self, X):
        out = self.decoder.predict(X)
        return np.exp(out) if self.log_targets else out

    def to_dict(self) -> dict:
        return {"decoder": self.decoder.to_dict(), "log_targets": self.log_targets, "names": list(self.names)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d) -> "IdentificationModel":
        return cls(decoder_from_dict(d["decoder"]), bool(d["log_targets"]), list(d["names"]))


def fit_identification(dataset: CoefficientDataset, variant: str, log_targets=None, **hyper) -> IdentificationModel:
    """Fit ``variant`` on (first m coefficients -> active parameters).

    ``log_targets=None`` fits logarithms exactly when every active component
    is sampled log-uniformly.
    """
    if variant not in FITTERS:
        raise ValueError(f"unknown variant {variant!r}")
    from ..fem import DesignSet

    design = DesignSet.from_dict(dataset.meta["design"]) if "design" in dataset.meta else None
    if log_targets is None:
        log_targets = design is not None and all(l == "log" for l, a in zip(design.laws, design.active) if a)
    Y = np.log(dataset.targets) if log_targets else dataset.targets
    fit_set = CoefficientDataset(dataset.inputs, Y, dataset.meta, dataset.mus)
    dec = FITTERS[variant](fit_set, **hyper)
    names = parameter_names(design) if design is not None else [f"p{i}" for i in range(Y.shape[1])]
    return IdentificationModel(dec, bool(log_targets), names)


def evaluate_identification(model: IdentificationModel, dataset: CoefficientDataset) -> dict:
    """Mean and max relative error per identified parameter."""
    pred = model.predict(dataset.inputs)
    rel = np.abs(pred - dataset.targets) / np.abs(dataset.targets)
    return {
        name: {"mean_relative_error": float(rel[:, j].mean()), "max_relative_error": float(rel[:, j].max())}
        for j, name in enumerate(model.names)
    }
