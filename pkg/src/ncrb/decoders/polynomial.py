"""Multivariate polynomial least-squares decoder."""
from __future__ import annotations

from math import comb

import numpy as np

from ..linalg import least_squares
from .base import Decoder, DecoderError, Normalizer, header_args, register


def graded_lex_exponents(n, d) -> list[tuple]:
    """Exponent tuples of total degree <= d, by degree then lexicographically descending."""

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    out = []
    for deg in range(d + 1):
        out.extend(compositions(deg, n))
    return out


def monomial_features(U, exponents) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    E = np.asarray(exponents, dtype=np.int64)
    dmax = int(E.max(initial=0))
    # powers[k][:, j] = U[:, j] ** k, built by repeated multiplication
    powers = [np.ones_like(U)]
    for _ in range(dmax):
        powers.append(powers[-1] * U)
    F = np.ones((U.shape[0], len(E)))
    for col, e in enumerate(E):
        for j, k in enumerate(e):
            if k:
                F[:, col] *= powers[k][:, j]
    return F


@register
class PolynomialDecoder(Decoder):
    variant = "polynomial"

    def __init__(self, exponents, coef, **kw):
        super().__init__(**kw)
        self.exponents = [tuple(int(v) for v in e) for e in exponents]
        self.coef = np.asarray(coef, dtype=np.float64)

    @property
    def degree(self) -> int:
        return int(self.hyper["degree"])

    def _predict(self, X):
        # far outside the box high powers overflow; the solver reports the inf
        with np.errstate(over="ignore", invalid="ignore"):
            return monomial_features(self.normalizer(X), self.exponents) @ self.coef

    def predict_cost(self) -> float:
        return float(comb(self.n_in + self.degree, self.degree) * self.n_out)

    def _body(self):
        return {"exponents": [list(e) for e in self.exponents], "coef": self.coef.tolist()}

    @classmethod
    def _from_body(cls, header, body):
        return cls(body["exponents"], np.array(body["coef"]), **header_args(header))


def fit_polynomial(dataset, degree, normalize=True) -> PolynomialDecoder:
    X, Y = dataset.inputs, dataset.targets
    n = X.shape[1]
    exps = graded_lex_exponents(n, degree)
    if X.shape[0] < len(exps):
        raise DecoderError(f"{X.shape[0]} samples cannot determine {len(exps)} polynomial coefficients")
    norm = Normalizer.fit(X) if normalize else Normalizer.identity(n)
    F = monomial_features(norm(X), exps)
    coef = least_squares(F, Y)
    box = (X.min(axis=0), X.max(axis=0))
    return PolynomialDecoder(
        exps,
        coef,
        n_in=n,
        n_out=Y.shape[1],
        hyper={"degree": int(degree), "normalize": bool(normalize)},
        normalizer=norm,
        box=box,
        meta=dataset.provenance(),
    )
