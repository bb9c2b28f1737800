"""Univariate B-spline least-squares decoder (Cox-de Boor basis)."""
from __future__ import annotations

import numpy as np

from .._backend import njit, select
from ..linalg import least_squares
from .base import Decoder, DecoderError, Normalizer, UnsupportedVariantError, header_args, register


def clamped_uniform_knots(n_knots, degree, lo=-1.0, hi=1.0) -> np.ndarray:
    """``n_knots`` uniform breakpoints on [lo, hi], end knots repeated ``degree`` extra times."""
    if n_knots < 2:
        raise ValueError("need at least two breakpoints")
    inner = np.linspace(lo, hi, n_knots)
    return np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])


def n_basis(knots, degree) -> int:
    return len(knots) - degree - 1


@njit
def _find_span(t, k, x):
    nb = len(t) - k - 1
    if x >= t[nb]:
        return nb - 1
    lo, hi = k, nb
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < t[mid]:
            hi = mid
        else:
            lo = mid
    return lo


@njit
def _basis_funs(t, k, s, x, out):
    left = np.empty(k + 1)
    right = np.empty(k + 1)
    out[0] = 1.0
    for j in range(1, k + 1):
        left[j] = x - t[s + 1 - j]
        right[j] = t[s + j] - x
        saved = 0.0
        for r in range(j):
            temp = out[r] / (right[r + 1] + left[j - r])
            out[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        out[j] = saved


@njit
def _design_nb(t, k, x):
    nb = len(t) - k - 1
    B = np.zeros((len(x), nb))
    vals = np.empty(k + 1)
    for i in range(len(x)):
        s = _find_span(t, k, x[i])
        _basis_funs(t, k, s, x[i], vals)
        for r in range(k + 1):
            B[i, s - k + r] = vals[r]
    return B


@njit
def _eval_nb(t, k, coef, x):
    out = np.zeros((len(x), coef.shape[1]))
    vals = np.empty(k + 1)
    for i in range(len(x)):
        s = _find_span(t, k, x[i])
        _basis_funs(t, k, s, x[i], vals)
        for r in range(k + 1):
            c = coef[s - k + r]
            for j in range(coef.shape[1]):
                out[i, j] += vals[r] * c[j]
    return out


def _spans_np(t, k, x):
    nb = len(t) - k - 1
    s = np.searchsorted(t, x, side="right") - 1
    return np.clip(s, k, nb - 1)


def _basis_np(t, k, x):
    """Nonzero basis values (m, k+1) and their spans, vectorized over points."""
    s = _spans_np(t, k, x)
    m = len(x)
    N = np.zeros((m, k + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, k + 1))
    right = np.zeros((m, k + 1))
    for j in range(1, k + 1):
        left[:, j] = x - t[s + 1 - j]
        right[:, j] = t[s + j] - x
        saved = np.zeros(m)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N, s


def _design_np(t, k, x):
    N, s = _basis_np(t, k, x)
    B = np.zeros((len(x), len(t) - k - 1))
    rows = np.arange(len(x))
    for r in range(k + 1):
        B[rows, s - k + r] = N[:, r]
    return B


def _eval_np(t, k, coef, x):
    N, s = _basis_np(t, k, x)
    out = np.zeros((len(x), coef.shape[1]))
    for r in range(k + 1):
        out += N[:, r : r + 1] * coef[s - k + r]
    return out


bspline_design = select(_design_nb, _design_np)
bspline_eval = select(_eval_nb, _eval_np)


@register
class SplineDecoder(Decoder):
    variant = "spline1d"

    def __init__(self, knots, coef, **kw):
        super().__init__(**kw)
        self.knots = np.asarray(knots, dtype=np.float64)
        self.coef = np.ascontiguousarray(coef, dtype=np.float64)

    @property
    def degree(self) -> int:
        return int(self.hyper["degree"])

    def _predict(self, X):
        # outside the training interval the spline is held constant
        x = np.clip(self.normalizer(X)[:, 0], -1.0, 1.0)
        return bspline_eval(self.knots, self.degree, self.coef, np.ascontiguousarray(x))

    def predict_cost(self) -> float:
        return float((self.degree + 1) * self.n_out + np.ceil(np.log2(len(self.knots))))

    def _body(self):
        return {"knots": self.knots.tolist(), "coef": self.coef.tolist()}

    @classmethod
    def _from_body(cls, header, body):
        return cls(np.array(body["knots"]), np.array(body["coef"]), **header_args(header))


def fit_spline1d(dataset, n_knots=100, degree=10) -> SplineDecoder:
    X, Y = dataset.inputs, dataset.targets
    if X.shape[1] != 1:
        raise UnsupportedVariantError("spline decoder supports a single input only")
    knots = clamped_uniform_knots(n_knots, degree)
    nb = n_basis(knots, degree)
    if X.shape[0] < nb:
        raise DecoderError(f"{X.shape[0]} samples cannot determine {nb} spline coefficients")
    norm = Normalizer.fit(X)
    x = np.clip(norm(X)[:, 0], -1.0, 1.0)
    B = bspline_design(knots, degree, np.ascontiguousarray(x))
    coef = least_squares(B, Y)
    return SplineDecoder(
        knots,
        coef,
        n_in=1,
        n_out=Y.shape[1],
        hyper={"n_knots": int(n_knots), "degree": int(degree)},
        normalizer=norm,
        box=(X.min(axis=0), X.max(axis=0)),
        meta=dataset.provenance(),
    )
