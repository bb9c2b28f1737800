"""Common decoder machinery: input normalization, metrics, stability probe,
JSON model files."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_REGISTRY = {}


class DecoderError(ValueError):
    pass


class UnsupportedVariantError(DecoderError):
    pass


def register(cls):
    _REGISTRY[cls.variant] = cls
    return cls


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine map of the box ``[lo, hi]`` onto ``[-1, 1]``."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X) -> "Normalizer":
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0))

    @classmethod
    def identity(cls, n) -> "Normalizer":
        return cls(-np.ones(n), np.ones(n))

    @property
    def center(self):
        return 0.5 * (self.hi + self.lo)

    @property
    def half_width(self):
        hw = 0.5 * (self.hi - self.lo)
        return np.where(hw > 0, hw, 1.0)

    def __call__(self, X):
        return (np.asarray(X, dtype=np.float64) - self.center) / self.half_width

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["lo"], dtype=np.float64), np.array(d["hi"], dtype=np.float64))


class Decoder:
    """Regressor from ``n`` leading coefficients to ``n_out`` targets.

    Subclasses implement ``_predict`` on 2-D input, ``predict_cost`` and the
    JSON body hooks.
    """

    variant = None

    def __init__(self, n_in, n_out, hyper, normalizer, box, meta=None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.hyper = dict(hyper)
        self.normalizer = normalizer
        self.box = (np.asarray(box[0], dtype=np.float64), np.asarray(box[1], dtype=np.float64))
        self.meta = dict(meta or {})

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.shape[1] != self.n_in:
            raise DecoderError(f"{self.variant} decoder expects {self.n_in} inputs, got {X2.shape[1]}")
        out = self._predict(X2)
        return out[0] if single else out

    __call__ = predict

    def _predict(self, X):  # pragma: no cover
        raise NotImplementedError

    def predict_cost(self) -> float:  # pragma: no cover
        raise NotImplementedError

    # -- serialization ----------------------------------------------------
    def _body(self) -> dict:  # pragma: no cover
        raise NotImplementedError

    @classmethod
    def _from_body(cls, header, body):  # pragma: no cover
        raise NotImplementedError

    def to_dict(self) -> dict:
        header = {
            "variant": self.variant,
            "n": self.n_in,
            "n_out": self.n_out,
            "hyperparameters": self.hyper,
            "training_box": {"lo": self.box[0].tolist(), "hi": self.box[1].tolist()},
            "normalizer": self.normalizer.to_dict(),
            "meta": self.meta,
        }
        return {"header": header, "body": self._body()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def decoder_from_dict(d) -> Decoder:
    header, body = d["header"], d["body"]
    try:
        cls = _REGISTRY[header["variant"]]
    except KeyError:
        raise UnsupportedVariantError(f"unknown decoder variant {header['variant']!r}") from None
    return cls._from_body(header, body)


def load_decoder(path) -> Decoder:
    with open(path) as fh:
        return decoder_from_dict(json.load(fh))


def header_args(header):
    box = header["training_box"]
    return dict(
        n_in=header["n"],
        n_out=header["n_out"],
        hyper=header["hyperparameters"],
        normalizer=Normalizer.from_dict(header["normalizer"]),
        box=(box["lo"], box["hi"]),
        meta=header.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# metrics


def evaluate(decoder: Decoder, X, Y) -> dict:
    """Test-set metrics: MAE per target, aggregate MAE, relative errors."""
    Y = np.asarray(Y, dtype=np.float64)
    pred = decoder.predict(X)
    err = np.abs(pred - Y)
    scale = np.abs(Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, err / scale, 0.0)
    return {
        "mae_per_target": err.mean(axis=0).tolist(),
        "mae": float(err.mean()),
        "mse": float((err**2).mean()),
        "mean_relative_error": float(rel.mean()),
        "max_relative_error": float(rel.max()),
        "relative_error_per_target": rel.mean(axis=0).tolist(),
    }


def stability_probe(decoder: Decoder, c=1.5, n_grid=401) -> dict:
    """Compare output magnitudes inside the training box and in its ``c``-fold expansion.

    For more than one input a tensor grid with ``n_grid`` points per axis is
    used (capped so the grid stays below about 2e5 points).
    """
    if not c > 1:
        raise ValueError("expansion factor must exceed 1")
    lo, hi = decoder.box
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    per_axis = n_grid if decoder.n_in == 1 else max(5, int(round(2e5 ** (1.0 / decoder.n_in))))
    t = np.linspace(-c, c, per_axis)
    grids = np.meshgrid(*([t] * decoder.n_in), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1)
    inside = np.all(np.abs(U) <= 1.0 + 1e-12, axis=1)
    X = center + U * half
    out = np.abs(decoder.predict(X)).max(axis=1)
    in_max = float(out[inside].max())
    out_max = float(out[~inside].max())
    return {
        "expansion": c,
        "inside_max": in_max,
        "outside_max": out_max,
        "ratio": out_max / in_max if in_max > 0 else float("inf"),
        "unstable": bool(out_max > 10.0 * in_max),
    }
