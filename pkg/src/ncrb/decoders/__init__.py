"""Regression decoders mapping leading reduced coefficients to the tail."""
from .base import (
    Decoder,
    DecoderError,
    Normalizer,
    UnsupportedVariantError,
    decoder_from_dict,
    evaluate,
    load_decoder,
    stability_probe,
)
from .dataset import CoefficientDataset, gen_dataset, gen_identification_dataset
from .polynomial import PolynomialDecoder, fit_polynomial, graded_lex_exponents, monomial_features
from .spline import SplineDecoder, fit_spline1d
from .tree import ForestDecoder, TreeDecoder, build_tree, fit_forest, fit_tree

__all__ = [
    "CoefficientDataset",
    "Decoder",
    "DecoderError",
    "ForestDecoder",
    "Normalizer",
    "PolynomialDecoder",
    "SplineDecoder",
    "TreeDecoder",
    "UnsupportedVariantError",
    "build_tree",
    "decoder_from_dict",
    "evaluate",
    "fit_forest",
    "fit_polynomial",
    "fit_spline1d",
    "fit_tree",
    "gen_dataset",
    "gen_identification_dataset",
    "graded_lex_exponents",
    "load_decoder",
    "monomial_features",
    "stability_probe",
]
