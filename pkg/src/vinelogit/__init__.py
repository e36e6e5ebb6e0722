"""Logistic regression extended with class-specific vine copula terms."""

from .copulas import CopulaFamily, PairCopula
from .data import Dataset, read_csv
from .estimation import FitReport, ModelParams, fit_irls, log_likelihood, log_odds, optimize
from .margins import MarginKind, MarginSet, coeffs_from_margins, margins_from_coeffs
from .selection import SelectConfig, select_model
from .vine import Edge, VineStructure, g_eval, validate

__all__ = [
    "CopulaFamily",
    "Dataset",
    "Edge",
    "FitReport",
    "MarginKind",
    "MarginSet",
    "ModelParams",
    "PairCopula",
    "SelectConfig",
    "VineStructure",
    "coeffs_from_margins",
    "fit_irls",
    "g_eval",
    "log_likelihood",
    "log_odds",
    "margins_from_coeffs",
    "optimize",
    "read_csv",
    "select_model",
    "validate",
]

__version__ = "0.1.0"
