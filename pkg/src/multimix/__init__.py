"""Clustering replicated multinomial counts with mixtures of multinomial
logistic regressions, estimated by EM (ICL selection) or by an overfitting
Bayesian mixture sampled with tempered MALA-within-Gibbs."""

__version__ = "0.1.0"

from .estimators import BayesianMultinomialLogitMixture, MultinomialLogitMixture
from .exceptions import DegeneracyError, EmptyComponentError, InvalidInputError
from .metrics import adjusted_rand_index, confusion_matrix, k_error
from .model import Dataset, MixtureParams

__all__ = [
    "BayesianMultinomialLogitMixture",
    "Dataset",
    "DegeneracyError",
    "EmptyComponentError",
    "InvalidInputError",
    "MixtureParams",
    "MultinomialLogitMixture",
    "adjusted_rand_index",
    "confusion_matrix",
    "k_error",
]
