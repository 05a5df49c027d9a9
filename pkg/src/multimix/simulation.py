"""Synthetic data from mixtures of multinomial logistic regressions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._validation import check_random_state
from .exceptions import InvalidInputError
from .model import Dataset, MixtureParams, log_category_probabilities


@dataclass
class SimConfig:
    """Settings for :func:`simulate_dataset`.

    Replicate totals follow a negative binomial with ``nb_r`` successes and
    success probability ``nb_p`` (mean ``nb_r * (1 - nb_p) / nb_p``; the
    defaults give 780). ``P`` counts the intercept.
    """

    n: int = 250
    K: int = 2
    P: int = 3
    n_categories: int = 6
    nb_r: float = 20.0
    nb_p: float = 0.025
    sigma_low: float = 1.0
    sigma_high: float = 5.0
    spike_prob: float = 0.5
    seed: int | None = None

    def validate(self) -> "SimConfig":
        if self.n < 1 or self.K < 1 or self.P < 1:
            raise InvalidInputError("n, K and P must be positive")
        if self.n_categories < 2:
            raise InvalidInputError("need at least two categories")
        if self.nb_r <= 0 or not 0 < self.nb_p < 1:
            raise InvalidInputError("negative binomial needs r > 0 and 0 < p < 1")
        if not 0 < self.sigma_low <= self.sigma_high:
            raise InvalidInputError("sigma range must satisfy 0 < low <= high")
        if not 0 <= self.spike_prob <= 1:
            raise InvalidInputError("spike_prob must be a probability")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulatedData:
    data: Dataset
    params: MixtureParams
    labels: np.ndarray
    covariates: np.ndarray
    sigma: float


def replicate_totals(n: int, r: float, p: float, rng) -> np.ndarray:
    """Negative binomial replicate totals with zeros replaced by one."""
    rng = check_random_state(rng)
    s = rng.negative_binomial(r, p, size=n)
    s[s == 0] = 1
    return s.astype(np.int64)


def proportional_weights(K: int) -> np.ndarray:
    """Mixing proportions proportional to the component index, 1..K."""
    k = np.arange(1, K + 1, dtype=float)
    return k / k.sum()


def spike_slab_coefficients(K: int, J: int, P: int, sigma: float,
                            spike_prob: float, rng) -> np.ndarray:
    """Coefficients that are exactly zero with probability ``spike_prob``
    and N(0, sigma^2) otherwise."""
    rng = check_random_state(rng)
    slab = rng.normal(0.0, sigma, size=(K, J, P))
    spike = rng.random(size=(K, J, P)) < spike_prob
    slab[spike] = 0.0
    return slab


def simulate_dataset(config: SimConfig) -> SimulatedData:
    """Draw one synthetic dataset and its generating parameters.

    The returned ``covariates`` exclude the intercept column; ``data.x``
    includes it. Labels are 0-based.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, K, P = config.n, config.K, config.P
    J = config.n_categories - 1

    s = replicate_totals(n, config.nb_r, config.nb_p, rng)
    pi = proportional_weights(K)
    sigma = float(rng.uniform(config.sigma_low, config.sigma_high))
    beta = spike_slab_coefficients(K, J, P, sigma, config.spike_prob, rng)

    raw = rng.standard_normal(size=(n, P - 1))
    if n > 1 and P > 1:
        raw = (raw - raw.mean(axis=0)) / raw.std(axis=0, ddof=1)
    x = np.column_stack([np.ones(n), raw])

    labels = rng.choice(K, size=n, p=pi)
    g = np.exp(log_category_probabilities(beta, x))
    probs = g[np.arange(n), labels]
    probs /= probs.sum(axis=1, keepdims=True)
    y = rng.multinomial(s, probs)

    return SimulatedData(
        data=Dataset.from_arrays(y, x),
        params=MixtureParams(pi, beta),
        labels=labels.astype(np.int64),
        covariates=raw,
        sigma=sigma,
    )
