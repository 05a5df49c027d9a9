"""Data model and likelihood mathematics for mixtures of multinomial logits.

Conventions used throughout the package:

* counts ``y`` have shape ``(n, J + 1)`` and the last column is the
  baseline category whose linear predictor is fixed at zero;
* coefficients ``beta`` have shape ``(K, J, P)``; flattened vectors are
  k-major, then j, then p (``beta.ravel()`` order);
* component labels are 0-based inside the library.

Every density is evaluated in the log domain with max-shifted
normalisation, and ``0 * log 0`` is taken to be zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from ._validation import check_counts, check_design, check_responsibilities
from .exceptions import DegeneracyError, InvalidInputError


@dataclass(frozen=True)
class Dataset:
    """Replicated multinomial counts with their design matrix.

    Use :meth:`from_arrays` to build one; it derives the replicate totals
    and the log multinomial coefficients from the counts.
    """

    y: np.ndarray
    x: np.ndarray
    s: np.ndarray
    log_coef: np.ndarray

    @classmethod
    def from_arrays(cls, y, x=None) -> "Dataset":
        y = check_counts(y)
        n = y.shape[0]
        x = np.ones((n, 1)) if x is None else check_design(x, n)
        s = y.sum(axis=1)
        log_coef = gammaln(s + 1.0) - gammaln(y + 1.0).sum(axis=1)
        for arr in (y, x, s, log_coef):
            arr.setflags(write=False)
        return cls(y=y, x=x, s=s, log_coef=log_coef)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_categories(self) -> int:
        return self.y.shape[1]

    @property
    def J(self) -> int:
        return self.y.shape[1] - 1

    @property
    def P(self) -> int:
        return self.x.shape[1]

    @property
    def intercept_only(self) -> bool:
        return self.P == 1 and bool(np.all(self.x[:, 0] == self.x[0, 0]))


@dataclass
class MixtureParams:
    """Mixing proportions and coefficients of a K-component mixture.

    ``theta`` is only set by the closed-form intercept-only M-step, where
    category probabilities are kept directly (they may contain exact
    zeros, which have no finite logit representation).
    """

    pi: np.ndarray
    beta: np.ndarray
    theta: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.pi.ndim != 1 or self.pi.size == 0:
            raise InvalidInputError("pi must be a non-empty 1-D vector")
        if self.beta.ndim != 3 or self.beta.shape[0] != self.pi.size:
            raise InvalidInputError(
                f"beta must have shape (K, J, P) with K={self.pi.size}, got {self.beta.shape}"
            )
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-12 * max(1, self.pi.size):
            raise InvalidInputError("pi must lie on the probability simplex")

    @property
    def K(self) -> int:
        return self.pi.size

    def copy(self) -> "MixtureParams":
        theta = None if self.theta is None else self.theta.copy()
        return MixtureParams(self.pi.copy(), self.beta.copy(), theta)

    def check_against(self, data: Dataset) -> None:
        _, J, P = self.beta.shape
        if J != data.J or P != data.P:
            raise InvalidInputError(
                f"coefficients are (J={J}, P={P}) but data has (J={data.J}, P={data.P})"
            )


def _log_softmax_with_baseline(eta: np.ndarray) -> np.ndarray:
    """Append the zero baseline predictor and log-normalise the last axis."""
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    m = full.max(axis=-1, keepdims=True)
    shifted = full - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def category_probabilities(beta_k, x_i) -> np.ndarray:
    """Category probabilities of one component at one covariate vector.

    Parameters
    ----------
    beta_k : array-like of shape (J, P)
    x_i : array-like of shape (P,)

    Returns
    -------
    g : ndarray of shape (J + 1,)
        ``g[j] = exp(beta_k[j] @ x_i) / (1 + sum_l exp(beta_k[l] @ x_i))`` for
        ``j < J`` and ``g[J] = 1 / (1 + sum_l exp(...))``.
    """
    beta_k = np.asarray(beta_k, dtype=float)
    x_i = np.asarray(x_i, dtype=float)
    if beta_k.ndim != 2 or x_i.ndim != 1 or beta_k.shape[1] != x_i.shape[0]:
        raise InvalidInputError("beta_k must be (J, P) and x_i must be (P,)")
    if not (np.all(np.isfinite(beta_k)) and np.all(np.isfinite(x_i))):
        raise InvalidInputError("coefficients and covariates must be finite")
    return np.exp(_log_softmax_with_baseline(beta_k @ x_i))


def log_category_probabilities(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorised log g for all rows and components, shape (n, K, J + 1)."""
    eta = np.einsum("ip,kjp->ikj", x, beta)
    return _log_softmax_with_baseline(eta)


def log_multinomial_pmf(y_i, s_i, theta, log_coef_i) -> float:
    """Log multinomial probability of one count vector.

    Zero counts contribute nothing even where ``theta`` is zero; a positive
    count on a zero-probability category gives ``-inf``.
    """
    y_i = np.asarray(y_i)
    theta = np.asarray(theta, dtype=float)
    if y_i.shape != theta.shape:
        raise InvalidInputError("counts and probabilities must have the same length")
    if int(y_i.sum()) != int(s_i):
        raise InvalidInputError("counts do not sum to the replicate total")
    return float(log_coef_i + xlogy(y_i, theta).sum())


def component_log_densities(params: MixtureParams, data: Dataset) -> np.ndarray:
    """``log f(y_i | g_ik)`` for every row and component, shape (n, K)."""
    if params.theta is not None:
        with np.errstate(divide="ignore"):
            logf = xlogy(data.y[:, None, :], params.theta[None, :, :]).sum(axis=-1)
        return data.log_coef[:, None] + logf
    params.check_against(data)
    log_g = log_category_probabilities(params.beta, data.x)
    return data.log_coef[:, None] + np.einsum("ij,ikj->ik", data.y, log_g)


def _log_weights(pi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(pi)


def _joint_log_scores(params: MixtureParams, data: Dataset) -> np.ndarray:
    return _log_weights(params.pi)[None, :] + component_log_densities(params, data)


def observed_log_likelihood(params: MixtureParams, data: Dataset) -> float:
    """Sum over rows of the log mixture density."""
    if params.K == 0:
        raise InvalidInputError("mixture has no components")
    scores = _joint_log_scores(params, data)
    return float(logsumexp(scores, axis=1).sum())


def responsibilities_from_scores(scores: np.ndarray) -> np.ndarray:
    """Row-normalise unnormalised log scores into membership probabilities."""
    row_max = scores.max(axis=1)
    bad = np.flatnonzero(~np.isfinite(row_max) | np.isnan(row_max))
    if bad.size:
        raise DegeneracyError(
            f"observation {bad[0]} has zero likelihood under every component"
        )
    w = np.exp(scores - row_max[:, None])
    w /= w.sum(axis=1, keepdims=True)
    return w


def e_step(params: MixtureParams, data: Dataset) -> np.ndarray:
    """Posterior membership probabilities ``w`` of shape (n, K)."""
    return responsibilities_from_scores(_joint_log_scores(params, data))


def map_classification(w) -> np.ndarray:
    """Maximum a posteriori labels; ties go to the lowest component index."""
    w = np.asarray(w, dtype=float)
    return np.argmax(w, axis=1)


def expected_complete_loglik(params: MixtureParams, w, data: Dataset) -> float:
    """Expected complete-data log-likelihood under responsibilities ``w``."""
    w = check_responsibilities(w, data.n, params.K)
    terms = _joint_log_scores(params, data)
    with np.errstate(invalid="ignore"):
        contrib = np.where(w > 0, w * terms, 0.0)
    return float(contrib.sum())


def complete_loglik(params: MixtureParams, z, data: Dataset) -> float:
    """Complete-data log-likelihood at hard allocations ``z``."""
    z = np.asarray(z, dtype=np.int64)
    terms = _joint_log_scores(params, data)
    return float(terms[np.arange(data.n), z].sum())


def q_gradient(beta, w, data: Dataset) -> np.ndarray:
    """Gradient of the expected complete log-likelihood w.r.t. ``beta``.

    Entry ``(k, j, p)`` is ``sum_i w_ik (y_ij - S_i g_ikj) x_ip``; the result
    is flattened k-major to length ``K * J * P``.
    """
    beta = np.asarray(beta, dtype=float)
    w = np.asarray(w, dtype=float)
    J = data.J
    g = np.exp(log_category_probabilities(beta, data.x))[:, :, :J]
    resid = data.y[:, None, :J] - data.s[:, None, None] * g
    return np.einsum("ik,ikj,ip->kjp", w, resid, data.x).ravel()


def _component_grad_hessian(beta_k: np.ndarray, w_col: np.ndarray, data: Dataset):
    """Gradient (JP,) and Hessian (JP, JP) of the weighted component objective."""
    J, P = beta_k.shape
    g = np.exp(_log_softmax_with_baseline(data.x @ beta_k.T))[:, :J]
    resid = data.y[:, :J] - data.s[:, None] * g
    grad = np.einsum("i,ij,ip->jp", w_col, resid, data.x).ravel()
    c = data.s * w_col
    # per-row multinomial covariance block diag(g) - g g^T
    cov = -g[:, :, None] * g[:, None, :]
    idx = np.arange(J)
    cov[:, idx, idx] += g
    n = data.n
    outer_x = (data.x[:, :, None] * data.x[:, None, :]).reshape(n, P * P)
    acc = (c[:, None] * cov.reshape(n, J * J)).T @ outer_x
    hess = -acc.reshape(J, J, P, P).transpose(0, 2, 1, 3).reshape(J * P, J * P)
    return grad, 0.5 * (hess + hess.T)


def q_hessian_block(beta_k, w_col_k, data: Dataset) -> np.ndarray:
    """Hessian block of the expected complete log-likelihood for one component.

    Entry ``((j, p), (j', p'))`` equals
    ``-sum_i S_i w_ik x_ip x_ip' g_ikj (delta_jj' - g_ikj')``; rows and
    columns are ordered j-major, matching :func:`q_gradient`.
    """
    beta_k = np.asarray(beta_k, dtype=float)
    w_col_k = np.asarray(w_col_k, dtype=float)
    return _component_grad_hessian(beta_k, w_col_k, data)[1]


def component_q(beta_k: np.ndarray, w_col: np.ndarray, data: Dataset) -> float:
    """The beta-dependent part of Q for one component: sum_i w_i sum_j y_ij log g_ij."""
    log_g = _log_softmax_with_baseline(data.x @ beta_k.T)
    return float(w_col @ np.einsum("ij,ij->i", data.y, log_g))


def identifiability_check(data: Dataset, K: int) -> list[str]:
    """Flag rows whose replicate total is below ``2K - 1``.

    Returns the list of messages (one per offending row plus a summary);
    the summary is also emitted through :mod:`warnings`.
    """
    bound = 2 * K - 1
    rows = np.flatnonzero(data.s < bound)
    messages = [
        f"row {i}: replicate total {data.s[i]} < 2K-1 = {bound}" for i in rows
    ]
    if rows.size:
        summary = (
            f"minimum replicate total {data.s.min()} is below 2K-1 = {bound} for K={K}; "
            f"{rows.size} rows affected, the mixture may not be identifiable"
        )
        messages.append(summary)
        warnings.warn(summary, UserWarning, stacklevel=2)
    return messages
