"""Overfitting Bayesian mixtures sampled by MALA-within-Gibbs with prior
parallel tempering.

Each chain targets the same likelihood under a Dirichlet(alpha_c, ...,
alpha_c) prior on the mixing proportions and independent N(0, nu2) priors
on the coefficients. A sweep updates the allocations and the weights by
Gibbs steps and all coefficients jointly by one Metropolis-adjusted
Langevin proposal with scalar scale ``tau``. Chains only differ in
``alpha_c``; neighbouring chains exchange states once per cycle and
inference uses chain 0, whose ``alpha`` is small enough that surplus
components empty out.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._validation import check_labels, check_random_state
from .exceptions import DegeneracyError, InvalidInputError
from .model import Dataset, map_classification

logger = logging.getLogger(__name__)

DIRICHLET_FLOOR = 1e-300


def default_alphas(C: int) -> np.ndarray:
    """Dirichlet concentration ladder for ``C`` tempered chains.

    ``alpha_1 = 1/200`` and ``alpha_c = 1/200 + exp(2 + 12 (c-2)/(C-2)) / 4000``
    for ``c = 2..C`` (with the exponent fixed at 2 when ``C = 2``).
    """
    if C < 1:
        raise InvalidInputError("need at least one chain")
    alphas = np.empty(C)
    alphas[0] = 1.0 / 200.0
    if C > 1:
        c = np.arange(2, C + 1)
        frac = (c - 2) / (C - 2) if C > 2 else np.zeros(1)
        alphas[1:] = 1.0 / 200.0 + np.exp(2.0 + 12.0 * frac) / 4000.0
    return alphas


@dataclass
class PriorConfig:
    """Coefficient prior variance and per-chain Dirichlet concentrations."""

    nu2: float = 100.0
    alphas: np.ndarray = field(default_factory=lambda: default_alphas(8))

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float).ravel()
        if self.nu2 <= 0 or np.any(self.alphas <= 0):
            raise InvalidInputError("nu2 and every alpha must be positive")

    def check_overfitting(self, J: int, P: int) -> bool:
        """Whether the target chain's alpha is below d/2 with d = J * P."""
        return bool(self.alphas[0] < J * P / 2.0)


@dataclass
class MCMCConfig:
    """Sampler schedule. Iteration counts are per chain."""

    k_max: int = 20
    n_chains: int = 8
    warm_up: int = 48000
    cycles: int = 2600
    iter_per_cycle: int = 20
    check_ar: int = 500
    ar_low: float = 0.15
    ar_high: float = 0.25
    burn_cycles: int = 100
    tau0: float = 0.00035
    thin: int = 1
    with_random_permutation: bool = True

    @property
    def total_iterations(self) -> int:
        return self.warm_up + self.cycles * self.iter_per_cycle

    @property
    def retained_cycles(self) -> int:
        kept = max(self.cycles - self.burn_cycles, 0)
        return (kept + self.thin - 1) // self.thin

    def validate(self) -> "MCMCConfig":
        if self.k_max < 1 or self.n_chains < 1:
            raise InvalidInputError("k_max and n_chains must be positive")
        if self.warm_up < 0 or self.cycles < 1 or self.iter_per_cycle < 1:
            raise InvalidInputError("invalid sampler schedule")
        if self.check_ar < 1 or self.thin < 1 or self.burn_cycles < 0:
            raise InvalidInputError("checkAR and thin must be positive, burn non-negative")
        if self.burn_cycles >= self.cycles:
            raise InvalidInputError("burn-in consumes every cycle")
        if not 0 <= self.ar_low <= self.ar_high <= 1:
            raise InvalidInputError("acceptance band must satisfy 0 <= low <= high <= 1")
        if self.tau0 <= 0:
            raise InvalidInputError("tau must be positive")
        return self


@dataclass
class ChainState:
    """Current state of one tempered chain."""

    z: np.ndarray
    pi: np.ndarray
    beta: np.ndarray
    tau: float
    log_target: float = float("nan")
    accept_count: int = 0
    n_proposals: int = 0
    nonfinite_proposals: int = 0

    def copy(self) -> "ChainState":
        return ChainState(self.z.copy(), self.pi.copy(), self.beta.copy(), self.tau,
                          self.log_target, self.accept_count, self.n_proposals,
                          self.nonfinite_proposals)

    @property
    def k_max(self) -> int:
        return self.pi.size


@dataclass
class SamplerTrace:
    """Retained draws of the target chain plus run diagnostics."""

    z: np.ndarray
    pi: np.ndarray
    beta: np.ndarray
    log_target: np.ndarray
    k0: np.ndarray
    cycles: np.ndarray
    mala_acceptance: float
    swap_acceptance: float
    chain_acceptance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_tau: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_draws(self) -> int:
        return self.z.shape[0]

    @property
    def k_max(self) -> int:
        return self.pi.shape[1]


# --------------------------------------------------------------------------
# batched kernels: leading axis indexes chains; every contraction is done
# per chain so results do not depend on how chains are grouped
# --------------------------------------------------------------------------


def _log_normaliser(eta, axis=-1):
    """``log(1 + sum_j exp(eta_j))`` along ``axis``, max-shifted."""
    m = np.maximum(eta.max(axis=axis), 0.0)
    shifted = np.exp(eta - np.expand_dims(m, axis)).sum(axis=axis)
    return m + np.log(np.exp(-m) + shifted)


def _dirichlet_logpdf_batch(pi, alpha):
    K = pi.shape[-1]
    log_pi = np.log(np.maximum(pi, DIRICHLET_FLOOR))
    return gammaln(K * alpha) - K * gammaln(alpha) + (alpha - 1.0) * log_pi.sum(axis=-1)


def _linear_predictors(beta, data: Dataset):
    """``eta[c, j, i, k] = beta[c, k, j] @ x[i]``, laid out (C, J, n, K) so that
    reductions over categories run along an outer axis."""
    return np.matmul(data.x, beta.transpose(0, 2, 3, 1))


def _alloc_scores_batch(pi, beta, data: Dataset):
    """(C, n, K) unnormalised allocation log probabilities."""
    J = beta.shape[2]
    eta = _linear_predictors(beta, data)
    # sum_j y_ij log g_ikj = sum_{j<=J} y_ij eta_ikj - S_i log(1 + sum_j exp eta_ikj)
    kernel = (data.y[:, :J].T[None, :, :, None] * eta).sum(axis=1) \
        - data.s[None, :, None] * _log_normaliser(eta, axis=1)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return log_pi[:, None, :] + data.log_coef[None, :, None] + kernel


def _conditional_batch(beta, z, data: Dataset, nu2: float):
    """Per chain: likelihood term, log prior and gradient of the beta conditional.

    The likelihood term is ``sum_i sum_j y_ij log g_{i z_i j}`` (without the
    multinomial coefficient); the prior term includes its normalising
    constant.
    """
    C, K, J, P = beta.shape
    n = data.n
    rows = np.arange(C)[:, None]
    eta_all = _linear_predictors(beta, data)
    eta = np.take_along_axis(eta_all, z[:, None, :, None], axis=3)[..., 0]  # (C, J, n)
    log_norm = _log_normaliser(eta, axis=1)
    y_t = data.y[:, :J].T
    lik = (y_t[None] * eta).reshape(C, J * n).sum(axis=-1) \
        - (data.s[None, :] * log_norm).sum(axis=-1)
    resid = y_t[None] - data.s * np.exp(eta - log_norm[:, None, :])
    onehot = np.zeros((C, 1, K, n))
    onehot[rows, 0, z, np.arange(n)[None, :]] = 1.0
    grad = np.matmul(onehot, resid[..., None] * data.x)  # (C, J, K, P)
    grad = grad.transpose(0, 2, 1, 3) - beta / nu2
    log_prior = -0.5 * (beta * beta).reshape(C, -1).sum(axis=-1) / nu2 \
        - 0.5 * K * J * P * np.log(2.0 * np.pi * nu2)
    return lik, log_prior, grad


def _log_target_batch(z, pi, lik, log_prior, alphas, data: Dataset):
    log_pi = np.log(np.maximum(pi, DIRICHLET_FLOOR))
    rows = np.arange(pi.shape[0])[:, None]
    return (log_pi[rows, z].sum(axis=-1) + data.log_coef.sum() + lik
            + _dirichlet_logpdf_batch(pi, alphas) + log_prior)


def _draw_allocations(scores, rngs, chain_offset=0):
    C, n, K = scores.shape
    row_max = scores.max(axis=-1)
    bad = ~np.isfinite(row_max)
    if bad.any():
        c, i = np.argwhere(bad)[0]
        raise DegeneracyError(
            f"chain {c + chain_offset}: observation {i} has zero likelihood under every component"
        )
    cum = np.cumsum(np.exp(scores - row_max[..., None]), axis=-1)
    u = np.stack([r.random(n) for r in rngs]) * cum[..., -1]
    return np.minimum((cum < u[..., None]).sum(axis=-1), K - 1)


def _draw_dirichlet(shape, rng):
    # Gamma(a) = Gamma(a + 1) * U^(1/a), kept on the log scale so that tiny
    # concentrations do not underflow to an all-zero vector
    log_g = np.log(rng.standard_gamma(shape + 1.0)) + np.log(rng.random(shape.size)) / shape
    log_g -= log_g.max()
    pi = np.exp(log_g)
    return pi / pi.sum()


def _draw_weights(z, alphas, rngs, K):
    return np.stack([
        _draw_dirichlet(a + np.bincount(zc, minlength=K), r)
        for zc, a, r in zip(z, alphas, rngs)
    ])


def _mala_batch(beta, z, tau, data, nu2, rngs, noise=None):
    """One joint MALA proposal per chain.

    Returns the kept coefficients, acceptance flags, non-finite flags and
    the likelihood and prior terms at the kept coefficients.
    """
    lik0, pri0, g0 = _conditional_batch(beta, z, data, nu2)
    if noise is None:
        noise = np.stack([r.standard_normal(beta.shape[1:]) for r in rngs])
    t = tau[:, None, None, None]
    prop = beta + t * g0 + np.sqrt(2.0 * t) * noise
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lik1, pri1, g1 = _conditional_batch(prop, z, data, nu2)
        fwd = prop - beta - t * g0
        bwd = beta - prop - t * g1
        C = beta.shape[0]
        log_q_fwd = -(fwd * fwd).reshape(C, -1).sum(axis=-1) / (4.0 * tau)
        log_q_bwd = -(bwd * bwd).reshape(C, -1).sum(axis=-1) / (4.0 * tau)
        log_ratio = (lik1 - lik0) + (pri1 - pri0) + (log_q_bwd - log_q_fwd)
    u = np.array([r.random() for r in rngs])
    finite = np.isfinite(log_ratio)
    with np.errstate(invalid="ignore"):
        accept = finite & (np.log(u) < log_ratio)
    kept = np.where(accept[:, None, None, None], prop, beta)
    return (kept, accept, ~finite, np.where(accept, lik1, lik0),
            np.where(accept, pri1, pri0), log_ratio)


def _sweep_batch(z, pi, beta, tau, alphas, data, nu2, rngs, chain_offset=0):
    """One MALA-within-Gibbs iteration (z, then pi, then beta) for a batch."""
    K = pi.shape[1]
    z = _draw_allocations(_alloc_scores_batch(pi, beta, data), rngs, chain_offset)
    pi = _draw_weights(z, alphas, rngs, K)
    beta, accept, nonfinite, lik, pri, _ = _mala_batch(beta, z, tau, data, nu2, rngs)
    lt = _log_target_batch(z, pi, lik, pri, alphas, data)
    return z, pi, beta, accept, nonfinite, lt


# --------------------------------------------------------------------------
# single-chain interface
# --------------------------------------------------------------------------


def _stack(state):
    return state.z[None], state.pi[None], state.beta[None], np.array([state.tau])


def dirichlet_logpdf(pi, alpha) -> float:
    """Symmetric Dirichlet log density with weights clamped to at least 1e-300."""
    pi = np.asarray(pi, dtype=float)
    return float(_dirichlet_logpdf_batch(pi[None], float(alpha))[0])


def allocation_log_scores(pi, beta, data: Dataset) -> np.ndarray:
    """``log pi_k + log f(y_i | g_ik)`` for every row and component."""
    pi = np.asarray(pi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return _alloc_scores_batch(pi[None], beta[None], data)[0]


def log_posterior_gradient(state: ChainState, data: Dataset, nu2: float) -> np.ndarray:
    """Gradient of the log full conditional of the coefficients, flattened.

    Entry ``(k, j, p)`` is ``sum_{i: z_i = k} (y_ij - S_i g_ikj) x_ip - beta_kjp / nu2``.
    """
    z, _, beta, _ = _stack(state)
    return _conditional_batch(beta, z, data, nu2)[2][0].ravel()


def log_target(state: ChainState, data: Dataset, alpha, nu2: float) -> float:
    """Unnormalised joint log posterior of (z, pi, beta) for one chain."""
    z, pi, beta, _ = _stack(state)
    lik, pri, _ = _conditional_batch(beta, z, data, nu2)
    return float(_log_target_batch(z, pi, lik, pri, float(alpha), data)[0])


def sample_allocations(state: ChainState, data: Dataset, rng) -> np.ndarray:
    """Draw every ``z_i`` from its full conditional (categorical in the
    normalised ``pi_k f(y_i | g_ik)``)."""
    rng = check_random_state(rng)
    z, pi, beta, _ = _stack(state)
    return _draw_allocations(_alloc_scores_batch(pi, beta, data), [rng])[0]


def sample_weights(z, alpha, rng, k_max: int | None = None) -> np.ndarray:
    """Draw mixing proportions from Dirichlet(alpha + n_1, ..., alpha + n_K).

    ``alpha`` may be a scalar or a length-K vector of concentrations.
    """
    rng = check_random_state(rng)
    z = np.asarray(z, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=float)
    if k_max is None:
        k_max = alpha.size if alpha.ndim else int(z.max()) + 1
    if np.any(alpha <= 0):
        raise InvalidInputError("Dirichlet concentrations must be positive")
    shape = np.broadcast_to(alpha, (k_max,)) + np.bincount(z, minlength=k_max)
    return _draw_dirichlet(shape, rng)


def mala_log_ratio(beta_from, beta_to, z, data: Dataset, nu2: float, tau: float) -> float:
    """Log Metropolis-Hastings ratio for moving ``beta_from -> beta_to``."""
    b = np.stack([np.asarray(beta_from, float), np.asarray(beta_to, float)])
    zz = np.stack([z, z])
    lik, pri, g = _conditional_batch(b, zz, data, nu2)
    fwd = b[1] - b[0] - tau * g[0]
    bwd = b[0] - b[1] - tau * g[1]
    return float((lik[1] - lik[0]) + (pri[1] - pri[0])
                 + ((fwd * fwd).sum() - (bwd * bwd).sum()) / (4.0 * tau))


def mala_step(state: ChainState, data: Dataset, prior, rng, alpha=None,
              noise=None) -> tuple[ChainState, bool]:
    """Propose ``beta + tau * grad + sqrt(2 tau) * eps`` and accept or reject.

    ``prior`` is a :class:`PriorConfig` or the prior variance ``nu2``.
    Returns a new state and the acceptance flag. ``noise`` overrides the
    standard normal draw (useful for deterministic checks). When ``alpha``
    is given the cached log target is refreshed.
    """
    rng = check_random_state(rng)
    nu2 = prior.nu2 if isinstance(prior, PriorConfig) else float(prior)
    z, pi, beta, tau = _stack(state)
    if noise is not None:
        noise = np.asarray(noise, dtype=float).reshape(beta.shape)
    kept, accept, nonfinite, lik, pri, _ = _mala_batch(beta, z, tau, data, nu2, [rng], noise)
    new = state.copy()
    new.beta = kept[0]
    new.n_proposals += 1
    new.accept_count += int(accept[0])
    new.nonfinite_proposals += int(nonfinite[0])
    if alpha is not None:
        new.log_target = float(_log_target_batch(z, pi, lik, pri, float(alpha), data)[0])
    return new, bool(accept[0])


def gibbs_sweep(state: ChainState, data: Dataset, alpha, nu2: float, rng) -> bool:
    """One in-place MALA-within-Gibbs iteration: z, then pi, then beta."""
    rng = check_random_state(rng)
    z, pi, beta, tau = _stack(state)
    z, pi, beta, accept, nonfinite, lt = _sweep_batch(
        z, pi, beta, tau, np.array([float(alpha)]), data, nu2, [rng])
    state.z, state.pi, state.beta = z[0], pi[0], beta[0]
    state.log_target = float(lt[0])
    state.n_proposals += 1
    state.accept_count += int(accept[0])
    state.nonfinite_proposals += int(nonfinite[0])
    return bool(accept[0])


def adapt_tau(tau, window_acceptance: float, ar_low: float = 0.15,
              ar_high: float = 0.25) -> float:
    """Shrink tau by 0.9 below the acceptance band, grow by 1/0.9 above it.

    ``tau`` may be a float or a :class:`ChainState`; the new scale is
    returned either way.
    """
    if isinstance(tau, ChainState):
        tau = tau.tau
    if window_acceptance < ar_low:
        return tau * 0.9
    if window_acceptance > ar_high:
        return tau / 0.9
    return tau


def alive_components(z, k_max: int) -> int:
    """Number of components with at least one allocated observation."""
    z = np.asarray(z, dtype=np.int64)
    return int(np.count_nonzero(np.bincount(z, minlength=k_max)))


# --------------------------------------------------------------------------
# tempering
# --------------------------------------------------------------------------


def swap_log_ratio(pi_1, pi_2, alpha_1: float, alpha_2: float) -> float:
    """Log acceptance ratio for exchanging the states of two chains.

    The Dirichlet normalising constants cancel, leaving
    ``(alpha_1 - alpha_2) * (sum log pi_2 - sum log pi_1)``, which is exactly
    zero for equal concentrations.
    """
    if alpha_1 == alpha_2:
        return 0.0
    s1 = np.log(np.maximum(np.asarray(pi_1, dtype=float), DIRICHLET_FLOOR)).sum()
    s2 = np.log(np.maximum(np.asarray(pi_2, dtype=float), DIRICHLET_FLOOR)).sum()
    return float((alpha_1 - alpha_2) * (s2 - s1))


def swap_move(states: list, alphas, data: Dataset, nu2: float, rng) -> tuple[int, bool]:
    """Propose exchanging a random neighbouring pair (c, c + 1) in place.

    States (z, pi, beta) move between chains while each chain keeps its own
    ``tau`` and acceptance counters. Returns the lower index and the flag.
    """
    if len(states) < 2:
        raise InvalidInputError("swap needs at least two chains")
    rng = check_random_state(rng)
    c = int(rng.integers(len(states) - 1))
    a1, a2 = float(alphas[c]), float(alphas[c + 1])
    log_a = swap_log_ratio(states[c].pi, states[c + 1].pi, a1, a2)
    accepted = bool(np.log(rng.random()) < log_a)
    if accepted:
        s1, s2 = states[c], states[c + 1]
        s1.z, s2.z = s2.z, s1.z
        s1.pi, s2.pi = s2.pi, s1.pi
        s1.beta, s2.beta = s2.beta, s1.beta
        s1.log_target = log_target(s1, data, a1, nu2)
        s2.log_target = log_target(s2, data, a2, nu2)
    return c, accepted


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------


def _permute_state(z, pi, beta, perm):
    """Relabel so that old component k becomes ``perm[k]``."""
    new_pi = np.empty_like(pi)
    new_beta = np.empty_like(beta)
    new_pi[perm] = pi
    new_beta[perm] = beta
    return perm[z], new_pi, new_beta


def init_from_em(em_run, k_max: int, n_chains: int, tau0: float, rng=None,
                 with_random_permutation: bool = True) -> list:
    """Chain starting states built from a fitted EM run.

    The first K components copy the EM weights and coefficients, the rest
    get zero coefficients and a machine-floor weight before renormalising.
    Allocations are the EM MAP labels. With ``with_random_permutation``
    each chain relabels its components by an independent random
    permutation.
    """
    K = em_run.params.K
    if K > k_max:
        raise InvalidInputError(f"EM fit has {K} components but k_max is {k_max}")
    beta_em = np.asarray(em_run.params.beta, dtype=float)
    if not np.all(np.isfinite(beta_em)):
        raise InvalidInputError("EM coefficients must be finite to seed the sampler")
    _, J, P = beta_em.shape
    pi = np.full(k_max, np.finfo(float).tiny)
    pi[:K] = em_run.params.pi
    pi /= pi.sum()
    beta = np.zeros((k_max, J, P))
    beta[:K] = beta_em
    z = map_classification(em_run.responsibilities)
    rngs = check_random_state(rng).spawn(n_chains)
    states = []
    for r in rngs:
        if with_random_permutation:
            zc, pic, bc = _permute_state(z, pi, beta, r.permutation(k_max))
        else:
            zc, pic, bc = z.copy(), pi.copy(), beta.copy()
        states.append(ChainState(z=zc, pi=pic, beta=bc, tau=tau0))
    return states


def init_random(data: Dataset, k_max: int, prior: PriorConfig, tau0: float, rng=None) -> list:
    """Chain starting states drawn from the priors (pi, beta, then z | pi)."""
    rngs = check_random_state(rng).spawn(prior.alphas.size)
    states = []
    for alpha, r in zip(prior.alphas, rngs):
        pi = sample_weights(np.zeros(0, dtype=np.int64), alpha, r, k_max)
        beta = r.normal(0.0, np.sqrt(prior.nu2), size=(k_max, data.J, data.P))
        z = r.choice(k_max, size=data.n, p=pi)
        states.append(ChainState(z=z, pi=pi, beta=beta, tau=tau0))
    return states


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


class _Ensemble:
    """Stacked states of all chains with per-chain counters."""

    def __init__(self, states, alphas, nu2, rngs, data):
        self.z = np.stack([s.z for s in states]).astype(np.int64)
        self.pi = np.stack([s.pi for s in states]).astype(float)
        self.beta = np.stack([s.beta for s in states]).astype(float)
        self.tau = np.array([s.tau for s in states], dtype=float)
        self.accept = np.zeros(len(states), dtype=np.int64)
        self.proposals = np.zeros(len(states), dtype=np.int64)
        self.nonfinite = np.zeros(len(states), dtype=np.int64)
        self.alphas = alphas
        self.nu2 = nu2
        self.rngs = rngs
        self.data = data
        lik, pri, _ = _conditional_batch(self.beta, self.z, data, nu2)
        self.log_target = _log_target_batch(self.z, self.pi, lik, pri, alphas, data)

    def advance(self, sl: slice, n_iter: int, adapt: MCMCConfig | None = None):
        """Run ``n_iter`` sweeps on the chains in ``sl``."""
        z, pi, beta = self.z[sl], self.pi[sl], self.beta[sl]
        tau = self.tau[sl].copy()
        alphas, rngs = self.alphas[sl], self.rngs[sl]
        offset = sl.start or 0
        window = np.zeros(tau.size, dtype=np.int64)
        accept_total = np.zeros(tau.size, dtype=np.int64)
        nonfinite_total = np.zeros(tau.size, dtype=np.int64)
        lt = self.log_target[sl]
        for it in range(n_iter):
            try:
                z, pi, beta, acc, nonfinite, lt = _sweep_batch(
                    z, pi, beta, tau, alphas, self.data, self.nu2, rngs, offset)
            except DegeneracyError as exc:
                raise DegeneracyError(f"{exc} (tau={np.array2string(tau, precision=3)})") from exc
            window += acc
            accept_total += acc
            nonfinite_total += nonfinite
            if adapt is not None and (it + 1) % adapt.check_ar == 0:
                rate = window / adapt.check_ar
                tau = np.array([adapt_tau(t, r, adapt.ar_low, adapt.ar_high)
                                for t, r in zip(tau, rate)])
                window[:] = 0
        self.z[sl], self.pi[sl], self.beta[sl] = z, pi, beta
        self.tau[sl] = tau
        self.log_target[sl] = lt
        self.accept[sl] += accept_total
        self.proposals[sl] += n_iter
        self.nonfinite[sl] += nonfinite_total

    def swap(self, rng) -> bool:
        C = self.tau.size
        c = int(rng.integers(C - 1))
        a1, a2 = float(self.alphas[c]), float(self.alphas[c + 1])
        log_a = swap_log_ratio(self.pi[c], self.pi[c + 1], a1, a2)
        if not np.log(rng.random()) < log_a:
            return False
        pair = [c + 1, c]
        for arr in (self.z, self.pi, self.beta):
            arr[c:c + 2] = arr[pair]
        sl = slice(c, c + 2)
        lik, pri, _ = _conditional_batch(self.beta[sl], self.z[sl], self.data, self.nu2)
        self.log_target[sl] = _log_target_batch(self.z[sl], self.pi[sl], lik, pri,
                                                self.alphas[sl], self.data)
        return True


def _chain_groups(C: int, n_jobs: int) -> list:
    bounds = np.linspace(0, C, min(max(n_jobs, 1), C) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def run_sampler(data: Dataset, config: MCMCConfig, prior: PriorConfig, init: list,
                rng=None, n_jobs: int = 1) -> SamplerTrace:
    """Prior parallel tempering MALA-within-Gibbs sampler.

    Warm-up: every chain runs ``warm_up`` sweeps on its own, adapting tau
    every ``check_ar`` sweeps. Then ``cycles`` cycles of ``iter_per_cycle``
    sweeps per chain, each followed by one swap attempt between a random
    neighbouring pair. Chain 0 is recorded at the end of every cycle after
    ``burn_cycles``, keeping every ``thin``-th cycle.

    Random streams: ``rng`` is split into one child per chain plus one for
    the swap decisions, so draws do not depend on scheduling or ``n_jobs``.
    """
    config.validate()
    C = len(init)
    if C != prior.alphas.size:
        raise InvalidInputError(f"{C} initial states but {prior.alphas.size} prior alphas")
    k_max = init[0].k_max
    for st in init:
        check_labels(st.z, k_max)
        if st.pi.shape != (k_max,) or st.beta.shape != (k_max, data.J, data.P):
            raise InvalidInputError("initial weights or coefficients have the wrong shape")
        if not np.all(np.isfinite(st.beta)) or st.tau <= 0:
            raise InvalidInputError("initial coefficients must be finite and tau positive")
    if not prior.check_overfitting(data.J, data.P):
        logger.warning("target alpha %.4g is not below d/2 = %.4g", prior.alphas[0],
                       data.J * data.P / 2.0)

    streams = check_random_state(rng).spawn(C + 1)
    ens = _Ensemble(init, prior.alphas, prior.nu2, streams[:C], data)
    swap_rng = streams[C]
    groups = _chain_groups(C, n_jobs)
    executor = ThreadPoolExecutor(max_workers=len(groups)) if len(groups) > 1 else None

    def advance(n_iter, adapt=None):
        if executor is None:
            for g in groups:
                ens.advance(g, n_iter, adapt)
        else:
            list(executor.map(lambda g: ens.advance(g, n_iter, adapt), groups))

    draws_z, draws_pi, draws_beta, draws_lt, kept = [], [], [], [], []
    try:
        if config.warm_up:
            advance(config.warm_up, adapt=config)
        base_accept = ens.accept.copy()
        base_props = ens.proposals.copy()
        swaps_done = 0
        for t in range(config.cycles):
            advance(config.iter_per_cycle)
            if C > 1:
                swaps_done += ens.swap(swap_rng)
            if t >= config.burn_cycles and (t - config.burn_cycles) % config.thin == 0:
                draws_z.append(ens.z[0].copy())
                draws_pi.append(ens.pi[0].copy())
                draws_beta.append(ens.beta[0].copy())
                draws_lt.append(float(ens.log_target[0]))
                kept.append(t)
    finally:
        if executor is not None:
            executor.shutdown()

    if ens.nonfinite.any():
        logger.info("non-finite MALA proposals rejected per chain: %s", ens.nonfinite.tolist())
    acc = (ens.accept - base_accept) / np.maximum(ens.proposals - base_props, 1)
    z_arr = np.array(draws_z, dtype=np.int64)
    k0 = np.array([alive_components(z, k_max) for z in z_arr], dtype=np.int64)
    return SamplerTrace(
        z=z_arr,
        pi=np.array(draws_pi),
        beta=np.array(draws_beta),
        log_target=np.array(draws_lt),
        k0=k0,
        cycles=np.array(kept, dtype=np.int64),
        mala_acceptance=float(acc[0]),
        swap_acceptance=float(swaps_done / config.cycles) if C > 1 else float("nan"),
        chain_acceptance=acc,
        final_tau=ens.tau.copy(),
    )
