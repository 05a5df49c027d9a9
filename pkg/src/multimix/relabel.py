"""Label-switching correction and posterior summaries for sampler output.

Relabeling uses the equivalence-classes-representatives idea with a single
pivot allocation: every retained draw is permuted so that its allocation
agrees with the pivot on as many observations as possible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import check_labels
from .exceptions import InvalidInputError
from .mcmc import SamplerTrace


@dataclass
class RelabeledTrace:
    """Draws after relabeling.

    ``permutations[t, k]`` is the new label of raw component ``k`` at draw
    ``t``, so ``z[t] == permutations[t][raw_z[t]]``. Arrays keep all
    ``k_max`` components; ``alive[t, k]`` marks occupied ones.
    """

    permutations: np.ndarray
    z: np.ndarray
    pi: np.ndarray
    beta: np.ndarray
    k0: np.ndarray
    log_target: np.ndarray
    pivot: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.z.shape[0]

    @property
    def k_max(self) -> int:
        return self.pi.shape[1]

    @property
    def alive(self) -> np.ndarray:
        T, K = self.pi.shape
        counts = np.zeros((T, K), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(T), self.z.shape[1]), self.z.ravel()), 1)
        return counts > 0


@dataclass
class PosteriorSummary:
    """Posterior of K0 plus summaries conditional on the modal K0.

    Parameter summaries cover ``components``, the labels occupied by the
    pivot; rows of ``pi_*`` and leading axes of ``beta_*`` follow that order.
    """

    k0_distribution: dict
    k0_mode: int
    best_clustering: np.ndarray
    membership: np.ndarray
    components: np.ndarray
    pi_mean: np.ndarray
    pi_lower: np.ndarray
    pi_upper: np.ndarray
    beta_mean: np.ndarray
    beta_lower: np.ndarray
    beta_upper: np.ndarray
    level: float
    n_draws_used: int


def _permutation_for(z, pivot, k_max):
    """Label map maximising agreement with the pivot.

    Scores are ``matches * (k_max + 1) + [k == l]``: the identity bonus can
    never outweigh one match, so it only breaks ties (empty components keep
    their label when they can).
    """
    matches = np.bincount(z * k_max + pivot, minlength=k_max * k_max).reshape(k_max, k_max)
    score = matches * (k_max + 1) + np.eye(k_max, dtype=np.int64)
    rows, cols = linear_sum_assignment(score, maximize=True)
    perm = np.empty(k_max, dtype=np.int64)
    perm[rows] = cols
    return perm


def ecr_relabel(trace: SamplerTrace, pivot) -> RelabeledTrace:
    """Permute every draw's labels to best match ``pivot`` (0-based labels)."""
    k_max = trace.k_max
    pivot = check_labels(pivot, k_max)
    if pivot.shape[0] != trace.z.shape[1]:
        raise InvalidInputError(
            f"pivot has {pivot.shape[0]} entries but draws have {trace.z.shape[1]}"
        )
    T = trace.n_draws
    perms = np.empty((T, k_max), dtype=np.int64)
    z_new = np.empty_like(trace.z)
    pi_new = np.empty_like(trace.pi)
    beta_new = np.empty_like(trace.beta)
    for t in range(T):
        perm = _permutation_for(trace.z[t], pivot, k_max)
        perms[t] = perm
        z_new[t] = perm[trace.z[t]]
        pi_new[t, perm] = trace.pi[t]
        beta_new[t, perm] = trace.beta[t]
    return RelabeledTrace(
        permutations=perms,
        z=z_new,
        pi=pi_new,
        beta=beta_new,
        k0=np.asarray(trace.k0).copy(),
        log_target=np.asarray(trace.log_target).copy(),
        pivot=pivot.copy(),
    )


def _modal_k0(k0) -> int:
    # ties go to the smaller K0
    return int(np.argmax(np.bincount(np.asarray(k0, dtype=np.int64))))


def select_pivot(trace: SamplerTrace) -> np.ndarray:
    """Allocation of the highest log-target draw among draws with the modal K0.

    Ties on the log target go to the earliest draw.
    """
    if trace.n_draws == 0:
        raise InvalidInputError("trace has no retained draws")
    mode = _modal_k0(trace.k0)
    idx = np.flatnonzero(trace.k0 == mode)
    best = idx[int(np.argmax(trace.log_target[idx]))]
    return trace.z[best].copy()


def k0_distribution(k0) -> dict:
    """Empirical posterior of the number of occupied components."""
    values, counts = np.unique(np.asarray(k0, dtype=np.int64), return_counts=True)
    total = counts.sum()
    return {int(v): c / total for v, c in zip(values, counts)}


def summarize(relabeled: RelabeledTrace, level: float = 0.95) -> PosteriorSummary:
    """Posterior summaries over the draws whose K0 equals the posterior mode.

    Intervals are equal-tailed empirical quantiles at ``level``. The best
    clustering is the per-observation mode of the relabeled allocations
    (ties go to the lowest label) and ``membership`` holds the allocation
    frequencies over the same draws.
    """
    if not 0 < level < 1:
        raise InvalidInputError("credible level must lie in (0, 1)")
    if relabeled.n_draws == 0:
        raise InvalidInputError("no retained draws; run the sampler longer")
    mode = _modal_k0(relabeled.k0)
    subset = np.flatnonzero(relabeled.k0 == mode)
    if subset.size == 0:
        raise InvalidInputError("no draws with the modal K0; run the sampler longer")
    k_max = relabeled.k_max
    z = relabeled.z[subset]
    n = z.shape[1]
    counts = np.zeros((n, k_max))
    for zt in z:
        counts[np.arange(n), zt] += 1.0
    membership = counts / subset.size

    components = np.flatnonzero(np.bincount(relabeled.pivot, minlength=k_max))
    pi = relabeled.pi[subset][:, components]
    beta = relabeled.beta[subset][:, components]
    tail = (1.0 - level) / 2.0
    return PosteriorSummary(
        k0_distribution=k0_distribution(relabeled.k0),
        k0_mode=mode,
        best_clustering=np.argmax(membership, axis=1),
        membership=membership,
        components=components,
        pi_mean=pi.mean(axis=0),
        pi_lower=np.quantile(pi, tail, axis=0),
        pi_upper=np.quantile(pi, 1.0 - tail, axis=0),
        beta_mean=beta.mean(axis=0),
        beta_lower=np.quantile(beta, tail, axis=0),
        beta_upper=np.quantile(beta, 1.0 - tail, axis=0),
        level=level,
        n_draws_used=int(subset.size),
    )
