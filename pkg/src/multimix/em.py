"""EM estimation of mixtures of multinomial logistic regressions.

The M-step for the coefficients uses a ridge-stabilised Newton-Raphson
iteration (Goldfeld, Quandt and Trotter, 1966) run independently per
component, since the Hessian of Q is block diagonal. Starting values come
from short "small-EM" runs seeded by random, split or shake perturbations
of membership probabilities, and the number of components is selected by
ICL over a K = 1..Kmax path.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from ._validation import check_random_state, check_responsibilities
from .exceptions import DegeneracyError, EmptyComponentError, InvalidInputError
from .model import (
    Dataset,
    MixtureParams,
    _component_grad_hessian,
    component_q,
    e_step,
    map_classification,
    observed_log_likelihood,
)

logger = logging.getLogger(__name__)

EMPTY_MASS = 1e-10
COND_LIMIT = 1e14
R_FLOOR, R_CAP = 1e-6, 1e6
MAX_RETRIES = 5


def partition_starts(total: int, split: bool = True) -> tuple[int, int, int]:
    """Divide ``total`` small-EM starts into (split, shake, random) counts.

    With ``split`` enabled the starts are shared as evenly as possible with
    the remainder going to split first, then shake: 24 -> (8, 8, 8),
    16 -> (6, 5, 5). Otherwise every start is random.
    """
    if total < 0:
        raise InvalidInputError("number of small-EM starts must be non-negative")
    if not split:
        return 0, 0, total
    base, rem = divmod(total, 3)
    counts = [base + (1 if i < rem else 0) for i in range(3)]
    return counts[0], counts[1], counts[2]


@dataclass
class EMConfig:
    """EM settings.

    Keys of the configuration file map as ``maxIter -> max_iter``,
    ``emthreshold -> threshold``, ``maxNR -> max_nr``, ``tsplit -> t_split``,
    ``msplit -> m_split``, ``split -> split`` and ``R0 -> r0``. When the
    three per-scheme counts are left as ``None`` they are derived from
    ``t_split`` by :func:`partition_starts`.
    """

    max_iter: int = 100
    threshold: float = 1e-8
    max_nr: int = 10
    t_split: int = 16
    m_split: int = 10
    split: bool = True
    m_split_count: int | None = None
    m_shake_count: int | None = None
    m_random_count: int | None = None
    r0: float = 0.1
    split_beta_a: float = 1.0
    split_beta_b: float = 1.0
    m_step: str = "auto"

    def scheme_counts(self) -> tuple[int, int, int]:
        explicit = (self.m_split_count, self.m_shake_count, self.m_random_count)
        if all(c is None for c in explicit):
            return partition_starts(self.t_split, self.split)
        if any(c is None for c in explicit):
            raise InvalidInputError("set all three small-EM counts or none of them")
        if any(c < 0 for c in explicit):
            raise InvalidInputError("small-EM counts must be non-negative")
        return tuple(int(c) for c in explicit)

    def validate(self) -> "EMConfig":
        if self.max_iter < 1 or self.max_nr < 1 or self.m_split < 1:
            raise InvalidInputError("maxIter, maxNR and msplit must be positive")
        if self.threshold <= 0 or self.r0 <= 0:
            raise InvalidInputError("emthreshold and R0 must be positive")
        if self.split_beta_a <= 0 or self.split_beta_b <= 0:
            raise InvalidInputError("Beta split parameters must be positive")
        if self.m_step not in ("auto", "newton", "analytic"):
            raise InvalidInputError(f"unknown m_step {self.m_step!r}")
        self.scheme_counts()
        return self


@dataclass
class NewtonState:
    """State of the ridge-stabilised Newton-Raphson for one component.

    ``q_trace`` records the component objective after every accepted
    iterate; ``skipped`` is set when no acceptable step could be formed.
    """

    beta_k: np.ndarray
    R: float
    alpha: float = 0.0
    lambda1: float = 0.0
    q_value: float = float("nan")
    q_trace: list = field(default_factory=list)
    skipped: bool = False


@dataclass
class EMRun:
    """Result of one EM run at a fixed number of components."""

    params: MixtureParams
    responsibilities: np.ndarray
    loglik_trace: list
    converged: bool
    n_iter: int
    ridge_R: np.ndarray | None = None
    empty_components: tuple = ()
    skipped_updates: int = 0

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def labels(self) -> np.ndarray:
        return map_classification(self.responsibilities)

    @property
    def effectively_fewer(self) -> bool:
        return len(self.empty_components) > 0


@dataclass
class SelectionRecord:
    K: int
    loglik: float
    d_K: int
    BIC: float
    ICL: float


@dataclass
class SelectionScores:
    records: list

    @property
    def best_k(self) -> int:
        """K with the smallest ICL (first one on ties)."""
        icl = [r.ICL for r in self.records]
        return self.records[int(np.argmin(icl))].K

    def as_rows(self) -> list[dict]:
        return [vars(r).copy() for r in self.records]


@dataclass
class SmallEMResult:
    """Best short run among several candidates, with every candidate score."""

    run: EMRun
    scores: list
    best_index: int

    @property
    def responsibilities(self) -> np.ndarray:
        return self.run.responsibilities

    @property
    def loglik(self) -> float:
        return self.run.loglik


# --------------------------------------------------------------------------
# M-step pieces
# --------------------------------------------------------------------------


def m_step_weights(w) -> np.ndarray:
    """Mixing proportions as column means of the responsibilities."""
    w = np.asarray(w, dtype=float)
    pi = w.mean(axis=0)
    return pi / pi.sum()


def m_step_no_covariates(w, data: Dataset) -> np.ndarray:
    """Closed-form category probabilities for the intercept-only model.

    Returns ``theta`` of shape (K, J + 1) with
    ``theta_kj = sum_i w_ik y_ij / sum_i w_ik S_i``.
    """
    w = np.asarray(w, dtype=float)
    denom = w.T @ data.s
    empty = np.flatnonzero(denom <= 0)
    if empty.size:
        raise EmptyComponentError(int(empty[0]))
    theta = (w.T @ data.y) / denom[:, None]
    return theta / theta.sum(axis=1, keepdims=True)


def theta_to_beta(theta: np.ndarray) -> np.ndarray:
    """Baseline log-odds of category probabilities as (K, J, 1) coefficients."""
    with np.errstate(divide="ignore", invalid="ignore"):
        log_t = np.log(theta)
    return (log_t[:, :-1] - log_t[:, -1:])[:, :, None]


def _ridge_direction(evals, evecs, grad, shift):
    """Solve (H - shift I) s = -grad through the eigendecomposition of H."""
    mu = evals - shift
    abs_mu = np.abs(mu)
    if abs_mu.min() == 0.0 or abs_mu.max() / abs_mu.min() > COND_LIMIT:
        return None
    return -(evecs @ ((evecs.T @ grad) / mu))


def ridge_newton_raphson(state: NewtonState, w_col_k, data: Dataset, max_nr: int,
                         grad_tol: float = 1e-10) -> NewtonState:
    """Ridge-stabilised Newton-Raphson ascent of one component's Q.

    Each iterate uses ``alpha = lambda1 + R * ||grad||`` where ``lambda1`` is
    the largest eigenvalue of the Hessian; when ``alpha > 0`` the Hessian is
    shifted to ``H - alpha I``. ``R`` is halved (floor 1e-6) after a step
    whose gain reaches 0.75 of the quadratic model's prediction. A step that
    lowers Q is discarded and retried with ``R`` quadrupled (cap 1e6), at
    most five times, so the objective never decreases.
    """
    w_col_k = np.asarray(w_col_k, dtype=float)
    beta = np.array(state.beta_k, dtype=float, copy=True)
    J, P = beta.shape
    R = float(state.R)
    q = component_q(beta, w_col_k, data)
    out = NewtonState(beta_k=beta, R=R, alpha=state.alpha, lambda1=state.lambda1,
                      q_value=q, q_trace=[q])

    for _ in range(max_nr):
        grad, hess = _component_grad_hessian(beta, w_col_k, data)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < grad_tol:
            break
        evals, evecs = eigh(hess)
        lam1 = float(evals[-1])
        accepted = False
        for _attempt in range(MAX_RETRIES + 1):
            alpha = lam1 + R * gnorm
            step = _ridge_direction(evals, evecs, grad, max(alpha, 0.0))
            if step is None:
                R = min(4.0 * R, R_CAP)
                continue
            predicted = grad @ step + 0.5 * step @ (hess @ step)
            if predicted <= 4 * np.finfo(float).eps * max(1.0, abs(q)):
                # gain below the resolution of q: converged
                accepted = None
                break
            candidate = beta + step.reshape(J, P)
            q_new = component_q(candidate, w_col_k, data)
            if np.isfinite(q_new) and q_new >= q:
                if q_new - q >= 0.75 * predicted:
                    R = max(R / 2.0, R_FLOOR)
                beta, q = candidate, q_new
                out.alpha, out.lambda1 = alpha, lam1
                accepted = True
                break
            R = min(4.0 * R, R_CAP)
        if accepted is None:
            break
        if not accepted:
            out.skipped = True
            break
        out.q_trace.append(q)

    out.beta_k, out.R, out.q_value = beta, R, q
    return out


def newton_raphson(beta_k, w_col_k, data: Dataset, max_nr: int) -> list:
    """Plain Newton-Raphson iterates for comparison; no step control.

    Returns the list of component Q values, starting with the initial one.
    """
    beta = np.array(beta_k, dtype=float, copy=True)
    J, P = beta.shape
    w_col_k = np.asarray(w_col_k, dtype=float)
    trace = [component_q(beta, w_col_k, data)]
    for _ in range(max_nr):
        grad, hess = _component_grad_hessian(beta, w_col_k, data)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step.reshape(J, P)
        trace.append(component_q(beta, w_col_k, data))
        if not np.isfinite(trace[-1]):
            break
    return trace


# --------------------------------------------------------------------------
# EM main loop
# --------------------------------------------------------------------------


def _use_analytic(data: Dataset, config: EMConfig) -> bool:
    if config.m_step == "analytic":
        if data.P != 1:
            raise InvalidInputError("the closed-form M-step needs an intercept-only design")
        return True
    return config.m_step == "auto" and data.intercept_only


def em_fit(data: Dataset, K: int, w_init, config: EMConfig | None = None,
           beta_init=None, ridge_R=None, max_iter: int | None = None) -> EMRun:
    """Run EM from initial responsibilities.

    Each iteration performs the M-step from the current responsibilities,
    evaluates the observed log-likelihood of the new parameters and then
    the E-step. Iteration stops when two successive log-likelihoods differ
    by less than ``config.threshold`` or after ``max_iter`` iterations.
    Components whose total responsibility falls below 1e-10 keep their
    coefficients frozen and are reported in ``empty_components``.
    """
    config = config or EMConfig()
    max_iter = config.max_iter if max_iter is None else max_iter
    w = check_responsibilities(w_init, data.n, K, atol=1e-8)
    analytic = _use_analytic(data, config)
    J, P = data.J, data.P
    beta = np.zeros((K, J, P)) if beta_init is None else np.array(beta_init, dtype=float)
    if beta.shape != (K, J, P):
        raise InvalidInputError(f"beta_init must have shape {(K, J, P)}, got {beta.shape}")
    R = np.full(K, config.r0) if ridge_R is None else np.array(ridge_R, dtype=float)
    theta = None
    if analytic:
        with np.errstate(over="ignore"):
            theta = np.exp(np.concatenate([beta[:, :, 0], np.zeros((K, 1))], axis=1))
        with np.errstate(invalid="ignore"):
            theta /= theta.sum(axis=1, keepdims=True)
        theta[~np.all(np.isfinite(theta), axis=1)] = 1.0 / (J + 1)

    trace: list[float] = []
    converged = False
    skipped = 0
    empty: set[int] = set()
    params = None
    for it in range(max_iter):
        pi = m_step_weights(w)
        mass = w.sum(axis=0)
        active = np.flatnonzero(mass >= EMPTY_MASS)
        empty.update(int(k) for k in np.flatnonzero(mass < EMPTY_MASS))
        if analytic:
            theta = theta.copy()
            theta[active] = m_step_no_covariates(w[:, active], data)
            beta = theta_to_beta(theta)
        else:
            beta = beta.copy()
            for k in active:
                st = ridge_newton_raphson(
                    NewtonState(beta_k=beta[k], R=R[k]), w[:, k], data, config.max_nr
                )
                beta[k] = st.beta_k
                R[k] = st.R
                skipped += int(st.skipped)
        params = MixtureParams(pi, beta, theta.copy() if analytic else None)
        trace.append(observed_log_likelihood(params, data))
        try:
            w = e_step(params, data)
        except DegeneracyError as exc:
            raise DegeneracyError(f"EM iteration {it + 1} (K={K}): {exc}") from exc
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.threshold:
            converged = True
            break

    return EMRun(
        params=params,
        responsibilities=w,
        loglik_trace=trace,
        converged=converged,
        n_iter=len(trace),
        ridge_R=R,
        empty_components=tuple(sorted(empty)),
        skipped_updates=skipped,
    )


# --------------------------------------------------------------------------
# Small-EM initialisation
# --------------------------------------------------------------------------


def _run_candidates(data, K, candidates, T, config, executor):
    """Run T EM iterations from each (w, beta, R) candidate, keep the best."""

    def _one(cand):
        w, beta, R = cand
        return em_fit(data, K, w, config, beta_init=beta, ridge_R=R, max_iter=T)

    if executor is None:
        runs = [_one(c) for c in candidates]
    else:
        runs = list(executor.map(_one, candidates))
    scores = [r.loglik for r in runs]
    best = int(np.argmax(scores))
    return SmallEMResult(run=runs[best], scores=scores, best_index=best)


def random_responsibilities(n: int, K: int, rng) -> np.ndarray:
    """Uniform(0, 1) entries, each row normalised to sum to one."""
    rng = check_random_state(rng)
    u = rng.random((n, K))
    return u / u.sum(axis=1, keepdims=True)


def split_responsibilities(w_prev, target: int, u) -> np.ndarray:
    """Split column ``target`` into itself (share u) and a new last column."""
    w_prev = np.asarray(w_prev, dtype=float)
    u = np.asarray(u, dtype=float)
    col = w_prev[:, target]
    out = np.column_stack([w_prev, (1.0 - u) * col])
    out[:, target] = u * col
    return out


def shake_responsibilities(w, k1: int, k2: int, u) -> np.ndarray:
    """Re-mix columns k1 and k2 for rows MAP-assigned to either of them."""
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    out = w.copy()
    labels = map_classification(w)
    rows = np.flatnonzero((labels == k1) | (labels == k2))
    total = w[rows, k1] + w[rows, k2]
    out[rows, k1] = u[rows] * total
    out[rows, k2] = (1.0 - u[rows]) * total
    return out


def small_em_random(data: Dataset, K: int, count: int, T: int, config: EMConfig,
                    rng=None, executor=None) -> SmallEMResult:
    """Best of ``count`` short runs started from random responsibilities."""
    if count < 1:
        raise InvalidInputError("count must be positive")
    rngs = check_random_state(rng).spawn(count)
    cands = [(random_responsibilities(data.n, K, r), None, None) for r in rngs]
    return _run_candidates(data, K, cands, T, config, executor)


def small_em_split(data: Dataset, K: int, count: int, T: int, config: EMConfig,
                   prev_run: EMRun, rng=None, executor=None) -> SmallEMResult:
    """Best of ``count`` short runs started by splitting a (K-1)-fit cluster.

    Each attempt picks a non-empty MAP cluster uniformly, draws
    ``u_i ~ Beta(a, b)`` per row and moves the share ``1 - u_i`` of that
    cluster's membership into a new K-th component whose coefficients start
    as a copy of the split cluster's.
    """
    if K < 2 or prev_run.K != K - 1:
        raise InvalidInputError("split needs a fitted run with K-1 components")
    if count < 1:
        raise InvalidInputError("count must be positive")
    nonempty = np.unique(prev_run.labels)
    if nonempty.size == 0:
        raise RuntimeError("previous run has no non-empty cluster")
    rngs = check_random_state(rng).spawn(count)
    cands = []
    for r in rngs:
        target = int(r.choice(nonempty))
        u = r.beta(config.split_beta_a, config.split_beta_b, size=data.n)
        w = split_responsibilities(prev_run.responsibilities, target, u)
        beta = np.concatenate([prev_run.params.beta, prev_run.params.beta[target:target + 1]])
        cands.append((w, beta, None))
    return _run_candidates(data, K, cands, T, config, executor)


def small_em_shake(data: Dataset, K: int, count: int, T: int, config: EMConfig,
                   current_run: EMRun, rng=None, executor=None) -> SmallEMResult:
    """Best of ``count`` short runs started by shaking two clusters.

    The current run itself is kept as a candidate, so the result never has
    a lower log-likelihood than ``current_run``; ``scores`` lists only the
    shaken attempts.
    """
    if K < 2 or current_run.K != K:
        raise InvalidInputError("shake needs a fitted run with K >= 2 components")
    if count < 1:
        raise InvalidInputError("count must be positive")
    rngs = check_random_state(rng).spawn(count)
    cands = []
    for r in rngs:
        k1, k2 = (int(v) for v in r.choice(K, size=2, replace=False))
        u = r.beta(config.split_beta_a, config.split_beta_b, size=data.n)
        w = shake_responsibilities(current_run.responsibilities, k1, k2, u)
        cands.append((w, current_run.params.beta, None))
    result = _run_candidates(data, K, cands, T, config, executor)
    if current_run.loglik > result.run.loglik:
        return SmallEMResult(run=current_run, scores=result.scores, best_index=-1)
    return result


# --------------------------------------------------------------------------
# Model path and selection
# --------------------------------------------------------------------------


def n_free_parameters(K: int, J: int, P: int) -> int:
    """(K - 1) mixing weights plus K * J * P coefficients."""
    return (K - 1) + K * J * P


def entropy_term(w) -> float:
    """``-2 * sum w log w`` with ``0 log 0 = 0``; zero for one-hot rows."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        wlogw = np.where(w > 0, w * np.log(w), 0.0)
    return float(-2.0 * wlogw.sum())


def selection_record(run: EMRun, data: Dataset) -> SelectionRecord:
    d = n_free_parameters(run.K, data.J, data.P)
    bic = -2.0 * run.loglik + d * np.log(data.n)
    icl = bic + entropy_term(run.responsibilities)
    return SelectionRecord(K=run.K, loglik=run.loglik, d_K=d, BIC=float(bic), ICL=float(icl))


def initial_candidate(data: Dataset, K: int, config: EMConfig, prev_run: EMRun | None,
                      rng, executor=None) -> SmallEMResult | None:
    """Best small-EM candidate for K components (None for K = 1)."""
    if K == 1:
        return None
    n_split, n_shake, n_random = config.scheme_counts()
    T = config.m_split
    rng_split, rng_random, rng_shake = check_random_state(rng).spawn(3)
    found: list[SmallEMResult] = []
    if n_split and prev_run is not None:
        found.append(small_em_split(data, K, n_split, T, config, prev_run, rng_split, executor))
    if n_random or not found:
        found.append(small_em_random(data, K, max(n_random, 1), T, config, rng_random, executor))
    best = max(found, key=lambda r: r.loglik)
    if n_shake:
        best = small_em_shake(data, K, n_shake, T, config, best.run, rng_shake, executor)
    return best


def fit_path(data: Dataset, k_max: int, config: EMConfig | None = None, rng=None,
             n_jobs: int = 1) -> tuple[SelectionScores, list]:
    """Fit K = 1..k_max sequentially and score each fit by BIC and ICL.

    For K >= 2 the main EM is started from the best small-EM candidate
    (split from the K-1 fit, then random starts, then shakes of the best so
    far). Each K gets its own deterministic random substream.
    """
    config = (config or EMConfig()).validate()
    if k_max < 1:
        raise InvalidInputError("k_max must be at least 1")
    streams = check_random_state(rng).spawn(k_max)
    executor = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    runs: list[EMRun] = []
    records = []
    try:
        prev = None
        for K in range(1, k_max + 1):
            cand = initial_candidate(data, K, config, prev, streams[K - 1], executor)
            if cand is None:
                run = em_fit(data, 1, np.ones((data.n, 1)), config)
            else:
                run = em_fit(data, K, cand.responsibilities, config,
                             beta_init=cand.run.params.beta, ridge_R=cand.run.ridge_R)
            if run.effectively_fewer:
                logger.info("K=%d fit has empty components %s", K, run.empty_components)
            runs.append(run)
            records.append(selection_record(run, data))
            prev = run
    finally:
        if executor is not None:
            executor.shutdown()
    return SelectionScores(records), runs
