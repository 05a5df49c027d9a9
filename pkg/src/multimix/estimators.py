"""Scikit-learn style estimators wrapping the EM and MCMC engines.

``X`` is always the count matrix; covariates are passed separately and
get an intercept column unless ``fit_intercept=False``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import build_design, check_random_state
from .em import EMConfig, fit_path
from .mcmc import MCMCConfig, PriorConfig, default_alphas, init_from_em, init_random, run_sampler
from .model import Dataset, MixtureParams, e_step, map_classification, observed_log_likelihood
from .relabel import ecr_relabel, select_pivot, summarize


class _CountMixtureBase(ClusterMixin, BaseEstimator):

    def _dataset(self, X, covariates, fitting=False):
        y = np.asarray(X)
        n = y.shape[0] if y.ndim == 2 else 0
        design = build_design(covariates, n, add_intercept=self.fit_intercept,
                              standardize=False)
        if self.standardize and covariates is not None:
            cov = np.asarray(covariates, dtype=float)
            cov = cov[:, None] if cov.ndim == 1 else cov
            if fitting:
                self.covariate_mean_ = cov.mean(axis=0)
                self.covariate_scale_ = cov.std(axis=0, ddof=1) if n > 1 else np.ones(cov.shape[1])
                self.covariate_scale_[self.covariate_scale_ == 0] = 1.0
            scaled = (cov - self.covariate_mean_) / self.covariate_scale_
            design = build_design(scaled, n, add_intercept=self.fit_intercept)
        return Dataset.from_arrays(y, design)

    def predict_proba(self, X, covariates=None):
        """Membership probabilities under the fitted parameters.

        Returns
        -------
        w : ndarray of shape (n_samples, n_components_)
        """
        check_is_fitted(self, "params_")
        return e_step(self.params_, self._dataset(X, covariates))

    def predict(self, X, covariates=None):
        """Most probable component (0-based) for each row of counts."""
        return map_classification(self.predict_proba(X, covariates))

    def score(self, X, y=None, covariates=None):
        """Average observed log-likelihood per row."""
        check_is_fitted(self, "params_")
        data = self._dataset(X, covariates)
        return observed_log_likelihood(self.params_, data) / data.n

    @property
    def weights_(self):
        check_is_fitted(self, "params_")
        return self.params_.pi

    @property
    def coef_(self):
        """Coefficients of shape (n_components_, n_categories - 1, n_features)."""
        check_is_fitted(self, "params_")
        return self.params_.beta


class MultinomialLogitMixture(_CountMixtureBase):
    """Mixture of multinomial logistic regressions fitted by EM.

    Fits K = 1..``k_max`` components with small-EM initialisation and a
    ridge-stabilised Newton M-step, then keeps the K minimising ICL.

    Parameters
    ----------
    k_max : int, default=10
        Largest number of components tried.
    max_iter, tol, max_nr, t_split, m_split, split, r0
        EM settings, see :class:`multimix.em.EMConfig`.
    fit_intercept : bool, default=True
        Prepend an intercept column to the covariates.
    standardize : bool, default=False
        Scale covariates to zero mean and unit variance (sample sd) using
        statistics from the training data.
    random_state : int, Generator or None
    n_jobs : int, default=1
        Threads used for the small-EM starts.

    Attributes
    ----------
    n_components_ : int
        Number of components selected by ICL.
    params_ : MixtureParams
    labels_ : ndarray of shape (n_samples,)
    responsibilities_ : ndarray of shape (n_samples, n_components_)
    selection_ : SelectionScores
    runs_ : list of EMRun, one per K
    """

    def __init__(self, k_max=10, max_iter=100, tol=1e-8, max_nr=10, t_split=16,
                 m_split=10, split=True, r0=0.1, fit_intercept=True, standardize=False,
                 random_state=None, n_jobs=1):
        self.k_max = k_max
        self.max_iter = max_iter
        self.tol = tol
        self.max_nr = max_nr
        self.t_split = t_split
        self.m_split = m_split
        self.split = split
        self.r0 = r0
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _em_config(self):
        return EMConfig(max_iter=self.max_iter, threshold=self.tol, max_nr=self.max_nr,
                        t_split=self.t_split, m_split=self.m_split, split=self.split,
                        r0=self.r0)

    def fit(self, X, y=None, covariates=None):
        """Fit the EM path on counts ``X`` (n_samples, n_categories)."""
        data = self._dataset(X, covariates, fitting=True)
        rng = check_random_state(self.random_state)
        scores, runs = fit_path(data, self.k_max, self._em_config(), rng, n_jobs=self.n_jobs)
        best = runs[scores.best_k - 1]
        self.selection_ = scores
        self.runs_ = runs
        self.n_components_ = best.K
        self.params_ = best.params
        self.responsibilities_ = best.responsibilities
        self.labels_ = best.labels
        self.loglik_ = best.loglik
        return self


class BayesianMultinomialLogitMixture(_CountMixtureBase):
    """Overfitting Bayesian mixture sampled with tempered MALA-within-Gibbs.

    The number of clusters is estimated by the posterior mode of the number
    of occupied components; labels are the single best clustering after
    relabeling.

    Parameters
    ----------
    k_max : int, default=10
        Number of components of the overfitting mixture.
    n_chains, warm_up, cycles, iter_per_cycle, check_ar, ar_low, ar_high,
    burn_cycles, tau0, thin, with_random_permutation
        Sampler settings, see :class:`multimix.mcmc.MCMCConfig`.
    nu2 : float, default=100
        Prior variance of the coefficients.
    alphas : array-like or None
        Per-chain Dirichlet concentrations; defaults to the standard ladder.
    init : {"em", "random"}, default="em"
        Seed the chains from an EM fit (K = 1..``em_k_max`` selected by ICL)
        or from the priors.
    em_k_max : int or None
        Largest K for the initialising EM path; defaults to ``k_max``.
    em_t_split : int, default=16
        Small-EM starts per K for the initialising EM path.
    level : float, default=0.95
        Credible level of the posterior summaries.

    Attributes
    ----------
    n_components_ : int
        Posterior mode of the number of occupied components.
    k0_distribution_ : dict
    labels_ : ndarray of shape (n_samples,)
    membership_ : ndarray of shape (n_samples, k_max)
    trace_, relabeled_, summary_
        Raw target-chain draws, relabeled draws and posterior summary.
    params_ : MixtureParams
        Posterior means of the occupied components (weights renormalised).
    """

    def __init__(self, k_max=10, n_chains=8, warm_up=48000, cycles=2600, iter_per_cycle=20,
                 check_ar=500, ar_low=0.15, ar_high=0.25, burn_cycles=100, tau0=0.00035,
                 thin=1, with_random_permutation=True, nu2=100.0, alphas=None, init="em",
                 em_k_max=None, em_t_split=16, level=0.95, fit_intercept=True,
                 standardize=False, random_state=None, n_jobs=1):
        self.k_max = k_max
        self.n_chains = n_chains
        self.warm_up = warm_up
        self.cycles = cycles
        self.iter_per_cycle = iter_per_cycle
        self.check_ar = check_ar
        self.ar_low = ar_low
        self.ar_high = ar_high
        self.burn_cycles = burn_cycles
        self.tau0 = tau0
        self.thin = thin
        self.with_random_permutation = with_random_permutation
        self.nu2 = nu2
        self.alphas = alphas
        self.init = init
        self.em_k_max = em_k_max
        self.em_t_split = em_t_split
        self.level = level
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None, covariates=None):
        """Run the sampler on counts ``X`` and post-process the target chain."""
        data = self._dataset(X, covariates, fitting=True)
        config = MCMCConfig(
            k_max=self.k_max, n_chains=self.n_chains, warm_up=self.warm_up,
            cycles=self.cycles, iter_per_cycle=self.iter_per_cycle, check_ar=self.check_ar,
            ar_low=self.ar_low, ar_high=self.ar_high, burn_cycles=self.burn_cycles,
            tau0=self.tau0, thin=self.thin,
            with_random_permutation=self.with_random_permutation,
        ).validate()
        alphas = default_alphas(self.n_chains) if self.alphas is None else self.alphas
        prior = PriorConfig(nu2=self.nu2, alphas=alphas)
        em_rng, init_rng, chain_rng = check_random_state(self.random_state).spawn(3)
        if self.init == "em":
            em_k_max = min(self.em_k_max or self.k_max, self.k_max)
            scores, runs = fit_path(data, em_k_max, EMConfig(t_split=self.em_t_split), em_rng,
                                    n_jobs=self.n_jobs)
            self.em_selection_ = scores
            start = init_from_em(runs[scores.best_k - 1], config.k_max, config.n_chains,
                                 config.tau0, init_rng, config.with_random_permutation)
        elif self.init == "random":
            start = init_random(data, config.k_max, prior, config.tau0, init_rng)
        else:
            raise ValueError(f"init must be 'em' or 'random', got {self.init!r}")
        trace = run_sampler(data, config, prior, start, chain_rng, n_jobs=self.n_jobs)
        relabeled = ecr_relabel(trace, select_pivot(trace))
        summary = summarize(relabeled, self.level)
        self.trace_ = trace
        self.relabeled_ = relabeled
        self.summary_ = summary
        self.n_components_ = summary.k0_mode
        self.k0_distribution_ = summary.k0_distribution
        self.membership_ = summary.membership
        self.labels_ = summary.best_clustering
        pi = summary.pi_mean / summary.pi_mean.sum()
        self.params_ = MixtureParams(pi, summary.beta_mean)
        # labels_ use the relabeled component ids; params_ index occupied ones
        self.component_ids_ = summary.components
        return self

    def predict(self, X, covariates=None):
        """Most probable component for each row, using the relabeled ids of
        :attr:`labels_`."""
        return self.component_ids_[super().predict(X, covariates)]
