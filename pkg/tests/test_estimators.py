import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from multimix import BayesianMultinomialLogitMixture, MultinomialLogitMixture
from multimix.metrics import adjusted_rand_index
from multimix.simulation import SimConfig, simulate_dataset


@pytest.fixture(scope="module")
def sim():
    return simulate_dataset(SimConfig(n=80, K=2, P=2, n_categories=4, sigma_low=3, seed=21))


def fast_bayes(**kw):
    base = dict(k_max=5, n_chains=3, warm_up=200, cycles=40, iter_per_cycle=5,
                check_ar=100, burn_cycles=10, em_k_max=3, em_t_split=6, random_state=0)
    base.update(kw)
    return BayesianMultinomialLogitMixture(**base)


class TestEM:
    def test_fit_predict(self, sim):
        est = MultinomialLogitMixture(k_max=3, t_split=6, random_state=0)
        labels = est.fit_predict(sim.data.y, covariates=sim.covariates)
        assert est.n_components_ == len(est.weights_) == est.coef_.shape[0]
        np.testing.assert_array_equal(labels, est.labels_)
        np.testing.assert_array_equal(est.predict(sim.data.y, covariates=sim.covariates),
                                      est.labels_)
        assert est.predict_proba(sim.data.y, covariates=sim.covariates).shape == (80, est.n_components_)
        assert est.score(sim.data.y, covariates=sim.covariates) * 80 == pytest.approx(est.loglik_)
        assert adjusted_rand_index(est.labels_, sim.labels) > 0.9

    def test_clone_and_params(self):
        est = MultinomialLogitMixture(k_max=4, standardize=True)
        c = clone(est)
        assert c.get_params() == est.get_params()
        c.set_params(k_max=2)
        assert c.k_max == 2 and est.k_max == 4

    def test_not_fitted(self, sim):
        with pytest.raises(NotFittedError):
            MultinomialLogitMixture().predict(sim.data.y)

    def test_reproducible(self, sim):
        a = MultinomialLogitMixture(k_max=2, t_split=4, random_state=5).fit(sim.data.y, covariates=sim.covariates)
        b = MultinomialLogitMixture(k_max=2, t_split=4, random_state=5).fit(sim.data.y, covariates=sim.covariates)
        np.testing.assert_array_equal(a.coef_, b.coef_)

    def test_standardize_uses_training_statistics(self, sim):
        cov = sim.covariates * 10 + 3
        est = MultinomialLogitMixture(k_max=2, t_split=4, standardize=True, random_state=1)
        est.fit(sim.data.y, covariates=cov)
        np.testing.assert_allclose(est.covariate_mean_, cov.mean(0))
        np.testing.assert_array_equal(est.predict(sim.data.y, covariates=cov), est.labels_)

    def test_intercept_only(self, sim):
        est = MultinomialLogitMixture(k_max=2, t_split=4, random_state=0).fit(sim.data.y)
        assert est.coef_.shape[2] == 1


class TestBayes:
    def test_fit(self, sim):
        est = fast_bayes().fit(sim.data.y, covariates=sim.covariates)
        assert sum(est.k0_distribution_.values()) == pytest.approx(1.0)
        assert est.membership_.shape == (80, 5)
        assert est.params_.K == len(est.component_ids_)
        assert set(np.unique(est.labels_)) <= set(est.component_ids_.tolist())
        assert set(np.unique(est.predict(sim.data.y, covariates=sim.covariates))) <= set(
            est.component_ids_.tolist())

    def test_random_init(self, sim):
        est = fast_bayes(init="random").fit(sim.data.y, covariates=sim.covariates)
        assert est.trace_.n_draws == 30

    def test_bad_init(self, sim):
        with pytest.raises(ValueError):
            fast_bayes(init="nope").fit(sim.data.y)

    def test_clone(self):
        est = fast_bayes(alphas=[0.01, 1.0, 10.0])
        assert clone(est).get_params()["alphas"] == [0.01, 1.0, 10.0]
