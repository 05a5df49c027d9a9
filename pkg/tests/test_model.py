import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp
from scipy.stats import multinomial

from multimix.exceptions import DegeneracyError, InvalidInputError
from multimix.model import (
    Dataset,
    MixtureParams,
    category_probabilities,
    complete_loglik,
    component_log_densities,
    e_step,
    expected_complete_loglik,
    identifiability_check,
    log_multinomial_pmf,
    map_classification,
    observed_log_likelihood,
    q_gradient,
    q_hessian_block,
)

from conftest import central_difference, random_instance


class TestCategoryProbabilities:
    def test_zero_coefficients_are_uniform(self):
        g = category_probabilities(np.zeros((3, 2)), np.array([1.0, 0.7]))
        np.testing.assert_allclose(g, np.full(4, 0.25), rtol=0, atol=1e-15)

    def test_two_categories_is_logistic(self):
        g = category_probabilities(np.array([[np.log(3.0)]]), np.array([1.0]))
        np.testing.assert_allclose(g, [0.75, 0.25], rtol=1e-15)

    def test_extreme_predictor_stays_finite(self):
        g = category_probabilities(np.array([[800.0], [-800.0]]), np.array([1.0]))
        assert np.all(np.isfinite(g))
        assert g[0] == pytest.approx(1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            category_probabilities(np.array([[np.nan]]), np.array([1.0]))

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
    def test_simplex(self, eta):
        g = category_probabilities(np.array(eta)[:, None], np.array([1.0]))
        assert np.all(g >= 0)
        assert abs(g.sum() - 1.0) < 1e-12


class TestMultinomialPmf:
    def test_matches_scipy(self, rng):
        for _ in range(20):
            theta = rng.dirichlet(np.ones(5))
            y = rng.multinomial(17, theta)
            data = Dataset.from_arrays(y[None])
            got = log_multinomial_pmf(y, 17, theta, data.log_coef[0])
            assert got == pytest.approx(multinomial.logpmf(y, 17, theta), rel=1e-12)

    def test_zero_count_on_zero_probability(self):
        y = np.array([3, 0, 2])
        data = Dataset.from_arrays(y[None])
        val = log_multinomial_pmf(y, 5, np.array([0.5, 0.0, 0.5]), data.log_coef[0])
        assert val == pytest.approx(np.log(10 * 0.5**5))

    def test_positive_count_on_zero_probability(self):
        y = np.array([3, 1, 2])
        data = Dataset.from_arrays(y[None])
        assert log_multinomial_pmf(y, 6, np.array([0.5, 0.0, 0.5]), data.log_coef[0]) == -np.inf

    def test_total_mismatch(self):
        with pytest.raises(InvalidInputError):
            log_multinomial_pmf(np.array([1, 1]), 3, np.array([0.5, 0.5]), 0.0)


class TestValidation:
    @pytest.mark.parametrize("y", [
        [[1, -1]], [[1.5, 2]], [[0, 0]], [[3]], [[np.nan, 1]],
    ])
    def test_bad_counts(self, y):
        with pytest.raises(InvalidInputError):
            Dataset.from_arrays(np.array(y))

    def test_design_rows(self):
        with pytest.raises(InvalidInputError):
            Dataset.from_arrays(np.ones((3, 2), dtype=int), np.ones((4, 1)))

    def test_params_simplex(self):
        with pytest.raises(InvalidInputError):
            MixtureParams(np.array([0.6, 0.6]), np.zeros((2, 1, 1)))

    def test_shape_mismatch(self, rng):
        data, params, _ = random_instance(rng, P=2)
        bad = MixtureParams(params.pi, np.zeros((2, data.J, 3)))
        with pytest.raises(InvalidInputError):
            observed_log_likelihood(bad, data)


class TestEStep:
    def test_rows_sum_to_one(self, rng):
        data, params, _ = random_instance(rng, n=30, K=3)
        w = e_step(params, data)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_loglik_is_logsumexp_of_scores(self, rng):
        data, params, _ = random_instance(rng, n=15, K=3)
        logf = component_log_densities(params, data)
        direct = logsumexp(np.log(params.pi) + logf, axis=1).sum()
        assert observed_log_likelihood(params, data) == pytest.approx(direct, rel=1e-13)

    def test_single_component_is_one(self, rng):
        data, _, _ = random_instance(rng, K=1)
        params = MixtureParams(np.ones(1), rng.standard_normal((1, data.J, data.P)))
        np.testing.assert_array_equal(e_step(params, data), 1.0)

    def test_huge_counts_do_not_underflow(self):
        y = np.array([[100000, 0], [0, 100000]])
        params = MixtureParams(np.array([0.5, 0.5]), np.array([[[3.0]], [[-3.0]]]))
        w = e_step(params, Dataset.from_arrays(y))
        assert np.all(np.isfinite(w))
        np.testing.assert_allclose(w, np.eye(2), atol=1e-12)

    def test_all_components_impossible(self):
        y = np.array([[2, 1, 0]])
        theta = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        params = MixtureParams(np.array([0.5, 0.5]), np.zeros((2, 2, 1)), theta)
        with pytest.raises(DegeneracyError, match="observation 0"):
            e_step(params, Dataset.from_arrays(y))

    def test_zero_weight_component_gets_zero(self, rng):
        data, params, _ = random_instance(rng, K=2)
        params = MixtureParams(np.array([1.0, 0.0]), params.beta)
        w = e_step(params, data)
        np.testing.assert_array_equal(w[:, 1], 0.0)

    def test_map_tie_lowest_index(self):
        w = np.array([[0.5, 0.5], [0.2, 0.8], [1 / 3, 1 / 3]])
        w[2] = [1 / 3, 1 / 3]
        np.testing.assert_array_equal(map_classification(w), [0, 1, 0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        data, params, _ = random_instance(rng, n=10, K=3)
        perm = rng.permutation(3)
        permuted = MixtureParams(params.pi[perm], params.beta[perm])
        a = observed_log_likelihood(params, data)
        b = observed_log_likelihood(permuted, data)
        assert a == pytest.approx(b, rel=1e-12)
        np.testing.assert_allclose(e_step(permuted, data), e_step(params, data)[:, perm],
                                   atol=1e-12)


class TestCompleteLikelihood:
    def test_hard_responsibilities(self, rng):
        data, params, _ = random_instance(rng, n=12, K=3)
        z = rng.integers(0, 3, size=12)
        w = np.eye(3)[z]
        assert expected_complete_loglik(params, w, data) == pytest.approx(
            complete_loglik(params, z, data), rel=1e-13)

    def test_bounded_by_observed(self, rng):
        # Jensen: sum w (log pi f) <= loglik when w are the posterior weights
        data, params, _ = random_instance(rng, n=12, K=3)
        w = e_step(params, data)
        assert expected_complete_loglik(params, w, data) <= observed_log_likelihood(params, data)


class TestDerivatives:
    def _q(self, data, pi, w, K, J, P):
        return lambda b: expected_complete_loglik(MixtureParams(pi, b.reshape(K, J, P)), w, data)

    def test_gradient_finite_difference(self, rng):
        for _ in range(10):
            data, params, w = random_instance(rng, n=15, K=3, n_categories=4, P=3)
            K, J, P = params.beta.shape
            fd = central_difference(self._q(data, params.pi, w, K, J, P), params.beta.ravel())
            an = q_gradient(params.beta, w, data)
            np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())

    def test_gradient_flattening_order(self, rng):
        data, params, w = random_instance(rng, n=10, K=2, n_categories=3, P=2)
        g = q_gradient(params.beta, w, data).reshape(params.beta.shape)
        # perturbing beta[1, 0, 1] changes Q by g[1, 0, 1] to first order
        h = 1e-6
        b = params.beta.copy()
        b[1, 0, 1] += h
        up = expected_complete_loglik(MixtureParams(params.pi, b), w, data)
        b[1, 0, 1] -= 2 * h
        down = expected_complete_loglik(MixtureParams(params.pi, b), w, data)
        assert g[1, 0, 1] == pytest.approx((up - down) / (2 * h), rel=1e-5)

    def test_hessian_finite_difference(self, rng):
        for _ in range(10):
            data, params, w = random_instance(rng, n=15, K=2, n_categories=4, P=3)
            K, J, P = params.beta.shape
            k = 1

            def grad_k(bk):
                b = params.beta.copy()
                b[k] = bk.reshape(J, P)
                return q_gradient(b, w, data).reshape(K, J * P)[k]

            H = q_hessian_block(params.beta[k], w[:, k], data)
            h = 1e-6
            fd = np.column_stack([
                (grad_k(params.beta[k].ravel() + h * e) - grad_k(params.beta[k].ravel() - h * e))
                / (2 * h) for e in np.eye(J * P)
            ])
            np.testing.assert_allclose(H, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())

    def test_hessian_symmetric_negative_semidefinite(self, rng):
        data, params, w = random_instance(rng, n=25, K=2, n_categories=5, P=3)
        H = q_hessian_block(params.beta[0], w[:, 0], data)
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).max() <= 1e-8 * np.abs(H).max()

    def test_zero_weights_zero_derivatives(self, rng):
        data, params, _ = random_instance(rng, n=10, K=1)
        w0 = np.zeros(data.n)
        np.testing.assert_array_equal(q_hessian_block(params.beta[0], w0, data), 0.0)


class TestIdentifiability:
    def test_warns_on_small_totals(self):
        y = np.array([[1, 1], [3, 4]])
        with pytest.warns(UserWarning, match="2K-1"):
            msgs = identifiability_check(Dataset.from_arrays(y), 2)
        assert any("row 0" in m for m in msgs)
        assert not any("row 1" in m for m in msgs)

    def test_silent_when_large(self):
        y = np.array([[10, 1], [3, 4]])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert identifiability_check(Dataset.from_arrays(y), 2) == []
