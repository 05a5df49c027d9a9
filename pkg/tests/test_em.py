import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multimix.em import (
    EMConfig,
    NewtonState,
    em_fit,
    entropy_term,
    fit_path,
    m_step_no_covariates,
    m_step_weights,
    n_free_parameters,
    newton_raphson,
    partition_starts,
    random_responsibilities,
    ridge_newton_raphson,
    selection_record,
    shake_responsibilities,
    small_em_random,
    small_em_shake,
    small_em_split,
    split_responsibilities,
)
from multimix.exceptions import EmptyComponentError, InvalidInputError
from multimix.metrics import adjusted_rand_index
from multimix.model import (
    Dataset,
    MixtureParams,
    component_q,
    expected_complete_loglik,
    q_gradient,
)

from conftest import random_instance


def separated_intercept_data(rng, n=100, s=500):
    theta = np.array([[0.9, 0.05, 0.05], [0.05, 0.05, 0.9]])
    z = rng.integers(0, 2, size=n)
    y = np.array([rng.multinomial(s, theta[k]) for k in z])
    return Dataset.from_arrays(y), z


class TestConfig:
    def test_defaults(self):
        c = EMConfig()
        assert (c.max_iter, c.threshold, c.max_nr, c.t_split, c.m_split, c.r0) == (
            100, 1e-8, 10, 16, 10, 0.1)
        assert (c.split_beta_a, c.split_beta_b) == (1.0, 1.0)

    @pytest.mark.parametrize("total,expected", [(24, (8, 8, 8)), (16, (6, 5, 5)), (3, (1, 1, 1))])
    def test_partition(self, total, expected):
        assert partition_starts(total) == expected
        assert sum(partition_starts(total)) == total

    def test_partition_without_split(self):
        assert partition_starts(16, split=False) == (0, 0, 16)

    def test_explicit_counts(self):
        c = EMConfig(m_split_count=2, m_shake_count=3, m_random_count=4)
        assert c.scheme_counts() == (2, 3, 4)
        with pytest.raises(InvalidInputError):
            EMConfig(m_split_count=2).validate()

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            EMConfig(threshold=0).validate()


class TestMStep:
    def test_weights_one_hot(self):
        w = np.eye(2)[[0] * 3 + [1] * 7]
        np.testing.assert_allclose(m_step_weights(w), [0.3, 0.7])

    def test_weights_uniform(self):
        np.testing.assert_allclose(m_step_weights(np.full((5, 2), 0.5)), [0.5, 0.5])

    @given(st.integers(0, 2**32 - 1))
    def test_weights_simplex(self, seed):
        w = np.random.default_rng(seed).dirichlet(np.ones(4), size=9)
        assert abs(m_step_weights(w).sum() - 1) < 1e-12

    def test_pooled_proportions(self, rng):
        data, _, _ = random_instance(rng, n=15, K=1, P=1)
        theta = m_step_no_covariates(np.ones((15, 1)), data)
        np.testing.assert_allclose(theta[0], data.y.sum(0) / data.s.sum(), rtol=1e-14)

    def test_one_hot_per_cluster(self, rng):
        data, _, _ = random_instance(rng, n=20, K=1, P=1)
        z = np.arange(20) % 2
        theta = m_step_no_covariates(np.eye(2)[z], data)
        for k in range(2):
            sel = z == k
            np.testing.assert_allclose(theta[k], data.y[sel].sum(0) / data.s[sel].sum())

    def test_analytic_beats_random_perturbations(self, rng):
        data, _, w = random_instance(rng, n=30, K=2, P=1)
        theta = m_step_no_covariates(w, data)
        pi = m_step_weights(w)
        base = expected_complete_loglik(MixtureParams(pi, np.zeros((2, data.J, 1)), theta), w, data)
        for _ in range(1000):
            t = theta * np.exp(0.05 * rng.standard_normal(theta.shape))
            t /= t.sum(axis=1, keepdims=True)
            alt = expected_complete_loglik(MixtureParams(pi, np.zeros((2, data.J, 1)), t), w, data)
            assert alt <= base + 1e-9

    def test_rows_on_simplex(self, rng):
        data, _, w = random_instance(rng, n=30, K=3, P=1)
        np.testing.assert_allclose(m_step_no_covariates(w, data).sum(1), 1.0, atol=1e-12)

    def test_empty_component_signal(self, rng):
        data, _, _ = random_instance(rng, n=5, K=1, P=1)
        w = np.column_stack([np.ones(5), np.zeros(5)])
        with pytest.raises(EmptyComponentError) as info:
            m_step_no_covariates(w, data)
        assert info.value.component == 1


class TestRidgeNewton:
    def test_fixed_point(self, rng):
        data, _, w = random_instance(rng, n=40, K=1, P=2)
        first = ridge_newton_raphson(NewtonState(np.zeros((data.J, 2)), 0.1), w[:, 0] * 0 + 1,
                                     data, 200)
        again = ridge_newton_raphson(NewtonState(first.beta_k, first.R), np.ones(data.n), data, 5)
        np.testing.assert_allclose(again.beta_k, first.beta_k, atol=1e-8)

    def test_monotone_and_improves(self, rng):
        for _ in range(10):
            data, params, w = random_instance(rng, n=50, K=2, P=3, scale=3.0)
            st0 = NewtonState(params.beta[0], 0.1)
            out = ridge_newton_raphson(st0, w[:, 0], data, 10)
            assert np.all(np.diff(out.q_trace) >= 0)
            assert out.q_value >= component_q(params.beta[0], w[:, 0], data) - 1e-10

    def test_converges_to_stationary_point(self, rng):
        data, params, w = random_instance(rng, n=60, K=1, P=2)
        g0 = q_gradient(params.beta[:1], w[:, :1], data)
        out = ridge_newton_raphson(NewtonState(params.beta[0], 0.1), w[:, 0], data, 100)
        g = q_gradient(out.beta_k[None], w[:, :1], data)
        # stops once the predicted gain hits round-off in Q
        assert np.linalg.norm(g) < 1e-6 * np.linalg.norm(g0)

    def test_plain_newton_trace(self, rng):
        data, params, w = random_instance(rng, n=30, K=1, P=2)
        tr = newton_raphson(np.zeros((data.J, 2)), np.ones(data.n), data, 5)
        assert len(tr) >= 2 and tr[-1] >= tr[0]


class TestEMFit:
    def test_single_component_pooled(self, rng):
        data, _, _ = random_instance(rng, n=25, K=1, P=1)
        run = em_fit(data, 1, np.ones((25, 1)))
        assert run.n_iter <= 2
        np.testing.assert_allclose(run.params.theta[0], data.y.sum(0) / data.s.sum(), rtol=1e-12)

    def test_separated_clusters_recovered(self, rng):
        data, z = separated_intercept_data(rng)
        run = em_fit(data, 2, random_responsibilities(data.n, 2, rng))
        assert adjusted_rand_index(run.labels, z) == 1.0

    def test_monotone_with_covariates(self, rng):
        for _ in range(5):
            data, _, w = random_instance(rng, n=40, K=3, P=2)
            run = em_fit(data, 3, w, EMConfig(max_iter=30))
            assert np.all(np.diff(run.loglik_trace) >= -1e-8)

    def test_wrong_width(self, rng):
        data, _, w = random_instance(rng, n=10, K=2)
        with pytest.raises(InvalidInputError):
            em_fit(data, 3, w)

    def test_empty_component_flagged(self, rng):
        data, _, _ = random_instance(rng, n=10, K=1, P=2)
        w = np.column_stack([np.ones(10), np.zeros(10)])
        run = em_fit(data, 2, w, EMConfig(max_iter=3))
        assert run.effectively_fewer and run.empty_components == (1,)
        assert np.all(np.isfinite(run.params.beta))

    def test_analytic_and_newton_agree(self, rng):
        data, _, w = random_instance(rng, n=40, K=2, P=1)
        a = em_fit(data, 2, w, EMConfig(m_step="analytic", max_iter=500, threshold=1e-10))
        b = em_fit(data, 2, w, EMConfig(m_step="newton", max_iter=500, threshold=1e-10, max_nr=50))
        assert abs(a.loglik - b.loglik) < 1e-6


class TestSmallEM:
    def test_split_rows_and_columns(self, rng):
        w = rng.dirichlet(np.ones(3), size=12)
        u = rng.beta(1, 1, size=12)
        out = split_responsibilities(w, 1, u)
        np.testing.assert_allclose(out.sum(1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(out[:, [0, 2]], w[:, [0, 2]])
        np.testing.assert_allclose(out[:, 1] + out[:, 3], w[:, 1], rtol=1e-15)

    def test_shake_conserves_mass(self, rng):
        w = rng.dirichlet(np.ones(4), size=30)
        u = rng.random(30)
        out = shake_responsibilities(w, 0, 2, u)
        lab = w.argmax(1)
        other = ~np.isin(lab, [0, 2])
        np.testing.assert_array_equal(out[other], w[other])
        np.testing.assert_allclose(out[:, 0] + out[:, 2], w[:, 0] + w[:, 2], rtol=1e-14)
        np.testing.assert_array_equal(out[:, [1, 3]], w[:, [1, 3]])

    def test_random_keep_best(self, rng):
        data, _, _ = random_instance(rng, n=30, K=2, P=2)
        res = small_em_random(data, 2, 5, 3, EMConfig(), rng)
        assert len(res.scores) == 5
        assert res.loglik == max(res.scores)
        assert res.scores[res.best_index] == res.loglik

    def test_split_beats_underfit(self, rng):
        data, _ = separated_intercept_data(rng, n=60)
        one = em_fit(data, 1, np.ones((60, 1)))
        res = small_em_split(data, 2, 4, 10, EMConfig(), one, rng)
        assert res.loglik > one.loglik

    def test_split_needs_previous_fit(self, rng):
        data, _ = separated_intercept_data(rng, n=20)
        one = em_fit(data, 1, np.ones((20, 1)))
        with pytest.raises(InvalidInputError):
            small_em_split(data, 3, 2, 5, EMConfig(), one, rng)

    def test_shake_never_loses(self, rng):
        for _ in range(5):
            data, _, w = random_instance(rng, n=30, K=3, P=2)
            cur = em_fit(data, 3, w, EMConfig(max_iter=5))
            res = small_em_shake(data, 3, 4, 3, EMConfig(), cur, rng)
            assert res.loglik >= cur.loglik - 1e-8


class TestSelection:
    def test_parameter_count(self):
        assert n_free_parameters(4, 5, 4) == 83
        assert n_free_parameters(3, 5, 1) == 2 + 15

    def test_icl_equals_bic_for_hard_weights(self, rng):
        data, _, _ = random_instance(rng, n=20, K=1, P=1)
        w = np.eye(2)[np.arange(20) % 2]
        run = em_fit(data, 2, w, EMConfig(max_iter=1))
        run.responsibilities = w
        rec = selection_record(run, data)
        assert rec.ICL - rec.BIC == 0.0

    @given(st.integers(0, 2**32 - 1))
    def test_entropy_non_negative(self, seed):
        w = np.random.default_rng(seed).dirichlet(np.full(3, 0.3), size=10)
        assert entropy_term(w) >= 0

    def test_separated_selects_two(self, rng):
        data, _ = separated_intercept_data(rng)
        scores, runs = fit_path(data, 4, EMConfig(t_split=6), rng)
        assert scores.best_k == 2
        for r in scores.records:
            assert r.ICL >= r.BIC
            assert r.BIC == pytest.approx(-2 * r.loglik + r.d_K * np.log(data.n))
        for run in runs:
            assert np.all(np.diff(run.loglik_trace) >= -1e-8)

    def test_path_deterministic_across_threads(self):
        data, _, _ = random_instance(np.random.default_rng(5), n=40, K=2, P=2)
        cfg = EMConfig(t_split=6, max_iter=20)
        a, ra = fit_path(data, 3, cfg, np.random.default_rng(1))
        b, rb = fit_path(data, 3, cfg, np.random.default_rng(1), n_jobs=3)
        assert a.as_rows() == b.as_rows()
        for x, y in zip(ra, rb):
            np.testing.assert_array_equal(x.params.beta, y.params.beta)
