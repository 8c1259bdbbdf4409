import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from countcast.dglm import (
    Block,
    ConjugateParams,
    ModelSpec,
    PredictorMoments,
    StateMoments,
    VolatilityState,
    binary_warmup_prior,
    build_design,
    dcmm_warmup_priors,
    dlm_step,
    evolve,
    flat_prior,
    forecast_bernoulli,
    forecast_poisson,
    harmonic_rotation,
    linear_bayes_update,
    match_beta,
    match_beta_arrays,
    match_gamma,
    match_gamma_arrays,
    posterior_moments_arrays,
    posterior_predictor_moments,
    predictor_moments,
    repair_psd,
    rotate,
    seasonal_factor,
    seasonal_functional,
    static_glm_prior,
)
from countcast.errors import ConfigError, InputError, NumericalError
from countcast.special import digamma, trigamma


def _forward_beta(a, b):
    return PredictorMoments(digamma(a) - digamma(b), trigamma(a) + trigamma(b))


def _forward_gamma(a, b):
    return PredictorMoments(digamma(a) - math.log(b), trigamma(a))


def _random_psd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.1 * np.eye(d))


class TestStateMoments:
    def test_symmetrised_and_validated(self):
        s = StateMoments([1.0, 2.0], [[1.0, 0.5], [0.5, 2.0]])
        assert s.dim == 2
        np.testing.assert_array_equal(s.cov, s.cov.T)

    def test_rejects_indefinite(self):
        with pytest.raises(NumericalError):
            StateMoments([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_negative_diagonal(self):
        with pytest.raises(NumericalError):
            StateMoments([0.0], [[-1.0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ConfigError):
            StateMoments([0.0, 1.0], [[1.0]])

    def test_rejects_non_finite(self):
        with pytest.raises(NumericalError):
            StateMoments([np.nan], [[1.0]])


class TestModelSpec:
    def test_block_dimensions(self):
        spec = ModelSpec((Block.level(), Block.trend(), Block.regression("a", "b"), Block.fourier(7), Block.random_effect()))
        assert [b.dim for b in spec.blocks] == [1, 2, 2, 6, 1]
        assert spec.dim == 12

    def test_even_period_has_nyquist_element(self):
        assert Block.fourier(12).dim == 11
        assert Block.fourier(12, harmonics=2).dim == 4
        G = Block.fourier(4).evolution_matrix()
        np.testing.assert_allclose(np.linalg.matrix_power(G, 4), np.eye(3), atol=1e-12)

    def test_harmonic_rotation_values(self):
        np.testing.assert_allclose(
            harmonic_rotation(7, 1), [[0.6234898, 0.7818315], [-0.7818315, 0.6234898]], atol=5e-8
        )
        np.testing.assert_allclose(harmonic_rotation(7, 7), np.eye(2), atol=1e-12)

    def test_level_regression_design(self):
        spec = ModelSpec((Block.level(), Block.regression("log_price")))
        F, G = build_design(spec, {"log_price": 0.3})
        np.testing.assert_array_equal(F, [1.0, 0.3])
        np.testing.assert_array_equal(G, np.eye(2))

    def test_fourier_and_random_effect_design(self):
        spec = ModelSpec((Block.fourier(7), Block.random_effect()))
        F, G = build_design(spec)
        np.testing.assert_array_equal(F, [1, 0, 1, 0, 1, 0, 1])
        assert G[-1, -1] == 0.0

    def test_missing_covariate(self):
        spec = ModelSpec((Block.level(), Block.regression("x")))
        with pytest.raises(InputError):
            spec.design({})
        with pytest.raises(InputError):
            spec.design(None)

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_bad_discount(self, bad):
        with pytest.raises(ConfigError):
            Block.level(bad)

    def test_bad_rho_and_link(self):
        with pytest.raises(ConfigError):
            ModelSpec((Block.level(),), re_discount=0.0)
        with pytest.raises(ConfigError):
            ModelSpec((Block.level(),), link="probit")

    def test_duplicate_predictor(self):
        with pytest.raises(ConfigError):
            ModelSpec((Block.regression("x"), Block.regression("x")))

    def test_dict_round_trip(self):
        spec = ModelSpec(
            (Block.trend(0.95), Block.regression("p", discount=0.9), Block.fourier(365, 2, 0.999)), link="identity", re_discount=0.5
        )
        back = ModelSpec.from_dict(spec.to_dict())
        assert back == spec
        np.testing.assert_array_equal(back.G, spec.G)


class TestEvolve:
    def test_no_discount_identity(self):
        spec = ModelSpec((Block.level(),))
        post = StateMoments([0.3], [[2.0]])
        prior = evolve(post, spec)
        np.testing.assert_array_equal(prior.cov, post.cov)
        np.testing.assert_array_equal(prior.mean, post.mean)

    def test_single_block_discount(self):
        spec = ModelSpec((Block.regression("a", "b", discount=0.8),))
        prior = evolve(StateMoments([0, 0], [[4, 2], [2, 9]]), spec)
        np.testing.assert_allclose(prior.cov, [[5, 2.5], [2.5, 11.25]], rtol=1e-15)

    def test_block_diagonal_scaling_only(self):
        spec = ModelSpec((Block.level(0.5), Block.regression("x", discount=1.0)))
        prior = evolve(StateMoments([0, 0], [[1, 0.5], [0.5, 1]]), spec)
        np.testing.assert_allclose(prior.cov, [[2, 0.5], [0.5, 1]], rtol=1e-15)

    def test_rotation(self):
        spec = ModelSpec((Block.fourier(7, 1),))
        post = StateMoments([1.0, 0.0], np.eye(2))
        prior = evolve(post, spec)
        np.testing.assert_allclose(prior.mean, harmonic_rotation(7, 1) @ [1.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.5, 0.99), st.floats(0.0, 0.49))
    def test_discount_monotone(self, seed, d_hi, gap):
        rng = np.random.default_rng(seed)
        C = _random_psd(rng, 3)
        post = StateMoments(rng.normal(size=3), C)
        lo = ModelSpec((Block.level(d_hi - gap), Block.regression("a", "b", discount=0.9)))
        hi = ModelSpec((Block.level(d_hi), Block.regression("a", "b", discount=0.9)))
        assert np.all(np.diag(evolve(post, lo).cov) >= np.diag(evolve(post, hi).cov) - 1e-15)


class TestPredictorMoments:
    def test_examples(self):
        pm = predictor_moments(StateMoments([0.0], [[1.0]]), np.array([1.0]))
        assert (pm.f, pm.q) == (0.0, 1.0)
        pm = predictor_moments(StateMoments([1.0, 2.0], np.eye(2)), np.array([1.0, 0.5]))
        assert pm.f == pytest.approx(2.0) and pm.q == pytest.approx(1.25)

    def test_zero_design_raises(self):
        with pytest.raises(NumericalError):
            predictor_moments(StateMoments([1.0, 2.0], np.eye(2)), np.zeros(2))


class TestConjugateMatching:
    def test_beta_uniform(self):
        cp = match_beta(PredictorMoments(0.0, 3.2898681336964528))
        assert cp.alpha == pytest.approx(1.0, rel=1e-10) and cp.beta == pytest.approx(1.0, rel=1e-10)

    @pytest.mark.parametrize("q", [0.01, 0.5, 3.0, 40.0])
    def test_beta_symmetry(self, q):
        cp = match_beta(PredictorMoments(0.0, q))
        assert cp.alpha == pytest.approx(cp.beta, rel=1e-10)

    def test_beta_round_trip(self):
        cp = match_beta(_forward_beta(5.3, 0.7))
        assert cp.alpha == pytest.approx(5.3, rel=1e-8) and cp.beta == pytest.approx(0.7, rel=1e-8)

    def test_gamma_unit(self):
        cp = match_gamma(PredictorMoments(-0.5772156649, 1.6449340668))
        assert cp.alpha == pytest.approx(1.0, rel=1e-9) and cp.beta == pytest.approx(1.0, rel=1e-9)

    def test_gamma_asymptotic(self):
        cp = match_gamma(PredictorMoments(0.3, 1e-4))
        assert cp.alpha == pytest.approx(1e4, rel=0.01)

    @pytest.mark.parametrize("a", [0.1, 1.0, 10.0, 100.0])
    @pytest.mark.parametrize("b", [0.1, 1.0, 10.0, 100.0])
    def test_round_trip_grid(self, a, b):
        g = match_gamma(_forward_gamma(a, b))
        assert g.alpha == pytest.approx(a, rel=1e-8) and g.beta == pytest.approx(b, rel=1e-8)
        c = match_beta(_forward_beta(a, b))
        assert c.alpha == pytest.approx(a, rel=1e-8) and c.beta == pytest.approx(b, rel=1e-8)

    def test_residuals(self):
        for f, q in [(-3.0, 0.01), (0.0, 1.0), (2.0, 50.0), (8.0, 0.2)]:
            cp = match_beta(PredictorMoments(f, q))
            back = _forward_beta(cp.alpha, cp.beta)
            assert abs(back.f - f) <= 1e-10 and abs(back.q - q) <= 1e-10 * max(1.0, q)
            cp = match_gamma(PredictorMoments(f, q))
            back = _forward_gamma(cp.alpha, cp.beta)
            assert abs(back.f - f) <= 1e-10 and abs(back.q - q) <= 1e-10 * max(1.0, q)

    def test_arrays_agree_with_scalar(self):
        rng = np.random.default_rng(3)
        f = rng.normal(0, 2, 200)
        q = np.exp(rng.uniform(-7, 3, 200))
        a, b = match_beta_arrays(f, q)
        ga, gb = match_gamma_arrays(f, q)
        for i in range(0, 200, 17):
            cb = match_beta(PredictorMoments(f[i], q[i]))
            cg = match_gamma(PredictorMoments(f[i], q[i]))
            assert a[i] == pytest.approx(cb.alpha, rel=1e-9) and b[i] == pytest.approx(cb.beta, rel=1e-9)
            assert ga[i] == pytest.approx(cg.alpha, rel=1e-9) and gb[i] == pytest.approx(cg.beta, rel=1e-9)

    def test_nonpositive_q(self):
        with pytest.raises(NumericalError):
            match_gamma_arrays(np.zeros(2), np.array([1.0, 0.0]))
        with pytest.raises(NumericalError):
            PredictorMoments(0.0, 0.0)


class TestPredictives:
    def test_bernoulli(self):
        assert forecast_bernoulli(ConjugateParams(2, 2, "beta")).prob == 0.5
        assert forecast_bernoulli(ConjugateParams(3, 1, "beta")).prob == 0.75
        big = forecast_bernoulli(ConjugateParams(3e6, 1e6, "beta"))
        np.testing.assert_allclose(big.pmf([0, 1]), [0.25, 0.75])

    def test_geometric_case(self):
        nb = forecast_poisson(ConjugateParams(1.0, 1.0, "gamma"))
        x = np.arange(10)
        np.testing.assert_allclose(nb.pmf(x), 0.5 ** (x + 1), rtol=1e-13)
        np.testing.assert_allclose(nb.cdf(x), 1 - 0.5 ** (x + 1), rtol=1e-13)

    def test_nb_moments(self):
        nb = forecast_poisson(ConjugateParams(3.0, 2.0, "gamma"))
        assert nb.mean == pytest.approx(1.5)
        assert nb.var == pytest.approx(1.5 + 3.0 / 4.0)

    def test_asymptotic_moments(self):
        f, q = 1.2, 1e-4
        nb = forecast_poisson(match_gamma(PredictorMoments(f, q)))
        assert nb.mean == pytest.approx(math.exp(f), rel=1e-3)
        assert nb.var == pytest.approx(math.exp(f) * (1 + math.exp(f) * q), rel=1e-3)

    def test_pmf_sums_to_one(self):
        for a, b in [(0.3, 0.01), (5.0, 0.5), (400.0, 2.0)]:
            nb = forecast_poisson(ConjugateParams(a, b, "gamma"))
            n = nb.upper(1e-10)
            total = nb.pmf(np.arange(n + 1)).sum()
            assert abs(total - 1.0) < 1e-9

    def test_wrong_family(self):
        with pytest.raises(ValueError):
            forecast_poisson(ConjugateParams(1, 1, "beta"))


class TestPosteriorMoments:
    def test_beta_success(self):
        pm = posterior_predictor_moments(ConjugateParams(1, 1, "beta"), 1)
        assert pm.f == pytest.approx(1.0, abs=1e-14)
        assert pm.q == pytest.approx(trigamma(2.0) + trigamma(1.0), rel=1e-14)

    def test_gamma_zero(self):
        pm = posterior_predictor_moments(ConjugateParams(1, 1, "gamma"), 0)
        assert pm.f == pytest.approx(digamma(1.0) - math.log(2.0), abs=1e-14)
        assert pm.q == pytest.approx(trigamma(1.0), rel=1e-14)

    def test_information_gain(self):
        for y in (1, 3, 10):
            cp = ConjugateParams(2.0, 1.0, "gamma")
            assert posterior_predictor_moments(cp, y).q < trigamma(2.0)

    def test_invalid_observations(self):
        with pytest.raises(InputError):
            posterior_predictor_moments(ConjugateParams(1, 1, "beta"), 2)
        with pytest.raises(InputError):
            posterior_predictor_moments(ConjugateParams(1, 1, "gamma"), -1)
        with pytest.raises(InputError):
            posterior_predictor_moments(ConjugateParams(1, 1, "gamma"), 1.5)

    def test_arrays_agree(self):
        a = np.array([0.5, 2.0, 30.0])
        b = np.array([1.5, 0.2, 7.0])
        for fam, y in (("beta", 1.0), ("beta", 0.0), ("gamma", 4.0)):
            g, p = posterior_moments_arrays(fam, a, b, y)
            for i in range(3):
                pm = posterior_predictor_moments(ConjugateParams(a[i], b[i], fam), int(y))
                assert g[i] == pytest.approx(pm.f, rel=1e-13) and p[i] == pytest.approx(pm.q, rel=1e-13)


class TestLinearBayes:
    def test_no_information(self):
        prior = StateMoments([0.2, -1.0], [[1.0, 0.3], [0.3, 2.0]])
        F = np.array([1.0, 0.5])
        pm = predictor_moments(prior, F)
        post = linear_bayes_update(prior, F, pm, pm)
        np.testing.assert_allclose(post.mean, prior.mean, rtol=1e-15)
        np.testing.assert_allclose(post.cov, prior.cov, rtol=1e-15)

    def test_scalar_reduction(self):
        prior = StateMoments([0.4], [[0.3]])
        pm = predictor_moments(prior, np.array([1.0]))
        new = PredictorMoments(0.9, 0.1)
        post = linear_bayes_update(prior, np.array([1.0]), pm, new)
        assert post.mean[0] == pytest.approx(0.9, abs=1e-15)
        assert post.cov[0, 0] == pytest.approx(0.1, abs=1e-15)

    def test_design_direction_variance(self):
        rng = np.random.default_rng(1)
        prior = StateMoments(rng.normal(size=3), _random_psd(rng, 3))
        F = rng.normal(size=3)
        pm = predictor_moments(prior, F)
        post = linear_bayes_update(prior, F, pm, PredictorMoments(pm.f + 0.1, 0.4 * pm.q))
        assert F @ post.cov @ F == pytest.approx(0.4 * pm.q, rel=1e-12)

    def test_repair_psd(self):
        C = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-12]])
        R = repair_psd(C)
        assert np.linalg.eigvalsh(R)[0] >= 0.0
        with pytest.raises(NumericalError):
            repair_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_cycle_keeps_psd(self, seed):
        rng = np.random.default_rng(seed)
        spec = ModelSpec((Block.level(0.95), Block.regression("x", discount=0.98), Block.fourier(7, 2, 0.99)))
        post = StateMoments(rng.normal(size=spec.dim), _random_psd(rng, spec.dim, 0.5))
        for _ in range(20):
            prior = evolve(post, spec)
            F = spec.design({"x": rng.normal()})
            pm = predictor_moments(prior, F)
            cp = match_gamma(pm)
            post = linear_bayes_update(prior, F, pm, posterior_predictor_moments(cp, int(rng.poisson(3))))
            C = post.cov
            np.testing.assert_array_equal(C, C.T)
            assert np.linalg.eigvalsh(C)[0] >= -1e-10 * np.trace(C)


class TestExactGammaPoisson:
    def test_local_level_matches_conjugate_filter(self):
        rng = np.random.default_rng(5)
        spec = ModelSpec((Block.level(1.0),))
        alpha, beta = 2.0, 1.0
        pm = _forward_gamma(alpha, beta)
        post = StateMoments([pm.f], [[pm.q]])
        for y in rng.poisson(3.0, 100):
            prior = evolve(post, spec)
            F = np.ones(1)
            pm = predictor_moments(prior, F)
            post = linear_bayes_update(prior, F, pm, posterior_predictor_moments(match_gamma(pm), int(y)))
            alpha, beta = alpha + y, beta + 1.0
            assert post.mean[0] == pytest.approx(digamma(alpha) - math.log(beta), abs=1e-10)
            assert post.cov[0, 0] == pytest.approx(trigamma(alpha), abs=1e-10)


class TestNormalDlm:
    def test_zero_error_shrinks_s(self):
        spec = ModelSpec((Block.level(1.0),))
        state = StateMoments([2.0], [[0.5]])
        vol = VolatilityState(4.0, 1.5)
        beta = 0.9
        post, v, fc = dlm_step(state, vol, spec, np.ones(1), 2.0, vol_discount=beta)
        nb = 4.0 * beta
        assert v.s == pytest.approx(1.5 * nb / (nb + 1.0), rel=1e-14)
        assert v.n == pytest.approx(nb + 1.0)
        assert fc.df == pytest.approx(nb)
        assert fc.scale == pytest.approx(math.sqrt(0.5 + 1.5))

    def test_variance_learning(self):
        rng = np.random.default_rng(8)
        spec = ModelSpec((Block.level(1.0),))
        state, vol = StateMoments([0.0], [[10.0]]), VolatilityState(1.0, 1.0)
        for y in rng.normal(3.0, 2.0, 10**4):
            state, vol, _ = dlm_step(state, vol, spec, np.ones(1), y)
        assert vol.s == pytest.approx(4.0, rel=0.05)
        assert state.mean[0] == pytest.approx(3.0, abs=0.1)

    def test_known_variance_kalman_oracle(self):
        rng = np.random.default_rng(9)
        delta, V = 0.9, 0.7
        spec = ModelSpec((Block.regression("x1", "x2", discount=delta),))
        state = StateMoments([0.0, 0.0], np.eye(2))
        vol = VolatilityState(math.inf, V)
        m, C = np.zeros(2), np.eye(2)
        for _ in range(50):
            F = rng.normal(size=2)
            y = F @ [1.0, -0.5] + rng.normal() * math.sqrt(V)
            state, vol, _ = dlm_step(state, vol, spec, F, y)
            # textbook filter with W = C (1 - delta) / delta
            R = C + C * (1 - delta) / delta
            Q = F @ R @ F + V
            K = R @ F / Q
            m = m + K * (y - F @ m)
            C = R - np.outer(K, K) * Q
            np.testing.assert_allclose(state.mean, m, atol=1e-10)
            np.testing.assert_allclose(state.cov, C, atol=1e-10)
        assert vol.s == V

    def test_missing_observation_evolves_only(self):
        spec = ModelSpec((Block.level(0.9),))
        state, vol = StateMoments([1.0], [[1.0]]), VolatilityState(5.0, 2.0)
        post, v, _ = dlm_step(state, vol, spec, np.ones(1), None, vol_discount=0.95)
        np.testing.assert_allclose(post.cov, [[1 / 0.9]])
        assert v.n == pytest.approx(4.75) and v.s == 2.0

    def test_bad_volatility_discount(self):
        spec = ModelSpec((Block.level(),))
        with pytest.raises(ConfigError):
            dlm_step(StateMoments([0.0], [[1.0]]), VolatilityState(1.0, 1.0), spec, np.ones(1), 0.0, vol_discount=1.5)


class TestSeasonal:
    spec = ModelSpec((Block.level(), Block.fourier(7)))

    def test_zero_coefficients(self):
        C = np.diag([1.0, 0.3, 0.2, 0.1, 0.4, 0.5, 0.6])
        state = StateMoments(np.zeros(7), C)
        mean, var = seasonal_factor(state, self.spec, 2)
        L = seasonal_functional(self.spec, 2)
        assert mean == 0.0
        assert var == pytest.approx(L @ C @ L)

    def test_factors_sum_to_zero(self):
        rng = np.random.default_rng(2)
        state = StateMoments(rng.normal(size=7), np.eye(7))
        total = sum(seasonal_factor(state, self.spec, d)[0] for d in range(7))
        assert abs(total) < 1e-12

    def test_periodicity(self):
        rng = np.random.default_rng(4)
        state = StateMoments(rng.normal(size=7), np.eye(7))
        rotated = rotate(state, self.spec, 7)
        for d in range(7):
            assert seasonal_factor(rotated, self.spec, d)[0] == pytest.approx(seasonal_factor(state, self.spec, d)[0], abs=1e-12)

    def test_functional_tracks_evolution(self):
        rng = np.random.default_rng(6)
        state = StateMoments(rng.normal(size=7), np.eye(7))
        ahead = rotate(state, self.spec, 3)
        assert seasonal_factor(ahead, self.spec, 0)[0] == pytest.approx(seasonal_factor(state, self.spec, 3)[0], abs=1e-12)

    def test_requires_fourier(self):
        with pytest.raises(ConfigError):
            seasonal_functional(ModelSpec((Block.level(),)), 0)


class TestPriors:
    def test_flat_prior(self):
        spec = ModelSpec((Block.level(), Block.random_effect()))
        p = flat_prior(spec, level=2.0)
        np.testing.assert_array_equal(p.mean, [2.0, 0.0])
        np.testing.assert_array_equal(p.cov, [[1.0, 0.0], [0.0, 0.0]])

    def test_static_glm_recovers_rate(self):
        rng = np.random.default_rng(0)
        spec = ModelSpec((Block.level(), Block.regression("x")))
        x = rng.normal(size=2000)
        y = rng.poisson(np.exp(0.5 - 0.8 * x))
        prior = static_glm_prior(spec, y, [{"x": v} for v in x], ridge=1e-6)
        np.testing.assert_allclose(prior.mean, [0.5, -0.8], atol=0.05)

    def test_static_glm_at_end_rotates(self):
        spec = ModelSpec((Block.level(), Block.fourier(7)))
        y = np.random.default_rng(1).poisson(2.0, 10)
        origin = static_glm_prior(spec, y)
        end = static_glm_prior(spec, y, at_end=True)
        np.testing.assert_allclose(end.mean, rotate(origin, spec, 10).mean, atol=1e-12)

    def test_all_zero_window_is_finite(self):
        spec = ModelSpec((Block.level(),))
        p = static_glm_prior(spec, np.zeros(21))
        assert np.all(np.isfinite(p.mean))
        b = binary_warmup_prior(spec, np.zeros(21))
        assert b.mean[0] == pytest.approx(math.log(0.5 / 21.5))

    def test_dcmm_priors_use_shifted_counts(self):
        spec = ModelSpec((Block.level(),))
        y = np.array([0, 3, 3, 0, 3, 3, 3, 3] * 10, dtype=float)
        b, p = dcmm_warmup_priors(spec, spec, y, ridge=1e-8)
        assert p.mean[0] == pytest.approx(math.log(2.0), abs=1e-6)
        assert b.mean[0] == pytest.approx(math.log(60.5 / 20.5), abs=1e-12)

    def test_bad_inputs(self):
        spec = ModelSpec((Block.level(),))
        with pytest.raises(InputError):
            static_glm_prior(spec, [0, 2], family="bernoulli")
        with pytest.raises(ConfigError):
            static_glm_prior(spec, [0, 1], family="normal")
