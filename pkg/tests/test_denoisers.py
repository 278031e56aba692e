import numpy as np
import pytest

from lqpnp.denoisers import (GmmPrior, gmm_denoiser, gmm_marginal_score,
                             median_denoiser, renoise, tv_denoiser,
                             tweedie_from_noise_pred, two_level_prior)
from lqpnp.errors import ArgumentError
from lqpnp.schedule import linear_beta_schedule


@pytest.fixture(scope="module")
def sched():
    return linear_beta_schedule(100, 1e-3, 0.05)


class TestTweedieFromNoisePred:
    def test_zero_eps(self, rng):
        x = rng.standard_normal(10)
        np.testing.assert_allclose(tweedie_from_noise_pred(x, np.zeros(10), 0.25),
                                   2.0 * x, rtol=1e-15)

    def test_algebraic_inversion(self, rng):
        x0 = rng.random(50)
        z = rng.standard_normal(50)
        a = 0.37
        x = np.sqrt(a) * x0 + np.sqrt(1 - a) * z
        np.testing.assert_allclose(tweedie_from_noise_pred(x, z, a), x0,
                                   atol=1e-12)

    def test_alpha_to_one_limit(self, rng):
        x = rng.standard_normal(10)
        out = tweedie_from_noise_pred(x, rng.standard_normal(10), 1 - 1e-12)
        np.testing.assert_allclose(out, x, atol=1e-5)

    def test_alpha_validated(self):
        with pytest.raises(ArgumentError):
            tweedie_from_noise_pred(np.zeros(2), np.zeros(2), 1.0)


class TestGmmScore:
    def test_single_gaussian_score(self):
        prior = GmmPrior([1.0], [0.0], [1.0])
        v = np.linspace(-3, 3, 7)
        # marginal is N(0, 0.5 + 0.5) = N(0, 1)
        np.testing.assert_allclose(gmm_marginal_score(v, prior, 0.5), -v,
                                   rtol=1e-12)

    def test_symmetric_mixture_zero_at_origin(self):
        prior = GmmPrior([0.5, 0.5], [-0.7, 0.7], [0.04, 0.04])
        assert gmm_marginal_score(0.0, prior, 0.6) == pytest.approx(0.0, abs=1e-14)

    def test_central_difference(self, rng):
        prior = two_level_prior()
        a = 0.83

        def logp(v):
            m = np.sqrt(a) * prior.means
            s2 = a * prior.variances + (1 - a)
            comps = (np.log(prior.weights) - 0.5 * np.log(2 * np.pi * s2)
                     - (v[:, None] - m) ** 2 / (2 * s2))
            mx = comps.max(axis=1, keepdims=True)
            return (mx + np.log(np.exp(comps - mx).sum(axis=1, keepdims=True)))[:, 0]

        v = rng.uniform(-1.5, 2.5, size=100)
        h = 1e-6
        fd = (logp(v + h) - logp(v - h)) / (2 * h)
        got = gmm_marginal_score(v, prior, a)
        np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-8)


class TestGmmDenoiser:
    def test_matches_conjugate_closed_form(self, sched, rng):
        mu, var = 0.4, 0.09
        den = gmm_denoiser(GmmPrior([1.0], [mu], [var]), sched)
        for t in (0, 30, 99):
            a = sched.alphas[t]
            x = rng.standard_normal(64) * 2.0
            want = mu + (np.sqrt(a) * var / (a * var + 1 - a)) * (x - np.sqrt(a) * mu)
            np.testing.assert_allclose(den.denoise(x, t), want, atol=1e-10)

    def test_alpha_near_one_identity(self, rng):
        sched1 = linear_beta_schedule(10, 1e-9, 1e-8)
        den = gmm_denoiser(two_level_prior(), sched1)
        x = rng.random(16)
        np.testing.assert_allclose(den.denoise(x, 0), x, atol=1e-6)

    def test_diag_jacobian_central_difference(self, sched, rng):
        den = gmm_denoiser(two_level_prior(), sched)
        t = 40
        x = rng.uniform(-0.5, 1.5, size=100)
        h = 1e-6
        fd = (den.denoise(x + h, t) - den.denoise(x - h, t)) / (2 * h)
        np.testing.assert_allclose(den.diag_jacobian(x, t), fd, rtol=1e-5,
                                   atol=1e-8)

    def test_finite_on_extreme_inputs(self, sched):
        den = gmm_denoiser(two_level_prior(), sched)
        x = np.array([-1e6, -10.0, 0.0, 10.0, 1e6])
        out = den.denoise(x, 70)
        assert np.all(np.isfinite(out))
        assert out.shape == x.shape

    def test_prior_validation(self):
        with pytest.raises(ArgumentError):
            GmmPrior([0.6, 0.5], [0, 1], [1, 1])
        with pytest.raises(ArgumentError):
            GmmPrior([0.5, 0.5], [0, 1], [1, 0])

    def test_prior_sampling_weights(self):
        prior = two_level_prior()
        s = prior.sample(100_000, seed=3)
        hi = (s > 0.5).mean()
        assert abs(hi - 0.5) < 4 * np.sqrt(0.25 / s.size)


class TestTvDenoiser:
    def test_strength_zero_identity(self, sched, rng):
        den = tv_denoiser(0.0, (4, 5, 1), sched)
        x = rng.standard_normal(20)
        np.testing.assert_array_equal(den.denoise(x, 10), x)

    def test_constant_unchanged(self, sched):
        den = tv_denoiser(0.8, (6, 6, 3), sched)
        x = np.full(6 * 6 * 3, 0.42)
        np.testing.assert_allclose(den.denoise(x, 50), x, atol=1e-12)

    def test_tv_non_expansive_on_step_signal(self, sched):
        den = tv_denoiser(0.5, (1, 32, 1), sched, inner_iters=60)
        x = np.repeat([0.1, 0.9], 16)

        def tv(v):
            return np.abs(np.diff(v)).sum()

        out = den.denoise(x, 60)
        assert tv(out) <= tv(x) + 1e-12

    def test_negative_strength_rejected(self, sched):
        with pytest.raises(ArgumentError):
            tv_denoiser(-0.1, (4, 4, 1), sched)


class TestMedianDenoiser:
    def test_constant_unchanged(self):
        den = median_denoiser(3, (5, 5, 1))
        x = np.full(25, 0.3)
        np.testing.assert_array_equal(den.denoise(x, 0), x)

    def test_impulse_removed(self):
        den = median_denoiser(3, (5, 5, 1))
        x = np.full(25, 0.3)
        x[12] = 1.0
        np.testing.assert_allclose(den.denoise(x, 0), np.full(25, 0.3),
                                   atol=1e-15)

    def test_window_one_identity(self, rng):
        den = median_denoiser(1, (4, 4, 1))
        x = rng.random(16)
        np.testing.assert_array_equal(den.denoise(x, 0), x)

    def test_even_window_rejected(self):
        with pytest.raises(ArgumentError):
            median_denoiser(4, (4, 4, 1))


class TestRenoise:
    def test_alpha_one_identity(self, rng):
        x = rng.standard_normal(32)
        np.testing.assert_array_equal(renoise(x, 1.0, seed=1), x)

    def test_deterministic_given_seed(self, rng):
        x = rng.standard_normal(32)
        a = 0.64
        out = renoise(x, a, seed=5)
        z = np.random.default_rng(5).standard_normal(32)
        np.testing.assert_allclose(out, 0.8 * x + 0.6 * z, rtol=1e-15)
        np.testing.assert_array_equal(out, renoise(x, a, seed=5))

    def test_noise_statistics(self):
        n = 1_000_000
        x = np.zeros(n)
        a = 0.3
        out = renoise(x, a, seed=6)
        z = out / np.sqrt(1 - a)
        assert abs(z.mean()) < 4 / np.sqrt(n)
        assert abs(z.var() - 1.0) < 4 * np.sqrt(2.0 / n)
        assert abs(out.var() - (1 - a)) < 0.01 * (1 - a)

    def test_alpha_validated(self):
        with pytest.raises(ArgumentError):
            renoise(np.zeros(3), 0.0, seed=0)


@pytest.mark.parametrize("make", [
    lambda s: gmm_denoiser(two_level_prior(), s),
    lambda s: tv_denoiser(0.3, (4, 8, 1), s),
    lambda s: median_denoiser(3, (4, 8, 1)),
])
def test_shape_preserving_and_finite(make, sched, rng):
    den = make(sched)
    x = rng.standard_normal(32) * 100.0
    out = den.denoise(x, 20)
    assert out.shape == x.shape
    assert np.all(np.isfinite(out))
