"""Mixture density head: parameterization, likelihood, sampling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from probloc import autodiff as ad
from probloc import mdn
from probloc.mdn import MixtureParams


def _raw(k, pi=None, mu=None, log_sigma=None):
    pi = np.zeros(k) if pi is None else np.asarray(pi, dtype=float)
    mu = np.zeros((k, 2)) if mu is None else np.asarray(mu, dtype=float)
    ls = np.zeros((k, 2)) if log_sigma is None else np.asarray(log_sigma, dtype=float)
    return np.concatenate([pi, mu[:, 0], mu[:, 1], ls[:, 0], ls[:, 1]])


def _random_params(rng, k, batch=None):
    shape = (k,) if batch is None else (batch, k)
    w = rng.dirichlet(np.ones(k), size=batch)
    return MixtureParams(w, rng.normal(size=shape + (2,)) * 3, rng.uniform(0.2, 1.5, size=shape + (2,)))


class TestParamsFromLogits:
    def test_uniform_weights(self):
        p = mdn.params_from_logits(_raw(30))
        np.testing.assert_allclose(p.weights, 1 / 30, atol=1e-15)

    def test_zero_logit_unit_sigma(self):
        assert np.all(mdn.params_from_logits(_raw(3)).sigmas == 1.0)

    def test_floor_engaged(self):
        p = mdn.params_from_logits(_raw(2, log_sigma=np.full((2, 2), -20.0)))
        np.testing.assert_allclose(p.sigmas, 1e-3, rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 30))
    def test_constraints(self, seed, k):
        raw = np.random.default_rng(seed).normal(scale=30, size=(4, 5 * k))
        p = mdn.params_from_logits(raw)
        p.validate()
        assert np.all((p.weights >= 0) & (p.weights <= 1))
        np.testing.assert_allclose(p.weights.sum(axis=-1), 1.0, atol=1e-9)

    def test_width_must_be_multiple_of_five(self):
        with pytest.raises(ValueError):
            mdn.params_from_logits(np.zeros(7))


class TestNLL:
    def test_single_component_at_mean(self):
        value = mdn.nll(ad.Tensor(_raw(1, mu=[[2.0, -1.0]])), [2.0, -1.0]).item()
        assert abs(value - math.log(2 * math.pi)) <= 1e-9

    def test_far_second_component(self):
        raw = _raw(2, mu=[[0.0, 0.0], [12.0, 1.0]])
        value = mdn.nll(ad.Tensor(raw), [0.0, 0.0]).item()
        assert value == pytest.approx(math.log(2 * math.pi) + math.log(2), abs=1e-6)
        assert value == pytest.approx(2.531025, abs=1e-6)

    def test_batch_is_mean_of_samples(self):
        rng = np.random.default_rng(0)
        raw, y = rng.normal(size=(16, 25)), rng.normal(size=(16, 2))
        per = [mdn.nll(ad.Tensor(raw[i]), y[i]).item() for i in range(16)]
        assert mdn.nll(ad.Tensor(raw), y).item() == pytest.approx(np.mean(per), rel=1e-12)

    def test_matches_numpy_oracle(self):
        rng = np.random.default_rng(1)
        raw, y = rng.normal(size=(8, 15)), rng.normal(size=(8, 2))
        oracle = mdn.nll_value(mdn.params_from_logits(raw), y).mean()
        assert mdn.nll(ad.Tensor(raw), y).item() == pytest.approx(oracle, rel=1e-12)

    def test_gradient_check(self):
        rng = np.random.default_rng(0)
        raw = ad.parameter(rng.normal(size=(6, 10)))
        y = rng.normal(size=(6, 2))
        assert ad.gradient_check(lambda: mdn.nll(raw, y), {"raw": raw}).passed

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_density_bounds(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.normal(scale=10, size=(5, 15))
        raw[:, 9:] -= 15  # push deviations toward the floor
        y = rng.normal(size=(5, 2))
        density = np.exp(-mdn.nll_value(mdn.params_from_logits(raw), y))
        assert np.all(density >= 0)
        assert np.all(density <= 1.0 / (2 * math.pi * mdn.SIGMA_FLOOR**2))
        assert mdn.nll(ad.Tensor(raw), y).item() >= mdn.NLL_LOWER_BOUND

    def test_target_shape_checked(self):
        with pytest.raises(ad.ShapeError):
            mdn.nll(ad.Tensor(np.zeros((3, 10))), np.zeros((2, 2)))


class TestSample:
    def test_floor_width_draw(self):
        p = MixtureParams(np.ones(1), np.array([[1.0, 2.0]]), np.full((1, 2), 1e-3))
        draws = mdn.sample(p, np.random.default_rng(0), size=1000)
        assert np.all(np.abs(draws - [1.0, 2.0]) < 5e-3)

    def test_one_hot(self):
        w = np.zeros(5)
        w[3] = 1.0
        p = MixtureParams(w, np.arange(10.0).reshape(5, 2), np.ones((5, 2)))
        _, comp = mdn.sample(p, np.random.default_rng(0), size=1000, return_components=True)
        assert np.all(comp == 3)

    def test_two_component_frequency(self):
        p = MixtureParams(np.array([0.7, 0.3]), np.zeros((2, 2)), np.ones((2, 2)))
        _, comp = mdn.sample(p, np.random.default_rng(0), size=100_000, return_components=True)
        assert abs((comp == 0).mean() - 0.7) <= 0.01

    def test_chi_square_frequencies(self):
        rng = np.random.default_rng(0)
        p = _random_params(rng, 6)
        _, comp = mdn.sample(p, np.random.default_rng(1), size=100_000, return_components=True)
        observed = np.bincount(comp, minlength=6)
        assert stats.chisquare(observed, p.weights * 100_000).pvalue > 0.01

    def test_batched_shape(self):
        p = _random_params(np.random.default_rng(0), 4, batch=3)
        assert mdn.sample(p, np.random.default_rng(0)).shape == (3, 2)
        assert mdn.sample(p, np.random.default_rng(0), size=7).shape == (7, 3, 2)


class TestMixtureMean:
    def test_single_component(self):
        p = MixtureParams(np.ones(1), np.array([[4.0, -2.0]]), np.ones((1, 2)))
        np.testing.assert_array_equal(mdn.mixture_mean(p), [4.0, -2.0])

    def test_symmetric_pair(self):
        p = MixtureParams(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [2.0, 2.0]]), np.ones((2, 2)))
        np.testing.assert_array_equal(mdn.mixture_mean(p), [1.0, 1.0])

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        p = _random_params(rng, 5)
        draws = mdn.sample(p, np.random.default_rng(1), size=1_000_000)
        np.testing.assert_allclose(draws.mean(axis=0), mdn.mixture_mean(p), atol=0.01)
