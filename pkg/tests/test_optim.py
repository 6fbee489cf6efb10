"""RMSProp and Adam update rules."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probloc import autodiff as ad
from probloc.autodiff import NumericalError
from probloc.optim import Adam, RMSProp, make_optimizer


def _one_step(cls, g, **kw):
    p = ad.parameter([0.0])
    opt = cls([p], **kw)
    opt.step([np.array([g])])
    return p.data[0], opt


class TestRMSProp:
    def test_first_step(self):
        delta, opt = _one_step(RMSProp, 1.0, lr=1e-3)
        assert opt.state.accumulators["v"][0][0] == pytest.approx(0.1, abs=1e-15)
        assert delta == pytest.approx(-1e-3 / (np.sqrt(0.1) + 1e-8), rel=1e-12)
        assert delta == pytest.approx(-3.1623e-3, abs=1e-7)

    def test_zero_gradient(self):
        delta, _ = _one_step(RMSProp, 0.0)
        assert delta == 0.0

    def test_second_step_smaller(self):
        p = ad.parameter([0.0])
        opt = RMSProp([p], lr=1e-3)
        opt.step([np.ones(1)])
        first = -p.data[0]
        opt.step([np.ones(1)])
        second = -p.data[0] - first
        assert opt.state.accumulators["v"][0][0] == pytest.approx(0.19, abs=1e-15)
        assert 0 < second < first


class TestAdam:
    def test_first_step_is_lr(self):
        delta, _ = _one_step(Adam, 0.5, lr=1e-3)
        assert delta == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_gradient(self):
        delta, _ = _one_step(Adam, 0.0)
        assert delta == 0.0

    def test_constant_gradient_monotone(self):
        p = ad.parameter([0.0])
        opt = Adam([p], lr=1e-3)
        trail = []
        for _ in range(100):
            opt.step([np.array([0.7])])
            trail.append(p.data[0])
        assert np.all(np.diff([0.0] + trail) < 0)


class TestShared:
    @settings(max_examples=25, deadline=None)
    @given(name=st.sampled_from(["rmsprop", "adam"]), seed=st.integers(0, 10_000))
    def test_quadratic_strictly_decreases(self, name, seed):
        p = ad.parameter(np.random.default_rng(seed).uniform(-2, 2, size=4))
        opt = make_optimizer(name, [p], lr=1e-3)
        losses = []
        for _ in range(200):
            loss = (p * p).sum()
            losses.append(loss.item())
            ad.backward(loss, [p])
            opt.step()
        assert np.all(np.diff(losses) < 0)

    @pytest.mark.parametrize("name", ["rmsprop", "adam"])
    def test_state_shapes_preserved(self, name):
        params = [ad.parameter(np.ones((2, 3))), ad.parameter(np.ones(5))]
        opt = make_optimizer(name, params)
        for _ in range(3):
            opt.step([np.ones((2, 3)), np.ones(5)])
        for acc in opt.state.accumulators.values():
            assert [a.shape for a in acc] == [(2, 3), (5,)]
        assert opt.state.step == 3

    def test_non_finite_gradient(self):
        p = ad.parameter([1.0])
        with pytest.raises(NumericalError):
            RMSProp([p]).step([np.array([np.inf])])
        assert p.data[0] == 1.0

    def test_gradient_shape_checked(self):
        with pytest.raises(ValueError):
            Adam([ad.parameter(np.ones(2))]).step([np.ones(3)])

    def test_clip_norm(self):
        p = ad.parameter([0.0, 0.0])
        opt = RMSProp([p], lr=1e-3, clip_norm=1.0)
        g = opt._prepare([np.array([3.0, 4.0])])[0]
        np.testing.assert_allclose(g, [0.6, 0.8])

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            make_optimizer("sgd", [])
