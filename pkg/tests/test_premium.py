import numpy as np
import pytest

from reinsopt.contract import LayerContract, ceded
from reinsopt.losses import LossSample
from reinsopt.premium import (
    Expected,
    MixedEsscher,
    TiltOverflowError,
    k_function,
    layer_expectations,
    premium,
    w_function,
)


def _trapezoid_k(principle, contract, sample, u, nodes=10_001):
    v = np.linspace(u, 1.0, nodes)
    return np.trapezoid(w_function(principle, contract, sample, v) - 1.0, v)


class TestPremium:
    def test_hand_enumeration(self):
        s = LossSample([100.0, 200.0, 300.0])
        assert premium(Expected(0.2), s, LayerContract(150, 250)) == pytest.approx(60.0)

    def test_empty_layer(self, gamma_sample):
        assert premium(Expected(0.2), gamma_sample, LayerContract(400, 400)) == 0.0
        assert premium(MixedEsscher(0.2, 0.003), gamma_sample, LayerContract(400, 400)) == 0.0

    def test_zero_tilt_matches_expected(self, gamma_sample):
        c = LayerContract(510.0, 840.0)
        a = premium(Expected(0.2), gamma_sample, c)
        b = premium(MixedEsscher(0.2, 0.0), gamma_sample, c)
        assert b == pytest.approx(a, rel=1e-12)

    def test_esscher_direct(self, gamma_sample):
        c = LayerContract(600.0, 800.0)
        i = ceded(c, gamma_sample.values)
        w = np.exp(0.002 * i)
        direct = 1.2 * (i * w).mean() / w.mean()
        assert premium(MixedEsscher(0.2, 0.002), gamma_sample, c) == pytest.approx(direct, rel=1e-10)

    def test_esscher_exceeds_expected(self, gamma_sample):
        c = LayerContract(600.0, 800.0)
        assert premium(MixedEsscher(0.2, 0.002), gamma_sample, c) > premium(Expected(0.2), gamma_sample, c)

    def test_expected_scaling(self, gamma_sample):
        c = LayerContract(450.0, 700.0)
        base = premium(Expected(0.2), gamma_sample, c)
        for k in (0.5, 2.0, 3.7):
            scaled = LossSample(gamma_sample.values * k, presorted=True)
            assert premium(Expected(0.2), scaled, LayerContract(450 * k, 700 * k)) == pytest.approx(k * base)

    def test_overflow_guard(self, gamma_sample):
        with pytest.raises(TiltOverflowError):
            premium(MixedEsscher(0.2, 1.0), gamma_sample, LayerContract(0.0, 900.0))

    def test_layer_expectations(self, gamma_sample):
        c = LayerContract(500.0, 800.0)
        ei, pi, mgf = layer_expectations(Expected(0.2), gamma_sample, c)
        assert ei == pytest.approx(ceded(c, gamma_sample.values).mean())
        assert pi == pytest.approx(1.2 * ei)
        assert mgf == 1.0

    def test_invalid_principles(self):
        with pytest.raises(ValueError):
            Expected(-0.1)
        with pytest.raises(ValueError):
            MixedEsscher(0.2, -0.001)


class TestWFunction:
    def test_expected_constant(self, gamma_sample):
        u = np.linspace(0, 1, 11)
        assert np.allclose(w_function(Expected(0.2), LayerContract(500, 800), gamma_sample, u), 1.2)

    def test_below_retention(self, gamma_sample):
        p, c = MixedEsscher(0.2, 0.003), LayerContract(500, 800)
        _, _, mgf = layer_expectations(p, gamma_sample, c)
        assert w_function(p, c, gamma_sample, 0.1) == pytest.approx(1.2 / mgf)

    def test_monotone(self, gamma_sample):
        u = np.linspace(0, 1, 2001)
        w = w_function(MixedEsscher(0.2, 0.003), LayerContract(500, 800), gamma_sample, u)
        assert np.all(np.diff(w) >= 0)

    def test_mean_is_one_plus_loading(self, gamma_sample):
        p, c = MixedEsscher(0.2, 0.003), LayerContract(500, 800)
        m = gamma_sample.m
        w = w_function(p, c, gamma_sample, (np.arange(m) + 0.5) / m)
        assert w.mean() == pytest.approx(1.2, rel=1e-9)


class TestKFunction:
    def test_expected_closed_form(self, gamma_sample):
        c = LayerContract(500, 800)
        assert k_function(Expected(0.2), c, gamma_sample, 0.99) == pytest.approx(0.002)
        assert k_function(Expected(0.2), c, gamma_sample, 0.0) == pytest.approx(0.2)

    @pytest.mark.parametrize("principle", [Expected(0.2), MixedEsscher(0.2, 0.004)])
    def test_vanishes_at_one(self, gamma_sample, principle):
        assert k_function(principle, LayerContract(500, 800), gamma_sample, 1.0) == 0.0

    @pytest.mark.parametrize("principle", [Expected(0.2), MixedEsscher(0.2, 0.004)])
    def test_nonnegative(self, gamma_sample, principle):
        u = np.linspace(0, 1, 501)
        assert np.all(k_function(principle, LayerContract(500, 800), gamma_sample, u) >= -1e-12)

    def test_esscher_k_at_zero(self, gamma_sample):
        # K(0) = E W - 1 = loading
        p = MixedEsscher(0.2, 0.004)
        assert k_function(p, LayerContract(500, 800), gamma_sample, 0.0) == pytest.approx(0.2, rel=1e-9)

    def test_matches_trapezoid(self, gamma_sample):
        p, c = MixedEsscher(0.2, 0.004), LayerContract(550, 800)
        for u in (0.0, 0.5, 0.97, 0.99, 0.999):
            exact = k_function(p, c, gamma_sample, u)
            assert exact == pytest.approx(_trapezoid_k(p, c, gamma_sample, u), abs=2e-4)

    @pytest.mark.parametrize("principle", [Expected(0.2), MixedEsscher(0.2, 0.003)])
    def test_surplus_identity(self, gamma_sample, principle):
        # reinsurer expected surplus written as a Stieltjes sum of K over the sorted sample
        c = LayerContract(480.0, 790.0)
        v = gamma_sample.values
        m = v.size
        ei, pi, _ = layer_expectations(principle, gamma_sample, c)
        di = np.diff(np.concatenate(([0.0], ceded(c, v))))
        rhs = np.sum(di * k_function(principle, c, gamma_sample, np.arange(m) / m))
        assert pi - ei == pytest.approx(rhs, rel=1e-9)
        if isinstance(principle, Expected):
            assert rhs == pytest.approx(0.2 * ei, rel=1e-9)
