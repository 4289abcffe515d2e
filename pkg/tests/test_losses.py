import math

import numpy as np
import pytest
from scipy import stats

from reinsopt import settings
from reinsopt.losses import (
    ClaimHistory,
    DegenerateDataError,
    Gamma,
    GaussianApprox,
    InfiniteMomentError,
    Lognormal,
    LossSample,
    Pareto,
    PortfolioParams,
    fit_mle,
    gaussian_approx,
    moments,
    quantile,
    quantile_standard_error,
    sample_severity,
    simulate_history,
    simulate_total_losses,
    tail_mean,
)


class TestSeverity:
    @pytest.mark.parametrize("model, expected, tol", [
        (Gamma(0.44, 22.5), 9.9, 0.05),
        (Pareto(3.6, 26.0), 10.0, 0.05),
        (Lognormal(1.71, 1.09), math.exp(1.71 + 1.09 ** 2 / 2), 0.06),
    ])
    def test_sample_mean(self, model, expected, tol):
        y = sample_severity(model, 1_000_000, np.random.default_rng(3))
        assert y.mean() == pytest.approx(expected, abs=tol)

    def test_lognormal_closed_form_mean(self):
        assert math.exp(1.71 + 1.09 ** 2 / 2) == pytest.approx(10.02, abs=0.01)

    def test_gaussian_rejected(self):
        with pytest.raises(TypeError):
            sample_severity(GaussianApprox(500, 120), 10)

    def test_zero_count(self):
        assert sample_severity(Gamma(2, 1), 0, np.random.default_rng(0)).size == 0

    def test_pareto_is_type_two(self):
        y = sample_severity(Pareto(3.0, 2.0), 200_000, np.random.default_rng(1))
        assert stats.kstest(y, stats.lomax(3.0, scale=2.0).cdf).pvalue > 1e-3
        assert y.min() > 0

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            Gamma(-1, 2)
        with pytest.raises(ValueError):
            Lognormal(1.0, 0.0)


class TestMoments:
    def test_gamma(self):
        mean, sd = moments(Gamma(0.44, 22.5))
        assert mean == pytest.approx(9.9)
        assert sd == pytest.approx(22.5 * math.sqrt(0.44))
        assert sd == pytest.approx(14.92, abs=0.01)

    def test_pareto(self):
        mean, sd = moments(Pareto(3.6, 26.0))
        assert mean == pytest.approx(10.0)
        assert sd == pytest.approx(15.0, abs=0.005)

    def test_gaussian_identity(self):
        assert moments(GaussianApprox(500, 120)) == (500, 120)

    def test_gamma_sd_against_draws(self):
        y = sample_severity(Gamma(0.44, 22.5), 10_000_000, np.random.default_rng(5))
        assert y.std() == pytest.approx(moments(Gamma(0.44, 22.5))[1], rel=2e-3)

    @pytest.mark.parametrize("shape", [1.5, 2.0])
    def test_pareto_infinite_sd(self, shape):
        with pytest.raises(InfiniteMomentError):
            moments(Pareto(shape, 1.0))

    def test_pareto_infinite_mean(self):
        with pytest.raises(InfiniteMomentError):
            moments(Pareto(1.0, 1.0))


class TestGaussianApprox:
    def test_reference_portfolio(self):
        g = gaussian_approx(settings.PORTFOLIO, Gamma(0.44, 22.5))
        assert g.mean == pytest.approx(495.0)
        assert g.sd == pytest.approx(math.sqrt(50 * (9.9 ** 2 + 22.5 ** 2 * 0.44)))
        assert g.sd == pytest.approx(126.7, abs=0.1)

    def test_poisson_only_limit(self):
        g = gaussian_approx(settings.PORTFOLIO, Gamma(1e6, 1e-5))
        assert g.sd == pytest.approx(math.sqrt(50 * 100), rel=1e-5)

    def test_zero_intensity_rejected(self):
        with pytest.raises(ValueError):
            PortfolioParams(1000, 0.0)

    def test_infinite_moment_propagates(self):
        with pytest.raises(InfiniteMomentError):
            gaussian_approx(settings.PORTFOLIO, Pareto(1.8, 1.0))


class TestSimulation:
    def test_determinism(self):
        a = simulate_total_losses(settings.PORTFOLIO, Gamma(0.44, 22.5), 5000, seed=9)
        b = simulate_total_losses(settings.PORTFOLIO, Gamma(0.44, 22.5), 5000, seed=9)
        assert np.array_equal(a.values, b.values)
        c = simulate_total_losses(settings.PORTFOLIO, Gamma(0.44, 22.5), 5000, seed=10)
        assert not np.array_equal(a.values, c.values)

    def test_sorted_nonnegative(self, gamma_sample):
        v = gamma_sample.values
        assert v.size == gamma_sample.m == 50_000
        assert np.all(np.diff(v) >= 0)
        assert v[0] >= 0

    def test_immutable(self, gamma_sample):
        with pytest.raises(ValueError):
            gamma_sample.values[0] = 1.0

    def test_gaussian_totals_clipped(self):
        s = simulate_total_losses(settings.PORTFOLIO, GaussianApprox(10, 20), 10_000, seed=1)
        assert s.values[0] == 0.0

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            simulate_total_losses(settings.PORTFOLIO, Gamma(1, 1), 0)

    @pytest.mark.parametrize("family", ["gamma", "lognormal", "pareto"])
    def test_compound_moments(self, million, family):
        s = million[family]
        g = gaussian_approx(settings.PORTFOLIO, settings.SEVERITIES[family])
        se_mean = g.sd / math.sqrt(s.m)
        assert abs(s.mean - g.mean) < 4 * se_mean
        sd = float(s.values.std())
        # sd of the sample sd from the fourth moment of the sample
        m4 = float(np.mean((s.values - s.mean) ** 4))
        se_sd = math.sqrt((m4 - sd ** 4) / s.m) / (2 * sd)
        assert abs(sd - g.sd) < 4 * se_sd

    def test_array_intensity_point_mass_matches_scalar(self):
        # a degenerate intensity vector reproduces the scalar path exactly
        from reinsopt.losses import _compound_totals
        ss = np.random.SeedSequence(4)
        a, _ = _compound_totals("gamma", 50.0, (0.44, 22.5), 3000, ss, 50.0)
        b, _ = _compound_totals("gamma", np.full(3000, 50.0), (0.44, 22.5), 3000, ss, 50.0)
        assert np.array_equal(a, b)


class TestQuantile:
    def test_order_statistic(self):
        s = LossSample(np.arange(1, 101, dtype=float))
        assert quantile(s, 0.01) == 99
        assert quantile(s, 0.5) == 50

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
    def test_bad_level(self, eps):
        with pytest.raises(ValueError):
            quantile(LossSample([1.0, 2.0]), eps)

    def test_clamped_index(self):
        s = LossSample([3.0, 1.0, 2.0])
        assert quantile(s, 1e-9) == 3.0
        assert quantile(s, 0.999) == 1.0

    def test_monotone_in_level(self, gamma_sample):
        levels = [0.001, 0.005, 0.01, 0.05, 0.2]
        q = [quantile(gamma_sample, e) for e in levels]
        assert all(x >= y for x, y in zip(q, q[1:]))

    def test_standard_error_shrinks(self):
        small = simulate_total_losses(settings.PORTFOLIO, Gamma(0.44, 22.5), 10_000, seed=2)
        big = simulate_total_losses(settings.PORTFOLIO, Gamma(0.44, 22.5), 160_000, seed=2)
        ratio = quantile_standard_error(small, 0.01) / quantile_standard_error(big, 0.01)
        assert 2.5 < ratio < 6.5

    def test_tail_mean(self):
        s = LossSample(np.arange(1, 101, dtype=float))
        assert tail_mean(s, 0.05) == pytest.approx(98.0)


class TestLossSample:
    def test_layer_sum_matches_direct(self, gamma_sample):
        v = gamma_sample.values
        for a1, a2 in [(0, 100), (400, 800), (600, float("inf")), (900, 950), (5, 5)]:
            direct = np.clip(v - a1, 0, a2 - a1).sum()
            assert gamma_sample.layer_sum(a1, a2) == pytest.approx(direct, rel=1e-10, abs=1e-8)

    def test_partial_layer_sum(self, gamma_sample):
        v = gamma_sample.values
        direct = np.clip(v[-500:] - 500, 0, 300).sum()
        assert gamma_sample.layer_sum(500, 800, lo=v.size - 500) == pytest.approx(direct, rel=1e-10)

    def test_tilted_sums_match_direct(self, gamma_sample):
        v = gamma_sample.values
        i = np.clip(v - 500, 0, 300)
        e = np.exp(0.004 * i)
        s_exp, s_ie = gamma_sample.tilted_layer_sums(500, 800, 0.004)
        assert s_exp == pytest.approx(e.sum(), rel=1e-9)
        assert s_ie == pytest.approx((i * e).sum(), rel=1e-9)

    @pytest.mark.parametrize("suffix", [".csv", ".f8"])
    def test_round_trip(self, tmp_path, suffix):
        s = simulate_total_losses(settings.PORTFOLIO, Lognormal(1.71, 1.09), 2000, seed=4)
        path = s.save(tmp_path / f"losses{suffix}")
        back = LossSample.load(path)
        assert np.array_equal(back.values, s.values)
        assert (tmp_path / f"losses{suffix}.json").exists()


class TestFitMLE:
    def test_intensity(self):
        mu, _ = fit_mle("gamma", ClaimHistory(np.linspace(1, 20, 50), 1000.0))
        assert mu == pytest.approx(0.05)

    def test_lognormal_closed_form(self):
        _, model = fit_mle("lognormal", ClaimHistory(np.exp([1.0, 2.0, 3.0]), 10.0))
        assert model.log_mean == pytest.approx(2.0)
        assert model.log_sd == pytest.approx(math.sqrt(2 / 3))

    def test_gamma_consistency(self):
        y = sample_severity(Gamma(0.44, 22.5), 100_000, np.random.default_rng(8))
        _, model = fit_mle("gamma", ClaimHistory(y, 1.0))
        assert model.shape == pytest.approx(0.44, abs=0.02)

    def test_gamma_score_zero(self):
        y = sample_severity(Gamma(2.5, 3.0), 5000, np.random.default_rng(8))
        _, model = fit_mle("gamma", ClaimHistory(y, 1.0))
        from scipy import special
        score = np.log(model.shape) - special.digamma(model.shape) - (np.log(y.mean()) - np.log(y).mean())
        assert abs(score) < 1e-8
        assert model.shape * model.scale == pytest.approx(y.mean())

    def test_pareto_matches_numeric_optimum(self):
        y = sample_severity(Pareto(3.6, 26.0), 20_000, np.random.default_rng(2))
        _, model = fit_mle("pareto", ClaimHistory(y, 1.0))
        c, loc, scale = stats.lomax.fit(y, floc=0)
        assert model.shape == pytest.approx(c, rel=1e-3)
        assert model.scale == pytest.approx(scale, rel=1e-3)

    def test_degenerate_data(self):
        with pytest.raises(DegenerateDataError):
            fit_mle("gamma", ClaimHistory(np.full(10, 3.0), 100.0))

    def test_too_few_claims(self):
        with pytest.raises((DegenerateDataError, ValueError)):
            fit_mle("pareto", ClaimHistory(np.array([2.0]), 100.0))

    def test_error_rate(self):
        # parameter RMSE shrinks like k^(-1/2)
        rng = np.random.default_rng(21)
        ks = [1_000, 10_000, 100_000]
        errs = []
        for k in ks:
            e = [fit_mle("gamma", ClaimHistory(sample_severity(Gamma(0.44, 22.5), k, rng), 1.0))[1].shape - 0.44
                 for _ in range(30)]
            errs.append(math.sqrt(np.mean(np.square(e))))
        slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
        assert -0.65 <= slope <= -0.35


class TestHistory:
    def test_expected_size(self):
        h = simulate_history(0.05, Gamma(0.44, 22.5), 100_000, rng=np.random.default_rng(1))
        assert abs(h.n - 5000) < 4 * math.sqrt(5000)
        assert h.exposure == 100_000
        assert np.all(h.y > 0)

    def test_zero_intensity(self):
        h = simulate_history(0.0, Gamma(0.44, 22.5), 1000, rng=np.random.default_rng(1))
        assert h.n == 0 and h.y.size == 0

    def test_repeatable(self):
        a = simulate_history(0.05, Pareto(3.6, 26), 2000, rng=np.random.default_rng(6))
        b = simulate_history(0.05, Pareto(3.6, 26), 2000, rng=np.random.default_rng(6))
        assert np.array_equal(a.y, b.y)
