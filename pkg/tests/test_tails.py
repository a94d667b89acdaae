import math

import numpy as np
import pytest
from scipy import stats

from balancegrowth import (
    DegenerateTailError,
    InsufficientDataError,
    compare_tails,
    fit_lognormal,
    fit_power_law,
    threshold_sweep,
)
from balancegrowth.tails import (
    lognormal_logpdf,
    normalized_loglik_ratio,
    powerlaw_logpdf,
)

BTC = 10**8


def powerlaw_sample(rng, n, alpha, xmin):
    return xmin * rng.random(n) ** (-1.0 / (alpha - 1.0))


def ks_bruteforce(sorted_tail, cdf_fn):
    """Independent two-sided KS against the step empirical CDF."""
    n = len(sorted_tail)
    worst = 0.0
    for i, x in enumerate(sorted_tail):
        f = cdf_fn(x)
        worst = max(worst, abs(f - i / n), abs(f - (i + 1) / n))
    return worst


class TestFitPowerLaw:
    def test_closed_form_exponent(self):
        fit = fit_power_law([math.e] * 4, xmin=1.0)
        assert fit.alpha == pytest.approx(2.0, abs=1e-12)

    def test_mle_spread_on_large_sample(self):
        rng = np.random.default_rng(42)
        data = powerlaw_sample(rng, 10**5, 2.5, 1.0)
        fit = fit_power_law(data, xmin=1.0)
        assert 2.45 <= fit.alpha <= 2.55

    def test_xmin_scan_recovers_tail_start(self):
        hits = 0
        for seed in range(50):
            rng = np.random.default_rng(50_000 + seed)
            body = rng.uniform(0.0, 1000.0, size=2000)
            body = body[body > 0]
            tail = powerlaw_sample(rng, 2000, 2.5, 1000.0)
            fit = fit_power_law(np.concatenate([body, tail]))
            hits += 500.0 <= fit.xmin <= 2000.0
        assert hits >= 40

    def test_degenerate_tail_rejected(self):
        with pytest.raises(DegenerateTailError):
            fit_power_law([5.0, 5.0, 5.0], xmin=5.0)

    def test_too_few_tail_points_rejected(self):
        with pytest.raises(InsufficientDataError):
            fit_power_law([1.0, 2.0, 3.0], xmin=2.5)

    def test_loglik_locally_optimal(self, rng):
        data = powerlaw_sample(rng, 5000, 2.2, 3.0)
        fit = fit_power_law(data, xmin=3.0)

        def loglik(alpha):
            return float(np.sum(powerlaw_logpdf(data, alpha, 3.0)))

        assert loglik(fit.alpha) >= loglik(fit.alpha + 0.01)
        assert loglik(fit.alpha) >= loglik(fit.alpha - 0.01)

    def test_ks_matches_bruteforce(self, rng):
        data = powerlaw_sample(rng, 2000, 2.5, 1.0)
        fit = fit_power_law(data, xmin=1.0)
        tail = np.sort(data)
        expected = ks_bruteforce(tail, lambda x: 1.0 - (1.0 / x) ** (fit.alpha - 1.0))
        assert fit.ks_distance == pytest.approx(expected, abs=1e-12)

    def test_scale_equivariance(self, rng):
        data = powerlaw_sample(rng, 3000, 2.7, 2.0)
        a = fit_power_law(data, xmin=2.0)
        b = fit_power_law(data * 1e6, xmin=2e6)
        assert b.alpha == pytest.approx(a.alpha, rel=1e-12)

    def test_max_candidates_decimation(self, rng):
        data = powerlaw_sample(rng, 4000, 2.5, 1.0)
        full = fit_power_law(data)
        capped = fit_power_law(data, max_candidates=200)
        assert capped.n_tail >= 2
        assert abs(capped.alpha - full.alpha) < 0.5


class TestFitLognormal:
    def test_untruncated_closed_form(self):
        fit = fit_lognormal([1.0, math.exp(2.0)], xmin=0.0)
        assert fit.m == pytest.approx(1.0, abs=1e-12)
        assert fit.v == pytest.approx(1.0, abs=1e-12)

    def test_truncated_fit_beats_grid_oracle(self):
        rng = np.random.default_rng(77)
        data = rng.lognormal(0.0, 2.0, size=10**5)
        tail = data[data >= 1.0]
        fit = fit_lognormal(tail, 1.0)

        # independent grid oracle over (m, v) via sufficient statistics
        y = np.log(tail)
        n, sy, syy = y.size, float(y.sum()), float(np.sum(y * y))

        def tail_loglik(m, v):
            quad = syy - 2.0 * m * sy + n * m * m
            return (
                -sy
                - n * math.log(v)
                - 0.5 * n * math.log(2 * math.pi)
                - quad / (2 * v * v)
                - n * stats.norm.logsf(0.0, loc=m, scale=v)
            )

        ms = np.linspace(-2.0, 2.0, 200)
        vs = np.linspace(0.5, 4.0, 200)
        grid = np.array([[tail_loglik(m, v) for v in vs] for m in ms])
        best = float(grid.max())
        assert fit.log_likelihood >= best - 1e-6 * abs(best)
        i, j = np.unravel_index(int(grid.argmax()), grid.shape)
        assert abs(fit.m - ms[i]) <= (ms[1] - ms[0])
        assert abs(fit.v - vs[j]) <= (vs[1] - vs[0])

    def test_requires_two_distinct_values(self):
        with pytest.raises(InsufficientDataError):
            fit_lognormal([7.0, 7.0, 7.0], xmin=1.0)

    def test_ks_matches_bruteforce(self, rng):
        data = rng.lognormal(1.0, 1.5, size=1500)
        tail = np.sort(data[data >= 2.0])
        fit = fit_lognormal(data, 2.0)
        z0 = (math.log(2.0) - fit.m) / fit.v

        def cdf(x):
            z = (math.log(x) - fit.m) / fit.v
            return (stats.norm.cdf(z) - stats.norm.cdf(z0)) / stats.norm.sf(z0)

        assert fit.ks_distance == pytest.approx(ks_bruteforce(tail, cdf), abs=1e-12)

    def test_location_shifts_with_scale(self, rng):
        data = rng.lognormal(2.0, 1.0, size=4000)
        a = fit_lognormal(data, 1.0)
        b = fit_lognormal(data * 1000.0, 1000.0)
        assert b.m - a.m == pytest.approx(math.log(1000.0), rel=1e-9)
        assert b.v == pytest.approx(a.v, rel=1e-9)


class TestCompareTails:
    def test_degenerate_tie_is_inconclusive(self):
        nlr, p = normalized_loglik_ratio(np.full(50, 0.3))
        assert math.isnan(nlr)
        assert p == 1.0

    def test_lognormal_data_prefers_lognormal(self):
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(2000 + seed)
            data = rng.lognormal(18.0, 2.5, size=12_500)
            result = compare_tails(data, float(np.quantile(data, 0.2)))
            wins += result.preferred == "log_normal" and result.p_value < 0.05
        assert wins >= 18

    def test_powerlaw_data_not_mistaken_for_lognormal(self):
        ok = 0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            data = powerlaw_sample(rng, 10_000, 2.5, 1.0)
            result = compare_tails(data, 1.0)
            ok += result.preferred in ("power_law", "inconclusive")
        assert ok >= 18

    def test_preferred_iff_significant(self, rng):
        data = rng.lognormal(10.0, 2.0, size=4000)
        result = compare_tails(data, float(np.quantile(data, 0.3)))
        if result.p_value > result.significance:
            assert result.preferred == "inconclusive"
        else:
            assert result.preferred in ("power_law", "log_normal")


class TestThresholdSweep:
    def test_arithmetic_grid(self, rng):
        data = rng.lognormal(19.0, 1.0, size=2000)
        results = threshold_sweep(data, start=1.0, step=float(BTC), min_tail=100)
        expected = [1.0 + k * BTC for k in range(len(results))]
        assert [r.xmin for r in results] == expected
        assert len(results) >= 2

    def test_stops_when_tail_thins(self, rng):
        data = rng.lognormal(5.0, 1.0, size=150)
        results = threshold_sweep(data, start=1.0, step=1e9, min_tail=100)
        assert len(results) == 1

    def test_lognormal_preferred_at_most_thresholds(self):
        rng = np.random.default_rng(0)
        data = rng.lognormal(22.33, 0.15, size=100_000)
        results = threshold_sweep(data, start=1.0, step=float(BTC))
        frac = np.mean([r.preferred == "log_normal" for r in results])
        assert frac >= 0.8

    def test_rejects_bad_grid(self, rng):
        data = rng.lognormal(5.0, 1.0, size=500)
        with pytest.raises(Exception):
            threshold_sweep(data, start=0.0, step=1.0)


def test_pointwise_logpdfs_are_normalized_densities(rng):
    # numeric integration oracle: both tail densities integrate to one
    xmin = 5.0
    xs = np.geomspace(xmin, xmin * 1e8, 200_001)
    pl = np.exp(powerlaw_logpdf(xs, 2.3, xmin))
    assert np.trapezoid(pl, xs) == pytest.approx(1.0, rel=1e-3)
    ln = np.exp(lognormal_logpdf(xs, math.log(50.0), 2.0, xmin))
    assert np.trapezoid(ln, xs) == pytest.approx(1.0, rel=1e-3)
