"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as the
criteria execute.
"""

import contextlib
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from balancegrowth import (
    InitialLaw,
    RegimeParams,
    SimConfig,
    bin_moments,
    compare_tails,
    euler_paths,
    filter_active,
    fit_power_law,
    make_bins,
    simulate_gbm_exact,
    simulate_power_sde,
    simulate_two_regime,
    split_regimes,
    trend_test,
    umpu_wilks,
)
from balancegrowth.cli import main

from test_growth import exact_kendall_s_pmf


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}")
        raise
    print(f"ACCEPTANCE PASS: {name}")


def ratio_pipeline(panel, n_bins=300, min_count=50):
    active = filter_active(panel)
    edges = make_bins(float(active.s0.min()), float(active.s0.max()), n_bins)
    bins = bin_moments(active, edges, min_count=min_count, target="ratio")
    return split_regimes(bins), edges


def test_gibrat_round_trip():
    # exact proportional growth, mu*dt = 0.05, sigma*sqrt(dt) = 0.2 over one day;
    # balances centered near ln s = 0 keep the log-log intercept interpolated
    with criterion("Gibrat round-trip (alpha=1, mu_dt/sigma within tolerance, <60s)"):
        start = time.monotonic()
        panel = simulate_gbm_exact(
            100_000, InitialLaw.lognormal(0.0, 2.3), mu=0.05, sigma=0.2, horizon_days=1, seed=42
        )
        split, _ = ratio_pipeline(panel)
        fit = split.poor
        elapsed = time.monotonic() - start
        assert fit is not None
        assert abs(fit.alpha_drift - 1.0) <= 0.05
        assert abs(fit.alpha_vol - 1.0) <= 0.05
        assert abs(fit.mu_dt / 0.05 - 1.0) <= 0.10
        assert abs(fit.sigma_sqrtdt / 0.2 - 1.0) <= 0.10
        assert elapsed < 60.0


def test_sublinear_round_trip():
    with criterion("Sub-linear round-trip (alpha=0.7 within ±0.07 in >=90% of 20 seeds)"):
        params = RegimeParams(alpha_drift=0.7, mu=3.0, alpha_vol=0.7, sigma=2.0)
        ok = 0
        for seed in range(20):
            panel = simulate_power_sde(
                100_000,
                InitialLaw.lognormal(math.log(1e8), 2.3),
                params,
                step_days=1,
                horizon_days=1,
                seed=700 + seed,
            )
            split, _ = ratio_pipeline(panel)
            fit = split.poor
            ok += (
                fit is not None
                and abs(fit.alpha_drift - 0.7) <= 0.07
                and abs(fit.alpha_vol - 0.7) <= 0.07
            )
        assert ok >= 18


def test_two_regime_detection():
    with criterion("Two-regime detection (drift signs + s_star within one bin width, >=90%)"):
        ok = 0
        for seed in range(20):
            config = SimConfig(
                n_users=200_000,
                s0_law=InitialLaw.lognormal(math.log(1e10), 2.3),
                horizon_days=28,
                poor=RegimeParams(alpha_drift=0.8, mu=0.003, alpha_vol=0.8, sigma=2e-4),
                wealthy=RegimeParams(alpha_drift=1.05, mu=-0.002, alpha_vol=0.9, sigma=1e-3),
                s_star=1e10,
                step_days=1,
                seed=9000 + seed,
                regime_mode="initial",
            )
            split, edges = ratio_pipeline(simulate_two_regime(config))
            edge_ratio = float(edges[1] / edges[0])
            ok += (
                split.s_star is not None
                and split.poor is not None
                and split.poor.mu_dt > 0
                and split.wealthy is not None
                and split.wealthy.mu_dt < 0
                and 1.0 / edge_ratio <= split.s_star / 1e10 <= edge_ratio
            )
        assert ok >= 18


def test_model_selection_power():
    with criterion("Model selection (log-normal detected and power law not mistaken, >=90%)"):
        ln_wins = 0
        for seed in range(20):
            rng = np.random.default_rng(2000 + seed)
            data = rng.lognormal(18.0, 2.5, size=12_500)
            result = compare_tails(data, float(np.quantile(data, 0.2)))
            assert result.n_tail == 10_000
            ln_wins += result.preferred == "log_normal" and result.p_value < 0.05
        pl_ok = 0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            data = rng.random(10_000) ** (-1.0 / 1.5)
            result = compare_tails(data, 1.0)
            pl_ok += result.preferred in ("power_law", "inconclusive")
        assert ln_wins >= 18
        assert pl_ok >= 18


def test_umpu_calibration_and_power():
    with criterion("UMPU calibration (null p ~ U(0,1), KS < 0.1) and power (>=90% at 5%)"):
        ps = []
        for seed in range(200):
            rng = np.random.default_rng(30_000 + seed)
            data = 50.0 * np.exp(rng.exponential(0.7, size=1000))
            ps.append(umpu_wilks(data, 50.0, mc_reps=1000, seed=seed).p_value)
        assert stats.kstest(ps, "uniform").statistic < 0.1
        rejections = 0
        for seed in range(40):
            rng = np.random.default_rng(40_000 + seed)
            x = rng.lognormal(3.0, 1.2, size=9000)
            threshold = float(np.quantile(x, 0.4))
            result = umpu_wilks(x, threshold, mc_reps=1000, seed=seed)
            assert result.n_tail >= 5000
            rejections += result.p_value < 0.05
        assert rejections >= 36


def test_closed_form_mle():
    with criterion("Closed-form power-law MLE on {e,e,e,e} equals 2"):
        fit = fit_power_law([math.e] * 4, xmin=1.0)
        assert abs(fit.alpha - 2.0) <= 1e-12


def test_exact_gbm_moments():
    with criterion("Exact-GBM moments (n=1e6 within 3 standard errors)"):
        mu, sigma, T = 0.05, 0.2, 1.0
        panel = simulate_gbm_exact(
            1_000_000, InitialLaw.point(1e8), mu=mu, sigma=sigma, horizon_days=T, seed=3
        )
        r = np.log(panel.s1 / panel.s0)
        n = r.size
        mean_target = (mu - 0.5 * sigma**2) * T
        var_target = sigma**2 * T
        assert abs(r.mean() - mean_target) <= 3 * sigma * math.sqrt(T) / math.sqrt(n)
        assert abs(r.var() - var_target) <= 3 * var_target * math.sqrt(2.0 / (n - 1))


def test_euler_strong_convergence():
    with criterion("Euler strong convergence (coupled error ratio in [1.2, 1.7] per halving)"):
        rng = np.random.default_rng(77)
        n = 200_000
        T, h_fine = 16.0, 0.5
        s0 = rng.lognormal(5.0, 1.0, size=n)
        dW = rng.standard_normal((int(T / h_fine), n)) * math.sqrt(h_fine)
        mu, sigma = 0.05, 0.2
        params = RegimeParams(1.0, mu, 1.0, sigma)
        exact = s0 * np.exp((mu - 0.5 * sigma**2) * T + sigma * dW.sum(axis=0))
        errors = {}
        for h in (4.0, 2.0, 1.0, 0.5):
            steps = int(T / h)
            z = dW.reshape(steps, int(h / h_fine), n).sum(axis=1) / math.sqrt(h)
            final, _ = euler_paths(s0, z, h, params)
            errors[h] = float(np.mean(np.abs(final - exact)))
        for coarse, fine in ((4.0, 2.0), (2.0, 1.0), (1.0, 0.5)):
            assert 1.2 <= errors[coarse] / errors[fine] <= 1.7


def test_trend_machinery():
    with criterion("Trend machinery (strictly decreasing 24-pointer: tau=-1, p<0.001)"):
        result = trend_test([(i, 240.0 - 7.0 * i) for i in range(24)])
        assert result.tau == -1.0
        assert result.p_value < 1e-3
        assert result.direction == "decreasing"
        pmf = exact_kendall_s_pmf(24)
        exact_two_sided = sum(p for s, p in pmf.items() if abs(s) >= 276)
        assert exact_two_sided <= result.p_value


SNAP0 = "user_id,balance\nalice,500000000\nbob,120000\ncarol,0\ndave,30000000\n"
SNAP1 = "user_id,balance\nalice,500000000\nbob,0\ndave,45000000\nerin,7000000\n"
SIM_CFG = """model = two_regime
n_users = 20000
seed = 5
horizon_days = 28
step_days = 1
s0_law = lognormal
s0_m = 23.03
s0_v = 2.3
s_star = 1e10
regime_mode = initial
poor_alpha_drift = 0.8
poor_mu = 0.003
poor_alpha_vol = 0.8
poor_sigma = 0.0002
wealthy_alpha_drift = 1.05
wealthy_mu = -0.002
wealthy_alpha_vol = 0.9
wealthy_sigma = 0.001
"""


def _data_files(root: Path):
    return sorted(
        p for p in root.rglob("*") if p.is_file() and not p.name.endswith("manifest.json")
    )


def test_cli_determinism(tmp_path, monkeypatch):
    # manifests are exempt: they record wall-clock duration by design
    with criterion("Determinism (every subcommand byte-identical across reruns)"):

        def run_all(root: Path):
            root.mkdir()
            monkeypatch.chdir(root)
            (root / "s_2016-01-23.csv").write_text(SNAP0)
            (root / "s_2016-02-20.csv").write_text(SNAP1)
            (root / "sim.cfg").write_text(SIM_CFG)
            rng = np.random.default_rng(5)
            values = rng.lognormal(16.0, 1.5, size=800).astype(np.int64)
            values = values[values > 0]
            (root / "vals.csv").write_text(
                "user_id,balance\n" + "\n".join(f"u{i},{v}" for i, v in enumerate(values)) + "\n"
            )
            (root / "snaps").mkdir()
            assert main(["simulate", "sim.cfg", "run", "--out", "snaps", "--quiet"]) == 0
            assert main([
                "panel", "s_2016-01-23.csv", "s_2016-02-20.csv", "joined.csv",
                "--filter-active", "--hopkins-m", "1", "--quiet", "--seed", "7",
            ]) == 0
            assert main([
                "fit", "vals.csv", "--xmin", "1000000",
                "--umpu", "--mc-reps", "100", "--seed", "7", "--quiet",
            ]) == 0
            assert main([
                "estimate", "snaps/run.panel.csv", "est", "--bins", "80",
                "--min-count", "30", "--quiet",
            ]) == 0
            assert main([
                "sweep", "snaps", "--t0", "2000-01-01", "--dts", "28", "--prefix", "sw",
                "--bins", "80", "--min-count", "30", "--quiet",
            ]) == 0

        run_all(tmp_path / "a")
        run_all(tmp_path / "b")
        files_a = _data_files(tmp_path / "a")
        files_b = _data_files(tmp_path / "b")
        rel_a = [p.relative_to(tmp_path / "a") for p in files_a]
        rel_b = [p.relative_to(tmp_path / "b") for p in files_b]
        assert rel_a == rel_b
        assert len(files_a) >= 15
        for pa, pb in zip(files_a, files_b):
            assert pa.read_bytes() == pb.read_bytes(), f"{pa.name} differs"
