import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from specsense.detectors import (
    DetectorThreshold,
    calibrate_threshold,
    cauchy_stat,
    empirical_rates,
    energy_stat,
    flom_stat,
    get_statistic,
    pd_curve,
    roc_curve,
    simulate_stats,
)
from specsense.signals import H0, H1, DatasetSpec, NoiseSpec, gen_sas_noise


class TestStatistics:
    def test_energy_zero(self):
        assert energy_stat(np.zeros(17, complex)) == 0

    def test_energy_unit_moduli(self):
        assert energy_stat(np.array([1, 1j, -1])) == pytest.approx(3.0)

    def test_energy_chi_square(self):
        spec = DatasetSpec(n_samples=100)
        t = simulate_stats(spec, energy_stat, H0, math.nan, 100_000, seed=1)
        ks = stats.kstest(2 * t, stats.chi2(df=200).cdf)
        assert ks.statistic < 0.01

    def test_flom_examples(self):
        assert flom_stat(np.array([1, 1j]), p=2) == pytest.approx(1.0)
        assert flom_stat(np.array([3, 4j]), p=1) == pytest.approx(3.5)

    @pytest.mark.parametrize("p", [0.0, -0.5, 2.5])
    def test_flom_order_range(self, p):
        with pytest.raises(ValueError):
            flom_stat(np.ones(3), p=p)

    def test_flom_finite_under_sas(self):
        for seed in range(3):
            means = [flom_stat(gen_sas_noise(n, 1.25, 1.0, seed=seed).samples, 1.0) for n in (1_000, 10_000, 100_000)]
            assert all(np.isfinite(means))
            assert max(means) / min(means) < 1.5

    def test_cauchy_examples(self):
        assert cauchy_stat(np.zeros(5, complex)) == 0
        assert cauchy_stat(np.array([2.0 + 0j]), gamma=2.0) == pytest.approx(math.log(2))

    def test_cauchy_gamma(self):
        with pytest.raises(ValueError):
            cauchy_stat(np.ones(3), gamma=0)

    @given(st.integers(0, 2**32 - 1), st.floats(1.01, 10))
    @settings(max_examples=50, deadline=None)
    def test_cauchy_monotone(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(20) + 1j * rng.standard_normal(20)
        assert cauchy_stat(scale * x) > cauchy_stat(x)

    def test_batched_rows(self):
        x = np.arange(12).reshape(3, 4) + 0j
        assert np.allclose(energy_stat(x), [energy_stat(r) for r in x])

    def test_registry(self):
        f = get_statistic("flom", p=0.5)
        assert f(np.array([4.0])) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            get_statistic("matched")


class TestCalibration:
    def test_median_order_statistic(self):
        thr = calibrate_threshold(np.arange(1, 101), 0.5)
        assert np.sum(np.arange(1, 101) > thr.value) <= 50
        assert thr.value in range(1, 101)

    def test_constant_stats(self):
        thr = calibrate_threshold(np.full(200, 3.0), 0.01)
        assert thr.value == 3.0
        assert not thr.decide(np.full(200, 3.0)).any()

    def test_too_small(self):
        with pytest.raises(ValueError):
            calibrate_threshold(np.arange(50), 0.01)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=100, max_size=400), st.sampled_from([0.01, 0.05, 0.1, 0.5]))
    @settings(max_examples=60, deadline=None)
    def test_calibration_set_pfa_bound(self, xs, pfa):
        thr = calibrate_threshold(xs, pfa)
        assert np.mean(np.asarray(xs) > thr.value) <= pfa + 1e-12

    def test_fresh_pfa(self):
        spec = DatasetSpec(n_samples=100)
        cal = simulate_stats(spec, energy_stat, H0, math.nan, 100_000, seed=1)
        fresh = simulate_stats(spec, energy_stat, H0, math.nan, 100_000, seed=2)
        thr = calibrate_threshold(cal, 0.01)
        assert 0.005 <= np.mean(fresh > thr.value) <= 0.015


class TestRates:
    def test_extremes(self):
        s = np.array([1.0, 2.0, 3.0, 4.0])
        y = np.array([0, 0, 1, 1])
        lo = empirical_rates(s, y, 0.0)
        hi = empirical_rates(s, y, 10.0)
        assert (lo.pd, lo.pfa) == (1.0, 1.0)
        assert (hi.pd, hi.pfa) == (0.0, 0.0)

    def test_separable_toy(self):
        r = empirical_rates([1, 2, 3, 4], [0, 0, 1, 1], DetectorThreshold(2.5, 0.5, 2))
        assert (r.pd, r.pfa) == (1.0, 0.0)

    def test_empty_class(self):
        with pytest.raises(ValueError):
            empirical_rates([1, 2], [1, 1], 0.5)


class TestRoc:
    def test_monotone_and_endpoints(self):
        rng = np.random.default_rng(0)
        pts = roc_curve(rng.normal(0, 1, 500), rng.normal(1, 1, 500), 51)
        pd = [p.pd for p in pts]
        pfa = [p.pfa for p in pts]
        assert np.all(np.diff(pd) <= 0) and np.all(np.diff(pfa) <= 0)
        assert (pd[0], pfa[0]) == (1.0, 1.0)
        assert (pd[-1], pfa[-1]) == (0.0, 0.0)

    def test_diagonal(self):
        rng = np.random.default_rng(1)
        pts = roc_curve(rng.normal(size=50_000), rng.normal(size=50_000))
        assert max(abs(p.pd - p.pfa) for p in pts) < 0.015

    def test_separated(self):
        pts = roc_curve(np.arange(10), np.arange(100, 110))
        assert any(p.pfa == 0 and p.pd == 1 for p in pts)

    def test_matches_direct_sweep(self):
        spec = DatasetSpec(n_samples=100)
        h0 = simulate_stats(spec, energy_stat, H0, math.nan, 2000, seed=3)
        h1 = simulate_stats(spec, energy_stat, H1, 0.0, 2000, seed=4)
        pts = roc_curve(h0, h1, 41)
        lo, hi = min(h0.min(), h1.min()), max(h0.max(), h1.max())
        for t, p in zip(np.linspace(np.nextafter(lo, -np.inf), hi, 41), pts):
            assert p.pfa == pytest.approx(np.mean(h0 > t))
            assert p.pd == pytest.approx(np.mean(h1 > t))


class TestPdCurve:
    def test_shape_and_monotone(self):
        spec = DatasetSpec(n_samples=100)
        thr, pts = pd_curve(spec, energy_stat, range(-20, 19, 4), 0.01, trials=2000, seed=0)
        pd = [p.pd for p in pts]
        assert np.all(np.diff(pd) >= 0)
        assert pd[0] < 0.05 and pd[-1] > 0.9
        assert all(p.pfa <= 0.01 for p in pts)

    def test_sas_flom_runs(self):
        spec = DatasetSpec("ofdm", NoiseSpec("sas"), "epa", 160)
        _, pts = pd_curve(spec, get_statistic("flom", p=1.0), [0, 20], 0.01, trials=500, seed=1)
        assert pts[1].pd > pts[0].pd
