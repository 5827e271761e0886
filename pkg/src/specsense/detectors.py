"""Model-based test statistics, false-alarm calibration and Pd/Pfa/ROC evaluation.

All statistics take a complex sample array (or a ``ComplexSignal``) and
declare H1 when the statistic is strictly greater than the threshold.
Batched variants accept a 2-D array with one signal per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .signals import H0, H1, ComplexSignal, DatasetSpec, received_batch, seed_sequence

FLOM_DEFAULT_P = 1.0


def _samples(signal):
    if isinstance(signal, ComplexSignal):
        return signal.samples
    x = np.asarray(signal)
    if x.shape[-1] < 1:
        raise ValueError("signal must be non-empty")
    return x


def energy_stat(signal):
    """Sum of squared moduli."""
    return np.sum(np.abs(_samples(signal)) ** 2, axis=-1)


def flom_stat(signal, p: float = FLOM_DEFAULT_P):
    """Fractional lower-order moment: mean of |r|**p."""
    if not 0 < p <= 2:
        raise ValueError(f"moment order p must lie in (0, 2], got {p}")
    return np.mean(np.abs(_samples(signal)) ** p, axis=-1)


def cauchy_stat(signal, gamma: float = 1.0):
    """Blind Cauchy log-envelope statistic, sum of log(1 + |r|^2 / gamma^2)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return np.sum(np.log1p(np.abs(_samples(signal)) ** 2 / gamma**2), axis=-1)


STATISTICS = {
    "energy": energy_stat,
    "flom": flom_stat,
    "cauchy": cauchy_stat,
}


def get_statistic(name: str, **params):
    try:
        fn = STATISTICS[name]
    except KeyError:
        raise ValueError(f"unknown detector {name!r}; choose from {sorted(STATISTICS)}") from None
    if not params:
        return fn
    return lambda x: fn(x, **params)


@dataclass(frozen=True)
class DetectorThreshold:
    value: float
    target_pfa: float
    calibration_size: int

    def decide(self, stats):
        return np.asarray(stats) > self.value


@dataclass(frozen=True)
class RatePoint:
    pd: float
    pfa: float
    snr_db: float = math.nan


def calibrate_threshold(h0_stats, target_pfa: float) -> DetectorThreshold:
    """Empirical (1 - target_pfa) quantile with "higher" interpolation.

    On the calibration set itself at most ``target_pfa * n`` statistics
    exceed the returned threshold.
    """
    if not 0 < target_pfa < 1:
        raise ValueError("target_pfa must lie in (0, 1)")
    stats = np.asarray(h0_stats, dtype=np.float64).ravel()
    if stats.size * target_pfa < 1 - 1e-9:
        raise ValueError(
            f"calibration needs at least {math.ceil(1 / target_pfa)} H0 statistics, got {stats.size}"
        )
    value = float(np.quantile(stats, 1.0 - target_pfa, method="higher"))
    return DetectorThreshold(value, target_pfa, stats.size)


def empirical_rates(stats, labels, threshold, snr_db: float = math.nan) -> RatePoint:
    stats = np.asarray(stats, dtype=np.float64)
    labels = np.asarray(labels)
    if stats.shape != labels.shape:
        raise ValueError("stats and labels must be parallel")
    if isinstance(threshold, DetectorThreshold):
        threshold = threshold.value
    h0 = labels == H0
    h1 = labels == H1
    if not h0.any() or not h1.any():
        raise ValueError("both hypotheses must be represented")
    return RatePoint(
        pd=float(np.mean(stats[h1] > threshold)),
        pfa=float(np.mean(stats[h0] > threshold)),
        snr_db=snr_db,
    )


def roc_curve(h0_stats, h1_stats, n_points: int = 101) -> list:
    """ROC points at ``n_points`` thresholds spanning the pooled range, ascending.

    The first threshold sits just below the pooled minimum (pd = pfa = 1) and
    the last at the pooled maximum (pd = pfa = 0).
    """
    h0 = np.sort(np.asarray(h0_stats, dtype=np.float64).ravel())
    h1 = np.sort(np.asarray(h1_stats, dtype=np.float64).ravel())
    if h0.size == 0 or h1.size == 0:
        raise ValueError("both statistic lists must be non-empty")
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    lo = min(h0[0], h1[0])
    hi = max(h0[-1], h1[-1])
    thresholds = np.linspace(np.nextafter(lo, -np.inf), hi, n_points)
    pfa = 1.0 - np.searchsorted(h0, thresholds, side="right") / h0.size
    pd = 1.0 - np.searchsorted(h1, thresholds, side="right") / h1.size
    return [RatePoint(float(d), float(f)) for d, f in zip(pd, pfa)]


# ---------------------------------------------------------------------------
# Monte Carlo sweeps


def simulate_stats(spec: DatasetSpec, statistic, hypothesis: int, snr_db: float, trials: int, seed) -> np.ndarray:
    """Statistic values on ``trials`` fresh windows drawn from the dataset recipe."""
    x = received_batch(spec, hypothesis, snr_db, trials, np.random.default_rng(seed_sequence(seed)))
    return np.asarray(statistic(x), dtype=np.float64)


def pd_curve(spec: DatasetSpec, statistic, snr_grid_db, target_pfa=0.01, trials=2000, calibration_trials=None, seed=0):
    """Calibrate on fresh H0 windows, then measure Pd at each (G)SNR.

    Per-SNR trials reuse one seed, so noise, channel and PU draws are common
    across the grid and only the PU amplitude changes.
    """
    ss = seed_sequence(seed)
    cal_seed, h1_seed = ss.spawn(2)
    cal_n = calibration_trials or max(trials, math.ceil(10 / target_pfa))
    h0 = simulate_stats(spec, statistic, H0, math.nan, cal_n, cal_seed)
    thr = calibrate_threshold(h0, target_pfa)
    points = []
    for snr in snr_grid_db:
        h1 = simulate_stats(spec, statistic, H1, float(snr), trials, h1_seed)
        points.append(RatePoint(float(np.mean(h1 > thr.value)), float(np.mean(h0 > thr.value)), float(snr)))
    return thr, points
