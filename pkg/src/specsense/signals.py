"""Baseband signal, channel and noise generation plus labeled dataset assembly.

Everything here is a pure function of its arguments and an explicit seed.
A ``seed`` argument may be an int, a ``numpy.random.SeedSequence`` or an
existing ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

T_SAMPLE = 50e-9  # 802.11a symbol time, also the sampling interval

OFDM_NFFT = 64
OFDM_CP = 16
OFDM_PILOTS = np.array([-21, -7, 7, 21])
OFDM_PILOT_VALUES = np.array([1.0, 1.0, 1.0, -1.0])
OFDM_DATA = np.array([k for k in range(-26, 27) if k != 0 and k not in (-21, -7, 7, 21)])

EPA_DELAYS_NS = np.array([0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0])
EPA_POWERS_DB = np.array([0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8])

H0, H1 = 0, 1


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class ComplexSignal:
    samples: np.ndarray
    sample_interval: float = T_SAMPLE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("a signal needs at least one sample")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("signal samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "cscwg"  # "cscwg" | "sas"
    variance: float = 1.0
    alpha: float = 1.25
    dispersion: float = 1.0

    def __post_init__(self):
        if self.kind == "cscwg":
            if not self.variance > 0:
                raise ValueError("CSCWG noise variance must be positive")
        elif self.kind == "sas":
            if not 0 < self.alpha <= 2:
                raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
            if not self.dispersion > 0:
                raise ValueError("SaS dispersion must be positive")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def reference_power(self) -> float:
        """Denominator of SNR (CSCWG) or GSNR (SaS, ``4*gamma``)."""
        if self.kind == "cscwg":
            return self.variance
        return 4.0 * self.dispersion


@dataclass(frozen=True)
class ChannelRealization:
    delays: np.ndarray
    gains: np.ndarray
    average_power: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=np.int64)
        g = np.asarray(self.gains, dtype=np.complex128)
        if d.ndim != 1 or d.size < 1 or d.shape != g.shape:
            raise ValueError("a channel needs at least one (delay, gain) tap")
        if np.any(d < 0) or np.any(np.diff(d) <= 0):
            raise ValueError("tap delays must be non-negative and strictly increasing")
        if not self.average_power > 0:
            raise ValueError("average tap power must be positive")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "gains", g)

    @property
    def taps(self):
        return list(zip(self.delays.tolist(), self.gains.tolist()))


# ---------------------------------------------------------------------------
# noise


def _complex_gaussian(rng, n, variance):
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def gen_cscwg_noise(n: int, variance: float, seed=None) -> ComplexSignal:
    """Circularly symmetric complex white Gaussian noise with E|w|^2 = variance."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not variance > 0:
        raise ValueError("variance must be positive")
    return ComplexSignal(_complex_gaussian(_rng(seed), n, variance))


def positive_stable(a: float, size, rng) -> np.ndarray:
    """Totally skewed positive a-stable draws with Laplace transform exp(-s**a).

    Chambers-Mallows-Stuck transform for beta = 1, 0 < a < 1 (Kanter's form).
    """
    if not 0 < a < 1:
        raise ValueError("positive stable index must lie in (0, 1)")
    u = rng.uniform(0.0, np.pi, size)
    e = rng.standard_exponential(size)
    return (np.sin(a * u) / np.sin(u) ** (1.0 / a)) * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)


def gen_sas_noise(n: int, alpha: float, dispersion: float, seed=None) -> ComplexSignal:
    """Isotropic complex SaS noise via the sub-Gaussian construction.

    w = sqrt(A) * G with A positive (alpha/2)-stable and G complex Gaussian with
    per-component variance 2*gamma**(2/alpha); then
    E exp(j Re(conj(t) w)) = exp(-gamma |t|**alpha).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if not dispersion > 0:
        raise ValueError("dispersion must be positive")
    rng = _rng(seed)
    component_var = 2.0 * dispersion ** (2.0 / alpha)
    g = _complex_gaussian(rng, n, 2.0 * component_var)
    if alpha == 2:
        return ComplexSignal(g)
    a = positive_stable(alpha / 2.0, n, rng)
    return ComplexSignal(np.sqrt(a) * g)


def gen_noise(spec: NoiseSpec, n: int, seed=None) -> ComplexSignal:
    if spec.kind == "cscwg":
        return gen_cscwg_noise(n, spec.variance, seed)
    return gen_sas_noise(n, spec.alpha, spec.dispersion, seed)


# ---------------------------------------------------------------------------
# primary-user signals


def ofdm_symbol_grids(rng, count: int) -> np.ndarray:
    """``count`` 64-bin frequency-domain symbols in FFT order: QPSK data, BPSK pilots, nulls."""
    grid = np.zeros((count, OFDM_NFFT), dtype=np.complex128)
    bits = rng.integers(0, 2, size=(count, OFDM_DATA.size, 2))
    qpsk = ((2 * bits[..., 0] - 1) + 1j * (2 * bits[..., 1] - 1)) / math.sqrt(2.0)
    grid[:, OFDM_DATA % OFDM_NFFT] = qpsk
    grid[:, OFDM_PILOTS % OFDM_NFFT] = OFDM_PILOT_VALUES
    return grid


def gen_ofdm_burst(num_symbols: int, seed=None, sample_interval: float = T_SAMPLE) -> ComplexSignal:
    """802.11a-style OFDM burst of ``num_symbols`` 80-sample symbols, unit average power."""
    if num_symbols < 1:
        raise ValueError("num_symbols must be at least 1")
    rng = _rng(seed)
    grids = ofdm_symbol_grids(rng, num_symbols)
    body = np.fft.ifft(grids, axis=1)
    symbols = np.concatenate([body[:, -OFDM_CP:], body], axis=1)
    burst = symbols.ravel()
    burst /= math.sqrt(np.mean(np.abs(burst) ** 2))
    return ComplexSignal(burst, sample_interval)


def gen_gaussian_signal(n: int, seed=None) -> ComplexSignal:
    """Unit-power complex Gaussian PU signal."""
    return gen_cscwg_noise(n, 1.0, seed)


# ---------------------------------------------------------------------------
# channels


def draw_flat_channel(seed=None) -> ChannelRealization:
    """Flat Rayleigh fading: one tap at delay 0 with gain ~ CN(0, 1)."""
    rng = _rng(seed)
    return ChannelRealization([0], _complex_gaussian(rng, 1, 1.0), 1.0)


def epa_profile(sample_interval: float):
    """EPA taps snapped to the sample grid; colliding taps merge their power.

    Returns (delay indices, linear tap powers summing to 1).
    """
    if not sample_interval > 0:
        raise ValueError("sample_interval must be positive")
    idx = np.floor(EPA_DELAYS_NS * 1e-9 / sample_interval + 0.5).astype(np.int64)
    power = 10.0 ** (EPA_POWERS_DB / 10.0)
    delays = np.unique(idx)
    merged = np.array([power[idx == d].sum() for d in delays])
    return delays, merged / merged.sum()


def draw_epa_channel(sample_interval: float = T_SAMPLE, seed=None) -> ChannelRealization:
    delays, power = epa_profile(sample_interval)
    rng = _rng(seed)
    gains = np.sqrt(power) * _complex_gaussian(rng, delays.size, 1.0)
    return ChannelRealization(delays, gains, float(power.sum()))


def apply_channel(signal: ComplexSignal, channel: ChannelRealization) -> ComplexSignal:
    """Linear convolution with the tapped delay line, truncated to the input length."""
    x = signal.samples
    y = np.zeros_like(x)
    n = x.size
    for d, g in zip(channel.delays, channel.gains):
        if d < n:
            y[d:] += g * x[: n - d]
    return ComplexSignal(y, signal.sample_interval)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class DatasetSpec:
    signal_kind: str = "gaussian"  # "gaussian" | "ofdm"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    channel_kind: str = "flat"  # "flat" | "epa" | "none"
    n_samples: int = 100
    snr_grid_db: tuple = tuple(range(-20, 19, 2))
    n_h0: int = 20000
    n_h1: int = 20000
    seed: int = 0
    sample_interval: float = T_SAMPLE

    def __post_init__(self):
        if self.signal_kind not in ("gaussian", "ofdm"):
            raise ValueError(f"unknown signal kind {self.signal_kind!r}")
        if self.channel_kind not in ("flat", "epa", "none"):
            raise ValueError(f"unknown channel kind {self.channel_kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.n_h0 < 1 or self.n_h1 < 1:
            raise ValueError("both hypothesis counts must be positive")
        if len(self.snr_grid_db) == 0:
            raise ValueError("SNR grid must not be empty")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        object.__setattr__(self, "snr_grid_db", tuple(float(v) for v in self.snr_grid_db))


@dataclass
class LabeledDataset:
    signals: list
    labels: np.ndarray
    snr_db: np.ndarray  # NaN for H0
    sample_interval: float = T_SAMPLE

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64)
        if not (len(self.signals) == self.labels.size == self.snr_db.size):
            raise ValueError("signals, labels and snr_db must be parallel")
        if np.any(np.isnan(self.snr_db[self.labels == H1])):
            raise ValueError("every H1 signal needs an SNR/GSNR value")

    def __len__(self):
        return len(self.signals)

    def samples(self) -> np.ndarray:
        """Stacked complex samples, shape (count, n_samples)."""
        return np.stack([s.samples for s in self.signals])

    def to_iq(self) -> np.ndarray:
        """Real network input of shape (count, 2, n_samples): I and Q channels."""
        x = self.samples()
        return np.stack([x.real, x.imag], axis=1)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(
            [self.signals[i] for i in index], self.labels[index], self.snr_db[index], self.sample_interval
        )


def pu_signal(kind: str, n: int, rng, sample_interval: float = T_SAMPLE) -> ComplexSignal:
    if kind == "gaussian":
        return ComplexSignal(_complex_gaussian(rng, n, 1.0), sample_interval)
    sym = OFDM_NFFT + OFDM_CP
    burst = gen_ofdm_burst(-(-n // sym), rng, sample_interval)
    return ComplexSignal(burst.samples[:n], sample_interval)


def draw_channel(kind: str, rng, sample_interval: float = T_SAMPLE) -> ChannelRealization:
    if kind == "none":
        return ChannelRealization([0], [1.0], 1.0)
    if kind == "flat":
        return draw_flat_channel(rng)
    return draw_epa_channel(sample_interval, rng)


def pu_amplitude(snr_db: float, noise: NoiseSpec) -> float:
    """sqrt(P) such that P / reference_power equals the requested (G)SNR."""
    return math.sqrt(10.0 ** (snr_db / 10.0) * noise.reference_power)


def received_signal(spec: DatasetSpec, hypothesis: int, snr_db: float, rng) -> ComplexSignal:
    """One received window r = h*s + w (H1) or r = w (H0)."""
    n = spec.n_samples
    w = gen_noise(spec.noise, n, rng).samples
    if hypothesis == H0:
        return ComplexSignal(w, spec.sample_interval)
    s = pu_signal(spec.signal_kind, n, rng, spec.sample_interval)
    h = draw_channel(spec.channel_kind, rng, spec.sample_interval)
    hs = apply_channel(s, h).samples
    return ComplexSignal(pu_amplitude(snr_db, spec.noise) * hs + w, spec.sample_interval)


def received_batch(spec: DatasetSpec, hypothesis: int, snr_db: float, trials: int, seed=None) -> np.ndarray:
    """Vectorized ``received_signal`` for Monte Carlo sweeps, shape (trials, n_samples).

    Draw order is fixed (noise, PU signal, channel), so reusing a seed across
    SNR values yields common random numbers that differ only in PU amplitude.
    """
    rng = _rng(seed)
    n = spec.n_samples
    if spec.noise.kind == "cscwg":
        w = _complex_gaussian(rng, (trials, n), spec.noise.variance)
    else:
        w = gen_sas_noise(trials * n, spec.noise.alpha, spec.noise.dispersion, rng).samples.reshape(trials, n)
    if hypothesis == H0:
        return w
    if spec.signal_kind == "gaussian":
        s = _complex_gaussian(rng, (trials, n), 1.0)
    else:
        sym = OFDM_NFFT + OFDM_CP
        k = -(-n // sym)
        grids = ofdm_symbol_grids(rng, trials * k)
        body = np.fft.ifft(grids, axis=1)
        s = np.concatenate([body[:, -OFDM_CP:], body], axis=1).reshape(trials, k * sym)
        s /= np.sqrt(np.mean(np.abs(s) ** 2, axis=1, keepdims=True))
        s = s[:, :n]
    if spec.channel_kind == "flat":
        delays = np.array([0])
        power = np.array([1.0])
    else:
        delays, power = epa_profile(spec.sample_interval)
    gains = np.sqrt(power) * _complex_gaussian(rng, (trials, delays.size), 1.0)
    if spec.channel_kind == "none":
        gains = np.ones_like(gains)
    hs = np.zeros_like(s)
    for j, d in enumerate(delays):
        if d < n:
            hs[:, d:] += gains[:, j : j + 1] * s[:, : n - d]
    return pu_amplitude(snr_db, spec.noise) * hs + w


def build_dataset(spec: DatasetSpec) -> LabeledDataset:
    """H0 block followed by H1 block; H1 (G)SNRs cycle over the grid.

    Signal ``i`` draws from its own stream seeded by (spec.seed, i), so the
    result does not depend on generation order.
    """
    total = spec.n_h0 + spec.n_h1
    children = seed_sequence(spec.seed).spawn(total)
    signals, labels, snrs = [], [], []
    grid = spec.snr_grid_db
    for i in range(total):
        rng = np.random.default_rng(children[i])
        if i < spec.n_h0:
            hyp, snr = H0, math.nan
        else:
            hyp, snr = H1, grid[(i - spec.n_h0) % len(grid)]
        signals.append(received_signal(spec, hyp, snr, rng))
        labels.append(hyp)
        snrs.append(snr)
    return LabeledDataset(signals, labels, snrs, spec.sample_interval)


# ---------------------------------------------------------------------------
# CGSD container

_MAGIC = b"CGSD"
_VERSION = 1
_HEADER = struct.Struct("<4sHIId")


def write_dataset(dataset: LabeledDataset, path) -> None:
    """Little-endian CGSD container (f32 I/Q, per-signal label and SNR)."""
    n = len(dataset.signals[0]) if len(dataset) else 0
    if any(len(s) != n for s in dataset.signals):
        raise ValueError("CGSD requires equal-length signals")
    rec = np.dtype([("label", "<u1"), ("snr", "<f4"), ("iq", "<f4", (2 * n,))])
    body = np.zeros(len(dataset), dtype=rec)
    body["label"] = dataset.labels
    body["snr"] = dataset.snr_db
    if len(dataset):
        x = dataset.samples()
        iq = np.empty((len(dataset), 2 * n), dtype=np.float32)
        iq[:, 0::2] = x.real
        iq[:, 1::2] = x.imag
        body["iq"] = iq
    with open(Path(path), "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, len(dataset), n, dataset.sample_interval))
        f.write(body.tobytes())


def read_dataset(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    magic, version, count, n, dt = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a CGSD file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported CGSD version {version}")
    rec = np.dtype([("label", "<u1"), ("snr", "<f4"), ("iq", "<f4", (2 * n,))])
    body = np.frombuffer(raw, dtype=rec, count=count, offset=_HEADER.size)
    iq = body["iq"].astype(np.float64)
    x = iq[:, 0::2] + 1j * iq[:, 1::2]
    signals = [ComplexSignal(row, dt) for row in x]
    return LabeledDataset(signals, body["label"].astype(np.int8), body["snr"].astype(np.float64), dt)
