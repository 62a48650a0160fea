"""Feature extraction for AE events.

All 27 features are computed from a shared per-signal context so that any subset
reuses a single FFT and a single CWT, and returns exactly the values the full
extraction would.
"""

from __future__ import annotations

import collections
import csv
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import Signal

ROLLOFF_FRACTION = 0.85
WAVELET_SCALES = tuple(range(1, 10))

# Instrumentation: number of FFT / CWT evaluations since last reset.
counters: collections.Counter = collections.Counter()


class FeatureError(ValueError):
    pass


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


@lru_cache(maxsize=32)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; ``len(x)`` must be a power of two."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    if n == 0 or n & (n - 1):
        raise FeatureError(f"radix-2 FFT needs a power-of-two length, got {n}")
    out = x[_bitrev(n)]
    m = 2
    while m <= n:
        blocks = out.reshape(n // m, m)
        half = m // 2
        even = blocks[:, :half]
        odd = blocks[:, half:] * _twiddles(m)
        out = np.concatenate((even + odd, even - odd), axis=1).reshape(n)
        m *= 2
    return out


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    bin_hz: float
    n_fft: int

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.magnitudes.size) * self.bin_hz


def _samples(signal) -> tuple[np.ndarray, float]:
    if isinstance(signal, Signal):
        return signal.samples, signal.sample_rate
    x = np.asarray(signal, dtype=np.float64)
    return x, 1.0


def fft_magnitude(signal, sample_rate: float | None = None) -> Spectrum:
    """One-sided magnitude spectrum, zero-padding to the next power of two."""
    x, fs = _samples(signal)
    if sample_rate is not None:
        fs = sample_rate
    if x.size == 0:
        raise FeatureError("cannot transform an empty signal")
    counters["fft"] += 1
    n_fft = next_pow2(x.size)
    padded = np.zeros(n_fft)
    padded[: x.size] = x
    full = fft(padded)
    return Spectrum(np.abs(full[: n_fft // 2 + 1]), fs / n_fft, n_fft)


def ricker(points: int, width: float) -> np.ndarray:
    """Mexican-hat wavelet sampled at ``points`` positions centred on the array."""
    a = 2.0 / (math.sqrt(3.0 * width) * math.pi ** 0.25)
    t = np.arange(points) - (points - 1) / 2.0
    tsq = (t / width) ** 2
    return a * (1.0 - tsq) * np.exp(-tsq / 2.0)


def cwt_coeffs(signal, scales: Sequence[int] = WAVELET_SCALES) -> np.ndarray:
    """CWT with a Ricker wavelet: one 'same'-aligned convolution per scale.

    The kernel at width ``s`` spans ``min(10*s, N)`` samples.
    """
    x, _ = _samples(signal)
    scales = list(scales)
    if not scales or any(s < 1 for s in scales):
        raise FeatureError("scales must be non-empty and >= 1")
    counters["cwt"] += 1
    out = np.empty((len(scales), x.size))
    for row, s in enumerate(scales):
        kernel = ricker(min(10 * s, x.size), s)
        out[row] = np.convolve(x, kernel, mode="same")
    return out


# --------------------------------------------------------------------------
# feature registry
# --------------------------------------------------------------------------

class _Context:
    """Lazily computed intermediates shared by features of one signal."""

    def __init__(self, x: np.ndarray, fs: float):
        self.x = x
        self.fs = fs
        self.n = x.size

    @cached_property
    def mean(self):
        return float(np.mean(self.x))

    @cached_property
    def centered(self):
        return self.x - self.mean

    @cached_property
    def m2(self):
        return float(np.mean(self.centered ** 2))

    @cached_property
    def constant(self):
        return bool(self.x.max() == self.x.min())

    @cached_property
    def spectrum(self):
        return fft_magnitude(self.x, self.fs)

    @cached_property
    def spec_freqs(self):
        return self.spectrum.freqs

    @cached_property
    def spec_mag_sum(self):
        return float(np.sum(self.spectrum.magnitudes))

    @cached_property
    def spec_power(self):
        return self.spectrum.magnitudes ** 2

    @cached_property
    def spec_power_sum(self):
        return float(np.sum(self.spec_power))

    @cached_property
    def centroid(self):
        if self.spec_mag_sum == 0.0:
            return 0.0
        return float(np.sum(self.spec_freqs * self.spectrum.magnitudes) / self.spec_mag_sum)

    @cached_property
    def cwt(self):
        return cwt_coeffs(self.x, WAVELET_SCALES)


def _zscores(c: _Context) -> np.ndarray | None:
    # dividing first keeps tiny-amplitude signals from underflowing m2 ** 1.5
    if c.constant or c.m2 == 0.0:
        return None
    return c.centered / math.sqrt(c.m2)


def _skewness(c: _Context) -> float:
    z = _zscores(c)
    return 0.0 if z is None else float(np.mean(z ** 3))


def _kurtosis(c: _Context) -> float:
    z = _zscores(c)
    return 0.0 if z is None else float(np.mean(z ** 4) - 3.0)


def _zero_crossing_rate(c: _Context) -> float:
    positive = c.x >= 0
    return float(np.count_nonzero(positive[1:] != positive[:-1]) / (c.n - 1))


def _autocorrelation(c: _Context) -> float:
    a, b = c.x[:-1], c.x[1:]
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(da * db) / denom)


def _slope(c: _Context) -> float:
    t = np.arange(c.n, dtype=np.float64)
    tc = t - t.mean()
    return float(np.sum(tc * c.centered) / np.sum(tc * tc))


def _turning(c: _Context, positive: bool) -> float:
    mid, left, right = c.x[1:-1], c.x[:-2], c.x[2:]
    if positive:
        hits = (mid > left) & (mid > right)
    else:
        hits = (mid < left) & (mid < right)
    return float(np.count_nonzero(hits))


def _spectral_entropy(c: _Context) -> float:
    if c.spec_power_sum == 0.0:
        return 0.0
    p = c.spec_power / c.spec_power_sum
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)) / math.log(c.spec_power.size))


def _fundamental(c: _Context) -> float:
    mags = c.spectrum.magnitudes
    if c.spec_power_sum == 0.0 or mags.size < 2:
        return 0.0
    return float((int(np.argmax(mags[1:])) + 1) * c.spectrum.bin_hz)


def _rolloff(c: _Context) -> float:
    if c.spec_power_sum == 0.0:
        return 0.0
    cumulative = np.cumsum(c.spec_power)
    k = int(np.searchsorted(cumulative, ROLLOFF_FRACTION * cumulative[-1], side="left"))
    return float(c.spec_freqs[min(k, cumulative.size - 1)])


def _bandwidth(c: _Context) -> float:
    if c.spec_mag_sum == 0.0:
        return 0.0
    spread = np.sum((c.spec_freqs - c.centroid) ** 2 * c.spectrum.magnitudes) / c.spec_mag_sum
    return float(math.sqrt(spread))


def _wavelet_entropy(c: _Context) -> float:
    energy = np.sum(c.cwt ** 2, axis=1)
    total = float(np.sum(energy))
    if total == 0.0:
        return 0.0
    p = energy / total
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)) / math.log(energy.size))


GROUPS: dict[str, dict[str, Callable[[_Context], float]]] = {
    "statistical": {
        "mean": lambda c: c.mean,
        "median": lambda c: float(np.median(c.x)),
        "std": lambda c: math.sqrt(c.m2),
        "variance": lambda c: c.m2,
        "max": lambda c: float(c.x.max()),
        "min": lambda c: float(c.x.min()),
        "skewness": _skewness,
        "kurtosis": _kurtosis,
    },
    "temporal": {
        "abs_energy": lambda c: float(np.sum(c.x * c.x)),
        "zero_crossing_rate": _zero_crossing_rate,
        "autocorrelation": _autocorrelation,
        "rms": lambda c: math.sqrt(float(np.mean(c.x * c.x))),
        "peak_to_peak": lambda c: float(c.x.max() - c.x.min()),
        "slope": _slope,
        "positive_turning": lambda c: _turning(c, True),
        "negative_turning": lambda c: _turning(c, False),
    },
    "frequency": {
        "fft_mean_coefficient": lambda c: float(np.mean(c.spectrum.magnitudes)),
        "spectral_entropy": _spectral_entropy,
        "fundamental_frequency": _fundamental,
        "spectral_centroid": lambda c: c.centroid,
        "spectral_rolloff": _rolloff,
        "spectral_bandwidth": _bandwidth,
    },
    "wavelet": {
        "wavelet_abs_mean": lambda c: float(np.mean(np.abs(c.cwt))),
        "wavelet_energy": lambda c: float(np.sum(c.cwt ** 2)),
        "wavelet_entropy": _wavelet_entropy,
        "wavelet_std": lambda c: float(np.std(c.cwt)),
        "wavelet_variance": lambda c: float(np.var(c.cwt)),
    },
}

_REGISTRY = {name: fn for group in GROUPS.values() for name, fn in group.items()}
FEATURE_NAMES: tuple[str, ...] = tuple(_REGISTRY)
GROUP_OF = {name: g for g, members in GROUPS.items() for name in members}


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]
    source_len: int

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise FeatureError("values and names differ in length")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


def _extract(signal, names: Sequence[str], sample_rate: float | None) -> FeatureVector:
    x, fs = _samples(signal)
    if sample_rate is not None:
        fs = sample_rate
    if x.size < 3:
        raise FeatureError("feature extraction needs at least 3 samples")
    ctx = _Context(x, fs)
    values = np.array([_REGISTRY[n](ctx) for n in names], dtype=np.float64)
    return FeatureVector(values, tuple(names), x.size)


def extract_group(signal, group: str, sample_rate: float | None = None) -> FeatureVector:
    if group not in GROUPS:
        raise FeatureError(f"unknown feature group {group!r}")
    return _extract(signal, list(GROUPS[group]), sample_rate)


def extract_all(signal, sample_rate: float | None = None) -> FeatureVector:
    return _extract(signal, FEATURE_NAMES, sample_rate)


def validate_names(names: Sequence[str]) -> list[str]:
    names = list(names)
    if not names:
        raise FeatureError("feature list is empty")
    unknown = [n for n in names if n not in _REGISTRY]
    if unknown:
        raise FeatureError(f"unknown feature name(s): {', '.join(unknown)}")
    if len(set(names)) != len(names):
        raise FeatureError("feature names must be unique")
    return names


def extract_subset(signal, names: Sequence[str], sample_rate: float | None = None) -> FeatureVector:
    """Compute only ``names``; FFT/CWT run at most once and only if needed."""
    return _extract(signal, validate_names(names), sample_rate)


def feature_matrix(signals: Sequence[Signal], names: Sequence[str] | None = None) -> np.ndarray:
    names = FEATURE_NAMES if names is None else validate_names(names)
    return np.stack([_extract(s, names, None).values for s in signals])


def write_feature_csv(path, X: np.ndarray, labels: Sequence[int], names: Sequence[str]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(names) + ["label"])
        for row, label in zip(X, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    X = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 1)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return X, y, header[:-1]
