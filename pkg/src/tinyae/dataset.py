"""Loading, synthesis, down-sampling and splitting of labelled AE events."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EVENT_DURATION_S = 2e-3
ALLOWED_LENGTHS = (1000, 10000)
CANONICAL_LENGTH = 1000


class DamageClass(enum.IntEnum):
    TENSILE = 0
    SHEAR = 1
    MIXED = 2


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid split requests."""


@dataclass(frozen=True, eq=False)
class Signal:
    samples: np.ndarray
    sample_rate: float
    label: DamageClass

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DatasetError("signal must be a non-empty 1-D vector")
        if not np.all(np.isfinite(samples)):
            raise DatasetError("signal contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "label", DamageClass(self.label))

    def __len__(self):
        return self.samples.size


@dataclass
class DatasetSplit:
    train: list[Signal]
    validation: list[Signal]
    test: list[Signal]
    seed: int
    indices: dict[str, np.ndarray] = field(default_factory=dict)


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

def _rate_for(n: int) -> float:
    return n / EVENT_DURATION_S


def _parse_label(raw, row: int) -> DamageClass:
    try:
        value = float(raw)
    except ValueError:
        raise DatasetError(f"row {row}: label {raw!r} is not numeric") from None
    if value not in (0.0, 1.0, 2.0):
        raise DatasetError(f"row {row}: unknown label {raw!r}")
    return DamageClass(int(value))


def _load_csv(path: Path, allowed_lengths) -> list[Signal]:
    signals = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row_idx, row in enumerate(reader):
            if not row:
                continue
            if row_idx == 0:
                try:
                    float(row[0])
                except ValueError:
                    continue  # header
            if len(row) < 2:
                raise DatasetError(f"row {row_idx}: needs samples and a label")
            try:
                samples = np.array([float(v) for v in row[:-1]])
            except ValueError as exc:
                raise DatasetError(f"row {row_idx}: malformed sample ({exc})") from None
            if not np.all(np.isfinite(samples)):
                raise DatasetError(f"row {row_idx}: non-finite sample")
            if allowed_lengths and samples.size not in allowed_lengths:
                raise DatasetError(
                    f"row {row_idx}: {samples.size} samples, expected one of {allowed_lengths}"
                )
            label = _parse_label(row[-1], row_idx)
            signals.append(Signal(samples, _rate_for(samples.size), label))
    return signals


def _record_dtype(n_samples: int) -> np.dtype:
    return np.dtype([("samples", "<f4", (n_samples,)), ("label", "u1")])


def _load_raw(path: Path, n_samples: int) -> list[Signal]:
    dtype = _record_dtype(n_samples)
    data = path.read_bytes()
    if len(data) % dtype.itemsize:
        raise DatasetError(
            f"row {len(data) // dtype.itemsize}: truncated record "
            f"({len(data)} bytes is not a multiple of {dtype.itemsize})"
        )
    records = np.frombuffer(data, dtype=dtype)
    finite = np.all(np.isfinite(records["samples"]), axis=1)
    if not finite.all():
        raise DatasetError(f"row {int(np.argmin(finite))}: non-finite sample")
    bad = np.flatnonzero(records["label"] > 2)
    if bad.size:
        raise DatasetError(f"row {int(bad[0])}: unknown label {int(records['label'][bad[0]])}")
    rate = _rate_for(n_samples)
    return [Signal(rec["samples"].astype(np.float64), rate, DamageClass(int(rec["label"])))
            for rec in records]


def load_dataset(path, format: str = "csv", *, n_samples: int = CANONICAL_LENGTH,
                 allowed_lengths: Sequence[int] | None = ALLOWED_LENGTHS) -> list[Signal]:
    """Read labelled events from a CSV or raw-binary file.

    CSV rows hold the samples followed by an integer label; an optional header is
    detected by a non-numeric first cell. Raw-binary records are ``n_samples``
    little-endian float32 values followed by one uint8 label. Sample rate is derived
    from the 2 ms event duration.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "csv":
        return _load_csv(path, tuple(allowed_lengths or ()))
    if format in ("raw", "raw-binary", "bin"):
        return _load_raw(path, n_samples)
    raise DatasetError(f"unknown dataset format {format!r}")


def save_csv(signals: Sequence[Signal], path) -> None:
    """Write events as CSV: header ``s0..s{N-1},label`` then one row per event."""
    path = Path(path)
    n = len(signals[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"s{i}" for i in range(n)] + ["label"])
        for sig in signals:
            writer.writerow([repr(float(v)) for v in sig.samples] + [int(sig.label)])


def save_raw(signals: Sequence[Signal], path) -> None:
    records = np.empty(len(signals), dtype=_record_dtype(len(signals[0])))
    records["samples"] = np.stack([sig.samples for sig in signals])
    records["label"] = [int(sig.label) for sig in signals]
    Path(path).write_bytes(records.tobytes())


# --------------------------------------------------------------------------
# down-sampling and splitting
# --------------------------------------------------------------------------

def downsample(signal: Signal, target_len: int = CANONICAL_LENGTH, mode: str = "stride") -> Signal:
    n = len(signal)
    if target_len < 1 or n % target_len:
        raise DatasetError(f"cannot down-sample {n} samples to {target_len}")
    factor = n // target_len
    if factor == 1:
        return signal
    if mode == "stride":
        samples = signal.samples[::factor]
    elif mode == "mean":
        samples = signal.samples.reshape(target_len, factor).mean(axis=1)
    else:
        raise DatasetError(f"unknown down-sampling mode {mode!r}")
    return Signal(samples.copy(), signal.sample_rate / factor, signal.label)


def split_indices(labels: Sequence[int], ratios=(0.70, 0.15, 0.15), seed: int = 0) -> dict[str, np.ndarray]:
    """Per-class shuffled index split into train/validation/test.

    Validation and test take ``floor(count * ratio)`` of each class; the remainder
    goes to train.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DatasetError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DatasetError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts: dict[str, list[np.ndarray]] = {"train": [], "validation": [], "test": []}
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        n_val = math.floor(idx.size * ratios[1] + 1e-9)
        n_test = math.floor(idx.size * ratios[2] + 1e-9)
        n_train = idx.size - n_val - n_test
        parts["train"].append(idx[:n_train])
        parts["validation"].append(idx[n_train:n_train + n_val])
        parts["test"].append(idx[n_train + n_val:])
    return {name: np.sort(np.concatenate(chunks)) for name, chunks in parts.items()}


def stratified_split(signals: Sequence[Signal], ratios=(0.70, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    idx = split_indices([int(s.label) for s in signals], ratios, seed)
    pick = lambda ix: [signals[i] for i in ix]  # noqa: E731
    return DatasetSplit(pick(idx["train"]), pick(idx["validation"]), pick(idx["test"]), seed, idx)


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassProfile:
    freq_hz: tuple[float, float]
    decay_s: tuple[float, float]
    rise_s: tuple[float, float]


DEFAULT_PROFILES = {
    DamageClass.TENSILE: ClassProfile((140e3, 170e3), (40e-6, 70e-6), (2e-6, 6e-6)),
    DamageClass.SHEAR: ClassProfile((30e3, 45e3), (300e-6, 450e-6), (40e-6, 70e-6)),
    DamageClass.MIXED: ClassProfile((75e3, 95e3), (120e-6, 200e-6), (12e-6, 25e-6)),
}


@dataclass(frozen=True)
class SynthConfig:
    length: int = CANONICAL_LENGTH
    sample_rate: float = CANONICAL_LENGTH / EVENT_DURATION_S
    amplitude: tuple[float, float] = (0.5, 2.0)
    onset_samples: tuple[int, int] = (90, 110)
    noise_std: float = 0.02
    phase_jitter: float = math.pi  # phase drawn from [-jitter, jitter]
    random_polarity: bool = False
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        raw = dict(raw)
        profiles = dict(DEFAULT_PROFILES)
        for name, prof in raw.pop("profiles", {}).items():
            profiles[DamageClass[name.upper()]] = ClassProfile(
                tuple(prof["freq_hz"]), tuple(prof["decay_s"]), tuple(prof["rise_s"])
            )
        for key in ("amplitude", "onset_samples"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(profiles=profiles, **raw)


def _class_seed(seed: int, cls: DamageClass) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, int(cls)])


def synth_generate(cls: DamageClass, n: int, seed: int, config: SynthConfig | None = None) -> list[Signal]:
    """Generate ``n`` decaying-burst events for one damage class.

    Each event is ``A * rise(t) * exp(-t/tau) * sin(2*pi*f*t + phi)`` starting at a
    jittered onset, plus white Gaussian noise. Frequency, decay and rise time are
    drawn from class-specific, non-overlapping ranges.
    """
    if n <= 0:
        raise DatasetError("n must be positive")
    cfg = config or SynthConfig()
    cls = DamageClass(cls)
    prof = cfg.profiles[cls]
    rng = np.random.default_rng(_class_seed(seed, cls))
    t_idx = np.arange(cfg.length)
    out = []
    for _ in range(n):
        amp = rng.uniform(*cfg.amplitude)
        freq = rng.uniform(*prof.freq_hz)
        tau = rng.uniform(*prof.decay_s)
        rise = rng.uniform(*prof.rise_s)
        onset = rng.integers(cfg.onset_samples[0], cfg.onset_samples[1] + 1)
        phase = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter)
        if cfg.random_polarity and rng.random() < 0.5:
            amp = -amp
        noise = rng.normal(0.0, cfg.noise_std, cfg.length)
        t = np.clip(t_idx - onset, 0, None) / cfg.sample_rate
        envelope = (1.0 - np.exp(-t / rise)) * np.exp(-t / tau)
        burst = amp * envelope * np.sin(2 * np.pi * freq * t + phase)
        burst[t_idx < onset] = 0.0
        out.append(Signal(burst + noise, cfg.sample_rate, cls))
    return out


def synth_dataset(n_per_class: int, seed: int, config: SynthConfig | None = None) -> list[Signal]:
    """Balanced synthetic set, classes in encoding order."""
    signals: list[Signal] = []
    for cls in DamageClass:
        signals.extend(synth_generate(cls, n_per_class, seed, config))
    return signals


def to_matrix(signals: Sequence[Signal]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.samples for s in signals])
    y = np.array([int(s.label) for s in signals], dtype=np.int64)
    return X, y
