"""Latency, MAC count, footprint and energy reporting for deployed pipelines."""

from __future__ import annotations

import contextlib
import csv
import io
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import extract_subset
from .nn import Standardizer

DEFAULT_POWER_MW = 10.98
WARMUP = 5
MIN_REPS = 30
CSV_COLUMNS = ["model", "inference_us", "extraction_us", "total_us", "flash_kb",
               "ram_kb", "energy_mj", "mac_count"]


@dataclass(frozen=True)
class TimingStat:
    median_us: float
    p95_us: float
    reps: int

    @classmethod
    def from_samples(cls, samples_us: Sequence[float]) -> "TimingStat":
        arr = np.asarray(samples_us, dtype=np.float64)
        return cls(float(np.median(arr)), float(np.percentile(arr, 95)), int(arr.size))


@dataclass(frozen=True)
class EnergyModel:
    active_power_mw: float = DEFAULT_POWER_MW

    def __post_init__(self):
        if not self.active_power_mw > 0:
            raise ValueError("active power must be positive")


def energy(total_time_us: float, em: EnergyModel | None = None) -> float:
    """Millijoules for ``total_time_us`` at constant active power."""
    if total_time_us < 0:
        raise ValueError("time must be non-negative")
    em = em or EnergyModel()
    return em.active_power_mw * total_time_us * 1e-6


def implied_power_mw(total_time_us: float, energy_mj: float) -> float:
    return energy_mj / (total_time_us * 1e-6)


def mac_count(model) -> int:
    dims = model.layer_dims
    return int(sum(a * b for a, b in zip(dims[:-1], dims[1:])))


@dataclass
class Pipeline:
    """A deployable chain: optional feature extraction, standardization, model."""

    name: str
    model: object
    standardizer: Standardizer
    features: list[str] | None = None  # None means raw samples

    def prepare(self, signal) -> np.ndarray:
        if self.features is None:
            return signal.samples
        return extract_subset(signal, self.features).values

    def infer(self, raw_input: np.ndarray) -> int:
        return int(self.model.predict(self.standardizer.transform(raw_input[None, :]))[0])


@contextlib.contextmanager
def _pinned():
    """Request single-core affinity where the platform supports it."""
    if not hasattr(os, "sched_getaffinity"):
        yield
        return
    previous = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(previous)})
    except OSError:
        pass
    try:
        yield
    finally:
        with contextlib.suppress(OSError):
            os.sched_setaffinity(0, previous)


def time_pipelines(pipelines: Sequence[Pipeline], signals: Sequence, reps: int = MIN_REPS,
                   warmup: int = WARMUP) -> list[tuple[TimingStat | None, TimingStat]]:
    """Per-event wall-clock timing of extraction and inference for each pipeline.

    Extraction and inference run in separate passes so neither inherits the
    other's cache footprint. Within a pass the pipelines take turns event by
    event, so host-wide slowdowns land on all of them alike and their medians
    stay comparable.
    """
    if not signals:
        raise ValueError("no signals to time")
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}")
    if not pipelines:
        raise ValueError("no pipelines to time")
    clock = time.perf_counter_ns
    order = [signals[i % len(signals)] for i in range(warmup + reps)]
    k = len(pipelines)
    extract_us = [[] for _ in range(k)]
    infer_us = [[] for _ in range(k)]
    inputs = [[] for _ in range(k)]
    with _pinned():
        for i, sig in enumerate(order):
            for j, pipe in enumerate(pipelines):
                t0 = clock()
                x = pipe.prepare(sig)
                t1 = clock()
                inputs[j].append(x)
                if i >= warmup:
                    extract_us[j].append((t1 - t0) / 1e3)
        for i in range(len(order)):
            for j, pipe in enumerate(pipelines):
                t0 = clock()
                pipe.infer(inputs[j][i])
                t1 = clock()
                if i >= warmup:
                    infer_us[j].append((t1 - t0) / 1e3)
    return [
        (TimingStat.from_samples(extract_us[j]) if pipe.features is not None else None,
         TimingStat.from_samples(infer_us[j]))
        for j, pipe in enumerate(pipelines)
    ]


def time_pipeline(pipeline: Pipeline, signals: Sequence, reps: int = MIN_REPS,
                  warmup: int = WARMUP) -> tuple[TimingStat | None, TimingStat]:
    return time_pipelines([pipeline], signals, reps, warmup)[0]


@dataclass
class BenchReport:
    model: str
    inference: TimingStat
    extraction: TimingStat | None
    mac_count: int
    flash_bytes: int
    ram_bytes: int
    power_mw: float = DEFAULT_POWER_MW

    @property
    def total_us(self) -> float:
        return (self.extraction.median_us if self.extraction else 0.0) + self.inference.median_us

    @property
    def energy_mj(self) -> float:
        return energy(self.total_us, EnergyModel(self.power_mw))

    def row(self) -> dict:
        return {
            "model": self.model,
            "inference_us": round(self.inference.median_us, 3),
            "extraction_us": round(self.extraction.median_us, 3) if self.extraction else "",
            "total_us": round(self.total_us, 3),
            "flash_kb": round(self.flash_bytes / 1024, 2),
            "ram_kb": round(self.ram_bytes / 1024, 2),
            "energy_mj": float(f"{self.energy_mj:.6g}"),
            "mac_count": self.mac_count,
        }


def make_report(reports: Sequence[BenchReport]) -> tuple[str, str]:
    """Render (markdown, csv) tables with one row per pipeline."""
    if not reports:
        raise ValueError("nothing to report")
    rows = [r.row() for r in reports]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return render_markdown(rows), buf.getvalue()


def render_markdown(rows: Sequence[dict]) -> str:
    headers = ["Model", "Inference (us)", "Feature extraction (us)", "Total time (us)",
               "Flash size (KB)", "RAM size (KB)", "Energy (mJ)", "MACs"]
    body = [[str(r["model"]), f"{float(r['inference_us']):.1f}",
             f"{float(r['extraction_us']):.1f}" if r["extraction_us"] not in ("", None) else "--",
             f"{float(r['total_us']):.1f}", f"{float(r['flash_kb']):.2f}", f"{float(r['ram_kb']):.2f}",
             f"{float(r['energy_mj']):.4g}", str(r["mac_count"])] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(headers)]
    line = lambda cells: "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"  # noqa: E731
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(headers), sep, *(line(b) for b in body)]) + "\n"


def read_report_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
