"""Pipeline configuration: a TOML file plus ``section.key=value`` overrides."""

from __future__ import annotations

import copy
import os
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import SynthConfig
from .features import FeatureError, validate_names
from .nn import ARCHITECTURES, TrainConfig
from .selection import FEATURE_PRESETS

OUTPUT_ENV = "TINYAE_OUTPUT_DIR"

DEFAULTS: dict = {
    "output_dir": "out",
    "dataset": {"format": "csv", "downsample_mode": "stride",
                "synth": {"n_per_class": 500, "seed": 7}},
    "split": {"ratios": [0.70, 0.15, 0.15], "seed": 7},
    "selection": {"max_size": 10, "folds": 5, "seed": 0, "mi_bins": 20, "exhaustive": False},
    "models": {"presets": ["raw", "time8", "freq5"]},
    "train": {"learning_rate": 1e-3, "batch_size": 32, "max_epochs": 200, "patience": 10, "seed": 0},
    "tune": {"h1": [32, 64, 96, 128], "h2": [32, 64, 96, 128], "lr": [1e-3, 3e-3],
             "budget": 6, "seed": 0, "max_epochs": 60},
    "quant": {"enabled": True, "rep_size": 100},
    "bench": {"reps": 200, "warmup": 5, "power_mw": 10.98,
              "runtime_overhead_bytes": None, "arena_slack_bytes": None},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    name: str
    features: tuple[str, ...] | None  # None: raw waveform input
    hidden: tuple[int, int]

    @property
    def input_dim(self) -> int:
        return 1000 if self.features is None else len(self.features)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-table")
    node[parts[-1]] = _parse_value(value.strip())


class PipelineConfig:
    """Resolved configuration; every seed is explicit."""

    def __init__(self, raw: dict, base_dir: Path | None = None):
        self.raw = raw
        self.base_dir = base_dir or Path.cwd()
        self._validate()

    @classmethod
    def load(cls, path=None, overrides=(), output_dir=None) -> "PipelineConfig":
        raw: dict = {}
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                raw = tomllib.loads(path.read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            base = path.parent
        merged = _merge(DEFAULTS, raw)
        for item in overrides:
            apply_override(merged, item)
        user_synth = "synth" in raw.get("dataset", {}) or any(
            o.strip().startswith("dataset.synth") for o in overrides)
        if "path" in merged["dataset"] and not user_synth:
            merged["dataset"].pop("synth", None)
        if os.environ.get(OUTPUT_ENV):
            merged["output_dir"] = os.environ[OUTPUT_ENV]
        if output_dir is not None:
            merged["output_dir"] = str(output_dir)
        return cls(merged, base)

    # ------------------------------------------------------------------
    def _validate(self):
        ds = self.raw["dataset"]
        has_path, has_synth = "path" in ds, "synth" in ds
        if has_path == has_synth:
            raise ConfigError("dataset needs exactly one source: 'path' or a [dataset.synth] table")
        if ds.get("format", "csv") not in ("csv", "raw", "raw-binary", "bin"):
            raise ConfigError(f"unknown dataset format {ds.get('format')!r}")
        ratios = self.raw["split"]["ratios"]
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError("split.ratios must be three values summing to 1")
        try:
            self.models
            self.train_config
            self.synth_config
        except (KeyError, TypeError, ValueError, FeatureError) as exc:
            raise ConfigError(str(exc)) from None
        if self.raw["selection"]["max_size"] < 1 or self.raw["selection"]["folds"] < 2:
            raise ConfigError("selection.max_size must be >= 1 and selection.folds >= 2")
        if self.raw["bench"]["reps"] < 30:
            raise ConfigError("bench.reps must be >= 30")
        if not self.raw["bench"]["power_mw"] > 0:
            raise ConfigError("bench.power_mw must be positive")

    @property
    def output_dir(self) -> Path:
        out = Path(self.raw["output_dir"])
        return out if out.is_absolute() else self.base_dir / out

    @property
    def dataset_path(self) -> Path | None:
        path = self.raw["dataset"].get("path")
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def synth_config(self) -> SynthConfig | None:
        synth = self.raw["dataset"].get("synth")
        if synth is None:
            return None
        extra = {k: v for k, v in synth.items() if k not in ("n_per_class", "seed")}
        return SynthConfig.from_dict(extra)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.raw["train"])

    @property
    def models(self) -> list[ModelSpec]:
        specs = []
        for name in self.raw["models"].get("presets", []):
            if name not in ARCHITECTURES:
                raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(ARCHITECTURES)}")
            _, h1, h2 = ARCHITECTURES[name]
            feats = None if name == "raw" else tuple(FEATURE_PRESETS[name])
            specs.append(ModelSpec(name, feats, (h1, h2)))
        for custom in self.raw["models"].get("custom", []):
            feats = custom.get("features", "raw")
            feats = None if feats == "raw" else tuple(validate_names(feats))
            hidden = tuple(custom["hidden"])
            if len(hidden) != 2 or min(hidden) < 1:
                raise ConfigError(f"model {custom['name']!r}: hidden must be two positive sizes")
            specs.append(ModelSpec(custom["name"], feats, hidden))
        if not specs:
            raise ConfigError("no models configured")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        return specs

    def section(self, name: str) -> dict:
        return self.raw[name]
