"""TinyML pipeline for acoustic-emission damage classification."""

from .dataset import DamageClass, Signal, SynthConfig, load_dataset, stratified_split, synth_generate
from .features import FEATURE_NAMES, extract_all, extract_subset
from .nn import MlpModel, TrainConfig, build
from .quant import QuantModel, calibrate, quantize

__version__ = "0.1.0"

__all__ = [
    "DamageClass", "Signal", "SynthConfig", "load_dataset", "stratified_split", "synth_generate",
    "FEATURE_NAMES", "extract_all", "extract_subset", "MlpModel", "TrainConfig", "build",
    "QuantModel", "calibrate", "quantize",
]
