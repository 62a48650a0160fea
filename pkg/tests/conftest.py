from dataclasses import dataclass

import numpy as np
import pytest

from tinyae import dataset, features, nn, quant, selection
from tinyae.cli import main

SEED = 7


@dataclass
class Trained:
    name: str
    feature_names: list | None
    model: nn.MlpModel
    scaler: nn.Standardizer
    qmodel: quant.QuantModel
    X: np.ndarray  # standardized inputs, all rows
    y: np.ndarray
    idx: dict
    train_seconds: float


@pytest.fixture(scope="session")
def synth_signals():
    return dataset.synth_dataset(500, SEED)


@pytest.fixture(scope="session")
def split_idx(synth_signals):
    return dataset.split_indices([int(s.label) for s in synth_signals], (0.70, 0.15, 0.15), SEED)


@pytest.fixture(scope="session")
def feature_table(synth_signals):
    X = features.feature_matrix(synth_signals)
    y = np.array([int(s.label) for s in synth_signals])
    return X, y


@pytest.fixture(scope="session")
def trained(synth_signals, split_idx, feature_table):
    """Float + int8 models for the three default pipelines on the 3x500 synthetic set."""
    import time

    FX, y = feature_table
    raw_X, _ = dataset.to_matrix(synth_signals)
    col = {n: i for i, n in enumerate(features.FEATURE_NAMES)}
    out = {}
    for name in ("raw", "time8", "freq5"):
        feats = None if name == "raw" else list(selection.FEATURE_PRESETS[name])
        A = raw_X if feats is None else FX[:, [col[f] for f in feats]]
        tr, va = split_idx["train"], split_idx["validation"]
        scaler = nn.Standardizer.fit(A[tr], per_dimension=feats is not None)
        Xs = scaler.transform(A)
        t0 = time.perf_counter()
        model, _ = nn.train(nn.build_preset(name, seed=0), Xs[tr], y[tr], Xs[va], y[va],
                            nn.TrainConfig(seed=0))
        elapsed = time.perf_counter() - t0
        rep = np.sort(np.random.default_rng(SEED).permutation(tr)[:100])
        qm = quant.quantize(model, quant.calibrate(model, Xs[rep]))
        out[name] = Trained(name, feats, model, scaler, qm, Xs, y, split_idx, elapsed)
    return out


SMALL = """
output_dir = "out"

[dataset.synth]
n_per_class = 60
seed = 3

[train]
max_epochs = 40

[bench]
reps = 30
"""

# outputs that carry wall-clock measurements
TIMING_FILES = {"bench/bench.csv", "bench/bench.md", "report/report.md"}


def _run_all(root):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cfg.toml").write_text(SMALL)
    assert main(["all", "-c", str(root / "cfg.toml")]) == 0
    return root / "out"


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    return _run_all(tmp_path_factory.mktemp("run_a"))


@pytest.fixture(scope="session")
def small_rerun(tmp_path_factory):
    return _run_all(tmp_path_factory.mktemp("run_b"))


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
