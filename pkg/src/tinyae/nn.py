"""Float MLPs: dense-ReLU-dense-ReLU-dense-softmax, trained with Adam and early stopping."""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

N_CLASSES = 3
MODEL_MAGIC = b"TMLP"
MODEL_VERSION = 1

# Hidden sizes reproducing the published parameter counts per input width.
ARCHITECTURES = {
    "raw": (1000, 64, 32),
    "time8": (8, 64, 128),
    "freq5": (5, 96, 64),
    "freq6": (6, 64, 96),
}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # (in, out) per layer
    biases: list[np.ndarray]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def float_size_bytes(self) -> int:
        return 4 * self.param_count

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def logits(self, X) -> np.ndarray:
        return _forward_pass(self, _as_batch(X, self.input_dim))[0][-1]

    def forward(self, X) -> np.ndarray:
        return forward(self, X)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)


def build(input_dim: int, h1: int, h2: int, seed: int = 0) -> MlpModel:
    """He-uniform weights, zero biases."""
    dims = [input_dim, h1, h2, N_CLASSES]
    if min(dims) < 1:
        raise ValueError(f"all layer sizes must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def build_preset(name: str, seed: int = 0) -> MlpModel:
    return build(*ARCHITECTURES[name], seed=seed)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(X, input_dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != input_dim:
        raise ValueError(f"expected input of width {input_dim}, got {X.shape[-1]}")
    return X


def _forward_pass(model: MlpModel, X: np.ndarray):
    pre, acts = [], [X]
    h = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Class probabilities for one input vector (or a batch of rows)."""
    single = np.ndim(x) == 1
    probs = softmax(model.logits(x))
    return probs[0] if single else probs


def cross_entropy(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    z = model.logits(X)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(y)), y]))


def gradients(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Loss and per-layer (dW, db) of mean cross-entropy."""
    X = _as_batch(X, model.input_dim)
    acts, pre = _forward_pass(model, X)
    probs = softmax(acts[-1])
    n = X.shape[0]
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None))))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return loss, grads


def gradient_check(model: MlpModel, X, y, eps: float = 1e-4) -> float:
    """Largest relative difference between backprop and central differences."""
    if model.param_count > 1000:
        raise ValueError("gradient check is limited to models with <= 1000 parameters")
    X = _as_batch(X, model.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _, grads = gradients(model, X, y)
    worst = 0.0
    for params, analytic in zip(
        itertools.chain.from_iterable(zip(model.weights, model.biases)),
        itertools.chain.from_iterable(grads),
    ):
        flat, aflat = params.reshape(-1), analytic.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = cross_entropy(model, X, y)
            flat[k] = orig - eps
            down = cross_entropy(model, X, y)
            flat[k] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(aflat[k]), 1e-6)
            worst = max(worst, abs(numeric - aflat[k]) / denom)
    return worst


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
        }


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _flat_params(model: MlpModel):
    return [p for pair in zip(model.weights, model.biases) for p in pair]


def train(model: MlpModel, X_train, y_train, X_val, y_val,
          cfg: TrainConfig | None = None) -> tuple[MlpModel, History]:
    """Mini-batch Adam on cross-entropy with early stopping on validation loss.

    Epochs are 1-indexed in the history. Training stops once validation loss has
    not improved for ``patience`` epochs and the best-epoch weights are returned.
    """
    cfg = cfg or TrainConfig()
    X_train = _as_batch(X_train, model.input_dim)
    X_val = _as_batch(X_val, model.input_dim)
    y_train, y_val = np.asarray(y_train, dtype=np.int64), np.asarray(y_val, dtype=np.int64)
    if not len(y_train) or not len(y_val):
        raise ValueError("train and validation sets must be non-empty")
    model = model.copy()
    params = _flat_params(model)
    opt = _Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    best, best_loss, stale = model.copy(), np.inf, 0
    n = len(y_train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = gradients(model, X_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            total += loss * idx.size
            opt.step(params, [g for pair in grads for g in pair])
        val_loss = cross_entropy(model, X_val, y_val)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch)
        hist.train_loss.append(total / n)
        hist.val_loss.append(val_loss)
        hist.val_accuracy.append(float(np.mean(model.predict(X_val) == y_val)))
        hist.stopped_epoch = epoch
        if val_loss < best_loss:
            best, best_loss, stale = model.copy(), val_loss, 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, hist


@dataclass
class TuneResult:
    best: tuple[int, int, float]
    trials: list[dict]


def tune(input_dim: int, X_train, y_train, X_val, y_val, search_space: dict,
         budget: int | None = None, seed: int = 0, cfg: TrainConfig | None = None) -> TuneResult:
    """Train sampled (h1, h2, lr) candidates and keep the best by validation accuracy.

    Ties favour fewer parameters, then earlier candidates.
    """
    cfg = cfg or TrainConfig()
    space = list(itertools.product(search_space["h1"], search_space["h2"], search_space["lr"]))
    if budget is None:
        budget = len(space)
    if not 1 <= budget <= len(space):
        raise ValueError(f"budget must be in [1, {len(space)}]")
    if budget < len(space):
        pick = np.sort(np.random.default_rng(seed).choice(len(space), budget, replace=False))
        space = [space[i] for i in pick]
    trials = []
    for h1, h2, lr in space:
        model = build(input_dim, h1, h2, seed)
        trial_cfg = TrainConfig(lr, cfg.batch_size, cfg.max_epochs, cfg.patience, cfg.seed)
        trained, _ = train(model, X_train, y_train, X_val, y_val, trial_cfg)
        acc = float(np.mean(trained.predict(X_val) == np.asarray(y_val)))
        trials.append({"h1": h1, "h2": h2, "lr": lr, "params": trained.param_count, "val_accuracy": acc})
    winner = max(range(len(trials)), key=lambda i: (trials[i]["val_accuracy"], -trials[i]["params"], -i))
    t = trials[winner]
    return TuneResult((t["h1"], t["h2"], t["lr"]), trials)


# --------------------------------------------------------------------------
# evaluation and preprocessing
# --------------------------------------------------------------------------

@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "n": int(self.confusion.sum())}


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def evaluate(model, X, y) -> EvalResult:
    """Argmax accuracy and confusion (rows true, cols predicted) for anything with ``predict``."""
    y = np.asarray(y, dtype=np.int64)
    if not y.size:
        raise ValueError("test set is empty")
    cm = confusion_matrix(y, model.predict(X))
    return EvalResult(float(np.trace(cm) / cm.sum()), cm)


def render_confusion(cm: np.ndarray, labels: Sequence[str] = ("tensile", "shear", "mixed")) -> str:
    width = max(max(len(l) for l in labels), len(str(int(cm.max())))) + 2
    lines = ["true\\pred".ljust(width) + "".join(l.rjust(width) for l in labels)]
    for label, row in zip(labels, cm):
        lines.append(label.ljust(width) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines)


@dataclass
class Standardizer:
    """Z-score fitted on training inputs.

    Feature inputs are scaled per dimension. Raw waveforms use one scalar mean/std
    so that noise-only samples are not inflated to the scale of the burst.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X, per_dimension: bool = True) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        if per_dimension:
            mean, std = X.mean(axis=0), X.std(axis=0)
        else:
            mean, std = np.array([X.mean()]), np.array([X.std()])
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()}))

    @classmethod
    def load(cls, path) -> "Standardizer":
        raw = json.loads(Path(path).read_text())
        return cls(np.array(raw["mean"]), np.array(raw["std"]))


# --------------------------------------------------------------------------
# model file
# --------------------------------------------------------------------------

def model_to_bytes(model: MlpModel) -> bytes:
    dims = model.layer_dims
    header = struct.pack(f"<4sHH{len(dims)}I", MODEL_MAGIC, MODEL_VERSION, len(dims), *dims)
    payload = b"".join(
        w.astype("<f4").tobytes(order="C") + b.astype("<f4").tobytes()
        for w, b in zip(model.weights, model.biases)
    )
    return header + payload


def model_from_bytes(data: bytes) -> MlpModel:
    magic, version, n_dims = struct.unpack_from("<4sHH", data)
    if magic != MODEL_MAGIC:
        raise ValueError("not a float model file")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    offset = 8
    dims = struct.unpack_from(f"<{n_dims}I", data, offset)
    offset += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, "<f4", fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += 4 * w.size
        b = np.frombuffer(data, "<f4", fan_out, offset)
        offset += 4 * b.size
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(data):
        raise ValueError("trailing bytes in model file")
    return MlpModel(weights, biases)


def header_size(n_dims: int) -> int:
    return 8 + 4 * n_dims


def save_model(model: MlpModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> MlpModel:
    return model_from_bytes(Path(path).read_bytes())
