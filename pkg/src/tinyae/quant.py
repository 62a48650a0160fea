"""Post-training int8 quantization and integer-only inference for MlpModel."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .nn import MlpModel, model_to_bytes, softmax

QMIN, QMAX = -128, 127
QMODEL_MAGIC = b"TQNT"
QMODEL_VERSION = 1
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1

# Footprint calibration: runtime code/resolvers in flash, tensor arena and
# stack slack in RAM. Chosen so the raw 1000-64-32-3 model reports
# 222.99 KB flash / 126.06 KB RAM.
RUNTIME_OVERHEAD_BYTES = 161_722
ARENA_SLACK_BYTES = 124_021


_F32_TINY = float(np.finfo(np.float32).tiny)


def _f32(v: float) -> float:
    # scales are stored as float32; never let a positive one flush to zero
    return max(float(np.float32(v)), _F32_TINY)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero_point {self.zero_point} outside int8 range")

    @property
    def real_range(self) -> tuple[float, float]:
        return self.scale * (QMIN - self.zero_point), self.scale * (QMAX - self.zero_point)

    def quantize(self, x) -> np.ndarray:
        q = np.rint(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return _clamp(q, QMIN, QMAX).astype(np.int8)

    def dequantize(self, q) -> np.ndarray:
        return self.scale * (np.asarray(q, dtype=np.float64) - self.zero_point)


def affine_params(lo: float, hi: float) -> QuantParams:
    """Asymmetric int8 mapping whose real range covers [lo, hi] and 0.

    Uses the exact ``(hi - lo) / 255`` step when zero-point rounding keeps the
    range covered, otherwise one code of headroom and a ceiling zero point.
    """
    lo, hi = float(lo), float(hi)
    if hi == lo:
        if abs(lo) <= 0.5:
            return QuantParams(1.0 / 256, int(np.clip(np.rint(-lo * 256), QMIN, QMAX)))
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi - lo < 255.0 * _F32_TINY:
        # both bounds are indistinguishable from zero
        return QuantParams(1.0 / 256, 0)
    scale = (hi - lo) / 255.0
    zp = int(np.rint(QMIN - lo / scale))
    p = QuantParams(_f32(scale), int(np.clip(zp, QMIN, QMAX)))
    r_lo, r_hi = p.real_range
    tol = 1e-6 * (hi - lo)
    if r_lo <= lo + tol and r_hi >= hi - tol:
        return p
    scale = (hi - lo) / 254.0
    zp = math.ceil(QMIN - lo / scale)
    return QuantParams(_f32(scale), int(np.clip(zp, QMIN, QMAX)))


def _activations(model: MlpModel, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i != last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def calibrate(model: MlpModel, rep_set) -> list[QuantParams]:
    """Activation params for the input and every layer output (logits last)."""
    X = np.atleast_2d(np.asarray(rep_set, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("representative set is empty")
    return [affine_params(a.min(), a.max()) for a in _activations(model, X)]


def quantize_multiplier(m: float) -> tuple[int, int]:
    """Express ``m > 0`` as ``q * 2**(shift - 31)`` with ``q`` a Q31 int32."""
    if m <= 0:
        raise ValueError("multiplier must be positive")
    frac, shift = math.frexp(m)
    q = int(round(frac * (1 << 31)))
    if q == 1 << 31:
        q //= 2
        shift += 1
    return q, shift


def _clamp(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    # np.clip carries several microseconds of Python overhead on tiny arrays
    return np.minimum(np.maximum(x, lo), hi)


def _srdhm(a: np.ndarray, b: int) -> np.ndarray:
    """Saturating rounding doubling high multiply (int32 x int32 -> high int32)."""
    a = np.asarray(a, dtype=np.int64)
    ab = a * np.int64(b)
    neg = (ab < 0).astype(np.int64)
    # nudge is 2**30 for ab >= 0 and 1 - 2**30 otherwise
    total = ab + (np.int64(1 << 30) - neg * np.int64((1 << 31) - 1))
    # C-style division by 2**31 truncates toward zero
    high = (total + (total < 0) * np.int64((1 << 31) - 1)) >> 31
    if b == INT32_MIN:
        high = np.where(a == INT32_MIN, INT32_MAX, high)
    return _clamp(high, INT32_MIN, INT32_MAX)


def _rounding_shift_right(x: np.ndarray, exponent: int) -> np.ndarray:
    if exponent == 0:
        return x
    mask = np.int64((1 << exponent) - 1)
    remainder = x & mask
    threshold = (mask >> 1) + (x < 0)
    return (x >> exponent) + (remainder > threshold)


def requantize(acc: np.ndarray, multiplier: int, shift: int) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.int64)
    if shift > 0:
        acc = _clamp(acc << shift, INT32_MIN, INT32_MAX)
    return _rounding_shift_right(_srdhm(acc, multiplier), max(-shift, 0))


@dataclass(frozen=True)
class QuantModel:
    weights: tuple[np.ndarray, ...]  # int8 (in, out)
    biases: tuple[np.ndarray, ...]  # int32
    weight_params: tuple[QuantParams, ...]
    act_params: tuple[QuantParams, ...]  # input, then one per layer output

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def input_params(self) -> QuantParams:
        return self.act_params[0]

    @cached_property
    def multipliers(self) -> list[tuple[int, int]]:
        out = []
        for i, wp in enumerate(self.weight_params):
            s_in, s_out = self.act_params[i].scale, self.act_params[i + 1].scale
            out.append(quantize_multiplier(s_in * wp.scale / s_out))
        return out

    @cached_property
    def _weights_f64(self) -> list[np.ndarray]:
        return [w.astype(np.float64) for w in self.weights]

    def logits_q(self, X) -> np.ndarray:
        """Integer logits (int8 codes) for a batch of float inputs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.input_dim:
            raise ValueError(f"expected input of width {self.input_dim}, got {X.shape[-1]}")
        q = self.input_params.quantize(X).astype(np.int64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self._weights_f64, self.biases)):
            zp_in = self.act_params[i].zero_point
            zp_out = self.act_params[i + 1].zero_point
            # |q - zp| <= 255 and |w| <= 127, so every partial sum is an integer
            # below 2**53: the float64 product is exact and BLAS-backed.
            acc = ((q - zp_in).astype(np.float64) @ w).astype(np.int64)
            acc += b.astype(np.int64)
            out = requantize(acc, *self.multipliers[i]) + zp_out
            low = zp_out if i != last else QMIN  # fused ReLU on hidden layers
            q = _clamp(out, max(low, QMIN), QMAX)
        return q.astype(np.int8)

    def logits(self, X) -> np.ndarray:
        return self.act_params[-1].dequantize(self.logits_q(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    @property
    def blob_bytes(self) -> int:
        return len(qmodel_to_bytes(self))


def quantize_weights(w: np.ndarray) -> tuple[np.ndarray, QuantParams]:
    """Symmetric per-tensor int8 (zero point 0), round half to even."""
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    params = QuantParams(_f32(peak / 127.0) if peak > 0 else 1.0, 0)
    q = np.clip(np.rint(w / params.scale), -127, 127).astype(np.int8)
    return q, params


def quantize(model: MlpModel, act_params) -> QuantModel:
    act_params = tuple(act_params)
    if len(act_params) != len(model.weights) + 1:
        raise ValueError("need activation params for the input and every layer")
    qw, qb, wparams = [], [], []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        q, p = quantize_weights(w)
        bias_scale = act_params[i].scale * p.scale
        qb.append(np.clip(np.rint(b / bias_scale), INT32_MIN, INT32_MAX).astype(np.int32))
        qw.append(q)
        wparams.append(p)
    return QuantModel(tuple(qw), tuple(qb), tuple(wparams), act_params)


def qforward(qm: QuantModel, x) -> np.ndarray:
    """Class probabilities through the integer path (softmax in float)."""
    single = np.ndim(x) == 1
    probs = softmax(qm.logits(x))
    return probs[0] if single else probs


# --------------------------------------------------------------------------
# serialization and footprint
# --------------------------------------------------------------------------

def _pack_params(p: QuantParams) -> bytes:
    return struct.pack("<fi", p.scale, p.zero_point)


def qmodel_to_bytes(qm: QuantModel) -> bytes:
    dims = qm.layer_dims
    parts = [struct.pack(f"<4sHH{len(dims)}I", QMODEL_MAGIC, QMODEL_VERSION, len(dims), *dims),
             _pack_params(qm.input_params)]
    for i, wp in enumerate(qm.weight_params):
        parts.append(_pack_params(wp))
        parts.append(_pack_params(qm.act_params[i + 1]))
    parts.extend(w.astype(np.int8).tobytes(order="C") for w in qm.weights)
    parts.extend(b.astype("<i4").tobytes() for b in qm.biases)
    return b"".join(parts)


def qmodel_from_bytes(data: bytes) -> QuantModel:
    magic, version, n_dims = struct.unpack_from("<4sHH", data)
    if magic != QMODEL_MAGIC:
        raise ValueError("not a quantized model file")
    if version != QMODEL_VERSION:
        raise ValueError(f"unsupported quantized model version {version}")
    offset = 8
    dims = struct.unpack_from(f"<{n_dims}I", data, offset)
    offset += 4 * n_dims

    def params():
        nonlocal offset
        scale, zp = struct.unpack_from("<fi", data, offset)
        offset += 8
        return QuantParams(float(scale), zp)

    acts, wparams = [params()], []
    for _ in range(n_dims - 1):
        wparams.append(params())
        acts.append(params())
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(np.frombuffer(data, np.int8, fan_in * fan_out, offset).reshape(fan_in, fan_out).copy())
        offset += fan_in * fan_out
    for fan_out in dims[1:]:
        biases.append(np.frombuffer(data, "<i4", fan_out, offset).astype(np.int32))
        offset += 4 * fan_out
    if offset != len(data):
        raise ValueError("trailing bytes in quantized model file")
    return QuantModel(tuple(weights), tuple(biases), tuple(wparams), tuple(acts))


def qheader_size(n_dims: int) -> int:
    return 8 + 4 * n_dims + 8 + 16 * (n_dims - 1)


def save_qmodel(qm: QuantModel, path) -> None:
    Path(path).write_bytes(qmodel_to_bytes(qm))


def load_qmodel(path) -> QuantModel:
    return qmodel_from_bytes(Path(path).read_bytes())


def footprint(qm, runtime_overhead: int = RUNTIME_OVERHEAD_BYTES,
              arena_slack: int = ARENA_SLACK_BYTES) -> tuple[int, int]:
    """Estimated (flash_bytes, ram_bytes) on the target.

    Flash is the serialized model plus runtime code. RAM is the largest pair of
    consecutive activation buffers, a float32 input staging buffer, and slack.
    A float ``MlpModel`` is accepted too, with 4-byte activations.
    """
    dims = qm.layer_dims
    if isinstance(qm, QuantModel):
        blob, act_bytes = qm.blob_bytes, 1
    else:
        blob, act_bytes = len(model_to_bytes(qm)), 4
    widest_pair = max(a + b for a, b in zip(dims[:-1], dims[1:]))
    ram = act_bytes * widest_pair + 4 * dims[0] + arena_slack
    return blob + runtime_overhead, ram
