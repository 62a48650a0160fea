"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are written
straight to the terminal, so they show up even when output capture is on.
"""
import time

import numpy as np
import pytest

from tinyae import bench, features, nn, quant, selection
from tinyae.bench import Pipeline
from tinyae.selection import FeatureMatrix

import oracles
from conftest import TIMING_FILES, tree_bytes

FS = 1_000_000.0


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
        assert ok, f"criterion {number}: {detail}"
    return report


def test_c01_parameter_counts(verdict):
    want = {(1000, 64, 32): 66243, (8, 64, 128): 9283, (5, 96, 64): 6979, (6, 64, 96): 6979}
    got = {dims: nn.build(*dims).param_count for dims in want}
    verdict(1, "parameter counts", got == want, str(list(got.values())))


def test_c02_model_size_law(verdict):
    want = {(1000, 64, 32): 258.76, (5, 96, 64): 27.26, (8, 64, 128): 36.26}
    rows = []
    ok = True
    for dims, kb in want.items():
        model = nn.build(*dims)
        payload = len(nn.model_to_bytes(model)) - nn.header_size(len(model.layer_dims))
        size = round(payload / 1024, 2)
        ok &= payload == 4 * model.param_count == model.float_size_bytes and size == kb
        rows.append(f"{payload}B={size}KB")
    verdict(2, "model size law", ok, ", ".join(rows))


def test_c03_energy_model(verdict):
    rows = [(6656, 0.073), (472704, 5.19), (345036, 3.79)]
    errs = [abs(bench.energy(t) - e) / e for t, e in rows]
    verdict(3, "energy model", max(errs) <= 0.005, f"max rel err {max(errs):.4%}")


def _random_signal(rng):
    n = int(rng.integers(64, 1001))
    kind = rng.integers(0, 3)
    t = np.arange(n)
    if kind == 0:
        x = rng.normal(size=n)
    elif kind == 1:
        x = np.sin(2 * np.pi * rng.uniform(0.01, 0.4) * t) * np.exp(-t / rng.uniform(20, 400))
    else:
        x = rng.normal(size=n) * np.exp(-t / 100.0) + rng.uniform(-1, 1)
    return x * 10.0 ** rng.uniform(-3, 3)


def test_c04_feature_oracle_suite(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = []
    for i in range(100):
        x = _random_signal(rng)
        got = features.extract_all(x, FS).as_dict()
        ref = oracles.oracle_features(x, FS)
        mismatches += [(i, n) for n in features.FEATURE_NAMES if not oracles.close(got[n], ref[n])]
    parseval_worst = 0.0
    dft_ok = True
    for n in (4, 8, 16, 32, 64, 128, 256):
        for seed in range(5):
            x = np.random.default_rng(seed * 1000 + n).normal(size=n)
            spec = features.fft(x)
            dft_ok &= np.allclose(spec, oracles.naive_dft(x), rtol=0, atol=1e-9 * np.sqrt(n))
            energy = float(np.sum(x * x))
            parseval_worst = max(parseval_worst, abs(float(np.sum(np.abs(spec) ** 2)) / n - energy) / energy)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and dft_ok and parseval_worst <= 1e-9 and elapsed < 60
    verdict(4, "feature oracle suite", ok,
            f"{len(mismatches)} mismatches, parseval {parseval_worst:.1e}, {elapsed:.1f}s")


def test_c05_desk_scale_accuracy(trained, verdict):
    acc = {}
    for name, t in trained.items():
        te = t.idx["test"]
        acc[name] = nn.evaluate(t.model, t.X[te], t.y[te]).accuracy
    seconds = sum(t.train_seconds for t in trained.values())
    ok = acc["raw"] >= 0.95 and acc["time8"] >= 0.93 and acc["freq5"] >= 0.93 and seconds < 300
    detail = " ".join(f"{k}={v:.3f}" for k, v in acc.items())
    verdict(5, "desk-scale accuracy", ok, f"{detail}, training {seconds:.1f}s")


def test_c06_quantization_fidelity(trained, verdict):
    agree = {}
    total = bad = 0
    for name, t in trained.items():
        te = t.idx["test"]
        agree[name] = float(np.mean(t.qmodel.predict(t.X[te]) == t.model.predict(t.X[te])))
        for w, qw, p in zip(t.model.weights, t.qmodel.weights, t.qmodel.weight_params):
            err = np.abs(p.dequantize(qw) - w)
            total += w.size
            # float32 scale storage leaves a relative hair above the exact half step
            bad += int(np.sum(err > p.scale / 2 * (1 + 1e-6)))
    ok = min(agree.values()) >= 0.98 and bad == 0
    detail = " ".join(f"{k}={v:.3f}" for k, v in agree.items())
    verdict(6, "quantization fidelity", ok, f"agreement {detail}, {total - bad}/{total} weights within scale/2")


def test_c07_latency_structure(trained, synth_signals, verdict):
    pipes = [Pipeline(name, t.qmodel, t.scaler, t.feature_names) for name, t in trained.items()]
    test_signals = [synth_signals[i] for i in trained["raw"].idx["test"][:50]]
    timings = dict(zip(trained, bench.time_pipelines(pipes, test_signals, reps=300)))
    (_, raw_inf), (t8_ext, _), (f5_ext, f5_inf) = timings["raw"], timings["time8"], timings["freq5"]
    f5_total = f5_ext.median_us + f5_inf.median_us
    ok = (f5_ext.median_us > f5_inf.median_us and t8_ext.median_us < f5_ext.median_us
          and raw_inf.median_us < f5_total)
    verdict(7, "latency structure", ok,
            f"freq5 ext {f5_ext.median_us:.0f}us inf {f5_inf.median_us:.0f}us, "
            f"time8 ext {t8_ext.median_us:.0f}us, raw total {raw_inf.median_us:.0f}us")


def test_c08_gradient_correctness(verdict):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        while True:
            # central differences are undefined where a ReLU input sits at 0
            d, h1, h2 = (int(v) for v in rng.integers(1, 9, size=3))
            model = nn.build(d, h1, h2, seed=seed)
            for b in model.biases:
                b[:] = rng.normal(scale=0.5, size=b.size)
            X = rng.normal(size=(6, d))
            _, pre = nn._forward_pass(model, X)
            if min(np.abs(z).min() for z in pre[:-1]) > 1e-3:
                break
        worst = max(worst, nn.gradient_check(model, X, rng.integers(0, 3, size=6)))
    verdict(8, "gradient correctness", worst < 1e-4, f"max rel err {worst:.2e} over 20 models")


def _planted(seed, n=600, d=12):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(3), n // 3)
    X = rng.normal(size=(n, d))
    X[:, 2] = (y == 1) + 0.1 * rng.normal(size=n)
    X[:, 5] = (y == 2) + 0.1 * rng.normal(size=n)
    return FeatureMatrix(X, y, [f"f{i}" for i in range(d)])


def test_c09_selection_sanity(verdict):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, size=10000)
    mi = selection.mutual_info(rng.normal(size=10000), y)
    hits = 0
    nested = True
    for seed in range(20):
        res = selection.rfe(_planted(seed), max_size=10, seed=seed)
        hits += sorted(res[1].selected) == ["f2", "f5"]
        sets = [set(r.selected) for r in res]
        nested &= [len(s) for s in sets] == list(range(1, 11)) and all(a < b for a, b in zip(sets, sets[1:]))
    ok = mi < 0.01 and hits >= 19 and nested
    verdict(9, "selection sanity", ok, f"noise MI {mi:.4f} nats, planted pair {hits}/20, nested {nested}")


def test_c10_determinism(small_run, small_rerun, verdict):
    a, b = tree_bytes(small_run), tree_bytes(small_rerun)
    differing = sorted(k for k in a.keys() & b.keys() if a[k] != b[k])
    checked = [k for k in a if k.startswith(("models/", "eval/", "selection/"))]
    ok = a.keys() == b.keys() and set(differing) <= TIMING_FILES and checked
    verdict(10, "determinism", bool(ok),
            f"{len(a)} files, {len(checked)} model/eval/ranking files identical, timing-only diffs {differing}")
