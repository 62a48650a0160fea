import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinyae import dataset, features, selection
from tinyae.dataset import DamageClass, DatasetError, Signal


def _write_rows(path, rows, header=None):
    lines = [",".join(header)] if header else []
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


class TestLoad:
    def test_csv_labels_map_to_classes(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [list(rng.normal(size=1000)) + [label] for label in (0, 1, 2)]
        _write_rows(tmp_path / "d.csv", rows)
        sigs = dataset.load_dataset(tmp_path / "d.csv", "csv")
        assert [s.label for s in sigs] == [DamageClass.TENSILE, DamageClass.SHEAR, DamageClass.MIXED]
        assert all(len(s) == 1000 and s.sample_rate == 500e3 for s in sigs)

    def test_header_is_detected(self, tmp_path):
        rows = [[0.5] * 1000 + [1]]
        _write_rows(tmp_path / "d.csv", rows, header=[f"s{i}" for i in range(1000)] + ["label"])
        sigs = dataset.load_dataset(tmp_path / "d.csv")
        assert len(sigs) == 1 and sigs[0].label == DamageClass.SHEAR

    def test_nan_row_is_reported(self, tmp_path):
        rows = [[0.0] * 1000 + [0], [0.0] * 999 + ["NaN", 1]]
        _write_rows(tmp_path / "d.csv", rows)
        with pytest.raises(DatasetError, match="row 1"):
            dataset.load_dataset(tmp_path / "d.csv")

    def test_unknown_label_is_reported(self, tmp_path):
        _write_rows(tmp_path / "d.csv", [[0.0] * 1000 + [7]])
        with pytest.raises(DatasetError, match="'7'"):
            dataset.load_dataset(tmp_path / "d.csv")

    def test_wrong_length_rejected(self, tmp_path):
        _write_rows(tmp_path / "d.csv", [[0.0] * 10 + [0]])
        with pytest.raises(DatasetError, match="row 0"):
            dataset.load_dataset(tmp_path / "d.csv")

    def test_ten_thousand_sample_events_get_5mhz_rate(self, tmp_path):
        _write_rows(tmp_path / "d.csv", [[0.1] * 10000 + [2]])
        (sig,) = dataset.load_dataset(tmp_path / "d.csv")
        assert sig.sample_rate == pytest.approx(5e6)

    def test_raw_binary_round_trip(self, tmp_path):
        sigs = dataset.synth_dataset(4, seed=1)
        dataset.save_raw(sigs, tmp_path / "d.bin")
        assert (tmp_path / "d.bin").stat().st_size == len(sigs) * (4 * 1000 + 1)
        back = dataset.load_dataset(tmp_path / "d.bin", "raw-binary")
        assert [s.label for s in back] == [s.label for s in sigs]
        np.testing.assert_array_equal(back[5].samples, sigs[5].samples.astype(np.float32))

    def test_raw_binary_truncated(self, tmp_path):
        (tmp_path / "d.bin").write_bytes(b"\0" * 4005)
        with pytest.raises(DatasetError, match="truncated"):
            dataset.load_dataset(tmp_path / "d.bin", "raw")

    def test_full_size_dataset_counts(self, tmp_path):
        # 15 000 events, 5 000 per class, as in the public dataset.
        labels = np.repeat(np.arange(3, dtype=np.uint8), 5000)
        records = np.zeros(labels.size, dtype=[("samples", "<f4", (1000,)), ("label", "u1")])
        records["label"] = labels
        (tmp_path / "big.bin").write_bytes(records.tobytes())
        sigs = dataset.load_dataset(tmp_path / "big.bin", "raw")
        assert len(sigs) == 15000
        assert np.bincount([int(s.label) for s in sigs]).tolist() == [5000, 5000, 5000]

    def test_csv_round_trip_is_exact(self, tmp_path):
        sigs = dataset.synth_dataset(2, seed=3)
        dataset.save_csv(sigs, tmp_path / "d.csv")
        back = dataset.load_dataset(tmp_path / "d.csv")
        for a, b in zip(sigs, back):
            np.testing.assert_array_equal(a.samples, b.samples)


class TestSignal:
    def test_rejects_non_finite(self):
        with pytest.raises(DatasetError):
            Signal(np.array([0.0, np.inf]), 1.0, 0)

    def test_rejects_empty(self):
        with pytest.raises(DatasetError):
            Signal(np.array([]), 1.0, 0)

    def test_class_encoding(self):
        assert [int(c) for c in DamageClass] == [0, 1, 2]
        assert [c.name for c in DamageClass] == ["TENSILE", "SHEAR", "MIXED"]


class TestDownsample:
    def test_ten_to_one(self):
        ramp = Signal(np.arange(10000, dtype=float), 5e6, 0)
        out = dataset.downsample(ramp, 1000)
        assert len(out) == 1000
        np.testing.assert_array_equal(out.samples, 10 * np.arange(1000))
        assert out.sample_rate == pytest.approx(5e5)

    def test_identity(self):
        sig = dataset.synth_generate(DamageClass.SHEAR, 1, seed=0)[0]
        assert dataset.downsample(sig, 1000) is sig

    def test_non_divisible(self):
        with pytest.raises(DatasetError):
            dataset.downsample(Signal(np.zeros(1500), 1.0, 0), 1000)

    def test_mean_pooling_mode(self):
        sig = Signal(np.arange(20, dtype=float), 1.0, 0)
        out = dataset.downsample(sig, 10, mode="mean")
        np.testing.assert_allclose(out.samples, np.arange(10) * 2 + 0.5)

    @given(st.integers(1, 20), st.integers(1, 50), st.integers(0, 2 ** 31))
    def test_outputs_are_input_samples_at_stride(self, factor, target, seed):
        x = np.random.default_rng(seed).normal(size=factor * target)
        out = dataset.downsample(Signal(x, 1.0, 0), target)
        np.testing.assert_array_equal(out.samples, x[np.arange(target) * factor])


class TestSplit:
    def test_full_dataset_sizes(self):
        sigs = [Signal(np.zeros(1), 1.0, c) for c in range(3) for _ in range(5000)]
        sp = dataset.stratified_split(sigs, (0.70, 0.15, 0.15), seed=0)
        assert (len(sp.train), len(sp.validation), len(sp.test)) == (10500, 2250, 2250)

    def test_per_class_counts(self):
        labels = np.repeat([0, 1, 2], 100)
        idx = dataset.split_indices(labels, seed=4)
        for part, want in (("train", 70), ("validation", 15), ("test", 15)):
            assert np.bincount(labels[idx[part]]).tolist() == [want] * 3

    def test_deterministic_three_way(self):
        sigs = [Signal(np.array([float(i)]), 1.0, 0) for i in range(3)]
        a = dataset.stratified_split(sigs, (1 / 3, 1 / 3, 1 / 3), seed=11)
        b = dataset.stratified_split(sigs, (1 / 3, 1 / 3, 1 / 3), seed=11)
        assert (len(a.train), len(a.validation), len(a.test)) == (1, 1, 1)
        for part in ("train", "validation", "test"):
            assert np.array_equal(a.indices[part], b.indices[part])

    def test_remainder_goes_to_train(self):
        idx = dataset.split_indices(np.zeros(11, dtype=int), seed=0)
        assert (idx["train"].size, idx["validation"].size, idx["test"].size) == (9, 1, 1)

    def test_empty_rejected(self):
        with pytest.raises(DatasetError):
            dataset.stratified_split([], seed=0)

    def test_bad_ratios_rejected(self):
        with pytest.raises(DatasetError):
            dataset.split_indices([0, 1], (0.5, 0.5, 0.5))

    @settings(max_examples=30)
    @given(st.lists(st.integers(0, 2), min_size=1, max_size=200), st.integers(0, 1000))
    def test_partition_property(self, labels, seed):
        idx = dataset.split_indices(labels, seed=seed)
        merged = np.concatenate([idx["train"], idx["validation"], idx["test"]])
        assert sorted(merged.tolist()) == list(range(len(labels)))
        again = dataset.split_indices(labels, seed=seed)
        assert all(np.array_equal(idx[k], again[k]) for k in idx)


class TestSynth:
    def test_shape_and_finite(self):
        for cls in DamageClass:
            sigs = dataset.synth_generate(cls, 10, seed=2)
            assert len(sigs) == 10
            assert all(len(s) == 1000 and np.all(np.isfinite(s.samples)) and s.label == cls for s in sigs)

    def test_bitwise_deterministic(self):
        a = dataset.synth_generate(DamageClass.MIXED, 5, seed=9)
        b = dataset.synth_generate(DamageClass.MIXED, 5, seed=9)
        assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))

    def test_seed_changes_output(self):
        a = dataset.synth_generate(DamageClass.MIXED, 1, seed=1)[0]
        b = dataset.synth_generate(DamageClass.MIXED, 1, seed=2)[0]
        assert not np.array_equal(a.samples, b.samples)

    def test_n_must_be_positive(self):
        with pytest.raises(DatasetError):
            dataset.synth_generate(DamageClass.SHEAR, 0, seed=0)

    def test_class_profiles_do_not_overlap(self):
        profiles = list(dataset.DEFAULT_PROFILES.values())
        for attr in ("freq_hz", "decay_s", "rise_s"):
            ranges = sorted(getattr(p, attr) for p in profiles)
            assert all(lo_next > hi for (_, hi), (lo_next, _) in zip(ranges, ranges[1:]))

    def test_config_from_dict(self):
        cfg = dataset.SynthConfig.from_dict({"noise_std": 0.1, "profiles": {
            "shear": {"freq_hz": [1e3, 2e3], "decay_s": [1e-4, 2e-4], "rise_s": [1e-5, 2e-5]}}})
        assert cfg.noise_std == 0.1
        assert cfg.profiles[DamageClass.SHEAR].freq_hz == (1e3, 2e3)

    def test_tree_separability(self, synth_signals, split_idx, feature_table):
        X, y = feature_table
        tr, va = split_idx["train"], split_idx["validation"]
        tree = selection.train_tree(selection.FeatureMatrix(X[tr], y[tr], list(features.FEATURE_NAMES)))
        assert np.mean(tree.predict(X[va]) == y[va]) >= 0.95
