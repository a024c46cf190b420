"""Dataset loader format handling, batching, and synthetic fixtures."""

import os

import numpy as np
import pytest

from pbnn.binarize import keyed_rng
from pbnn.data import (
    Dataset,
    batches,
    cifar10_normalization,
    load_cifar10,
    subset,
    synthetic_dataset,
)
from pbnn.errors import DataError
from tests.support import write_cifar_dir


class TestLoader:
    def test_round_trip_counts_and_labels(self, tmp_path):
        train_pix, train_lbl, test_pix, test_lbl = write_cifar_dir(tmp_path, n_per_batch=40)
        train, test = load_cifar10(str(tmp_path))
        assert len(train) == 200 and train.split == "train"
        assert len(test) == 40 and test.split == "test"
        np.testing.assert_array_equal(train.labels, train_lbl)
        np.testing.assert_array_equal(test.labels, test_lbl)

    def test_normalization_arithmetic(self, tmp_path):
        train_pix, _, _, _ = write_cifar_dir(tmp_path, n_per_batch=8)
        train, _ = load_cifar10(str(tmp_path))
        norm = cifar10_normalization()
        # red-channel pixel byte 125 -> (125/255 - 0.4914) / 0.2023
        want = (125 / 255 - norm.means[0]) / norm.stds[0]
        assert want == pytest.approx(-0.00597, abs=5e-5)
        red = train.images[:, 0][train_pix[:, 0] == 125]
        assert red.size > 0
        np.testing.assert_allclose(red, want, atol=1e-6)

    def test_all_channels_normalized(self, tmp_path):
        pix, _, _, _ = write_cifar_dir(tmp_path, n_per_batch=8)
        train, _ = load_cifar10(str(tmp_path))
        norm = cifar10_normalization()
        for c in range(3):
            want = (pix[:, c] / 255.0 - norm.means[c]) / norm.stds[c]
            np.testing.assert_allclose(train.images[:, c], want, atol=1e-6)

    def test_missing_file_names_it(self, tmp_path):
        write_cifar_dir(tmp_path, n_per_batch=4)
        os.remove(tmp_path / "data_batch_3.bin")
        with pytest.raises(DataError, match="data_batch_3.bin"):
            load_cifar10(str(tmp_path))

    def test_truncated_file_names_it(self, tmp_path):
        write_cifar_dir(tmp_path, n_per_batch=4)
        with open(tmp_path / "test_batch.bin", "wb") as f:
            f.write(b"\x00" * 3072)
        with pytest.raises(DataError, match="test_batch.bin"):
            load_cifar10(str(tmp_path))

    def test_corrupt_label_detected(self, tmp_path):
        write_cifar_dir(tmp_path, n_per_batch=4)
        path = tmp_path / "data_batch_1.bin"
        raw = bytearray(path.read_bytes())
        raw[0] = 12  # label byte out of range
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="data_batch_1.bin"):
            load_cifar10(str(tmp_path))


def tiny_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.normal(size=(n, 3, 32, 32)).astype(np.float32),
        rng.integers(0, 10, size=n).astype(np.int64),
    )


class TestBatches:
    def test_exact_cover_without_remainder(self):
        ds = tiny_dataset(16)
        got = list(batches(ds, 8, keyed_rng(0, 1, 0)))
        assert len(got) == 2
        seen = np.concatenate([lbl for _, lbl in got])
        assert seen.shape == (16,)

    def test_partial_batch_dropped(self):
        ds = tiny_dataset(17)
        got = list(batches(ds, 8, keyed_rng(0, 1, 0)))
        assert len(got) == 2
        assert sum(x.shape[0] for x, _ in got) == 16

    def test_permutation_covers_everything_once(self):
        ds = tiny_dataset(24)
        ds.labels[:] = np.arange(24)  # label doubles as identity
        got = list(batches(ds, 8, keyed_rng(3, 1, 5)))
        seen = np.sort(np.concatenate([lbl for _, lbl in got]))
        np.testing.assert_array_equal(seen, np.arange(24))

    def test_same_seed_same_permutation(self):
        ds = tiny_dataset(32)
        a = [lbl for _, lbl in batches(ds, 8, keyed_rng(1, 1, 2))]
        b = [lbl for _, lbl in batches(ds, 8, keyed_rng(1, 1, 2))]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_different_epochs_differ(self):
        ds = tiny_dataset(64)
        a = np.concatenate([lbl for _, lbl in batches(ds, 8, keyed_rng(1, 1, 0))])
        b = np.concatenate([lbl for _, lbl in batches(ds, 8, keyed_rng(1, 1, 1))])
        assert (a != b).any()

    def test_batch_size_validated(self):
        with pytest.raises(ValueError):
            list(batches(tiny_dataset(8), 0, keyed_rng(0, 1, 0)))


class TestSynthetic:
    def test_same_seed_byte_identical(self):
        a = synthetic_dataset(64, seed=5)
        b = synthetic_dataset(64, seed=5)
        assert a.images.tobytes() == b.images.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_prefix_stability(self):
        small = synthetic_dataset(32, seed=5)
        big = synthetic_dataset(64, seed=5)
        np.testing.assert_array_equal(big.images[:32], small.images)

    def test_labels_interleaved_and_balanced(self):
        ds = synthetic_dataset(40, classes=10, seed=0)
        np.testing.assert_array_equal(ds.labels[:10], np.arange(10))
        assert (np.bincount(ds.labels, minlength=10) == 4).all()

    def test_needs_at_least_one_per_class(self):
        with pytest.raises(DataError):
            synthetic_dataset(5, classes=10)

    def test_subset_is_deterministic_prefix(self):
        ds = synthetic_dataset(50, seed=1)
        sub = subset(ds, 20)
        np.testing.assert_array_equal(sub.images, ds.images[:20])
        with pytest.raises(DataError):
            subset(ds, 100)

    def test_zero_snr_has_no_class_signal(self):
        ds = synthetic_dataset(200, seed=2, snr=0.0)
        means = np.array([ds.images[ds.labels == c].mean() for c in range(10)])
        assert np.abs(means).max() < 0.05


@pytest.mark.skipif(
    not os.environ.get("PBNN_CIFAR10_DIR"),
    reason="set PBNN_CIFAR10_DIR to the CIFAR-10 binary directory to run",
)
class TestRealCifarStatistics:
    def test_full_train_split_is_standardized(self):
        train, _ = load_cifar10(os.environ["PBNN_CIFAR10_DIR"])
        assert len(train) == 50_000
        for c in range(3):
            assert abs(float(train.images[:, c].mean())) < 0.02
            assert abs(float(train.images[:, c].std()) - 1.0) < 0.05
