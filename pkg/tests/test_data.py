import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import DATA_DIR
from spikelab.data import (Dataset, batches, class_pattern, load_fashion_mnist, load_idx, subset,
                           synthetic_dataset, write_idx)
from spikelab.errors import FormatError, ParameterError


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


def test_load_images(tmp_path):
    pix = [i % 256 for i in range(7840)]
    (tmp_path / "img").write_bytes(idx_bytes(0x803, (10, 28, 28), pix))
    x = load_idx(tmp_path / "img")
    assert x.shape == (10, 28, 28)
    assert x.dtype == np.float64
    assert x.max() == 1.0 and x.min() == 0.0
    assert x.ravel()[3] == 3 / 255


def test_load_labels_and_gzip(tmp_path):
    raw = idx_bytes(0x801, (10,), range(10))
    (tmp_path / "lab").write_bytes(raw)
    (tmp_path / "lab.gz").write_bytes(gzip.compress(raw))
    for name in ("lab", "lab.gz"):
        y = load_idx(tmp_path / name)
        assert y.tolist() == list(range(10))


def test_bad_magic_and_truncation(tmp_path):
    (tmp_path / "bad").write_bytes(idx_bytes(0x802, (10,), range(10)))
    with pytest.raises(FormatError, match="0x00000802"):
        load_idx(tmp_path / "bad")
    (tmp_path / "short").write_bytes(idx_bytes(0x803, (10, 28, 28), [0] * 7839))
    with pytest.raises(FormatError, match="expected 7840 bytes, got 7839"):
        load_idx(tmp_path / "short")


@given(labels=st.lists(st.integers(0, 9), min_size=1, max_size=50))
def test_label_file_byte_roundtrip(tmp_path_factory, labels):
    d = tmp_path_factory.mktemp("idx")
    raw = idx_bytes(0x801, (len(labels),), labels)
    (d / "a").write_bytes(raw)
    write_idx(d / "b", load_idx(d / "a"), labels=True)
    assert (d / "b").read_bytes() == raw


def test_image_roundtrip(tmp_path):
    x = np.random.default_rng(0).integers(0, 256, (3, 28, 28)) / 255.0
    write_idx(tmp_path / "x.gz", x, labels=False)
    assert np.array_equal(load_idx(tmp_path / "x.gz"), x)


def test_dataset_validation():
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 1, 28, 28)), np.zeros(3))
    with pytest.raises(ParameterError):
        Dataset(np.full((1, 1, 28, 28), 2.0), np.zeros(1))
    with pytest.raises(ParameterError):
        Dataset(np.zeros((1, 1, 28, 28)), np.array([10]))


# ---- subsets and batches ------------------------------------------------------

def test_subset_identity_and_stratification():
    ds = synthetic_dataset(200, 0)
    same = subset(ds, 200, 3)
    assert np.array_equal(same.images, ds.images) and np.array_equal(same.labels, ds.labels)
    sub = subset(ds, 100, 3)
    assert np.bincount(sub.labels, minlength=10).tolist() == [10] * 10
    assert np.array_equal(subset(ds, 100, 3).images, sub.images)
    assert not np.array_equal(subset(ds, 100, 4).images, sub.images)
    with pytest.raises(ParameterError):
        subset(ds, 201, 0)


@given(n=st.integers(0, 150), seed=st.integers(0, 2**32 - 1))
def test_subset_quota_rule(n, seed):
    ds = synthetic_dataset(150, 1)
    counts = np.bincount(subset(ds, n, seed).labels, minlength=10)
    base, extra = divmod(n, 10)
    assert counts.tolist() == [base + (c < extra) for c in range(10)]


def test_batches():
    b = batches(10, 4, 0, 0)
    assert [len(x) for x in b] == [4, 4, 2]
    assert sorted(np.concatenate(b).tolist()) == list(range(10))
    assert all(np.array_equal(x, y) for x, y in zip(b, batches(10, 4, 0, 0)))
    assert not np.array_equal(np.concatenate(b), np.concatenate(batches(10, 4, 0, 1)))
    one = batches(10, 64, 0, 0)
    assert len(one) == 1 and sorted(one[0].tolist()) == list(range(10))
    with pytest.raises(ParameterError):
        batches(10, 0, 0, 0)


# ---- synthetic data -------------------------------------------------------------

def test_synthetic_noise_free_classes_identical():
    ds = synthetic_dataset(30, 0, noise_std=0.0)
    for c in range(10):
        imgs = ds.images[ds.labels == c]
        assert all(np.array_equal(imgs[0], im) for im in imgs)
        assert np.array_equal(imgs[0, 0], class_pattern(c))


@given(seed=st.integers(0, 2**32 - 1), std=st.floats(0, 1))
def test_synthetic_pixels_in_range(seed, std):
    ds = synthetic_dataset(20, seed, noise_std=std)
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_synthetic_nearest_centroid_is_perfect():
    train = synthetic_dataset(100, 0)
    test = synthetic_dataset(100, 1)
    cents = np.stack([train.images[train.labels == c].mean(0).ravel() for c in range(10)])
    d = ((test.images.reshape(100, -1)[:, None, :] - cents[None]) ** 2).sum(-1)
    assert np.mean(d.argmin(1) == test.labels) == 1.0


@pytest.mark.skipif(not DATA_DIR.is_dir(), reason=f"FashionMNIST not found at {DATA_DIR}")
def test_fashion_mnist_files():
    train, test = load_fashion_mnist(DATA_DIR)
    assert train.images.shape == (60000, 1, 28, 28)
    assert test.images.shape == (10000, 1, 28, 28)
    assert np.bincount(test.labels).tolist() == [1000] * 10


def test_missing_dataset_dir(tmp_path):
    with pytest.raises(FileNotFoundError, match="does not exist"):
        load_fashion_mnist(tmp_path / "nope")
    with pytest.raises(FileNotFoundError, match="missing"):
        load_fashion_mnist(tmp_path)
