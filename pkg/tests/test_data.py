import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerflow.data import (
    AgentData,
    IDXFormatError,
    LabeledDataset,
    gaussian_blobs,
    half_moons,
    load_mnist_idx,
    split_iid,
    stack_targets,
    write_idx,
)


@pytest.fixture
def tiny_mnist(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(10, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0, 9, 1, 0, 3, 1], dtype=np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lbl", labels)
    return tmp_path / "img", tmp_path / "lbl", images, labels


def test_idx_round_trip_keeps_zeros_and_ones(tiny_mnist):
    img, lbl, images, labels = tiny_mnist
    ds = load_mnist_idx(img, lbl)
    keep = (labels == 0) | (labels == 1)
    assert len(ds) == keep.sum() == 7
    assert ds.N == 784 and ds.M == 1
    assert np.array_equal(ds.inputs, images[keep].reshape(7, 784) / 255.0)
    assert np.array_equal(ds.targets[:, 0], labels[keep].astype(float))
    assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0


def test_idx_header_bytes(tmp_path):
    write_idx(tmp_path / "l", np.array([1, 0], dtype=np.uint8))
    raw = (tmp_path / "l").read_bytes()
    assert raw == bytes([0, 0, 8, 1, 0, 0, 0, 2, 1, 0])


def test_bad_magic_reports_offset_and_values(tiny_mnist):
    img, lbl, *_ = tiny_mnist
    with pytest.raises(IDXFormatError, match=r"offset 0.*0x00000803.*0x00000801"):
        load_mnist_idx(lbl, lbl)


def test_truncated_payload(tiny_mnist):
    img, lbl, *_ = tiny_mnist
    raw = img.read_bytes()
    img.write_bytes(raw[:-100])
    with pytest.raises(IDXFormatError, match="truncated"):
        load_mnist_idx(img, lbl)


def test_count_mismatch(tiny_mnist, tmp_path):
    img, _, _, labels = tiny_mnist
    write_idx(tmp_path / "short", labels[:5])
    with pytest.raises(IDXFormatError, match="10 images vs 5 labels"):
        load_mnist_idx(img, tmp_path / "short")


MNIST_DIR = Path(os.environ.get("MNIST_DIR", "data/mnist"))


@pytest.mark.skipif(
    not (MNIST_DIR / "train-images-idx3-ubyte").is_file(), reason="MNIST training files not present"
)
def test_real_mnist_zero_one_count():
    ds = load_mnist_idx(MNIST_DIR / "train-images-idx3-ubyte", MNIST_DIR / "train-labels-idx1-ubyte")
    assert len(ds) == 12665


def test_half_moons_shape_labels_and_determinism():
    a = half_moons(201, 0.1, seed=4)
    b = half_moons(201, 0.1, seed=4)
    assert a.inputs.shape == (201, 2) and a.targets.shape == (201, 1)
    assert np.array_equal(a.inputs, b.inputs)
    assert a.targets[:100].sum() == 0 and a.targets[100:].sum() == 101
    assert not np.array_equal(a.inputs, half_moons(201, 0.1, seed=5).inputs)


def test_noiseless_half_moons_lie_on_arcs():
    ds = half_moons(400, 0.0, seed=1)
    upper, lower = ds.inputs[:200], ds.inputs[200:]
    assert np.allclose(np.hypot(*upper.T), 1.0, atol=1e-12)
    assert upper[:, 1].min() >= 0.0
    assert np.allclose(np.hypot(lower[:, 0] - 1.0, lower[:, 1] - 0.5), 1.0, atol=1e-12)
    assert lower[:, 1].max() <= 0.5
    # the two moons interleave but never touch without noise
    gap = np.min(np.linalg.norm(upper[:, None] - lower[None], axis=-1))
    assert gap > 0.05


def test_gaussian_blobs_balanced():
    ds = gaussian_blobs(100, 784, seed=0)
    assert ds.inputs.shape == (100, 784)
    assert ds.targets.sum() == 50


@given(st.integers(1, 6), st.integers(1, 10), st.integers(0, 1000))
@settings(max_examples=40)
def test_split_shapes_and_disjointness(Q, D, seed):
    src = LabeledDataset(np.arange(60, dtype=float)[:, None], np.zeros(60))
    data = split_iid(src, Q, D, seed)
    assert data.inputs.shape == (Q, D, 1)
    used = data.inputs.reshape(-1)
    assert len(np.unique(used)) == Q * D  # Q * D <= 60 here, so shards are disjoint
    assert np.array_equal(split_iid(src, Q, D, seed).inputs, data.inputs)


def test_split_with_replacement_when_pool_small():
    src = LabeledDataset(np.arange(5, dtype=float)[:, None], np.zeros(5))
    data = split_iid(src, 3, 4, seed=0)
    assert data.inputs.shape == (3, 4, 1)
    assert set(np.unique(data.inputs)) <= set(range(5))


def test_stack_targets_order():
    Y = np.arange(12, dtype=float).reshape(2, 3, 2)
    data = AgentData(np.zeros((2, 3, 1)), Y)
    assert np.array_equal(stack_targets(data), np.arange(12, dtype=float))


def test_dataset_rejects_nan():
    with pytest.raises(ValueError, match="non-finite"):
        LabeledDataset(np.array([[np.nan]]), np.array([0.0]))
