import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayesfl.data import (
    DeviceDataset,
    chunk_partition,
    gaussian_blobs,
    gen_synthetic,
    gradient_correlation_check,
    load_datasets,
    save_datasets,
)
from bayesfl.errors import InvalidInputError


def test_feature_variance_matches_scale():
    (dev,) = gen_synthetic(K=1, N_k=100, M=300, heterogeneity="homogeneous", a=4.0, seed=5)
    x = dev.X.ravel()
    assert x.size == 30_000
    stderr = math.sqrt(2.0) * 4.0 / math.sqrt(x.size)
    assert abs(x.var() - 4.0) < 3 * stderr
    assert abs(dev.z.var() - 1.0) < 0.5


def test_homogeneous_scale():
    assert all(d.a == 5.0 for d in gen_synthetic(6, 4, 3, "homogeneous", a=5.0, seed=0))


def test_heterogeneous_scales_in_range():
    scales = [d.a for d in gen_synthetic(200, 1, 1, seed=1)]
    assert 0 < min(scales) and max(scales) < 5
    assert len(set(scales)) == 200


def test_default_shape():
    devs = gen_synthetic(K=20, N_k=100, M=300)
    assert len(devs) == 20 and all(d.X.shape == (300, 100) and d.z.shape == (100,) for d in devs)


def test_deterministic_and_prefix_stable():
    a = gen_synthetic(3, 5, 4, seed=7)
    b = gen_synthetic(4, 5, 4, seed=7)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)
        np.testing.assert_array_equal(x.z, y.z)
    c = gen_synthetic(3, 5, 4, seed=8)
    assert not np.array_equal(a[0].X, c[0].X)


@pytest.mark.parametrize("kwargs", [dict(K=0, N_k=1, M=1), dict(K=1, N_k=0, M=1),
                                    dict(K=1, N_k=1, M=1, heterogeneity="mixed")])
def test_gen_synthetic_invalid(kwargs):
    with pytest.raises(InvalidInputError):
        gen_synthetic(**kwargs)


def test_device_dataset_validation():
    with pytest.raises(InvalidInputError):
        DeviceDataset(np.ones((2, 3)), np.ones(2), 1.0)
    with pytest.raises(InvalidInputError):
        DeviceDataset(np.ones((2, 1)), np.ones(1), -1.0)
    with pytest.raises(InvalidInputError):
        DeviceDataset(np.ones((2, 0)), np.ones(0), 1.0)


# ---------------------------------------------------------------- partitioning


def test_two_classes_two_devices():
    labels = np.repeat([0, 1], 10)
    parts = chunk_partition(labels, K=2, rng=np.random.default_rng(3))
    for p in parts:
        assert sorted(set(labels[p])) == [0, 1] and p.size == 10


def test_ten_classes_five_devices():
    labels = np.arange(100) % 10
    parts = chunk_partition(labels, K=5, rng=np.random.default_rng(0))
    for p in parts:
        assert len(set(labels[p])) == 2 and p.size == 4


@given(n_classes=st.integers(2, 6), K=st.integers(1, 6), per_class=st.integers(6, 15),
       seed=st.integers(0, 2**31))
def test_partition_disjoint_and_class_distinct(n_classes, K, per_class, seed):
    labels = np.random.default_rng(seed).permutation(np.repeat(np.arange(n_classes), per_class))
    parts = chunk_partition(labels, K, chunks_per_user=2, rng=np.random.default_rng(seed))
    seen = np.concatenate(parts)
    assert np.unique(seen).size == seen.size
    assert seen.min() >= 0 and seen.max() < labels.size
    for p in parts:
        assert len(set(labels[p])) == 2


def test_partition_infeasible():
    with pytest.raises(InvalidInputError):
        chunk_partition(np.zeros(10, dtype=int), K=2, chunks_per_user=2)
    with pytest.raises(InvalidInputError):
        chunk_partition(np.repeat([0, 1], 2), K=3)


def test_blobs_partition_shapes():
    features, labels = gaussian_blobs()
    assert features.shape == (400, 2) and np.bincount(labels).tolist() == [100] * 4
    parts = chunk_partition(labels, K=4)
    assert all(p.size == 50 for p in parts)


# ---------------------------------------------------------------- gradient correlation


def test_correlation_zero_model():
    rng = np.random.default_rng(0)
    assert gradient_correlation_check(np.eye(3), np.eye(3), np.zeros(3), 1000, rng) < 0.5


def test_correlation_identity_case():
    rng = np.random.default_rng(1)
    dev = gradient_correlation_check(np.eye(3), np.eye(3), np.array([1.0, 0, 0]), 10**6, rng)
    assert dev < 0.05


def test_correlation_swap_symmetry():
    Rk = np.array([[2.0, 0.5], [0.5, 1.0]])
    Rl = np.array([[1.0, -0.3], [-0.3, 0.5]])
    w = np.array([0.7, -1.2])
    a = gradient_correlation_check(Rk, Rl, w, 200_000, np.random.default_rng(4))
    b = gradient_correlation_check(Rl, Rk, w, 200_000, np.random.default_rng(4))
    # same prediction up to transposition, so both directions agree within MC error
    assert a < 0.05 and b < 0.05


def test_correlation_rejects_bad_matrices():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidInputError):
        gradient_correlation_check(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2), np.ones(2), 10, rng)
    with pytest.raises(InvalidInputError):
        gradient_correlation_check(-np.eye(2), np.eye(2), np.ones(2), 10, rng)


# ---------------------------------------------------------------- serialization


def test_save_load_round_trip(tmp_path):
    devs = gen_synthetic(3, 4, 5, seed=2)
    path = tmp_path / "data.bin"
    save_datasets(path, devs)
    back = load_datasets(path)
    for x, y in zip(devs, back):
        np.testing.assert_array_equal(x.X, y.X)
        np.testing.assert_array_equal(x.z, y.z)
        assert x.a == y.a


def test_load_rejects_truncated(tmp_path):
    path = tmp_path / "data.bin"
    save_datasets(path, gen_synthetic(1, 2, 2))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(InvalidInputError):
        load_datasets(path)
