import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clforge import data, mnist, prng
from clforge.errors import BadMagic, DimensionTooSmall, NotEnoughSamples, TruncatedFile


def test_standard_means_d4():
    mu_p, mu_m = data.standard_means(4, 1)
    np.testing.assert_array_equal(mu_p, np.array([1, 1, 0, 0]) / 2.0)
    np.testing.assert_array_equal(mu_m, np.array([1, -1, 0, 0]) / 2.0)


def test_standard_means_last_pair():
    mu_p, mu_m = data.standard_means(50, 25)
    assert set(np.flatnonzero(mu_p)) == {48, 49}
    assert set(np.flatnonzero(mu_m)) == {48, 49}


@given(st.integers(1, 40).flatmap(lambda k: st.tuples(st.just(k), st.integers(2 * k, 100))))
def test_standard_means_orthogonal(kd):
    k, d = kd
    mu_p, mu_m = data.standard_means(d, k)
    assert abs(mu_p @ mu_m) <= 1e-12
    assert abs(np.linalg.norm(mu_p) - math.sqrt(2 / d)) < 1e-12


def test_standard_means_custom_norm():
    mu_p, mu_m = data.standard_means(50, 3, norm=1 / math.sqrt(50))
    assert np.linalg.norm(mu_p) == pytest.approx(1 / math.sqrt(50), abs=1e-15)
    assert np.linalg.norm(mu_m) == pytest.approx(1 / math.sqrt(50), abs=1e-15)


def test_dimension_too_small():
    with pytest.raises(DimensionTooSmall):
        data.standard_means(5, 3)
    with pytest.raises(DimensionTooSmall):
        data.build_stream(5, 3, 10, 10, 0.0, prng.derive(0, "s"))


def test_zero_noise_hits_centers():
    spec = data.task_spec(10, 2, sigma=0.0)
    ds = data.sample_xor(spec, 500, prng.derive(1, "xor"))
    for x, y in zip(ds.X, ds.y):
        mu = spec.mu_plus if y > 0 else spec.mu_minus
        assert min(np.linalg.norm(x - mu), np.linalg.norm(x + mu)) == 0.0


def test_label_balance():
    spec = data.task_spec(20, 1, sigma=0.1 / math.sqrt(20))
    ds = data.sample_xor(spec, 10**5, prng.derive(2, "balance"))
    assert abs(ds.y.mean()) <= 0.02


def test_class_conditional_second_moment():
    d = 20
    sigma = 0.1 / math.sqrt(d)
    spec = data.task_spec(d, 1, sigma)
    ds = data.sample_xor(spec, 10**5, prng.derive(3, "moment"))
    u = spec.mu_plus / np.linalg.norm(spec.mu_plus)
    proj2 = (ds.X[ds.y > 0] @ u) ** 2
    expected = np.linalg.norm(spec.mu_plus) ** 2 + sigma**2
    se = proj2.std(ddof=1) / math.sqrt(proj2.size)
    assert abs(proj2.mean() - expected) <= 3 * se


def test_stream_means_pairwise_orthogonal():
    s = data.build_stream(50, 3, 20, 20, 0.01, prng.derive(0, "stream"))
    means = np.array([v for t in s.tasks for v in (t.mu_plus, t.mu_minus)])
    gram = means @ means.T
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) <= 1e-12
    np.testing.assert_allclose(np.diag(gram), 2 / 50, rtol=0, atol=1e-15)


def test_stream_deterministic_and_split_independent():
    a = data.build_stream(20, 2, 30, 40, 0.05, prng.derive(9, "data"))
    b = data.build_stream(20, 2, 30, 40, 0.05, prng.derive(9, "data"))
    for da, db in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(da.X, db.X) and np.array_equal(da.y, db.y)
    assert not np.array_equal(a.train[0].X[:30], a.test[0].X[:30])


def test_single_task_stream():
    s = data.build_stream(6, 1, 15, 5, 0.1, prng.derive(0, "one"))
    assert s.K == 1 and s.train[0].n == 15 and s.test[0].n == 5


def test_per_task_sizes():
    s = data.build_stream(10, 3, [5, 7, 9], 4, 0.1, prng.derive(0, "sizes"))
    assert [ds.n for ds in s.train] == [5, 7, 9]


def test_xor_not_linearly_separable():
    spec = data.task_spec(8, 1, 0.0)
    pts = np.array([spec.mu_plus, -spec.mu_plus, spec.mu_minus, -spec.mu_minus])
    labels = np.array([1, 1, -1, -1])
    rng = np.random.default_rng(0)
    for w in rng.standard_normal((2000, 8)):
        err = np.mean(labels * (pts @ w) <= 0)
        assert err >= 0.5


def test_dataset_validation():
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((2, 3)), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        data.Dataset(np.full((1, 2), np.nan), np.array([1.0]))


# --- IDX ---------------------------------------------------------------------

def _write_pair(tmp_path, images, labels):
    ip, lp = tmp_path / "img", tmp_path / "lbl"
    data.write_idx(ip, images)
    data.write_idx(lp, labels)
    return ip, lp


def test_idx_roundtrip(tmp_path):
    images = np.arange(3 * 2 * 2, dtype=np.uint8).reshape(3, 2, 2)
    labels = np.array([0, 1, 0], dtype=np.uint8)
    ip, lp = _write_pair(tmp_path, images, labels)
    assert np.array_equal(data.read_idx(ip, data.IDX_IMAGE_MAGIC), images)
    ds = data.load_mnist_pair(ip, lp, 0, 1, 3, normalize=False)
    np.testing.assert_array_equal(ds.y, [1, -1, 1])
    np.testing.assert_allclose(ds.X, images.reshape(3, 4) / 255.0)
    ds = data.load_mnist_pair(ip, lp, 0, 1, 3, normalize=True)
    np.testing.assert_allclose(ds.X, images.reshape(3, 4) / 255.0 / 2.0)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(struct.pack(">IIII", 0x00000801, 1, 1, 1) + b"\x00")
    with pytest.raises(BadMagic):
        data.read_idx(p, data.IDX_IMAGE_MAGIC)


def test_idx_truncated(tmp_path):
    p = tmp_path / "short"
    p.write_bytes(struct.pack(">IIII", data.IDX_IMAGE_MAGIC, 2, 2, 2) + b"\x00" * 5)
    with pytest.raises(TruncatedFile):
        data.read_idx(p, data.IDX_IMAGE_MAGIC)


def test_not_enough_samples(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((2, 2, 2), np.uint8), np.array([0, 5], np.uint8))
    with pytest.raises(NotEnoughSamples):
        data.load_mnist_pair(ip, lp, 0, 1, 0)
    with pytest.raises(NotEnoughSamples):
        data.load_mnist_pair(ip, lp, 0, 1, 2)


def test_real_mnist_pair(tmp_path):
    pytest.importorskip("mlxtend")
    ip, lp = mnist.resolve(cache_dir=tmp_path)
    labels = data.read_idx(lp, data.IDX_LABEL_MAGIC)
    ds = data.load_mnist_pair(ip, lp, 0, 1, 50)
    assert ds.X.shape == (50, 784)
    assert set(np.unique(ds.y)) <= {-1.0, 1.0}
    first = labels[np.isin(labels, [0, 1])][:50]
    assert np.count_nonzero(ds.y > 0) == np.count_nonzero(first == 0)
    assert np.max(ds.X) <= 1 / 28 + 1e-15
