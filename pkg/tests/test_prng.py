import numpy as np
import pytest

from clforge import prng


def test_same_label_same_sequence():
    a = prng.gaussian(prng.derive(7, "a"), 64)
    b = prng.gaussian(prng.derive(7, "a"), 64)
    assert np.array_equal(a, b)


def test_distinct_labels_differ():
    a = prng.gaussian(prng.derive(7, "a"), 64)
    b = prng.gaussian(prng.derive(7, "b"), 64)
    assert not np.any(a == b)


def test_distinct_seeds_differ():
    a = prng.gaussian(prng.derive(1, "a"), 64)
    b = prng.gaussian(prng.derive(2, "a"), 64)
    assert not np.any(a == b)


def test_empty_label_rejected():
    with pytest.raises(ValueError):
        prng.derive(0, "")


def test_order_insensitive():
    s1, s2 = prng.derive(3, "x"), prng.derive(3, "y")
    first = prng.gaussian(s1, 10), prng.gaussian(s2, 10)
    t2, t1 = prng.derive(3, "y"), prng.derive(3, "x")
    second = prng.gaussian(t2, 10), prng.gaussian(t1, 10)
    assert np.array_equal(first[0], second[1])
    assert np.array_equal(first[1], second[0])


def test_child_matches_path_label():
    s = prng.derive(5, "task/2")
    assert np.array_equal(prng.gaussian(s.child("data"), 8),
                          prng.gaussian(prng.derive(5, "task/2/data"), 8))


def test_zero_counts():
    s = prng.derive(0, "z")
    assert prng.gaussian(s, 0).shape == (0,)
    assert prng.rademacher(s, 0).shape == (0,)


def test_gaussian_moments():
    x = prng.gaussian(prng.derive(11, "moments"), 10**6)
    assert abs(x.mean()) < 0.01
    assert 0.99 <= x.var(ddof=1) <= 1.01
    assert 0.498 <= np.mean(x <= 0) <= 0.502


def test_rademacher_moments():
    r = prng.rademacher(prng.derive(11, "signs"), 10**6)
    assert set(np.unique(r)) == {-1.0, 1.0}
    assert abs(r.mean()) < 0.01
