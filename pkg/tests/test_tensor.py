import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from involnet.tensor import (ShapeError, glorot_bound, glorot_uniform_init, make_rng, pad_spatial,
                             tensor_new)


def test_tensor_new_fill():
    assert np.array_equal(tensor_new([2, 2], 0), [[0, 0], [0, 0]])
    assert np.array_equal(tensor_new([1, 1, 1, 3], 1).ravel(), [1, 1, 1])
    t = tensor_new([2, 3], 0.5)
    assert t.size == 6 and np.all(t == 0.5)
    assert t.dtype == np.float64


@pytest.mark.parametrize("shape", [[0, 2], [2, -1], [], [1, 1, 1, 1, 1]])
def test_tensor_new_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        tensor_new(shape)


def test_glorot_bound_values():
    assert glorot_bound(3, 3) == 1.0
    assert glorot_bound(2048, 128) == pytest.approx(np.sqrt(6 / 2176))
    assert glorot_bound(2048, 128) == pytest.approx(0.05252, abs=1e-5)


def test_glorot_samples_within_bound_and_deterministic():
    a = glorot_uniform_init((2048, 128), 2048, 128, make_rng(5, "init"))
    b = glorot_uniform_init((2048, 128), 2048, 128, make_rng(5, "init"))
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= glorot_bound(2048, 128)
    small = glorot_uniform_init((1000,), 3, 3, make_rng(1))
    assert np.all((small >= -1.0) & (small <= 1.0))


def test_rng_streams_reproducible_and_independent():
    first = make_rng(42, "shuffle").random(10)
    assert np.array_equal(first, make_rng(42, "shuffle").random(10))
    assert not np.array_equal(first, make_rng(42, "dropout").random(10))
    assert not np.array_equal(first, make_rng(43, "shuffle").random(10))


def test_pad_spatial_examples():
    x = np.full((1, 1, 1, 1), 5.0)
    out = pad_spatial(x, 1)
    expected = np.zeros((1, 3, 3, 1))
    expected[0, 1, 1, 0] = 5
    assert np.array_equal(out, expected)

    y = np.random.default_rng(0).random((2, 4, 5, 3))
    assert np.array_equal(pad_spatial(y, 0), y)

    z = np.random.default_rng(1).random((1, 48, 48, 3))
    pz = pad_spatial(z, 1)
    assert pz.shape == (1, 50, 50, 3)
    assert pz.sum() == pytest.approx(z.sum(), rel=1e-15)
    assert np.array_equal(pz[:, 1:-1, 1:-1], z)


def test_pad_spatial_requires_rank4():
    with pytest.raises(ShapeError):
        pad_spatial(np.zeros((3, 3)), 1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=4, max_size=4), st.integers(0, 3))
def test_pad_preserves_sum_exactly(shape, pad):
    x = np.random.default_rng(sum(shape)).integers(-50, 50, size=shape).astype(float)
    assert pad_spatial(x, pad).sum() == x.sum()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_reshape_round_trip(shape):
    x = np.random.default_rng(len(shape)).random(shape)
    flat = x.reshape(-1)
    assert np.array_equal(flat.reshape(shape), x)
