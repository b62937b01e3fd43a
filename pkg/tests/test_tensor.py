import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmnet.tensor import (NonFiniteError, ShapeError, as_tensor, check_finite, elementwise,
                            flat_index, matmul, new_tensor, reduce, unravel)


def test_new_tensor_fill():
    assert new_tensor([2, 2], 0.0).tolist() == [[0, 0], [0, 0]]
    t = new_tensor([3, 224, 224], 1.0)
    assert t.size == 150528 and t.dtype == np.float32 and t.sum() == 150528


@pytest.mark.parametrize("shape", [[0], [], [3, -1]])
def test_new_tensor_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        new_tensor(shape, 1.0)


def test_elementwise():
    a, b = as_tensor([1, 2]), as_tensor([3, 4])
    assert elementwise(a, b, "add").tolist() == [4, 6]
    x = as_tensor(np.arange(6).reshape(2, 3))
    assert np.array_equal(elementwise(x, np.ones_like(x), "mul"), x)
    with pytest.raises(ShapeError):
        elementwise(a, as_tensor([1, 2, 3]), "add")


def test_matmul():
    m = as_tensor([[1, 2], [3, 4]])
    assert matmul(as_tensor(np.eye(2)), m).tolist() == [[1, 2], [3, 4]]
    assert matmul(as_tensor([[1, 2]]), as_tensor([[3], [4]])).tolist() == [[11]]
    with pytest.raises(ShapeError):
        matmul(new_tensor([1, 3]), new_tensor([2, 1]))


def test_matmul_matches_triple_loop(rng):
    for _ in range(10):
        a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        ref = np.zeros((8, 8))
        for i in range(8):
            for j in range(8):
                ref[i, j] = sum(a[i, k] * b[k, j] for k in range(8))
        np.testing.assert_allclose(matmul(a, b), ref, rtol=1e-6, atol=1e-12)


def test_reduce():
    assert reduce(as_tensor([1, 2, 3]), "sum").tolist() == [6]
    assert reduce(as_tensor([2, 4]), "mean").tolist() == [3]
    assert reduce(as_tensor([[1, 5], [3, 2]]), "max", axis=0).tolist() == [3, 5]
    with pytest.raises(ShapeError):
        reduce(as_tensor([1, 2]), "sum", axis=1)


def test_check_finite():
    check_finite(as_tensor([1.0]))
    with pytest.raises(NonFiniteError):
        check_finite(as_tensor([np.nan]))


shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4)


@given(shapes, st.data())
def test_flat_index_round_trips(shape, data):
    index = tuple(data.draw(st.integers(0, d - 1)) for d in shape)
    flat = flat_index(index, shape)
    assert unravel(flat, shape) == index
    assert flat == np.ravel_multi_index(index, shape)


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3, width=32), min_size=1, max_size=200), st.randoms())
def test_sum_is_permutation_invariant(values, rnd):
    a = as_tensor(values)
    shuffled = list(values)
    rnd.shuffle(shuffled)
    s1 = float(reduce(a, "sum")[0])
    s2 = float(reduce(as_tensor(shuffled), "sum")[0])
    scale = max(1.0, float(np.abs(a).sum()))
    assert abs(s1 - s2) <= 1e-6 * scale
