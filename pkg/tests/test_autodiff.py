import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupemo import autodiff as ad
from groupemo.autodiff import Tensor
from groupemo.errors import ContractError, DegenerateVectorError, DimensionError, DomainError, InvalidMaskError

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, dtype=np.float64)


def test_matmul_identity_and_analytic():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])
    assert np.array_equal(ad.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]])).data, [[0.0]])


def test_matmul_gradient_of_sum(rng):
    a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
    ad.backward(ad.sum(ad.matmul(a, b)))
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    np.testing.assert_allclose(ad.softmax(Tensor([5.0])).data, [1.0])
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, math.log(2)]), ).data, [1 / 3, 2 / 3], atol=1e-7)


def test_softmax_mask_zeroes_entries():
    out = ad.softmax(Tensor([1.0, 50.0, 2.0]), mask=np.array([True, False, True]))
    assert out.data[1] == 0.0
    np.testing.assert_allclose(out.data.sum(), 1.0)


def test_softmax_fully_masked_row_raises():
    with pytest.raises(InvalidMaskError):
        ad.softmax(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariant_and_stochastic(x, c):
    p = ad.softmax(Tensor(x, dtype=np.float64)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(ad.softmax(Tensor(x + c, dtype=np.float64)).data, p, atol=1e-6)


def test_elementwise_examples():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.relu(Tensor(-3.0)).item() == 0.0
    np.testing.assert_array_equal(ad.broadcast_add(Tensor(np.zeros((2, 2))), Tensor([1.0, 1.0])).data, np.ones((2, 2)))


def test_broadcast_add_rejects_bad_row():
    with pytest.raises(DimensionError):
        ad.broadcast_add(Tensor(np.zeros((2, 2))), Tensor([1.0, 1.0, 1.0]))


def test_sigmoid_stable_for_large_inputs():
    out = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


def test_log_of_nonpositive_is_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_row_reductions():
    x = Tensor([[1.0, 3.0], [3.0, 1.0]])
    np.testing.assert_array_equal(ad.mean_rows(x).data, [2, 2])
    np.testing.assert_array_equal(ad.max_rows(x).data, [3, 3])
    rows = Tensor([[1.0, 2.0], [7.0, 7.0], [9.0, 9.0]])
    np.testing.assert_array_equal(ad.masked_mean_rows(rows, np.array([True, False, False])).data, [1, 2])


def test_masked_mean_empty_set():
    rows = Tensor(np.ones((2, 3)))
    with pytest.raises(InvalidMaskError):
        ad.masked_mean_rows(rows, np.array([False, False]))
    np.testing.assert_array_equal(ad.masked_mean_rows(rows, np.array([False, False]), allow_empty=True).data, 0)


def test_cosine_examples():
    assert ad.cosine_similarity(Tensor([2.0, 0.0]), Tensor([2.0, 0.0])).item() == pytest.approx(1.0)
    assert ad.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    assert ad.cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 1.0])).item() == pytest.approx(0.70710678, abs=1e-7)


def test_cosine_zero_vector_rejected():
    with pytest.raises(DegenerateVectorError):
        ad.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


def test_backward_scalar_examples():
    x = leaf(3.0)
    ad.backward(x * x)
    assert x.grad == pytest.approx(6.0)
    z = leaf(0.0)
    ad.backward(ad.sigmoid(z))
    assert z.grad == pytest.approx(0.25)


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        ad.backward(leaf([1.0, 2.0]) * 2.0)


def test_shared_subexpression_counts_every_path():
    x = leaf(2.0)
    y = x * x
    ad.backward(y * y + y)     # x^4 + x^2
    assert x.grad == pytest.approx(4 * 8 + 2 * 2)


def test_leaf_gradients_accumulate():
    x = leaf(1.5)
    ad.backward(x * 2.0)
    ad.backward(x * 3.0)
    assert x.grad == pytest.approx(5.0)


def test_getitem_scatters_gradient():
    x = leaf([1.0, 2.0, 3.0])
    ad.backward(ad.sum(x[np.array([0, 0, 2])]))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


def test_dropout_eval_is_identity_and_train_is_unbiased():
    x = Tensor(np.ones(20000))
    assert ad.dropout(x, 0.5, None, train=False) is x
    out = ad.dropout(x, 0.5, np.random.default_rng(0), train=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert out.mean() == pytest.approx(1.0, abs=0.03)


def test_precision_switch():
    with ad.precision("f64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
