import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import gradcases
import oracles
from jobshop_rl import autodiff as ad
from jobshop_rl.errors import DataError, DegenerateMaskError, DimensionError


def test_relu_matmul_sigmoid_examples():
    assert ad.relu(ad.Tensor([[-1.0, 2.0]])).value.tolist() == [[0.0, 2.0]]
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(ad.matmul(np.eye(3), x).value, x)
    assert ad.sigmoid(ad.Tensor(0.0)).item() == 0.5


def test_sigmoid_is_stable_at_extremes():
    v = ad.sigmoid(ad.Tensor([-800.0, 800.0])).value
    assert v.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("fn,a,b", [
    (ad.matmul, np.zeros((2, 3)), np.zeros((2, 3))),
    (ad.add, np.zeros((2, 3)), np.zeros((3, 2))),
    (ad.mul, np.zeros((2, 3)), np.zeros((2, 2))),
])
def test_shape_errors_name_both_shapes(fn, a, b):
    with pytest.raises(DimensionError, match=r"\(2, 3\)"):
        fn(ad.Tensor(a), ad.Tensor(b))


def test_masked_log_softmax_examples():
    y = ad.Tensor([0.3, -1.2, 2.0])
    lp = ad.masked_log_softmax(y, [False, True, False]).value
    assert lp[1] == 0.0
    p = np.exp(ad.masked_log_softmax(ad.Tensor([4.0, 4.0]), [True, True]).value)
    assert p.tolist() == [0.5, 0.5]
    p = np.exp(ad.masked_log_softmax(ad.Tensor([1.0, 2.0, 3.0]), [True, False, True]).value)
    np.testing.assert_allclose(p, oracles.masked_softmax([1, 2, 3], [1, 0, 1]), rtol=1e-14, atol=0)
    assert p[1] == 0.0


def test_all_false_mask_raises():
    with pytest.raises(DegenerateMaskError):
        ad.masked_log_softmax(ad.Tensor([1.0, 2.0]), [False, False])


@given(y=arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), data=st.data())
def test_masked_softmax_properties(y, data):
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(y), max_size=len(y))))
    if not mask.any():
        mask[data.draw(st.integers(0, len(y) - 1))] = True
    t = ad.parameter(y)
    lp = ad.masked_log_softmax(t, mask)
    p = np.exp(lp.value)
    assert abs(p[mask].sum() - 1.0) <= 1e-12
    assert (p[~mask] == 0.0).all()
    ad.backward(ad.total(ad.mul(lp, ad.Tensor(np.where(mask, 1.0, 7.0)))))
    assert (t.grad[~mask] == 0.0).all()


def test_backward_sum_gives_ones():
    x = ad.parameter(np.random.default_rng(0).normal(size=(3, 4)))
    ad.backward(ad.total(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_accumulates_and_rejects_non_scalar():
    x = ad.parameter(np.ones((2, 2)))
    ad.backward(ad.total(x))
    ad.backward(ad.total(x))
    assert np.array_equal(x.grad, 2 * np.ones((2, 2)))
    with pytest.raises(DimensionError):
        ad.backward(ad.scale(x, 2.0))


def test_no_grad_records_nothing():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = ad.scale(x, 3.0)
    assert not y.requires_grad and y._parents == ()


def test_shared_subexpression_gradient():
    x = ad.parameter(np.array([[2.0]]))
    y = ad.mul(x, x)
    ad.backward(ad.total(ad.add(y, y)))
    assert x.grad[0, 0] == pytest.approx(8.0)


def test_backward_is_deterministic():
    grads = []
    for _ in range(2):
        loss_fn, params = gradcases.build("lstm_cell", 3)
        ad.backward(loss_fn())
        grads.append([p.grad.copy() for p in params])
    for a, b in zip(*grads):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
@pytest.mark.parametrize("seed", [0, 1])
def test_finite_differences(name, seed):
    assert gradcases.max_error(name, seed) <= 1e-4


def test_mse_linear_model_finite_difference():
    loss_fn, params = gradcases.build("mse", 5)
    assert ad.finite_difference_check(loss_fn, params) <= 1e-4


def test_adam_zero_gradient_keeps_params():
    p = ad.parameter(np.array([1.0, -2.0]))
    state = ad.AdamState([p], 0.1)
    p.grad = np.zeros(2)
    ad.adam_step([p], state)
    assert p.value.tolist() == [1.0, -2.0]
    assert state.step_count == 1 and p.grad is None


def test_adam_first_step_matches_closed_form():
    g = np.array([0.5, -3.0, 1e-3])
    p = ad.parameter(np.zeros(3))
    state = ad.AdamState([p], 1e-2)
    p.grad = g.copy()
    ad.adam_step([p], state)
    np.testing.assert_allclose(p.value, oracles.adam_first_update(g, 1e-2), rtol=1e-12)
    np.testing.assert_allclose(np.abs(p.value[:2]), 1e-2, rtol=1e-6)


def test_adam_quadratic_bowl():
    target = np.array([3.0, -1.0, 0.5])
    w = ad.parameter(np.zeros(3))
    state = ad.AdamState([w], 1e-2)
    for step in range(5000):
        d = ad.sub(w, ad.Tensor(target))
        loss = ad.total(ad.mul(d, d))
        if loss.item() < 1e-6:
            break
        ad.backward(loss)
        ad.adam_step([w], state)
    assert loss.item() < 1e-6


def test_container_roundtrip_and_determinism():
    rng = np.random.default_rng(1)
    tensors = {"a": rng.normal(size=(2, 3)), "b.c": rng.normal(size=5), "s": np.array(1.5)}
    meta = {"z": 1, "a": [1, 2]}
    blob = ad.dump_container(tensors, meta)
    assert blob == ad.dump_container(dict(tensors), dict(meta))
    out, meta2 = ad.load_container(blob)
    assert meta2 == meta
    for k in tensors:
        assert np.array_equal(out[k], tensors[k]) and out[k].shape == tensors[k].shape


@pytest.mark.parametrize("mutate", [lambda b: b"XXXXXXXX" + b[8:], lambda b: b[:30],
                                    lambda b: b[:8] + (9).to_bytes(4, "little") + b[12:]])
def test_container_rejects_corruption(mutate):
    blob = ad.dump_container({"a": np.ones(4)}, {})
    with pytest.raises(DataError):
        ad.load_container(mutate(blob))


def test_tensor_values_have_matching_gradient_shape():
    x = ad.parameter(np.ones((2, 3)))
    ad.backward(ad.mean(ad.tanh(x)))
    assert x.grad.shape == x.shape
    assert math.isclose(float(x.grad.sum()), 1 - math.tanh(1) ** 2)
