"""Tape contract: values, vector-Jacobian products, accumulation semantics."""

import numpy as np
import pytest

from helpers import check_grad

from pairsight import autodiff as ad


def test_square_scalar_grad():
    x = ad.leaf(3.0)
    loss = ad.mul(x, x)
    ad.backward(loss)
    assert loss.value == 9.0
    np.testing.assert_allclose(x.grad, 6.0)


def test_backward_requires_scalar():
    x = ad.leaf(np.ones(3))
    with pytest.raises(ad.GraphError):
        ad.backward(ad.mul(x, 2.0))


def test_repeated_backward_accumulates():
    x = ad.leaf(2.0)
    loss = ad.mul(ad.mul(x, x), x)  # x^3, grad 12
    ad.backward(loss)
    first = x.grad.copy()
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * first)
    np.testing.assert_allclose(first, 12.0)


def test_cycle_detection():
    x = ad.leaf(1.0)
    y = ad.mul(x, 2.0)
    # deliberately corrupt the graph into a cycle
    x._edges = [(y, lambda g: g)]
    with pytest.raises(ad.GraphError):
        ad.backward(ad.sum_(y))


def test_diamond_graph_fan_in():
    x = ad.leaf(1.5)
    a = ad.mul(x, x)
    loss = ad.add(a, a)  # 2 x^2, grad 4x
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 6.0)


def test_constants_are_skipped():
    x = ad.constant(np.ones(4))
    y = ad.sum_(ad.mul(x, 3.0))
    assert not y.requires_grad and y.is_leaf


@pytest.mark.parametrize("seed", range(5))
def test_softmax_entropy_chain_fd(seed):
    rng = np.random.default_rng(seed)
    z0 = rng.normal(size=5)

    def build(z):
        s = ad.softmax(z, axis=-1)
        return ad.sum_(ad.mul(s, ad.log_softmax(z, axis=-1)))

    check_grad(build, z0)


@pytest.mark.parametrize("op,x0", [
    (ad.exp, np.array([-1.0, 0.3, 2.0])),
    (ad.log, np.array([0.2, 1.0, 3.5])),
    (ad.sqrt, np.array([0.5, 1.0, 4.0])),
    (ad.sin, np.array([-2.0, 0.0, 1.3])),
    (ad.cos, np.array([-2.0, 0.0, 1.3])),
    (ad.tanh, np.array([-1.5, 0.1, 0.9])),
    (ad.square, np.array([-1.5, 0.1, 0.9])),
    (ad.sinc, np.array([-3.0, 0.7, 9.0])),
])
def test_elementwise_fd(op, x0):
    check_grad(lambda x: ad.sum_(op(x)), x0)


def test_sinc_value_and_grad_at_zero():
    x = ad.leaf(np.array([0.0, np.pi]))
    y = ad.sinc(x)
    np.testing.assert_allclose(y.value, [1.0, np.sin(np.pi) / np.pi], atol=1e-16)
    ad.backward(ad.sum_(y))
    assert x.grad[0] == 0.0  # odd derivative vanishes at the removable point


def test_matmul_broadcast_fd():
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(2, 3, 4))
    b0 = rng.normal(size=(4, 5))
    w = rng.normal(size=(2, 3, 5))
    check_grad(lambda a: ad.sum_(ad.mul(ad.matmul(a, b0), w)), a0)
    check_grad(lambda b: ad.sum_(ad.mul(ad.matmul(a0, b), w)), b0)


def test_take_scatter_adds_duplicates():
    x = ad.leaf(np.arange(4.0))
    idx = np.array([1, 1, 3])
    y = ad.take(x, idx)
    np.testing.assert_allclose(y.value, [1.0, 1.0, 3.0])
    ad.backward(ad.sum_(y))
    np.testing.assert_allclose(x.grad, [0.0, 2.0, 0.0, 1.0])


def test_getitem_and_reshape_fd():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(6, 6))
    w = rng.normal(size=(2, 8))

    def build(x):
        window = ad.getitem(x, (slice(1, 5), slice(2, 6)))
        return ad.sum_(ad.mul(ad.reshape(window, (2, 8)), w))

    check_grad(build, x0)


def test_mean_multi_axis_fd():
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(3, 4, 5))
    w = rng.normal(size=(3, 1, 1))
    check_grad(lambda x: ad.sum_(ad.mul(ad.mean_(x, axis=(1, 2), keepdims=True), w)), x0)


def test_broadcast_add_mul_fd():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 1, 3))
    y0 = rng.normal(size=(5, 3))
    w = rng.normal(size=(4, 5, 3))
    check_grad(lambda x: ad.sum_(ad.mul(ad.add(x, y0), w)), x0)
    check_grad(lambda y: ad.sum_(ad.mul(ad.add(x0, y), w)), y0)
    check_grad(lambda y: ad.sum_(ad.mul(ad.div(x0, ad.add(y, 4.0)), w)), y0)


def test_quantize_ste_passthrough_gradient():
    x = ad.leaf(np.array([0.1, 2.0, 5.5]))
    y = ad.quantize_ste(x, levels=8)
    step = 2 * np.pi / 8
    np.testing.assert_allclose(y.value, np.round(x.value / step) * step)
    ad.backward(ad.sum_(ad.mul(y, 3.0)))
    np.testing.assert_allclose(x.grad, 3.0)


def test_zero_grads():
    x = ad.leaf(1.0)
    ad.backward(ad.mul(x, x))
    ad.zero_grads([x])
    assert x.grad is None


def test_swapaxes_softmax_axis_fd():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(2, 4, 3))
    check_grad(lambda x: ad.sum_(ad.mul(ad.softmax(ad.swapaxes(x, 1, 2), axis=1), w)), x0)
