import numpy as np
import pytest

from liftbreg.bregman import bregman_eval
from liftbreg.network import (Layer, Network, affine, forward, init_aux, init_glorot,
                              linear_activation_rate, preactivations, sparsity_rate)
from liftbreg.prox import ProxSpec

RELU, ZERO = ProxSpec.relu(), ProxSpec.zero()


def test_affine_examples():
    np.testing.assert_array_equal(affine(Layer(np.eye(2), np.zeros(2), ZERO), [-1.0, 2.0]), [-1, 2])
    np.testing.assert_array_equal(affine(Layer(np.zeros((2, 2)), np.array([3.0, 4.0]), ZERO),
                                         [7.0, 8.0]), [3, 4])
    la = Layer(np.array([[1.0], [2.0]]), np.array([0.5]), ZERO)
    assert affine(la, [1.0, 1.0])[0] == pytest.approx(3.5)


def test_affine_dimension_mismatch():
    with pytest.raises(ValueError):
        affine(Layer(np.eye(2), np.zeros(2), ZERO), [1.0, 2.0, 3.0])


def test_layer_validation():
    with pytest.raises(ValueError):
        Layer(np.eye(2), np.zeros(3), ZERO)
    with pytest.raises(ValueError):
        Layer(np.array([[np.nan]]), np.zeros(1), ZERO)
    with pytest.raises(ValueError):
        Network([Layer(np.eye(2), np.zeros(2), ZERO), Layer(np.eye(3), np.zeros(3), ZERO)])
    with pytest.raises(ValueError):
        Network([])


def test_forward_examples():
    net = Network([Layer(np.eye(2), np.zeros(2), RELU)])
    np.testing.assert_array_equal(forward(net, [-1.0, 2.0])[0], [0, 2])
    net = Network([Layer(np.array([[1.0]]), np.array([-1.0]), RELU),
                   Layer(np.array([[2.0]]), np.array([0.0]), RELU)])
    x1, x2 = forward(net, [3.0])
    assert x1[0] == 2.0 and x2[0] == 4.0


def test_forward_all_zero_is_affine(rng):
    net = init_glorot([3, 4, 2], [ZERO, ZERO], seed=0)
    x = rng.standard_normal((5, 3))
    W = net[0].W @ net[1].W
    b = net[0].b @ net[1].W + net[1].b
    np.testing.assert_allclose(forward(net, x)[-1], x @ W + b, atol=1e-14)


def test_forward_dimension_mismatch():
    net = init_glorot([3, 2], [RELU], seed=0)
    with pytest.raises(ValueError):
        forward(net, np.zeros((4, 5)))


def test_glorot():
    a = init_glorot([784, 64, 10], [RELU, ZERO], seed=3)
    b = init_glorot([784, 64, 10], [RELU, ZERO], seed=3)
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.W, lb.W)
        assert np.all(la.b == 0)
    assert np.max(np.abs(a[0].W)) <= np.sqrt(6 / 848)
    big = init_glorot([784, 784], [RELU], seed=1)
    assert np.var(big[0].W) == pytest.approx(2 / 1568, rel=0.1)


def test_init_aux_is_consistent(rng):
    net = init_glorot([4, 5, 6, 3], [RELU, ProxSpec.tanh(), ZERO], seed=2)
    x0 = rng.standard_normal((3, 4))
    aux = init_aux(net, x0)
    assert len(aux) == 2
    xs = [x0] + aux
    for l, la in enumerate(net.layers[:-1], start=1):
        assert np.max(bregman_eval(la.act, xs[l], affine(la, xs[l - 1]))) <= 1e-12
    single = init_aux(net, x0[1])
    np.testing.assert_array_equal(single[0], aux[0][1])
    np.testing.assert_array_equal(forward(net, x0[1])[0], single[0])


def test_linear_activation_rate():
    net = Network([Layer(np.eye(2), np.zeros(2), RELU), Layer(np.eye(2), np.zeros(2), ZERO)])
    assert linear_activation_rate(net, np.array([[1.0, 2.0]])) == [1.0]
    assert linear_activation_rate(net, np.array([[-1.0, -2.0]])) == [0.0]
    assert linear_activation_rate(net, np.array([[-1.0, 1.0]])) == [0.5]
    tnet = Network([Layer(np.eye(2), np.zeros(2), ProxSpec.tanh()),
                    Layer(np.eye(2), np.zeros(2), ZERO)])
    assert linear_activation_rate(tnet, np.ones((1, 2))) == [None]


def test_sparsity_rate():
    assert sparsity_rate([0, 0, 1, 0]) == 0.75
    assert sparsity_rate(np.zeros((3, 4))) == 1.0
    assert sparsity_rate([1.0, -2.0]) == 0.0
    assert sparsity_rate([1e-13, 1.0]) == 0.5


def test_copy_is_deep():
    net = init_glorot([2, 3], [RELU], seed=0)
    c = net.copy()
    c[0].W[0, 0] += 1
    assert net[0].W[0, 0] != c[0].W[0, 0]
    assert net.same_shape(c)


def test_preactivations_returns_both(rng):
    net = init_glorot([3, 4, 2], [RELU, ZERO], seed=0)
    zs, xs = preactivations(net, rng.standard_normal((2, 3)))
    np.testing.assert_array_equal(xs[0], np.maximum(zs[0], 0))
