import math

import numpy as np
import pytest

from surfvae.neural import (
    AdamState,
    DenseNet,
    DimensionError,
    Layer,
    StaleCacheError,
    adam_init,
    adam_step,
    fan_in_uniform,
    finite_difference_gradients,
    gradient_check,
    max_relative_error,
    net_backward,
    net_forward,
)


def random_net(rng, sizes=(4, 6, 3), activations=("tanh", "identity")):
    layers = []
    for n_in, n_out, act in zip(sizes, sizes[1:], activations):
        layers.append(Layer(rng.standard_normal((n_out, n_in)), rng.standard_normal(n_out), act))
    return DenseNet(layers)


class TestForward:
    def test_identity_layer_is_identity(self):
        net = DenseNet([Layer(np.eye(4), np.zeros(4), "identity")])
        x = np.array([1.0, -2.0, 3.0, 0.5])
        y, _ = net_forward(net, x)
        assert y == pytest.approx(x)

    def test_zero_tanh_layer(self):
        net = DenseNet([Layer(np.zeros((3, 4)), np.zeros(3), "tanh")])
        y, _ = net_forward(net, np.ones(4))
        assert np.all(y == 0)

    def test_matches_straight_line_evaluation(self, rng):
        net = random_net(rng, sizes=(5, 7, 4, 2), activations=("tanh", "softplus", "identity"))
        x = rng.standard_normal(5)
        # independent evaluation, written without the kernel helpers
        h = x
        for layer in net.layers:
            z = layer.weights @ h + layer.bias
            if layer.activation == "tanh":
                h = np.tanh(z)
            elif layer.activation == "softplus":
                h = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0)
            else:
                h = z
        y, _ = net_forward(net, x)
        assert y == pytest.approx(h, rel=1e-12)

    def test_dimension_mismatch(self, rng):
        net = random_net(rng)
        with pytest.raises(DimensionError):
            net_forward(net, np.ones(9))

    def test_chained_dims_validated(self, rng):
        with pytest.raises(DimensionError):
            DenseNet([
                Layer(rng.standard_normal((3, 4)), np.zeros(3), "tanh"),
                Layer(rng.standard_normal((2, 5)), np.zeros(2), "identity"),
            ])


class TestBackward:
    def test_identity_layer_weight_gradient_closed_form(self):
        net = DenseNet([Layer(np.zeros((3, 4)), np.zeros(3), "identity")])
        x = np.array([1.0, 2.0, 3.0, 4.0])
        _, cache = net_forward(net, x)
        upstream = np.array([1.0, 0.0, 0.0])
        grads, dx = net_backward(net, upstream, cache)
        expected_dw = np.outer(upstream, x)
        assert grads[0] == pytest.approx(expected_dw)
        assert grads[1] == pytest.approx(upstream)
        assert dx == pytest.approx(net.layers[0].weights[0])

    def test_zero_upstream_gives_zero_gradients(self, rng):
        net = random_net(rng)
        x = rng.standard_normal(4)
        _, cache = net_forward(net, x)
        grads, dx = net_backward(net, np.zeros(3), cache)
        assert all(np.all(g == 0) for g in grads)
        assert np.all(dx == 0)

    def test_gradient_check_random_small_net(self, rng):
        net = random_net(rng, sizes=(4, 5, 3), activations=("softplus", "tanh"))
        x = rng.standard_normal(4)
        target = rng.standard_normal(3)

        def loss():
            y, _ = net_forward(net, x)
            return float(((y - target) ** 2).sum())

        y, cache = net_forward(net, x)
        grads, _ = net_backward(net, 2.0 * (y - target), cache)
        assert gradient_check(loss, net.parameters(), grads) <= 1e-4

    def test_stale_cache_detected(self, rng):
        net = random_net(rng)
        other = random_net(rng, sizes=(4, 9, 3))
        _, cache = net_forward(other, np.ones(4))
        with pytest.raises(StaleCacheError):
            net_backward(net, np.ones(3), cache)

    def test_wrong_upstream_shape(self, rng):
        net = random_net(rng)
        _, cache = net_forward(net, np.ones(4))
        with pytest.raises(StaleCacheError):
            net_backward(net, np.ones((5, 3)), cache)


class TestAdam:
    def test_zero_gradient_is_a_no_op(self):
        p = [np.array([1.0, -2.0])]
        state = adam_init(p)
        adam_step(p, [np.zeros(2)], state)
        assert p[0] == pytest.approx([1.0, -2.0])

    def test_constant_gradient_moves_against_sign(self):
        p = [np.array([0.0])]
        state = adam_init(p, lr=0.01)
        for _ in range(50):
            adam_step(p, [np.array([3.0])], state)
        assert p[0][0] < 0

    def test_three_steps_match_hand_rolled_recurrence(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        p = [np.array([0.5])]
        state = adam_init(p, lr=lr, beta1=b1, beta2=b2, eps=eps)
        for _ in range(3):
            adam_step(p, [np.array([1.0])], state)

        # independent scalar recurrence
        theta, m, v = 0.5, 0.0, 0.0
        for t in range(1, 4):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
        assert p[0][0] == pytest.approx(theta, rel=0, abs=1e-15)

    def test_shape_mismatch_raises(self):
        p = [np.zeros((2, 2))]
        state = adam_init(p)
        with pytest.raises(DimensionError):
            adam_step(p, [np.zeros(3)], state)


class TestGradCheckUtilities:
    def test_relative_error_floor(self):
        a = [np.array([0.0])]
        b = [np.array([1e-10])]
        assert max_relative_error(a, b) <= 1e-2

    def test_finite_difference_simple_quadratic(self):
        p = [np.array([2.0, -3.0])]

        def f():
            return float((p[0] ** 2).sum())

        g = finite_difference_gradients(f, p)
        assert g[0] == pytest.approx([4.0, -6.0], rel=1e-7)


def test_fan_in_uniform_bounds(rng):
    w = fan_in_uniform(rng, 64, 16)
    assert w.shape == (64, 16)
    assert np.max(np.abs(w)) <= 0.25
