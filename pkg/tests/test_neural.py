import numpy as np
import pytest

from edgecrl.errors import ParameterError, StaleCacheError, TrainingDivergenceError
from edgecrl.neural import (Adam, BranchedNet, DenseNet, Layer, log_prob, net_from_dict, sample_categorical,
                            softmax)


def numeric_grads(f, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def min_relu_margin(net, x):
    """Smallest |pre-activation| feeding a ReLU; finite differences are invalid near 0."""
    _, cache = net.forward(x)
    nets, caches = ([net], [cache]) if isinstance(net, DenseNet) else \
        (net.branches + [net.trunk], cache[0] + [cache[1]])
    margins = [np.abs(z).min() for n, c in zip(nets, caches)
               for layer, z in zip(n.layers, c.pre) if layer.activation == "relu"]
    return min(margins, default=np.inf)


def test_identity_layer():
    net = DenseNet([Layer(np.eye(3), np.zeros(3), "identity")])
    x = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(net(x), x)


def test_zero_weights_returns_bias():
    b = np.array([0.1, -0.2])
    net = DenseNet([Layer(np.zeros((3, 2)), b, "identity")])
    assert np.array_equal(net(np.ones(3)), b)


def test_two_layer_hand_computation():
    w1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    w2 = np.array([[0.5], [-2.0]])
    net = DenseNet([Layer(w1, np.array([0.0, 0.1]), "relu"), Layer(w2, np.array([0.2]), "identity")])
    x = np.array([1.0, 2.0])
    # hidden: [1 + 4, -1 + 1 + 0.1] = [5, 0.1]; relu keeps both
    expected = 5 * 0.5 + 0.1 * -2.0 + 0.2
    assert abs(net(x)[0] - expected) <= 1e-12


@pytest.mark.parametrize("act", ["relu", "tanh", "identity"])
def test_backward_matches_finite_differences(act):
    rng = np.random.default_rng(3)
    net = DenseNet.init([4, 6, 5, 3], rng, hidden=act, output="tanh")
    x = rng.standard_normal((5, 4))
    while min_relu_margin(net, x) < 1e-3:
        x = rng.standard_normal((5, 4))
    w = rng.standard_normal((5, 3))
    y, cache = net.forward(x)
    grads, gin = net.backward(cache, w)
    num = numeric_grads(lambda: float((net(x) * w).sum()), net.params())
    for a, b in zip(grads, num):
        assert rel_err(a, b) < 1e-4
    num_in = numeric_grads(lambda: float((net(x) * w).sum()), [x])[0]
    assert rel_err(gin, num_in) < 1e-4


def test_branched_backward():
    rng = np.random.default_rng(4)
    net = BranchedNet.init([2, 3, 1], 4, rng, branch_width=5, hidden=(6,))
    x = rng.standard_normal((3, 6))
    while min_relu_margin(net, x) < 1e-3:
        x = rng.standard_normal((3, 6))
    w = rng.standard_normal((3, 4))
    _, cache = net.forward(x)
    grads, _ = net.backward(cache, w)
    num = numeric_grads(lambda: float((net(x) * w).sum()), net.params())
    for a, b in zip(grads, num):
        assert rel_err(a, b) < 1e-4


def test_zero_output_grad_and_bias_grad():
    rng = np.random.default_rng(5)
    net = DenseNet.init([3, 4, 2], rng)
    _, cache = net.forward(rng.standard_normal(3))
    grads, _ = net.backward(cache, np.zeros(2))
    assert all(np.all(g == 0) for g in grads)
    ident = DenseNet([Layer(rng.standard_normal((3, 2)), np.zeros(2), "identity")])
    _, cache = ident.forward(np.ones(3))
    g = np.array([0.7, -0.3])
    grads, _ = ident.backward(cache, g)
    assert np.array_equal(grads[1], g)


def test_stale_cache_and_dims():
    rng = np.random.default_rng(6)
    net = DenseNet.init([3, 2], rng)
    _, cache = net.forward(np.ones(3))
    Adam(net).step([np.ones_like(p) for p in net.params()])
    with pytest.raises(StaleCacheError):
        net.backward(cache, np.ones(2))
    with pytest.raises(ParameterError):
        net.forward(np.ones(4))


def test_softmax_properties():
    p = softmax(np.zeros(5))
    assert np.allclose(p, 0.2, atol=0)
    z = np.array([1.0, 3.0, -2.0])
    assert np.array_equal(softmax(z), softmax(z + 100.0))
    assert abs(softmax(np.array([1000.0, 0.0, -1000.0])).sum() - 1) <= 1e-12
    with pytest.raises(TrainingDivergenceError):
        softmax(np.array([np.nan, 0.0]))


def test_sampling_frequencies():
    rng = np.random.default_rng(7)
    probs = np.array([0.1, 0.7, 0.2])
    draws = [sample_categorical(probs, rng) for _ in range(100_000)]
    freq = np.bincount(draws, minlength=3) / len(draws)
    assert np.all(np.abs(freq - probs) <= 0.01)
    assert log_prob(probs, 1) == np.log(0.7)


def test_adam():
    net = DenseNet([Layer(np.array([[1.0]]), np.array([0.0]), "identity")])
    opt = Adam(net, lr=1e-4)
    opt.step([np.zeros((1, 1)), np.zeros(1)])
    assert net.params()[0][0, 0] == 1.0
    opt = Adam(net, lr=1e-4)
    opt.step([np.ones((1, 1)), np.zeros(1)])
    assert abs((net.params()[0][0, 0] - 1.0) - (-1e-4)) <= 1e-6
    prev = net.params()[0][0, 0]
    for _ in range(50):
        opt.step([np.ones((1, 1)), np.zeros(1)])
        cur = net.params()[0][0, 0]
        assert cur < prev
        prev = cur
    with pytest.raises(ParameterError):
        opt.step([np.ones((2, 1)), np.zeros(1)])


def test_serialisation_round_trip():
    rng = np.random.default_rng(8)
    net = BranchedNet.init([2, 3], 4, rng, branch_width=3, hidden=(5,))
    clone = net_from_dict(net.to_dict())
    x = rng.standard_normal(5)
    assert np.array_equal(net(x), clone(x))
