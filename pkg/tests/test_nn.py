"""Network stack tests: forward oracles, gradient checks, optimizer identities."""

import numpy as np
import pytest

from prefnav import nn


def rng(seed=0):
    return np.random.default_rng(seed)


# -- forward ---------------------------------------------------------------------

def test_forward_zero_net_annihilates():
    net = nn.Mlp([4, 3, 2], output="linear", rng=rng())
    for w in net.weights:
        w[...] = 0.0
    for b in net.biases:
        b[...] = 0.0
    out = net.forward(np.ones(4))
    assert np.array_equal(out, np.zeros(2))


def test_forward_identity_single_layer():
    net = nn.Mlp([3, 3], output="linear", rng=rng())
    net.weights[0][...] = np.eye(3)
    net.biases[0][...] = 0.0
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(net.forward(x), x)


def test_forward_matches_hand_rolled_matrix_math():
    net = nn.Mlp([5, 7, 2], output="linear", rng=rng(3))
    x = rng(4).normal(size=(6, 5))
    # independent oracle: explicit matrix arithmetic
    h = np.maximum(x @ net.weights[0] + net.biases[0], 0.0)
    expected = h @ net.weights[1] + net.biases[1]
    assert np.max(np.abs(net.forward(x) - expected)) < 1e-10


def test_forward_is_pure():
    net = nn.Mlp([4, 8, 2], output="bounded", rng=rng(5))
    x = rng(6).normal(size=(3, 4))
    assert np.array_equal(net.forward(x), net.forward(x))


def test_bounded_output_range():
    net = nn.Mlp([4, 16, 2], output="bounded", rng=rng(8))
    x = rng(9).normal(scale=50.0, size=(100, 4))
    out = net.forward(x)
    assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_forward_width_mismatch():
    net = nn.Mlp([4, 2], rng=rng())
    with pytest.raises(ValueError):
        net.forward(np.ones(5))


def test_parameter_count():
    net = nn.Mlp([34, 64, 64, 2], rng=rng())
    expected = 34 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2
    assert net.param_count() == expected


# -- gradients ---------------------------------------------------------------------

def finite_difference_check(params, grads, loss_of_params, n_coords=6, eps=1e-5, seed=0):
    """Central finite differences on a random coordinate subset, 1e-4 relative."""
    r = rng(seed)
    for p, g in zip(params, grads):
        flat_p = p.ravel()
        flat_g = g.ravel()
        for idx in r.choice(flat_p.size, size=min(n_coords, flat_p.size), replace=False):
            original = flat_p[idx]
            flat_p[idx] = original + eps
            up = loss_of_params()
            flat_p[idx] = original - eps
            down = loss_of_params()
            flat_p[idx] = original
            fd = (up - down) / (2 * eps)
            scale = max(abs(fd), abs(flat_g[idx]), 1e-6)
            assert abs(fd - flat_g[idx]) / scale < 1e-4, (fd, flat_g[idx])


def test_constant_loss_gives_zero_gradients():
    net = nn.Mlp([4, 6, 2], rng=rng(1))
    value, grads = net.gradients(rng(2).normal(size=(3, 4)), lambda y: (1.0, np.zeros_like(y)))
    assert value == 1.0
    assert all(np.all(g == 0.0) for g in grads)


def test_single_parameter_quadratic_gradient():
    net = nn.Mlp([1, 1], output="linear", rng=rng(0))
    net.weights[0][...] = 0.7
    net.biases[0][...] = 0.0
    target = 2.0
    x = np.array([[1.0]])

    def loss(y):
        return float(((y - target) ** 2).sum()), 2.0 * (y - target)

    _, grads = net.gradients(x, loss)
    # d/dw (w*x - t)^2 = 2 (w - t) for x = 1
    assert grads[0][0, 0] == pytest.approx(2.0 * (0.7 - target), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradients_match_finite_differences(seed):
    net = nn.Mlp([5, 8, 3], output="bounded", rng=rng(seed))
    x = rng(seed + 100).normal(size=(4, 5))
    target = rng(seed + 200).normal(size=(4, 3))

    def loss(y):
        return float(((y - target) ** 2).mean()), 2.0 * (y - target) / y.size

    _, grads = net.gradients(x, loss)
    finite_difference_check(net.params(), grads, lambda: loss(net.forward(x))[0], seed=seed)


@pytest.mark.parametrize("seed", range(3))
def test_policy_net_gradients_match_finite_differences(seed):
    net = nn.PolicyNet(trunk_widths=(16, 12), encoder_hidden=8, rng=rng(seed))
    obs = np.abs(rng(seed + 50).normal(size=(5, 34)))
    target = rng(seed + 60).uniform(-1, 1, size=(5, 2))

    def value():
        return float(((net.forward(obs) - target) ** 2).mean())

    out, cache = net.forward_cached(obs)
    grads = net.backward(cache, 2.0 * (out - target) / out.size)
    finite_difference_check(net.params(), grads, value, n_coords=4, seed=seed)


@pytest.mark.parametrize("seed", range(3))
def test_q_net_gradients_match_finite_differences(seed):
    net = nn.QNet(trunk_widths=(16, 12), encoder_hidden=8, rng=rng(seed))
    obs = np.abs(rng(seed + 70).normal(size=(5, 34)))
    act = rng(seed + 80).uniform(-1, 1, size=(5, 2))

    def value():
        return float(net.forward(obs, act).mean())

    q, cache = net.forward_cached(obs, act)
    grads, _ = net.backward(cache, np.ones(5) / 5)
    finite_difference_check(net.params(), grads, value, n_coords=4, seed=seed)


def test_q_net_action_gradient_matches_finite_differences():
    net = nn.QNet(trunk_widths=(16, 12), encoder_hidden=8, rng=rng(4))
    obs = np.abs(rng(5).normal(size=(3, 34)))
    act = rng(6).uniform(-1, 1, size=(3, 2))
    q, cache = net.forward_cached(obs, act)
    _, grad_act = net.backward(cache, np.ones(3))
    eps = 1e-6
    for i in range(3):
        for k in range(2):
            up, down = act.copy(), act.copy()
            up[i, k] += eps
            down[i, k] -= eps
            fd = (net.forward(obs, up).sum() - net.forward(obs, down).sum()) / (2 * eps)
            assert abs(fd - grad_act[i, k]) / max(abs(fd), 1e-6) < 1e-4


# -- adam ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    params = [np.array([1.0, 2.0]), np.array([[3.0]])]
    state = nn.AdamState()
    before = [p.copy() for p in params]
    nn.adam_step(params, [np.zeros(2), np.zeros((1, 1))], state, lr=1e-3)
    assert state.step == 1
    for p, b in zip(params, before):
        assert np.array_equal(p, b)


def test_adam_first_step_magnitude():
    # With bias correction, the very first step moves by ~lr against the gradient.
    params = [np.array([0.0])]
    state = nn.AdamState()
    nn.adam_step(params, [np.array([1.0])], state, lr=1e-3)
    assert params[0][0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_repeated_gradient_monotone():
    params = [np.array([0.0])]
    state = nn.AdamState()
    history = [0.0]
    for _ in range(20):
        nn.adam_step(params, [np.array([1.0])], state, lr=1e-3)
        history.append(float(params[0][0]))
    assert all(b < a for a, b in zip(history[:-1], history[1:]))


# -- encoder / persistence ------------------------------------------------------------

def test_two_stream_feature_width_is_128():
    enc = nn.TwoStreamEncoder(rng=rng(0))
    assert enc.feature_width == 128
    feat, _ = enc.forward_cached(np.abs(rng(1).normal(size=(2, 34))))
    assert feat.shape == (2, 128)


def test_checkpoint_round_trip(tmp_path):
    net = nn.QNet(trunk_widths=(16, 12), encoder_hidden=8, rng=rng(9))
    path = tmp_path / "net.npz"
    nn.save_net(path, net, {"note": "test"})
    loaded, meta = nn.load_net(path)
    assert meta["note"] == "test"
    obs = np.abs(rng(10).normal(size=(4, 34)))
    act = rng(11).uniform(-1, 1, size=(4, 2))
    assert np.array_equal(net.forward(obs, act), loaded.forward(obs, act))


def test_observation_scaling_vector():
    vec = np.concatenate([np.full(30, 6.0), [10.0, np.pi, 5.0, -np.pi / 2]])
    scaled = nn.scale_observations(vec)
    assert np.allclose(scaled[:30], 1.0)
    assert scaled[30] == pytest.approx(1.0)
    assert scaled[31] == pytest.approx(1.0)
    assert scaled[32] == pytest.approx(0.5)
    assert scaled[33] == pytest.approx(-0.5)
