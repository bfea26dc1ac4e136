import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipcert.errors import InvalidInputError
from dipcert.linalg import make_rng
from dipcert.model import (
    TwoLayerNet,
    activation_constants,
    augment_input,
    flatten_params,
    forward,
    get_activation,
    init_network,
    jacobian,
    jacobian_difference_gram,
    jacobian_gram,
    load_network,
    save_network,
    unflatten_params,
)


def fd_jacobian(net, h=1e-5):
    theta = net.params()
    cols = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((forward(net.with_params(theta + e)) - forward(net.with_params(theta - e))) / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("name,B", [("sigmoid", 0.25), ("tanh", 1.0), ("softplus", 1.0)])
def test_activation_bounds(name, B):
    act = get_activation(name)
    assert act.B == B
    x = make_rng(1).uniform(-20, 20, 5000)
    y = make_rng(2).uniform(-20, 20, 5000)
    assert np.all(np.abs(act.derivative(x)) <= B + 1e-15)
    assert np.all(np.abs(act.derivative(x) - act.derivative(y)) <= B * np.abs(x - y) + 1e-15)
    C, Cp, _ = activation_constants(name)
    assert np.isfinite(C) and C > 0 and np.isfinite(Cp) and Cp > 0


def test_unknown_activation():
    with pytest.raises(InvalidInputError):
        get_activation("relu")


def test_sigmoid_C_phi_monte_carlo():
    C, _, B = activation_constants("sigmoid")
    assert B == 0.25
    x = make_rng(3).standard_normal(10_000_000)
    s = (0.5 * (1 + np.tanh(0.5 * x))) ** 2
    se = s.std() / np.sqrt(s.size)
    assert abs(C ** 2 - s.mean()) <= 3 * se


def test_init_shapes_and_scheme():
    net = init_network(4, 3, 2, False, "tanh", make_rng(0))
    assert net.W.shape == (4, 3) and net.V.shape == (2, 4)
    assert np.linalg.norm(net.u) == pytest.approx(1.0, abs=1e-12)
    assert set(np.unique(net.V)) <= {-1.0, 1.0}
    assert net.num_params == 12
    assert init_network(4, 3, 2, True, "tanh", make_rng(0)).num_params == 20
    with pytest.raises(InvalidInputError):
        init_network(0, 3, 2, False, "tanh", make_rng(0))


def test_V_column_covariance():
    rng = make_rng(0, 9)
    cols = np.array([init_network(1, 1, 3, False, "tanh", rng).V[:, 0] for _ in range(10_000)])
    cov = cols.T @ cols / len(cols)
    assert np.max(np.abs(cov - np.eye(3))) <= 0.05


def test_init_deterministic():
    a = init_network(5, 4, 3, True, "sigmoid", make_rng(3, 1))
    b = init_network(5, 4, 3, True, "sigmoid", make_rng(3, 1))
    assert np.array_equal(a.W, b.W) and np.array_equal(a.V, b.V) and np.array_equal(a.u, b.u)


def test_forward_examples():
    act = get_activation("tanh")
    net = init_network(6, 3, 2, False, act, make_rng(0))
    zero = TwoLayerNet(np.zeros_like(net.W), net.V, net.u, False, act)
    assert np.all(forward(zero) == 0)
    one = TwoLayerNet(np.array([[2.0]]), np.array([[3.0]]), np.array([1.0]), False, act)
    assert forward(one)[0] == pytest.approx(3 * np.tanh(2.0), rel=1e-15)
    assert forward(one)[0] == pytest.approx(2.8920827, rel=1e-7)
    doubled = TwoLayerNet(net.W, 2 * net.V, net.u, False, act)
    assert np.allclose(forward(doubled), 2 * forward(net), rtol=1e-14)


def test_invalid_u():
    with pytest.raises(InvalidInputError):
        TwoLayerNet(np.ones((2, 2)), np.ones((1, 2)), np.array([1.0, 1.0]), False, get_activation("tanh"))


@given(st.integers(1, 20), st.integers(1, 5), st.integers(1, 8), st.booleans(),
       st.sampled_from(["sigmoid", "tanh", "softplus"]), st.integers(0, 2**31 - 1))
def test_jacobian_matches_finite_differences(k, d, n, train_V, act, seed):
    net = init_network(k, d, n, train_V, act, make_rng(seed))
    J = jacobian(net)
    assert J.shape == (n, net.num_params)
    Jfd = fd_jacobian(net)
    assert np.linalg.norm(J - Jfd) <= 1e-6 * max(np.linalg.norm(Jfd), 1e-12)


def test_jacobian_at_zero_closed_form():
    act = get_activation("tanh")
    base = init_network(5, 3, 2, True, act, make_rng(4))
    net = TwoLayerNet(np.zeros((5, 3)), base.V, base.u, True, act)
    J = jacobian(net)
    k, d = 5, 3
    assert np.all(J[:, k * d:] == 0)
    for i in range(k):
        assert np.allclose(J[:, i * d:(i + 1) * d], np.outer(net.V[:, i], net.u) / np.sqrt(k))


def test_jacobian_sign_flip_of_u():
    net = init_network(7, 4, 3, False, "sigmoid", make_rng(5))
    flipped = TwoLayerNet(net.W, net.V, -net.u, False, net.activation)
    # z -> -z under u -> -u; compare against finite differences at the flipped net
    Jf = jacobian(flipped)
    assert np.linalg.norm(Jf - fd_jacobian(flipped)) <= 1e-6 * np.linalg.norm(Jf)
    neg_W = TwoLayerNet(-net.W, net.V, -net.u, False, net.activation)
    # same hidden layer, W-block columns flip sign
    assert np.allclose(jacobian(neg_W), -jacobian(net))


@given(st.integers(1, 10), st.integers(1, 4), st.integers(1, 5), st.booleans(), st.integers(0, 2**31 - 1))
def test_gram_matches_dense(k, d, n, train_V, seed):
    net = init_network(k, d, n, train_V, "softplus", make_rng(seed))
    J = jacobian(net)
    assert np.allclose(jacobian_gram(net), J @ J.T, rtol=1e-10, atol=1e-12)
    other = init_network(k, d, n, train_V, "softplus", make_rng(seed + 1))
    other = TwoLayerNet(other.W, other.V if train_V else net.V, net.u, train_V, net.activation)
    Dm = jacobian(net) - jacobian(other)
    assert np.allclose(jacobian_difference_gram(net, other), Dm @ Dm.T, rtol=1e-10, atol=1e-12)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.booleans(), st.integers(0, 2**31 - 1))
def test_flatten_roundtrip(k, d, n, train_V, seed):
    net = init_network(k, d, n, train_V, "tanh", make_rng(seed))
    theta = flatten_params(net.W, net.V, train_V)
    W, V = unflatten_params(theta, k, d, n, train_V, net.V)
    assert np.array_equal(W, net.W) and np.array_equal(V, net.V)
    with pytest.raises(InvalidInputError):
        unflatten_params(theta[:-1], k, d, n, train_V, net.V)


def test_augment_input():
    v = augment_input([3.0, 0.0])
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert v[-1] > 0


def test_checkpoint_roundtrip(tmp_path):
    net = init_network(6, 3, 4, True, "softplus", make_rng(8))
    path = save_network(net, tmp_path / "net.npz")
    back = load_network(path)
    assert np.array_equal(back.W, net.W) and np.array_equal(back.V, net.V)
    assert np.array_equal(back.u, net.u) and back.train_V and back.activation.name == "softplus"
    np.savez(tmp_path / "bad.npz", W=net.W)
    with pytest.raises(InvalidInputError):
        load_network(tmp_path / "bad.npz")
