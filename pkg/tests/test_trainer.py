import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipcert.certificates import build_gate_instance
from dipcert.errors import DivergenceError, InvalidInputError
from dipcert.linalg import make_rng
from dipcert.losses import KLLoss
from dipcert.model import TwoLayerNet, forward, get_activation, init_network
from dipcert.operators import gaussian_operator
from dipcert.trainer import (
    TRACE_COLUMNS,
    TrainConfig,
    early_stop_iteration,
    grad_theta,
    read_trace_csv,
    train,
)


class DenseOp:
    """Duck-typed operator that forces the generic (non-precomputed) path."""

    def __init__(self, A):
        self.A = A
        self.spectral_norm = float(np.linalg.norm(A, 2))
        s = np.linalg.svd(A, compute_uv=False)
        self.sigma_min_nonzero = float(s[s > 1e-10 * s[0]][-1])

    def apply(self, x):
        return self.A @ x

    def jvp(self, x, dx):
        return self.A @ dx

    def vjp(self, x, v):
        return self.A.T @ v


def _problem(seed, k=60, d=5, n=6, m=4, train_V=False, act="sigmoid", p=0.0):
    rng = make_rng(seed, 21)
    op = gaussian_operator(m, n, rng)
    x = rng.standard_normal(n)
    net = init_network(k, d, n, train_V, act, rng)
    return net, op, x, op.apply(x), KLLoss(p, op.apply(x))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(safety=0.0)
    with pytest.raises(InvalidInputError):
        TrainConfig(safety=1.2)
    with pytest.raises(InvalidInputError):
        TrainConfig(step_mode="fixed")
    with pytest.raises(InvalidInputError):
        TrainConfig(step_mode="fixed", step_size=-1.0)
    with pytest.raises(InvalidInputError):
        TrainConfig(trace_stride=0)
    with pytest.raises(InvalidInputError):
        TrainConfig(step_mode="adam")


def test_already_optimal():
    net, op, _, _, _ = _problem(0)
    y = op.apply(forward(net))
    tr = train(net, op, y, KLLoss(0.0, y))
    assert tr.converged and tr.iterations == 0 and tr.iters == [0]


def test_grad_zero_at_optimum():
    net, op, _, _, _ = _problem(1, train_V=True)
    y = op.apply(forward(net))
    assert np.all(grad_theta(net, op, KLLoss(0.4, y)) == 0)


@given(st.booleans(), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_grad_directional_finite_differences(train_V, p, seed):
    net, op, _, _, loss = _problem(seed, k=12, d=3, n=4, m=3, train_V=train_V, p=p)
    theta = net.params()
    g = grad_theta(net, op, loss)
    e = make_rng(seed, 5).standard_normal(theta.size)
    f = lambda t: loss.value(op.apply(forward(net.with_params(theta + t * e))))
    h = 1e-6
    fd = (f(h) - f(-h)) / (2 * h)
    assert fd == pytest.approx(g @ e, rel=1e-5, abs=1e-9)


def test_grad_closed_form_at_zero():
    act = get_activation("tanh")
    base = init_network(5, 3, 4, False, act, make_rng(2))
    net = TwoLayerNet(np.zeros((5, 3)), base.V, base.u, False, act)
    op = gaussian_operator(3, 4, make_rng(3))
    loss = KLLoss(0.0, np.ones(3))
    gv = loss.gradient(op.apply(forward(net)))
    expected = np.outer(base.V.T @ op.A.T @ gv / np.sqrt(5), base.u).ravel()
    assert np.allclose(grad_theta(net, op, loss), expected, rtol=1e-12)


def test_fast_path_matches_generic_path():
    net, op, x, _, loss = _problem(4, p=0.3)
    cfg = TrainConfig(max_iters=300, trace_stride=50)
    fast = train(net, op, loss.y, loss, cfg, x_true=x)
    slow = train(net, DenseOp(op.A), loss.y, loss, cfg, x_true=x)
    assert fast.step_size == pytest.approx(slow.step_size, rel=1e-12)
    assert np.allclose(fast.loss_history, slow.loss_history, rtol=1e-9)
    assert np.allclose(fast.final_net.W, slow.final_net.W, rtol=1e-9)


def test_z_space_matches_explicit_gradient_steps():
    net, op, _, _, loss = _problem(5, k=15, d=4, n=3, m=3, train_V=True)
    gamma = 0.05
    tr = train(net, op, loss.y, loss, TrainConfig(max_iters=20, step_mode="fixed", step_size=gamma,
                                                  loss_threshold=0.0))
    theta = net.params()
    for _ in range(20):
        theta = theta - gamma * grad_theta(net.with_params(theta), op, loss)
    assert np.allclose(tr.final_net.params(), theta, rtol=1e-10, atol=1e-12)
    assert tr.final_loss == pytest.approx(loss.value(op.apply(tr.final_x)), rel=1e-10)


@given(st.booleans(), st.sampled_from([0.0, 0.3, 1.0]), st.sampled_from(["sigmoid", "tanh", "softplus"]),
       st.integers(0, 2**31 - 1))
def test_auto_certified_descent(train_V, p, act, seed):
    net, op, x, _, loss = _problem(seed, k=40, train_V=train_V, act=act, p=p)
    tr = train(net, op, loss.y, loss, TrainConfig(max_iters=200, trace_stride=7), x_true=x)
    assert np.all(np.diff(tr.loss_history) <= 0)
    assert np.all(np.diff(tr.iters) > 0)
    assert tr.iters[-1] == tr.iterations
    assert tr.step_size == pytest.approx(0.9 / tr.L_hat)


def test_gate_instance_per_step_rate():
    gi = build_gate_instance(2000, 4, 4, 20, make_rng(6))
    c = gi.cert
    tr = train(gi.net, gi.op, gi.y_obs, gi.loss, TrainConfig(max_iters=2000, trace_stride=1))
    L = tr.loss_history
    assert np.all(L[1:] / L[:-1] <= c.rate_base)


def test_divergence_carries_trace():
    net, op, _, _, loss = _problem(7, train_V=True, act="tanh", p=1.0)
    with pytest.raises(DivergenceError) as info:
        train(net, op, loss.y, loss, TrainConfig(max_iters=500, step_mode="fixed", step_size=10.0))
    tr = info.value.trace
    assert tr is not None and len(tr.loss_history) >= 1 and not tr.converged


def test_trace_csv(tmp_path):
    net, op, x, _, loss = _problem(8)
    tr = train(net, op, loss.y, loss, TrainConfig(max_iters=250, trace_stride=100), x_true=x)
    path = tr.to_csv(tmp_path / "t.csv")
    header = path.read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    cols = read_trace_csv(path)
    assert list(cols["iter"]) == [0.0, 100.0, 200.0, 250.0]
    assert np.all(np.isnan(cols["obs_err"]))  # no clean observation given
    assert np.array_equal(cols["loss"], np.array(tr.loss))
    assert np.array_equal(cols["signal_err"], tr.column("signal_err"))


def test_determinism(tmp_path):
    outs = []
    for i in range(2):
        net, op, x, y, loss = _problem(9, train_V=True)
        tr = train(net, op, loss.y, loss, TrainConfig(max_iters=300, trace_stride=10), x_true=x, y_clean=y)
        outs.append(tr.to_csv(tmp_path / f"{i}.csv").read_bytes())
    assert outs[0] == outs[1]


def test_early_stop_reexport():
    assert early_stop_iteration(0.99, 1e-2, 1.0) == 917
