"""Full-batch gradient descent on the generator parameters.

Since the network input u is fixed, every gradient step on W is a rank-one
update along u: W(tau) = W(0) + delta(tau) u^T. Training therefore runs on the
hidden pre-activations z = W u (k numbers) and the accumulated row offsets
delta, and W is rebuilt only at the end. With a fixed V and a linear operator
the map z -> A V phi(z) / sqrt(k) is precomputed as one m x k matrix, so an
iteration costs O(mk) whatever d and n are.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certificates import (
    early_stop_iteration,
    jacobian_norm,
    radius_R,
    sigma0 as _sigma0,
    smoothness_estimate,
)
from .errors import DivergenceError, InvalidInputError
from .losses import KLLoss
from .model import TwoLayerNet, forward, hidden
from .operators import LinearOperator

AUTO_CERTIFIED = "auto_certified"
FIXED = "fixed"


@dataclass
class TrainConfig:
    max_iters: int = 25000
    loss_threshold: float = 1e-7
    step_mode: str = AUTO_CERTIFIED
    safety: float = 0.9
    step_size: float | None = None
    trace_stride: int = 100
    record_sigma_min: bool = True
    record_theta_drift: bool = True
    record_signal_error: bool = True
    record_obs_error: bool = True
    smoothness: str = "certified"
    D: float = 1.0

    def __post_init__(self):
        if self.max_iters < 0:
            raise InvalidInputError("max_iters must be >= 0")
        if self.trace_stride < 1:
            raise InvalidInputError("trace_stride must be >= 1")
        if self.step_mode == AUTO_CERTIFIED:
            if not (0.0 < self.safety <= 1.0):
                raise InvalidInputError("safety must lie in (0, 1]")
        elif self.step_mode == FIXED:
            if self.step_size is None or not (self.step_size > 0):
                raise InvalidInputError("fixed step mode needs step_size > 0")
        else:
            raise InvalidInputError(f"unknown step_mode {self.step_mode!r}")


TRACE_COLUMNS = ("iter", "loss", "sigma_min_J", "theta_drift", "signal_err", "obs_err")
_TRACE_ATTRS = ("iters", "loss", "sigma_min_J", "theta_drift", "signal_err", "obs_err")


@dataclass
class TrainTrace:
    """Recorded rows (every ``trace_stride`` iterations plus the last one) and
    the full per-iteration loss history."""

    iters: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    sigma_min_J: list = field(default_factory=list)
    theta_drift: list = field(default_factory=list)
    signal_err: list = field(default_factory=list)
    obs_err: list = field(default_factory=list)
    loss_history: np.ndarray | None = None
    converged: bool = False
    iterations: int = 0
    step_size: float = math.nan
    L_hat: float = math.nan
    final_net: TwoLayerNet | None = None
    final_x: np.ndarray | None = None

    @property
    def final_loss(self) -> float:
        return float(self.loss_history[-1]) if self.loss_history is not None and len(self.loss_history) else math.nan

    def column(self, name) -> np.ndarray:
        return np.array([math.nan if v is None else v for v in getattr(self, name)], dtype=float)

    def rows(self):
        for i in range(len(self.iters)):
            yield tuple(getattr(self, c)[i] for c in _TRACE_ATTRS)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow(["" if v is None else (v if isinstance(v, int) else repr(float(v))) for v in row])
        return path


def read_trace_csv(path) -> dict:
    """Columns of an exported trace; empty cells come back as NaN."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {c: [] for c in TRACE_COLUMNS}
        for row in reader:
            for c in TRACE_COLUMNS:
                cols[c].append(float(row[c]) if row[c] != "" else math.nan)
    return {c: np.array(v) for c, v in cols.items()}


def grad_theta(net: TwoLayerNet, op, loss: KLLoss) -> np.ndarray:
    """J_g(theta)^T J_F(x)^T grad L(F(x)) in the flat parameter layout."""
    z = hidden(net)
    act = net.activation
    a = act.value(z)
    sk = math.sqrt(net.k)
    x = net.V @ a / sk
    gv = loss.gradient(op.apply(x))
    gx = op.vjp(x, gv)
    gz = act.derivative(z) * (net.V.T @ gx) / sk
    parts = [np.outer(gz, net.u).ravel()]
    if net.train_V:
        parts.append(np.outer(gx, a).ravel(order="F") / sk)
    return np.concatenate(parts)


def certified_step(net, op, loss, safety=0.9, kind="certified", D=1.0):
    """(gamma, L_hat) with gamma = safety / L_hat on the ball of radius R."""
    s0 = _sigma0(net)
    R = radius_R(net.layers, s0, net.activation.B, D, net.n, net.k)
    L_hat = smoothness_estimate(net, op, loss, R, kind=kind, D=D)
    if not (L_hat > 0):
        raise InvalidInputError("smoothness estimate is zero; use a fixed step")
    return safety / L_hat, L_hat


def local_step(net, op, loss, safety=0.9):
    """safety / ((1 + 2p) |r_0|^(2p) |J_0|^2 |A|^2): the curvature bound at theta_0 itself."""
    r0 = float(np.linalg.norm(op.apply(forward(net)) - loss.y))
    p = loss.p
    curv = (1 + 2 * p) * (r0 ** (2 * p) if p > 0 else 1.0) * jacobian_norm(net) ** 2 * op.spectral_norm ** 2
    if not (curv > 0):
        raise InvalidInputError("zero curvature at initialization; use a fixed step")
    return safety / curv


def train(net: TwoLayerNet, op, y_obs, loss: KLLoss | None = None, cfg: TrainConfig | None = None,
          *, x_true=None, y_clean=None) -> TrainTrace:
    """Gradient descent theta <- theta - gamma grad_theta until loss <= threshold or max_iters.

    ``x_true`` and ``y_clean`` enable the signal and observation error columns.
    Raises DivergenceError (carrying the partial trace) on a non-finite loss.
    """
    cfg = cfg or TrainConfig()
    y_obs = np.asarray(y_obs, dtype=float)
    loss = KLLoss(0.0, y_obs) if loss is None else loss.with_target(y_obs)

    trace = TrainTrace()
    if cfg.step_mode == FIXED:
        gamma = float(cfg.step_size)
        L_hat = math.nan
    else:
        gamma, L_hat = certified_step(net, op, loss, cfg.safety, cfg.smoothness, cfg.D)
    trace.step_size, trace.L_hat = gamma, L_hat

    act = net.activation
    phi, dphi = act.value, act.derivative
    k = net.k
    sk = math.sqrt(k)
    u = net.u
    uu = float(u @ u)
    V0 = net.V
    V = net.V.copy()
    z = hidden(net).copy()
    delta = np.zeros(k)
    p = loss.p
    q = p + 1.0
    fast = isinstance(op, LinearOperator) and not net.train_V
    M = op.A @ V / sk if fast else None

    x_true = None if x_true is None else np.asarray(x_true, dtype=float)
    y_clean = None if y_clean is None else np.asarray(y_clean, dtype=float)
    history = np.empty(cfg.max_iters + 1)

    def record(tau, L, a, yv):
        trace.iters.append(tau)
        trace.loss.append(L)
        sig = drift = serr = oerr = None
        if cfg.record_sigma_min:
            G = (V * dphi(z) ** 2) @ V.T * (uu / k)
            if net.train_V:
                G = G + np.eye(net.n) * (a @ a) / k
            lam = np.linalg.eigvalsh(G)[0]
            sig = math.sqrt(max(lam, 0.0))
        if cfg.record_theta_drift:
            dv = np.sum((V - V0) ** 2) if net.train_V else 0.0
            drift = math.sqrt(float(delta @ delta) * uu + dv)
        if cfg.record_signal_error and x_true is not None:
            serr = float(np.linalg.norm(V @ a / sk - x_true))
        if cfg.record_obs_error and y_clean is not None:
            oerr = float(np.linalg.norm(yv - y_clean))
        trace.sigma_min_J.append(sig)
        trace.theta_drift.append(drift)
        trace.signal_err.append(serr)
        trace.obs_err.append(oerr)

    # overflow is detected below and reported as a DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        tau = 0
        while True:
            a = phi(z)
            if fast:
                yv = M @ a
            else:
                x = V @ a / sk
                yv = op.apply(x)
            r = yv - y_obs
            rr = r @ r  # numpy scalar: overflow gives inf, not an exception
            L = rr ** q / (2.0 * q)
            history[tau] = L
            L = float(L)
            if not math.isfinite(L):
                trace.loss_history = history[: tau + 1].copy()
                trace.iterations = tau
                raise DivergenceError(f"non-finite loss at iteration {tau}", trace)
            done = L <= cfg.loss_threshold
            last = done or tau >= cfg.max_iters
            if tau % cfg.trace_stride == 0 or last:
                record(tau, L, a, yv)
            if last:
                trace.converged = bool(done)
                break
            gv = r if p == 0 else rr ** p * r
            if fast:
                gz = dphi(z) * (M.T @ gv)
            else:
                gx = op.vjp(x, gv)
                gz = dphi(z) * (V.T @ gx) / sk
                if net.train_V:
                    V -= gamma * np.outer(gx, a) / sk
            step = gamma * gz
            delta -= step
            z -= step * uu
            tau += 1

    trace.loss_history = history[: tau + 1].copy()
    trace.iterations = tau
    W = net.W + np.outer(delta, u)
    trace.final_net = replace(net, W=W, V=V)
    trace.final_x = forward(trace.final_net)
    return trace


__all__ = [
    "AUTO_CERTIFIED", "FIXED", "TRACE_COLUMNS", "TrainConfig", "TrainTrace",
    "certified_step", "early_stop_iteration", "grad_theta", "local_step",
    "read_trace_csv", "smoothness_estimate", "train",
]
