"""Two-layer generator x = V phi(W u) / sqrt(k), its Jacobian and initialization.

Parameter vectors use one fixed layout: the rows of ``W`` first (row-major,
``k*d`` entries), then, when ``V`` is trained, the columns of ``V``
(``k*n`` entries, column ``V[:, 0]`` first).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .linalg import gaussian_expectation, sample_unit_sphere


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _sigmoid_d(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _tanh_d(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _softplus(x):
    return np.logaddexp(0.0, x)


# name -> (phi, phi', B) with B >= sup|phi'| and B >= Lip(phi')
_ACTIVATIONS = {
    "sigmoid": (_sigmoid, _sigmoid_d, 0.25),
    "tanh": (np.tanh, _tanh_d, 1.0),
    "softplus": (_softplus, _sigmoid, 1.0),
}


@dataclass(frozen=True)
class Activation:
    name: str
    value: object = field(repr=False)
    derivative: object = field(repr=False)
    B: float

    @cached_property
    def C_phi(self) -> float:
        return float(np.sqrt(gaussian_expectation(lambda x: self.value(x) ** 2)))

    @cached_property
    def C_phi_prime(self) -> float:
        return float(np.sqrt(gaussian_expectation(lambda x: self.derivative(x) ** 2)))


def get_activation(name: str) -> Activation:
    try:
        phi, dphi, B = _ACTIVATIONS[name]
    except KeyError:
        raise InvalidInputError(
            f"unsupported activation {name!r}; choose from {sorted(_ACTIVATIONS)}"
        ) from None
    return Activation(name, phi, dphi, B)


def activation_constants(name: str) -> tuple[float, float, float]:
    """(C_phi, C_phi_prime, B) for a supported activation."""
    act = get_activation(name)
    return act.C_phi, act.C_phi_prime, act.B


@dataclass(frozen=True)
class TwoLayerNet:
    W: np.ndarray  # k x d
    V: np.ndarray  # n x k
    u: np.ndarray  # d, unit norm
    train_V: bool
    activation: Activation

    def __post_init__(self):
        k, d = self.W.shape
        if self.V.shape[1] != k or self.u.shape != (d,):
            raise InvalidInputError(
                f"inconsistent shapes W{self.W.shape} V{self.V.shape} u{self.u.shape}"
            )
        if abs(np.linalg.norm(self.u) - 1.0) > 1e-12:
            raise InvalidInputError("network input u must have unit norm")

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def num_params(self) -> int:
        return self.k * self.d + (self.k * self.n if self.train_V else 0)

    @property
    def layers(self) -> str:
        return "both" if self.train_V else "fixed_V"

    def params(self) -> np.ndarray:
        return flatten_params(self.W, self.V, self.train_V)

    def with_params(self, theta) -> "TwoLayerNet":
        W, V = unflatten_params(theta, self.k, self.d, self.n, self.train_V, self.V)
        return replace(self, W=W, V=V)


def flatten_params(W, V, train_V: bool) -> np.ndarray:
    parts = [np.ravel(W)]
    if train_V:
        parts.append(np.ravel(V, order="F"))
    return np.concatenate(parts)


def unflatten_params(theta, k, d, n, train_V, V_fixed=None):
    theta = np.asarray(theta, dtype=float)
    expected = k * d + (k * n if train_V else 0)
    if theta.shape != (expected,):
        raise InvalidInputError(f"parameter vector must have length {expected}")
    W = theta[: k * d].reshape(k, d).copy()
    if train_V:
        V = theta[k * d:].reshape(n, k, order="F").copy()
    else:
        V = np.array(V_fixed, dtype=float, copy=True)
    return W, V


def augment_input(u) -> np.ndarray:
    """Append a constant 1 to ``u`` and renormalize, so a column of W acts as a bias."""
    v = np.append(np.asarray(u, dtype=float), 1.0)
    return v / np.linalg.norm(v)


def init_network(k: int, d: int, n: int, train_V: bool, act, rng: np.random.Generator) -> TwoLayerNet:
    """u uniform on the sphere, W iid N(0, 1), V iid Rademacher (D = 1).

    Draw order is fixed (u, then W, then V) so that a given stream always
    yields the same network.
    """
    if min(k, d, n) < 1:
        raise InvalidInputError("k, d and n must all be >= 1")
    if isinstance(act, str):
        act = get_activation(act)
    u = sample_unit_sphere(d, rng)
    W = rng.standard_normal((k, d))
    V = rng.choice(np.array([-1.0, 1.0]), size=(n, k))
    return TwoLayerNet(W=W, V=V, u=u, train_V=train_V, activation=act)


def hidden(net: TwoLayerNet) -> np.ndarray:
    return net.W @ net.u


def forward(net: TwoLayerNet) -> np.ndarray:
    z = hidden(net)
    return net.V @ net.activation.value(z) / np.sqrt(net.k)


def jacobian(net: TwoLayerNet) -> np.ndarray:
    """Dense n x p Jacobian of the output with respect to the parameter vector."""
    k, n = net.k, net.n
    z = hidden(net)
    scale = 1.0 / np.sqrt(k)
    dphi = net.activation.derivative(z)
    # column i*d + j holds phi'(z_i) V[:, i] u_j / sqrt(k)
    JW = scale * ((net.V * dphi)[:, :, None] * net.u[None, None, :]).reshape(n, k * net.d)
    if not net.train_V:
        return JW
    phi = net.activation.value(z)
    # column block i holds phi(z_i) I_n / sqrt(k)
    JV = scale * np.kron(phi[None, :], np.eye(n))
    return np.hstack([JW, JV])


def jacobian_gram(net: TwoLayerNet) -> np.ndarray:
    """J J^T (n x n) without materializing J."""
    z = hidden(net)
    dphi2 = net.activation.derivative(z) ** 2
    G = (net.V * dphi2) @ net.V.T * (net.u @ net.u) / net.k
    if net.train_V:
        phi2 = net.activation.value(z) ** 2
        G = G + np.eye(net.n) * phi2.sum() / net.k
    return G


def jacobian_difference_gram(a: TwoLayerNet, b: TwoLayerNet) -> np.ndarray:
    """(J_a - J_b)(J_a - J_b)^T, for spectral norms of Jacobian differences."""
    za, zb = hidden(a), hidden(b)
    act = a.activation
    C = a.V * act.derivative(za) - b.V * act.derivative(zb)
    G = C @ C.T * (a.u @ a.u) / a.k
    if a.train_V:
        dphi = act.value(za) - act.value(zb)
        G = G + np.eye(a.n) * (dphi @ dphi) / a.k
    return G


_CHECKPOINT_FIELDS = ("k", "d", "n", "train_V", "activation", "u", "W", "V")


def save_network(net: TwoLayerNet, path) -> Path:
    """Write a ``.npz`` checkpoint; float arrays are stored bit-exactly."""
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            k=np.int64(net.k),
            d=np.int64(net.d),
            n=np.int64(net.n),
            train_V=np.bool_(net.train_V),
            activation=np.str_(net.activation.name),
            u=net.u,
            W=net.W,
            V=net.V,
        )
    return path


def load_network(path) -> TwoLayerNet:
    with np.load(path, allow_pickle=False) as data:
        missing = [f for f in _CHECKPOINT_FIELDS if f not in data]
        if missing:
            raise InvalidInputError(f"checkpoint {path} lacks fields {missing}")
        net = TwoLayerNet(
            W=data["W"].copy(),
            V=data["V"].copy(),
            u=data["u"].copy(),
            train_V=bool(data["train_V"]),
            activation=get_activation(str(data["activation"])),
        )
        if (net.k, net.d, net.n) != (int(data["k"]), int(data["d"]), int(data["n"])):
            raise InvalidInputError(f"checkpoint {path} has inconsistent dimensions")
    return net
