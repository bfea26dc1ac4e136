"""Radial loss family L_y(v) = eta(|v - y|^2), eta(s) = s^(p+1) / (2(p+1)).

Each member satisfies the Lojasiewicz inequality with psi(s) = c s^alpha,
alpha = 1/(2(p+1)), and the constant c below makes the inequality an
equality: psi'(L(v)) |grad L(v)| = 1 and psi(L(v)) = |v - y| for every v != y.
At p = 0 the loss is |v - y|^2 / 2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError


def desingularizing_constants(p: float) -> tuple[float, float]:
    """(c, alpha) making the KL inequality tight for the p-loss."""
    if p < 0:
        raise InvalidInputError("p must be >= 0")
    alpha = 1.0 / (2.0 * (p + 1.0))
    c = (2.0 * (p + 1.0)) ** (alpha - 1.0) / alpha
    return c, alpha


@dataclass(frozen=True)
class Desingularizer:
    """psi(s) = c s^alpha together with Psi, a primitive of -psi'^2, and its inverse.

    The integration constant of Psi is zero.
    """

    c: float
    alpha: float

    def __post_init__(self):
        if self.c <= 0 or not (0.0 < self.alpha <= 1.0):
            raise InvalidInputError("need c > 0 and alpha in (0, 1]")

    @property
    def _is_log(self) -> bool:
        return self.alpha == 0.5

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("psi is defined on s >= 0")
        return self.c * s ** self.alpha

    def psi_prime(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise DomainError("psi' is defined on s > 0")
        return self.c * self.alpha * s ** (self.alpha - 1.0)

    def psi_inv(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError("psi^-1 is defined on r >= 0")
        return (r / self.c) ** (1.0 / self.alpha)

    def Psi(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise DomainError("Psi is defined on s > 0")
        c2 = self.c ** 2
        if self._is_log:
            return -(c2 / 4.0) * np.log(s)
        a = self.alpha
        return -c2 * a * a * s ** (2 * a - 1) / (2 * a - 1)

    def Psi_inv(self, u):
        """Inverse of Psi. For alpha > 1/2, Psi maps onto (-inf, 0) and values
        u >= 0 map to 0 (finite termination)."""
        u = np.asarray(u, dtype=float)
        c2 = self.c ** 2
        a = self.alpha
        if self._is_log:
            return np.exp(-4.0 * u / c2)
        if a < 0.5:
            if np.any(u <= 0):
                raise DomainError("Psi^-1 is defined on u > 0 when alpha < 1/2")
            return ((1 - 2 * a) * u / (c2 * a * a)) ** (-1.0 / (1 - 2 * a))
        neg = np.minimum(u, 0.0)
        return np.where(u < 0, ((2 * a - 1) * (-neg) / (c2 * a * a)) ** (1.0 / (2 * a - 1)), 0.0)


def loja_loss_rate(alpha: float, c: float, gamma_t: float) -> float:
    """Loss bound Psi^-1(gamma) written in the Lojasiewicz case split."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidInputError("alpha must lie in (0, 1]")
    if alpha > 0.5:
        return float(Desingularizer(c, alpha).Psi_inv(gamma_t))
    if gamma_t <= 0:
        raise DomainError("the rate needs gamma(t) > 0")
    if alpha == 0.5:
        return float(np.exp(-4.0 * gamma_t / c ** 2))
    return float(((1 - 2 * alpha) / (alpha ** 2 * c ** 2) * gamma_t) ** (-1.0 / (1 - 2 * alpha)))


@dataclass(frozen=True)
class KLLoss:
    p: float
    y: np.ndarray

    def __post_init__(self):
        if self.p < 0:
            raise InvalidInputError("p must be >= 0")
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))

    @property
    def constants(self) -> tuple[float, float]:
        return desingularizing_constants(self.p)

    @property
    def c(self) -> float:
        return self.constants[0]

    @property
    def alpha(self) -> float:
        return self.constants[1]

    @property
    def desingularizer(self) -> Desingularizer:
        return Desingularizer(*self.constants)

    def _residual(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != self.y.shape:
            raise InvalidInputError(f"dimension mismatch: {v.shape} vs {self.y.shape}")
        return v - self.y

    def value(self, v) -> float:
        r = self._residual(v)
        q = self.p + 1.0
        return float((r @ r) ** q / (2.0 * q))

    def gradient(self, v) -> np.ndarray:
        r = self._residual(v)
        if self.p == 0:
            return r
        return (r @ r) ** self.p * r

    def with_target(self, y) -> "KLLoss":
        return KLLoss(self.p, y)


def loss_value(loss: KLLoss, v) -> float:
    return loss.value(v)


def loss_gradient(loss: KLLoss, v) -> np.ndarray:
    return loss.gradient(v)
