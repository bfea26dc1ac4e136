"""Linear forward operators, their spectral characteristics, and noise."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, RankZeroError, RestrictedInjectivityUnavailable
from .linalg import (
    DEFAULT_RANK_TOL,
    singular_values,
    smallest_nonzero_singular_value,
)


@dataclass(frozen=True)
class LinearOperator:
    """Dense m x n matrix A with cached spectral data.

    Implements the operator interface the trainer relies on: ``apply``,
    ``jvp`` (Jacobian-vector product) and ``vjp`` (adjoint application).
    """

    A: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.ndim != 2 or A.size == 0 or not np.all(np.isfinite(A)):
            raise InvalidInputError("operator matrix must be a finite, non-empty 2-D array")
        object.__setattr__(self, "A", A)

    @property
    def shape(self):
        return self.A.shape

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.A

    def apply(self, x):
        return self.A @ x

    def jvp(self, x, dx):
        return self.A @ dx

    def vjp(self, x, v):
        return self.A.T @ v

    @cached_property
    def singular_values(self) -> np.ndarray:
        return singular_values(self.A)

    @cached_property
    def spectral_norm(self) -> float:
        return float(self.singular_values[0])

    @cached_property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1])

    @cached_property
    def sigma_min_nonzero(self) -> float:
        return smallest_nonzero_singular_value(self.A)

    @cached_property
    def condition_number(self) -> float:
        return self.spectral_norm / self.sigma_min_nonzero

    @cached_property
    def rank(self) -> int:
        s = self.singular_values
        return int(np.sum(s > DEFAULT_RANK_TOL * s[0])) if s[0] > 0 else 0


@dataclass(frozen=True)
class NoiseSpec:
    beta: float
    m: int

    def __post_init__(self):
        if self.beta < 0 or self.m < 1:
            raise InvalidInputError("noise needs beta >= 0 and m >= 1")


def gaussian_operator(m: int, n: int, rng: np.random.Generator) -> LinearOperator:
    """Entries iid N(0, 1/n), i.e. standard deviation 1/sqrt(n)."""
    if m < 1 or n < 1:
        raise InvalidInputError("operator dimensions must be >= 1")
    A = rng.standard_normal((m, n)) / np.sqrt(n)
    return LinearOperator(A, {"kind": "gaussian"})


def haar_orthogonal(size: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((size, size))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))


def prescribed_spectrum_operator(n: int, spectrum, rng: np.random.Generator, m: int | None = None) -> LinearOperator:
    """A = U diag(spectrum) V^T with Haar-random orthogonal U (m x m) and V (n x n)."""
    s = np.asarray(spectrum, dtype=float)
    m = n if m is None else m
    if s.ndim != 1 or s.size == 0 or s.size > min(m, n):
        raise InvalidInputError("spectrum length must be between 1 and min(m, n)")
    if np.any(s <= 0):
        raise InvalidInputError("spectrum entries must be > 0")
    U = haar_orthogonal(m, rng)
    V = haar_orthogonal(n, rng)
    r = s.size
    A = (U[:, :r] * s) @ V[:, :r].T
    return LinearOperator(A, {"kind": "prescribed_spectrum"})


def paper_spectrum(n: int = 10) -> np.ndarray:
    """Singular values 1/(z^2 + 1), z = 0..n-1."""
    z = np.arange(n, dtype=float)
    return 1.0 / (z ** 2 + 1.0)


def sigma_F(op: LinearOperator) -> float:
    """Smallest nonzero singular value: inf |A^T z| / |z| over z in ran(A)."""
    return op.sigma_min_nonzero


def mu_F_global(op: LinearOperator) -> float:
    """sigma_min(A) when A is square and full rank (global injectivity)."""
    if op.m != op.n:
        raise RestrictedInjectivityUnavailable("global mu_F needs a square operator")
    if op.rank < op.n:
        raise RestrictedInjectivityUnavailable("global mu_F needs a full-rank operator")
    return op.sigma_min


def min_conic_singular_value_sampled(op: LinearOperator, direction_sampler, N: int) -> float:
    """min over N sampled directions of |A z| / |z|.

    This is an upper estimate of the conic infimum, never a certificate.
    ``direction_sampler()`` returns one vector of the cone per call.
    """
    if N < 1:
        raise InvalidInputError("need at least one sample")
    best = np.inf
    for _ in range(N):
        z = np.asarray(direction_sampler(), dtype=float)
        nz = np.linalg.norm(z)
        if nz == 0:
            raise InvalidInputError("direction sampler produced a zero vector")
        best = min(best, float(np.linalg.norm(op.A @ z) / nz))
    return best


def sample_complexity_bound(sigma, alpha_sg, w, tau, C=1.0, C_prime=1.0) -> float:
    """Lower bound on m for restricted injectivity under sub-Gaussian rows."""
    if alpha_sg <= 0:
        raise InvalidInputError("alpha must be > 0")
    if w < 0 or tau < 0:
        raise InvalidInputError("width and tau must be >= 0")
    return C_prime * (sigma / alpha_sg) ** 6 * w ** 2 + 2.0 * C ** -2 * sigma ** 2 / alpha_sg ** 4 * tau ** 2


def make_noise(spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.beta == 0:
        return np.zeros(spec.m)
    return rng.uniform(-spec.beta, spec.beta, size=spec.m)


def expected_noise_floor(m: int, beta: float, mu_F: float) -> float:
    """sqrt(m) beta / (sqrt(6) mu_F), the dashed reference line of the noise sweep."""
    if mu_F <= 0:
        raise InvalidInputError("mu_F must be > 0")
    return float(np.sqrt(m) * beta / (np.sqrt(6.0) * mu_F))


def save_operator(op: LinearOperator, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, A=op.A, meta=np.str_(json.dumps(op.meta, sort_keys=True)))
    return path


def load_operator(path) -> LinearOperator:
    with np.load(path, allow_pickle=False) as data:
        if "A" not in data:
            raise InvalidInputError(f"{path} holds no operator matrix")
        meta = json.loads(str(data["meta"])) if "meta" in data else {}
        return LinearOperator(data["A"].copy(), meta)


__all__ = [
    "LinearOperator",
    "NoiseSpec",
    "RankZeroError",
    "expected_noise_floor",
    "gaussian_operator",
    "load_operator",
    "make_noise",
    "min_conic_singular_value_sampled",
    "mu_F_global",
    "paper_spectrum",
    "prescribed_spectrum_operator",
    "sample_complexity_bound",
    "save_operator",
    "sigma_F",
]
