"""Dense matrix numerics, seeded random streams and Gaussian expectations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, RankZeroError

DEFAULT_RANK_TOL = 1e-10
DEFAULT_HERMITE_ORDER = 64


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream) pair naming one reproducible random stream.

    Streams are derived with ``SeedSequence`` spawn keys on a Philox
    (counter-based) bit generator, so the same pair yields the same draws no
    matter which process or in what order it is consumed.
    """

    seed: int
    stream: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=tuple(int(s) for s in self.stream))
        return np.random.Generator(np.random.Philox(ss))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return SeededRng(seed, tuple(stream)).generator()


def _as_finite_matrix(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.size == 0:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    return M


def singular_values(M) -> np.ndarray:
    """The min(rows, cols) singular values, descending, zeros included."""
    return np.linalg.svd(_as_finite_matrix(M), compute_uv=False)


def smallest_singular_value(M) -> float:
    """sigma_min over the full spectrum; zero whenever M is rank deficient."""
    return float(singular_values(M)[-1])


def smallest_nonzero_singular_value(M, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    M = _as_finite_matrix(M)
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        raise RankZeroError("zero matrix has no nonzero singular value")
    kept = s[s > rank_tol * s[0]]
    if kept.size == 0:
        raise RankZeroError("all singular values below the rank threshold")
    return float(kept[-1])


def spectral_norm(M) -> float:
    M = _as_finite_matrix(M)
    return float(np.linalg.norm(M, 2))


def gram_sigma_min(G) -> float:
    """sqrt(lambda_min) of a symmetric PSD Gram matrix ``J @ J.T``.

    This is sigma_min of ``J`` restricted to its row space, which equals the
    full-spectrum minimum when ``J`` is wide (rows <= cols).
    """
    G = _as_finite_matrix(G)
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))[0]
    return float(np.sqrt(max(lam, 0.0)))


def gram_sigma_max(G) -> float:
    G = _as_finite_matrix(G)
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))[-1]
    return float(np.sqrt(max(lam, 0.0)))


def sample_unit_sphere(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on S^{d-1} as a normalized standard Gaussian vector."""
    if d < 1:
        raise InvalidInputError("sphere dimension must be >= 1")
    while True:
        v = rng.standard_normal(d)
        nv = np.linalg.norm(v)
        if nv > 0:
            return v / nv


def hermite_nodes(order: int = DEFAULT_HERMITE_ORDER):
    """Nodes and weights for E[f(X)], X ~ N(0, 1) (probabilists' Hermite)."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / np.sqrt(2.0 * np.pi)


def gaussian_expectation(f, order: int = DEFAULT_HERMITE_ORDER) -> float:
    """Gauss-Hermite estimate of E[f(X)] for a standard normal X."""
    if order < 16:
        raise InvalidInputError("quadrature order must be at least 16")
    x, w = hermite_nodes(order)
    fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise InvalidInputError("integrand is non-finite at a quadrature node")
    return float(np.dot(w, fx))
