import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipcert.errors import InvalidInputError, RankZeroError
from dipcert.linalg import (
    SeededRng,
    gaussian_expectation,
    gram_sigma_min,
    make_rng,
    sample_unit_sphere,
    smallest_nonzero_singular_value,
    smallest_singular_value,
    spectral_norm,
)


def test_smallest_singular_value_basic():
    assert smallest_singular_value(np.eye(3)) == pytest.approx(1.0)
    assert smallest_singular_value(np.diag([3.0, 2.0, 1.0])) == pytest.approx(1.0)


def test_smallest_singular_value_2x2_against_eigen_closed_form():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    G = M.T @ M
    tr, det = np.trace(G), np.linalg.det(G)
    lam_min = tr / 2 - np.sqrt(tr * tr / 4 - det)
    assert smallest_singular_value(M) == pytest.approx(np.sqrt(lam_min), rel=1e-12)


def test_non_finite_rejected():
    with pytest.raises(InvalidInputError):
        smallest_singular_value(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidInputError):
        spectral_norm(np.array([[np.inf]]))


def test_smallest_nonzero_singular_value():
    assert smallest_nonzero_singular_value(np.diag([2.0, 1.0, 0.0])) == pytest.approx(1.0)
    assert smallest_nonzero_singular_value(np.eye(3)) == pytest.approx(1.0)
    with pytest.raises(RankZeroError):
        smallest_nonzero_singular_value(np.zeros((2, 3)))


def test_smallest_nonzero_constructed_spectrum():
    rng = make_rng(7, 1)
    U, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    V, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    S = np.zeros((4, 6))
    S[np.arange(4), np.arange(4)] = [5.0, 3.0, 0.5, 0.0]
    M = U @ S @ V.T
    assert smallest_nonzero_singular_value(M) == pytest.approx(0.5, rel=1e-10)
    assert smallest_singular_value(M) < 1e-12


def test_spectral_norm():
    assert spectral_norm(np.diag([3.0, 2.0, 1.0])) == pytest.approx(3.0)
    assert spectral_norm(np.zeros((3, 2))) == 0.0
    a, b = np.array([1.0, 2.0, -2.0]), np.array([0.5, 4.0])
    assert spectral_norm(np.outer(a, b)) == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b), rel=1e-12)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_gram_sigma_min_matches_svd_for_wide(n, extra, seed):
    J = make_rng(seed).standard_normal((n, n + extra))
    assert gram_sigma_min(J @ J.T) == pytest.approx(smallest_singular_value(J), rel=1e-6, abs=1e-7)


def test_sphere():
    rng = make_rng(0, 3)
    for _ in range(20):
        v = sample_unit_sphere(1, rng)
        assert v[0] in (-1.0, 1.0)
    for d in (2, 5, 50):
        assert np.linalg.norm(sample_unit_sphere(d, rng)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidInputError):
        sample_unit_sphere(0, rng)


def test_sphere_mean_symmetry():
    rng = make_rng(0, 4)
    X = np.array([sample_unit_sphere(3, rng) for _ in range(100_000)])
    assert np.all(np.abs(X.mean(axis=0)) <= 4 / np.sqrt(1e5))


def test_streams_reproducible_and_distinct():
    a = SeededRng(5, (1, 2)).generator().standard_normal(8)
    b = SeededRng(5, (1, 2)).generator().standard_normal(8)
    c = SeededRng(5, (1, 3)).generator().standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gaussian_expectation():
    assert gaussian_expectation(lambda x: x ** 2) == pytest.approx(1.0, rel=1e-12)
    assert gaussian_expectation(lambda x: np.ones_like(x)) == pytest.approx(1.0, rel=1e-12)
    assert gaussian_expectation(lambda x: x ** 4) == pytest.approx(3.0, rel=1e-10)
    with pytest.raises(InvalidInputError):
        gaussian_expectation(lambda x: np.where(x > 0, np.inf, 0.0))


def test_gaussian_expectation_sigmoid_monte_carlo():
    sig2 = lambda x: (1.0 / (1.0 + np.exp(-x))) ** 2
    val = gaussian_expectation(sig2)
    x = make_rng(99, 0).standard_normal(10_000_000)
    s = sig2(x)
    se = s.std() / np.sqrt(s.size)
    assert abs(val - s.mean()) <= 3 * se
