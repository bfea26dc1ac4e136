import numpy as np
import pytest

from dipcert.errors import InvalidInputError, RankZeroError, RestrictedInjectivityUnavailable
from dipcert.linalg import make_rng, sample_unit_sphere
from dipcert.operators import (
    LinearOperator,
    NoiseSpec,
    expected_noise_floor,
    gaussian_operator,
    load_operator,
    make_noise,
    min_conic_singular_value_sampled,
    mu_F_global,
    paper_spectrum,
    prescribed_spectrum_operator,
    sample_complexity_bound,
    save_operator,
    sigma_F,
)


def test_cached_spectral_data():
    op = gaussian_operator(5, 7, make_rng(1))
    s = np.linalg.svd(op.A, compute_uv=False)
    assert op.spectral_norm == pytest.approx(s[0], rel=1e-10)
    assert op.sigma_min_nonzero == pytest.approx(s[-1], rel=1e-10)
    assert op.condition_number >= 1.0
    assert op.rank == 5
    x, v = np.ones(7), np.ones(5)
    assert np.allclose(op.jvp(x, x), op.apply(x))
    assert np.allclose(op.vjp(x, v), op.A.T @ v)


def test_gaussian_operator_scaling():
    norms = [gaussian_operator(10, 400, make_rng(s)).spectral_norm for s in range(20)]
    edge = 1 + np.sqrt(10 / 400)
    assert all(abs(x - edge) / edge <= 0.15 for x in norms)
    A = gaussian_operator(400, 400, make_rng(0)).A
    assert np.mean(np.sum(A ** 2, axis=0)) == pytest.approx(1.0, rel=0.05)
    one = gaussian_operator(1, 1, make_rng(3))
    assert one.A.shape == (1, 1) and one.A[0, 0] == make_rng(3).standard_normal()
    with pytest.raises(InvalidInputError):
        gaussian_operator(0, 3, make_rng(0))


def test_prescribed_spectrum():
    op = prescribed_spectrum_operator(10, paper_spectrum(10), make_rng(2))
    assert op.sigma_min == pytest.approx(1 / 82, rel=1e-10)
    assert op.spectral_norm == pytest.approx(1.0, rel=1e-10)
    assert np.allclose(op.singular_values, np.sort(paper_spectrum(10))[::-1], rtol=1e-10, atol=1e-12)
    assert sigma_F(op) == pytest.approx(1 / 82, rel=1e-10)
    assert mu_F_global(op) == pytest.approx(1 / 82, rel=1e-10)
    orth = prescribed_spectrum_operator(6, np.ones(6), make_rng(4))
    assert orth.condition_number == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(orth.A.T @ orth.A, np.eye(6), atol=1e-12)
    with pytest.raises(InvalidInputError):
        prescribed_spectrum_operator(3, [1.0, 0.0, 2.0], make_rng(0))


def test_prescribed_spectrum_rectangular():
    op = prescribed_spectrum_operator(6, [3.0, 1.0, 0.5], make_rng(5), m=4)
    assert op.shape == (4, 6)
    assert op.sigma_min_nonzero == pytest.approx(0.5, rel=1e-10)


def test_sigma_F_and_mu_F():
    assert sigma_F(LinearOperator(np.diag([3.0, 2.0, 1.0]))) == pytest.approx(1.0)
    assert sigma_F(LinearOperator(np.diag([2.0, 1.0, 0.0]))) == pytest.approx(1.0)
    with pytest.raises(RankZeroError):
        sigma_F(LinearOperator(np.zeros((2, 2))))
    assert mu_F_global(LinearOperator(np.eye(4))) == 1.0
    with pytest.raises(RestrictedInjectivityUnavailable):
        mu_F_global(LinearOperator(np.diag([2.0, 1.0, 0.0])))
    with pytest.raises(RestrictedInjectivityUnavailable):
        mu_F_global(LinearOperator(np.ones((2, 3))))


def test_conic_estimate():
    op = LinearOperator(np.diag([3.0, 2.0, 1.0]))
    rng = make_rng(6)
    est = min_conic_singular_value_sampled(op, lambda: sample_unit_sphere(3, rng), 20000)
    assert 1.0 <= est <= 1.05
    assert min_conic_singular_value_sampled(op, lambda: np.array([rng.uniform(0.1, 5), 0, 0]), 10) == pytest.approx(3.0)
    single = min_conic_singular_value_sampled(op, lambda: sample_unit_sphere(3, rng), 1)
    assert single >= 1.0
    with pytest.raises(InvalidInputError):
        min_conic_singular_value_sampled(op, lambda: np.zeros(3), 1)


def test_sample_complexity():
    s, a = 1.3, 0.7
    assert sample_complexity_bound(s, a, 0.0, 2.0) == pytest.approx(2 * s ** 2 * 4 / a ** 4)
    assert sample_complexity_bound(s, a, 3.0, 0.0) == pytest.approx((s / a) ** 6 * 9)
    assert sample_complexity_bound(1.0, 1.0, 3.0, 2.0) == pytest.approx(17.0)
    with pytest.raises(InvalidInputError):
        sample_complexity_bound(1.0, 0.0, 1.0, 1.0)


def test_noise():
    rng = make_rng(7)
    assert np.all(make_noise(NoiseSpec(0.0, 5), rng) == 0)
    beta, m = 0.3, 10
    draws = np.array([make_noise(NoiseSpec(beta, m), rng) for _ in range(100_000)])
    assert np.all(np.abs(draws) <= beta)
    assert np.mean(np.sum(draws ** 2, axis=1)) == pytest.approx(m * beta ** 2 / 3, rel=0.02)
    with pytest.raises(InvalidInputError):
        NoiseSpec(-1.0, 3)


def test_noise_floor():
    assert expected_noise_floor(10, 0.0, 1 / 82) == 0.0
    assert expected_noise_floor(10, 0.1, 1 / 82) == pytest.approx(np.sqrt(10) * 0.1 * 82 / np.sqrt(6), rel=1e-14)
    assert expected_noise_floor(10, 0.1, 1 / 82) == pytest.approx(10.5862, abs=1e-4)
    assert expected_noise_floor(10, 0.2, 1 / 82) == pytest.approx(2 * expected_noise_floor(10, 0.1, 1 / 82))
    with pytest.raises(InvalidInputError):
        expected_noise_floor(10, 0.1, 0.0)


def test_operator_checkpoint(tmp_path):
    op = prescribed_spectrum_operator(4, [1.0, 0.5, 0.25, 0.1], make_rng(8))
    back = load_operator(save_operator(op, tmp_path / "op.npz"))
    assert np.array_equal(back.A, op.A)
    assert back.meta == op.meta
