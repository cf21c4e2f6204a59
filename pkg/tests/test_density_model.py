import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupdens.density_model import (
    ClassMoments,
    EmptyClassError,
    InconsistentMomentsError,
    class_central_moments,
    class_probabilities,
    convert_summary_to_central_moments,
    moment_covariance,
    moment_derivatives,
    normalize_identification,
    softmax_probabilities,
)
from groupdens.grid_basis import build_basis, build_fine_grid

from oracles import NORMAL_MOMENTS, central_difference, rel_err, sigma_monte_carlo_report

GRID = build_fine_grid((-1.0, 1.0, 3.5, 6.0), 350)
BASIS = build_basis(GRID, 25)


def smooth_theta(rng, K=25):
    return np.cumsum(rng.normal(0, 0.5, K)) * 0.5


def test_softmax_examples():
    np.testing.assert_allclose(softmax_probabilities(np.zeros(25), BASIS.B), 1 / GRID.I,
                               rtol=1e-13)
    theta = np.random.default_rng(0).normal(size=25)
    np.testing.assert_allclose(softmax_probabilities(theta + 5, BASIS.B),
                               softmax_probabilities(theta, BASIS.B), atol=1e-14)
    ident = np.eye(6)
    pi = softmax_probabilities(np.log(np.arange(1, 7)), ident)
    np.testing.assert_allclose(pi, np.arange(1, 7) / 21, rtol=1e-14)


def test_softmax_no_overflow():
    pi = softmax_probabilities(np.full(25, 800.0) + np.arange(25), BASIS.B)
    assert np.all(np.isfinite(pi)) and abs(pi.sum() - 1) < 1e-12


def test_class_probability_examples():
    pi = np.full(GRID.I, 1 / GRID.I)
    np.testing.assert_allclose(class_probabilities(pi, GRID.composition),
                               np.array([100, 125, 125]) / 350, rtol=1e-12)
    p = np.random.default_rng(0).dirichlet(np.ones(5))
    np.testing.assert_array_equal(class_probabilities(p, np.eye(5)), p)
    one = build_fine_grid((0, 1), 20)
    np.testing.assert_allclose(class_probabilities(np.full(20, 0.05), one.composition), [1.0])


def test_normalization_and_total_expectation():
    rng = np.random.default_rng(1)
    for _ in range(100):
        theta = rng.normal(0, 2, 25)
        pi = softmax_probabilities(theta, BASIS.B)
        gamma = class_probabilities(pi, GRID.composition)
        assert abs(pi.sum() - 1) < 1e-12 and abs(gamma.sum() - 1) < 1e-12
        mom = class_central_moments(pi, GRID)
        assert abs(gamma @ mom.mean - GRID.midpoints @ pi) < 1e-10


def test_uniform_class_moments():
    grid = build_fine_grid((0.0, 2.0), 100)  # delta = width / 100
    mom = class_central_moments(np.full(100, 0.01), grid)
    assert mom.mean[0] == pytest.approx(1.0, abs=grid.delta ** 2)
    assert mom.mu[0, 1] == pytest.approx(4 / 12, rel=0.01)


def test_symmetric_and_point_mass_moments():
    grid = build_fine_grid((0.0, 1.0), 40)
    w = np.exp(-((grid.midpoints - 0.5) ** 2) / 0.02)
    mom = class_central_moments(w / w.sum(), grid)
    assert abs(mom.mu[0, 2]) < 1e-12 and abs(mom.mu[0, 4]) < 1e-12
    point = np.zeros(40)
    point[7] = 1.0
    mom = class_central_moments(point, grid)
    np.testing.assert_allclose(mom.mu[0, 1:], 0.0, atol=1e-15)
    assert mom.mean[0] == pytest.approx(grid.midpoints[7])


def test_empty_class_error_names_class():
    pi = np.zeros(GRID.I)
    pi[:100] = 0.01
    with pytest.raises(EmptyClassError, match="class 2"):
        class_central_moments(pi, GRID)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_moment_invariants(seed):
    theta = np.random.default_rng(seed).normal(0, 3, 25)
    mom = class_central_moments(softmax_probabilities(theta, BASIS.B), GRID)
    cuts = GRID.class_cuts
    assert np.all(mom.mean >= cuts[:-1] - 1e-12) and np.all(mom.mean <= cuts[1:] + 1e-12)
    mu2, mu3, mu4, mu6 = mom.mu[:, 1], mom.mu[:, 2], mom.mu[:, 3], mom.mu[:, 5]
    assert np.all(mu2 >= 0)
    assert np.all(mu4 >= mu2 ** 2 - 1e-10)
    assert np.all(mu6 >= mu3 ** 2 - 1e-10)
    assert np.all(mu3 ** 2 <= mu2 * mu4 + 1e-10)
    sigma = moment_covariance(mom, [50, 80, 120])
    np.testing.assert_allclose(sigma, np.swapaxes(sigma, 1, 2), atol=1e-12)
    assert np.all(np.diagonal(sigma, axis1=1, axis2=2) >= 0)


def normal_class_moments():
    return ClassMoments(mu=NORMAL_MOMENTS[None, :].copy(), gamma=np.ones(1))


def test_sigma_normal_diagonal():
    sigma = moment_covariance(normal_class_moments(), [100])[0]
    np.testing.assert_allclose(np.diag(sigma), [0.01, 0.02, 0.06, 0.96], rtol=1e-12)
    assert sigma[0, 0] == pytest.approx(NORMAL_MOMENTS[1] / 100)
    assert sigma[0, 1] == 0.0  # mu_3 = 0 for a symmetric class


def test_sigma_first_entries_are_mu2_and_mu3_over_n():
    theta = smooth_theta(np.random.default_rng(3))
    mom = class_central_moments(softmax_probabilities(theta, BASIS.B), GRID)
    n = np.array([40, 60, 90])
    sigma = moment_covariance(mom, n)
    np.testing.assert_allclose(sigma[:, 0, 0], mom.mu[:, 1] / n, rtol=1e-12)
    np.testing.assert_allclose(sigma[:, 0, 1], mom.mu[:, 2] / n, rtol=1e-12)


def test_sigma_scaling_with_n():
    theta = smooth_theta(np.random.default_rng(4))
    mom = class_central_moments(softmax_probabilities(theta, BASIS.B), GRID)
    a = moment_covariance(mom, [10, 20, 30])
    b = moment_covariance(mom, [100, 200, 300])
    np.testing.assert_allclose(a, 10 * b, rtol=1e-14)


def test_sigma_truncation_blocks():
    mom = normal_class_moments()
    full = moment_covariance(mom, [100])
    for q in (1, 2):
        np.testing.assert_array_equal(moment_covariance(mom, [100], order=q), full[:, :q, :q])


def test_sigma_inconsistent_moments():
    mu = NORMAL_MOMENTS.copy()
    mu[7] = 1.0  # mu_8 far below mu_4^2
    with pytest.raises(InconsistentMomentsError):
        moment_covariance(ClassMoments(mu=mu[None, :], gamma=np.ones(1)), [10])


@pytest.mark.slow
def test_sigma_monte_carlo_large_class():
    """At n_j = 1000 the finite-sample bias is below Monte Carlo noise: 3-SE agreement."""
    analytic, cov, se = sigma_monte_carlo_report(n_rep=100_000, n=1000, seed=7)
    assert np.all(np.abs(cov - analytic) <= 3 * se)


def test_moment_derivatives_finite_difference():
    rng = np.random.default_rng(5)

    def moments_of(t):
        return class_central_moments(softmax_probabilities(t, BASIS.B), GRID).mu[:, :4]

    for _ in range(10):
        theta = smooth_theta(rng)
        mom = class_central_moments(softmax_probabilities(theta, BASIS.B), GRID)
        analytic = moment_derivatives(theta, BASIS, GRID, mom)
        numeric = central_difference(moments_of, theta, 1e-5)
        for j in range(3):
            for r in range(4):
                assert rel_err(analytic[j, r], numeric[j, r]) < 1e-6


def test_moment_derivative_shift_invariance_and_single_bin_class():
    theta = smooth_theta(np.random.default_rng(6))
    mom = class_central_moments(softmax_probabilities(theta, BASIS.B), GRID)
    a = moment_derivatives(theta, BASIS, GRID, mom)
    b = moment_derivatives(theta + 3.0, BASIS, GRID, mom)
    np.testing.assert_allclose(a, b, atol=1e-12)
    grid = build_fine_grid((0.0, 0.1, 3.0), 30)  # first class is one bin wide
    basis = build_basis(grid, 8)
    t = np.linspace(-1, 1, 8)
    mom = class_central_moments(softmax_probabilities(t, basis.B), grid)
    d = moment_derivatives(t, basis, grid, mom)
    np.testing.assert_allclose(d[0, 1:], 0.0, atol=1e-15)


def test_summary_conversion_examples():
    m = convert_summary_to_central_moments(2.462, 0.580, -1.793, 2.401)
    assert m[0] == 2.462
    assert m[1] == pytest.approx(0.3364, abs=1e-12)
    assert m[2] == pytest.approx(-1.793 * 0.580 * 0.580 * 0.580, rel=1e-12)  # -0.349836
    assert m[3] == pytest.approx(5.401 * 0.3364 * 0.3364, rel=1e-12)  # 0.611204
    assert (round(m[1], 3), round(m[2], 3), round(m[3], 3)) == (0.336, -0.350, 0.611)
    assert convert_summary_to_central_moments(0, 1, 0, 0) == (0, 1, 0, 3)
    assert convert_summary_to_central_moments(5, 0, 0, 0) == (5, 0, 0, 0)
    with pytest.raises(ValueError):
        convert_summary_to_central_moments(0, -1)


def test_identification_examples():
    t, k = normalize_identification([1.0, 3.0, 2.0])
    np.testing.assert_array_equal(t, [-2, 0, -1])
    assert k == 1  # zero-based position of the largest coefficient
    t, k = normalize_identification([4.0, 4.0, 4.0])
    np.testing.assert_array_equal(t, 0)
    assert k == 0  # ties resolved to the lowest index
    theta = np.random.default_rng(8).normal(size=25)
    np.testing.assert_allclose(softmax_probabilities(normalize_identification(theta)[0], BASIS.B),
                               softmax_probabilities(theta, BASIS.B), atol=1e-14)
