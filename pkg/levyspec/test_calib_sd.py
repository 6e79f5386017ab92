import numpy as np
import pytest
from scipy.integrate import quad, trapezoid

from calib_fa import EmpiricalExponents
from calib_sd import (
    calibrate_sd,
    estimate_k,
    estimate_sd_scalars,
    one_sided_kernel,
    psi_prime,
    psi_prime_from_transforms,
    rearrange,
    sd_weights,
)
from conftest import R_REF, T_REF
from fourier import exponent_spacing, model_grid, symmetric_u_grid
from fourier_pricing import option_ft
from levy_models import char_exponent, char_exponent_derivative, drift, k_function_vg
from market_data import clean_quotes, fit_curve
from models import VarianceGammaParams

OPTS = dict(epsabs=1e-13, epsrel=1e-12, limit=400)


def exact_exponents(model, u_max, du=None, T=T_REF):
    u = symmetric_u_grid(u_max, du or exponent_spacing())
    return EmpiricalExponents(u=u, psi=char_exponent(model, u), psi_minus_i=char_exponent(model, u - 1j), T=T)


@pytest.fixture(scope="module")
def kernel():
    return one_sided_kernel()


@pytest.fixture(scope="module")
def dense_vg_curve():
    return fit_curve(clean_quotes(VarianceGammaParams(), 400, T_REF, R_REF), 1)


@pytest.mark.parametrize("U", [3.0, 35.0, 45.0])
def test_drift_weight_conditions(U):
    w = sd_weights(U).gamma
    assert quad(lambda u: u * w(u), 0, U, **OPTS)[0] == pytest.approx(0.5, abs=1e-8)
    assert quad(lambda u: w(u), 0, U, **OPTS)[0] == pytest.approx(0.0, abs=1e-8)
    assert quad(lambda u: w(u) / u, 0, U, **OPTS)[0] == pytest.approx(0.0, abs=1e-8)
    assert w(U) == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("U", [3.0, 35.0, 45.0])
def test_alpha_weight_conditions(U):
    w = sd_weights(U).alpha
    assert quad(lambda u: np.log(u) * w(u), 0, U, **OPTS)[0] == pytest.approx(-0.5, abs=1e-8)
    assert quad(lambda u: w(u), 0, U, **OPTS)[0] == pytest.approx(0.0, abs=1e-8)
    assert quad(lambda u: w(u) / u ** 2, 0, U, **OPTS)[0] == pytest.approx(0.0, abs=1e-8)
    assert w(U) == pytest.approx(0.0, abs=1e-8)


def test_weight_parity():
    weights = sd_weights(12.0)
    u = np.linspace(0.1, 13.0, 40)
    np.testing.assert_allclose(weights.gamma(-u), -weights.gamma(u))
    np.testing.assert_allclose(weights.alpha(-u), weights.alpha(u))
    assert np.all(weights.alpha(u[u > 12.0]) == 0.0)


def test_linear_exponent_gives_drift():
    U, gamma = 10.0, -0.37
    u = symmetric_u_grid(U, U / 400000)
    psi = 1j * gamma * u
    exponents = EmpiricalExponents(u=u, psi=psi, psi_minus_i=psi, T=1.0)
    gamma_hat, alpha_hat = estimate_sd_scalars(exponents, sd_weights(U))
    assert gamma_hat == pytest.approx(gamma, abs=1e-8)
    assert alpha_hat == pytest.approx(0.0, abs=1e-8)


def test_log_exponent_gives_alpha():
    U, alpha = 10.0, 7.5
    u = symmetric_u_grid(U, U / 1000000)
    with np.errstate(divide="ignore"):
        psi = np.where(u == 0, 0.0, -alpha * np.log(np.abs(u)) + 0.7).astype(complex)
    exponents = EmpiricalExponents(u=u, psi=psi, psi_minus_i=psi, T=1.0)
    gamma_hat, alpha_hat = estimate_sd_scalars(exponents, sd_weights(U))
    assert alpha_hat == pytest.approx(alpha, abs=1e-8)
    assert gamma_hat == pytest.approx(0.0, abs=1e-8)


def test_zero_exponent_gives_zero():
    u = symmetric_u_grid(20.0, exponent_spacing())
    zeros = np.zeros(u.size, dtype=complex)
    exponents = EmpiricalExponents(u=u, psi=zeros, psi_minus_i=zeros, T=T_REF)
    assert estimate_sd_scalars(exponents, sd_weights(15.0)) == (0.0, 0.0)


def test_exact_vg_exponent_recovers_drift_and_alpha(vg):
    exponents = exact_exponents(vg, 60.0)
    gamma_hat, _ = estimate_sd_scalars(exponents, sd_weights(40.0))
    _, alpha_hat = estimate_sd_scalars(exponents, sd_weights(30.0))
    assert gamma_hat == pytest.approx(drift(vg), abs=0.02)
    assert alpha_hat == pytest.approx(vg.alpha, rel=0.1)


def test_psi_prime_formula_matches_closed_form(vg):
    u = np.linspace(-10.0, 10.0, 81)
    h = 1e-5
    shifted = u + 1j
    ft = option_ft(vg, shifted, T_REF)
    # F[x O](v) = -i d/dv F O(v)
    ft_x = -1j * (option_ft(vg, shifted + h, T_REF) - option_ft(vg, shifted - h, T_REF)) / (2 * h)
    derivative = psi_prime_from_transforms(u, ft, ft_x, T_REF, n=10 ** 12)
    np.testing.assert_allclose(derivative, char_exponent_derivative(vg, u, 1), atol=1e-5)


def test_psi_prime_from_dense_quotes(dense_vg_curve, vg):
    u = symmetric_u_grid(1.0, exponent_spacing())
    derivative = psi_prime(dense_vg_curve, u)
    assert np.max(np.abs(derivative - char_exponent_derivative(vg, u, 1))) < 0.05
    wide = psi_prime(dense_vg_curve, symmetric_u_grid(40.0, exponent_spacing()))
    # X real: psi'(-u) = -conj psi'(u)
    np.testing.assert_allclose(wide[::-1], -np.conj(wide), atol=1e-10)


def test_psi_prime_error_from_truncated_quote_range(dense_vg_curve, vg):
    # quotes end near |x| = 2; the missing put tail bounds the accuracy beyond |u| = 1
    u = symmetric_u_grid(5.0, exponent_spacing())
    error = np.max(np.abs(psi_prime(dense_vg_curve, u) - char_exponent_derivative(vg, u, 1)))
    assert error < 1.0


def test_truncated_denominator_keeps_phase():
    u = np.array([1.0])
    target = 0.01 * np.exp(0.4j)
    ft = (1.0 - target) / (u * (u + 1j))
    ft_x = np.array([0.3 - 0.2j])
    derivative = psi_prime_from_transforms(u, ft, ft_x, 1.0, n=100)
    numerator = (u - 1j * u ** 2) * ft_x - (2 * u + 1j) * ft
    replaced = numerator / derivative
    assert abs(replaced[0]) == pytest.approx(0.1, rel=1e-12)
    assert np.angle(replaced[0]) == pytest.approx(0.4, abs=1e-12)


def test_kernel_moments(kernel):
    assert quad(kernel, -2.0, 0.0, points=[-1.05, -0.95], **OPTS)[0] == pytest.approx(1.0, abs=1e-8)
    for order in range(1, 2 * kernel.s):
        moment = quad(lambda x: x ** order * kernel(x), -2.0, 0.0, points=[-1.05, -0.95], **OPTS)[0]
        assert moment == pytest.approx(0.0, abs=1e-8), order


def test_kernel_support_and_unit_transform(kernel):
    outside = np.array([-3.0, -2.0, 0.0, 1e-3, 0.5])
    assert np.all(kernel(outside) == 0.0)
    assert kernel.ft(0.0) == pytest.approx(1.0, abs=1e-10)


def test_drift_only_derivative_gives_zero_k(kernel):
    u = symmetric_u_grid(60.0, exponent_spacing())
    gamma = 0.25
    k = estimate_k(np.full(u.size, 1j * gamma), u, gamma, 5.0, kernel)
    assert np.max(np.abs(k)) < 1e-8


def test_k_from_exact_derivative(kernel, vg):
    u = symmetric_u_grid(160.0, exponent_spacing())
    derivative = char_exponent_derivative(vg, u, 1)
    grid = model_grid()
    truth = k_function_vg(vg, grid.x)
    inner = np.abs(grid.x) <= 2.0

    def loss(U):
        k = estimate_k(derivative, u, drift(vg), U, kernel, grid)
        return trapezoid((k - truth)[inner] ** 2, dx=grid.dx), k

    coarse, _ = loss(1.0)
    near_oracle, k = loss(2.8)
    sharp, _ = loss(8.0)
    assert near_oracle < coarse and near_oracle < sharp
    i = int(np.argmin(np.abs(grid.x + 1.0)))
    assert k[i] == pytest.approx(truth[i], abs=0.15)


def test_rearrangement_sorts_each_side():
    x = np.arange(-2.0, 3.0)
    k = np.array([0.5, 0.2, 3.0, 1.0, 2.0])
    np.testing.assert_array_equal(rearrange(k, x, C=5.0), [0.2, 0.5, 3.0, 2.0, 1.0])


def test_rearrangement_fixed_point_and_horizon(vg):
    grid = model_grid()
    truth = k_function_vg(vg, grid.x)
    np.testing.assert_array_equal(rearrange(truth, grid.x), truth)
    cut = rearrange(truth, grid.x, C=1.0)
    assert np.all(cut[np.abs(grid.x) > 1.0] == 0.0)


def test_rearrangement_is_monotone_and_contracts(vg, rng):
    grid = model_grid()
    truth = k_function_vg(vg, grid.x)
    noisy = truth + 0.5 * rng.standard_normal(grid.n)
    out = rearrange(noisy, grid.x)
    right = grid.x >= 0
    assert np.all(out >= 0)
    assert np.all(np.diff(out[right]) <= 0) and np.all(np.diff(out[~right]) >= 0)
    np.testing.assert_array_equal(np.sort(out[right]), np.sort(np.maximum(noisy[right], 0)))
    assert np.sum((out - truth) ** 2) <= np.sum((noisy - truth) ** 2)


def test_calibration_enforces_shape_and_martingale(dense_vg_curve):
    calibration = calibrate_sd(dense_vg_curve, {"gamma": 4.0, "alpha": 4.0, "k": 3.0})
    corrected = calibration.corrected
    right = corrected.x >= 0
    assert np.all(np.diff(corrected.k[right]) <= 0) and np.all(np.diff(corrected.k[~right]) >= 0)
    assert abs(char_exponent(corrected, -1j)) < 1e-8
    assert calibration.raw.alpha_rearranged == pytest.approx(corrected.alpha)
    assert set(calibration.raw.cutoffs) == {"gamma", "alpha", "k"}
