import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad

from errors import DataError, DomainError
from levy_models import (
    char_exponent,
    char_exponent_derivative,
    drift,
    k_function_vg,
    levy_density_merton,
    martingale_drift,
    model_from_json,
    model_to_json,
    sample_on_grid,
    variance_rate,
    vg_char_function,
    with_martingale_drift,
)
from models import LevyModelFA, MertonParams, VarianceGammaParams, VG_REFERENCE_GAMMA


def test_exponent_vanishes_at_zero(merton, vg):
    for model in (merton, vg, sample_on_grid(merton), sample_on_grid(vg)):
        assert abs(char_exponent(model, 0.0)) < 1e-12


def test_merton_closed_form_matches_quadrature(merton):
    nu = lambda x: levy_density_merton(merton, x)
    re, _ = quad(lambda x: (math.cos(x) - 1.0) * nu(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
    im, _ = quad(lambda x: math.sin(x) * nu(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
    gamma = drift(merton)
    expected = -merton.sigma ** 2 / 2 + 1j * gamma + re + 1j * im
    assert abs(char_exponent(merton, 1.0) - expected) < 1e-9


def test_merton_martingale_drift(merton):
    assert martingale_drift(merton) == pytest.approx(0.379, abs=1e-3)
    assert abs(char_exponent(merton, -1j)) < 1e-10


def test_martingale_drift_without_jumps_or_diffusion():
    model = LevyModelFA(sigma2=0.0, gamma=0.3, x0=-1.0, dx=0.1, nu=np.zeros(21))
    assert martingale_drift(model) == 0.0


def test_vg_drift_matches_quadrature_of_k(vg):
    k = lambda x: k_function_vg(vg, x)
    left, _ = quad(lambda x: (math.exp(x) - 1.0) * k(x) / abs(x), -np.inf, 0.0, epsabs=1e-13)
    # the right integrand decays like e^{-1.74x}; beyond 60 it is below 1e-45
    right, _ = quad(lambda x: math.expm1(x) * k(x) / x, 0.0, 60.0, limit=200, epsabs=1e-13)
    assert martingale_drift(vg) == pytest.approx(-(left + right), abs=1e-9)
    assert abs(char_exponent(vg, -1j)) < 1e-10
    # the quoted reference value is not the martingale drift under this k-function
    assert abs(martingale_drift(vg) - VG_REFERENCE_GAMMA) > 0.1


def test_vg_derived_parameters(vg):
    root = math.sqrt(0.15 ** 2 * 0.2 ** 2 / 4 + 1.2 ** 2 * 0.2 / 2)
    assert vg.eta_p == pytest.approx(root - 0.15 * 0.2 / 2, abs=1e-12)
    assert vg.eta_m == pytest.approx(root + 0.15 * 0.2 / 2, abs=1e-12)
    assert vg.alpha == pytest.approx(10.0)
    one_sided = k_function_vg(vg, np.array([-1e-14, 0.0]))
    assert one_sided.sum() == pytest.approx(2.0 / vg.rho, rel=1e-10)


def test_vg_char_function(vg):
    assert vg_char_function(vg, 0.0, 0.25) == pytest.approx(1.0)
    u = np.linspace(-40, 40, 161)
    np.testing.assert_allclose(vg_char_function(vg, u, 0.25), np.exp(0.25 * char_exponent(vg, u)), atol=1e-13)


def test_vg_branch_cut_is_reported(vg):
    with pytest.raises(DomainError):
        vg_char_function(vg, -5j, 0.25)


def test_vg_parameters_without_exponential_moment():
    with pytest.raises(ValidationError):
        VarianceGammaParams(sigma=3.0, rho=1.0, theta=0.5)


def test_merton_density_has_mass_lambda(merton):
    mass, _ = quad(lambda x: levy_density_merton(merton, x), -np.inf, np.inf, epsabs=1e-12)
    assert mass == pytest.approx(merton.lam, abs=1e-8)


def test_k_function_monotone_and_decaying(vg):
    x = np.linspace(-5, 5, 2001)
    k = k_function_vg(vg, x)
    assert np.all(np.diff(k[x < 0]) >= 0)
    assert np.all(np.diff(k[x >= 0]) <= 0)
    assert k[0] < 1e-4 and k[-1] < 1e-4


def test_characteristic_function_bounded(merton, vg):
    u = np.linspace(-200, 200, 4001)
    for model in (merton, vg):
        assert np.all(np.abs(np.exp(0.25 * char_exponent(model, u))) <= 1.0 + 1e-14)


def test_sampled_merton_matches_closed_form(merton):
    grid_model = sample_on_grid(merton)
    u = np.linspace(-60, 60, 241)
    np.testing.assert_allclose(char_exponent(grid_model, u), char_exponent(merton, u), atol=1e-6)


def test_sampled_vg_matches_closed_form(vg):
    grid_model = sample_on_grid(vg)
    u = np.linspace(-20, 20, 81)
    np.testing.assert_allclose(char_exponent(grid_model, u), char_exponent(vg, u), atol=1e-3)
    np.testing.assert_allclose(char_exponent_derivative(grid_model, u, 1),
                               char_exponent_derivative(vg, u, 1), atol=1e-3)
    assert grid_model.alpha == pytest.approx(10.0, abs=0.05)


@pytest.mark.parametrize("family", ["merton", "vg"])
def test_derivatives_match_finite_differences(family, merton, vg):
    model = merton if family == "merton" else vg
    u = np.array([-7.0, -0.5, 0.0, 1.3, 9.0]) - 0.4j
    h = 1e-5
    first = (char_exponent(model, u + h) - char_exponent(model, u - h)) / (2 * h)
    second = (char_exponent(model, u + h) - 2 * char_exponent(model, u) + char_exponent(model, u - h)) / h ** 2
    np.testing.assert_allclose(char_exponent_derivative(model, u, 1), first, atol=1e-6)
    np.testing.assert_allclose(char_exponent_derivative(model, u, 2), second, rtol=1e-4, atol=1e-3)


def test_variance_rate_merton(merton):
    expected = merton.sigma ** 2 + merton.lam * (merton.eta ** 2 + merton.v ** 2)
    assert variance_rate(merton) == pytest.approx(expected, rel=1e-12)


def test_model_json(merton):
    payload = model_to_json(with_martingale_drift(merton))
    assert payload["model"] == "merton" and "lambda" in payload
    restored = model_from_json(payload)
    assert restored.lam == merton.lam and restored.gamma == pytest.approx(0.379, abs=1e-3)

    grid = model_from_json({"model": "fa-grid", "sigma2": 0.01, "x0": -1.0, "dx": 0.01,
                            "values": np.full(201, 0.5).tolist()})
    assert abs(char_exponent(grid, -1j)) < 1e-12


@pytest.mark.parametrize("payload", [
    {"model": "cgmy"},
    {"model": "fa-grid", "sigma2": 0.01},
    {"model": "sd-grid", "x0": 0.0, "dx": 0.1, "values": [-1.0, 2.0]},
])
def test_model_json_rejects_bad_input(payload):
    with pytest.raises(DataError):
        model_from_json(payload)


def test_negative_intensity_rejected():
    with pytest.raises(ValidationError):
        MertonParams(lam=-1.0)
