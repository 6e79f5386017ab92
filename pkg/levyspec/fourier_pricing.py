"""
Fourier pricing of the option function O(x) = E[(e^{X_T} - e^x)^+] for x >= 0 (calls)
and E[(e^x - e^{X_T})^+] for x < 0 (puts), with x = log(K/S0) - rT.

F O(u) = (1 - phi_T(u - i)) / (u(u - i)). Inversion is applied to F O - F O_BS, where
O_BS is the Black-Scholes option function with the model's variance rate; the kink
at x=0 cancels and the closed-form O_BS is added back.
"""
import math

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import norm

from config import config
from errors import DomainError, NumericalError
from fourier import XGrid, inverse_ft, inverse_ft_points, model_grid, pricing_u_grid, simpson_weights
from levy_models import LevyModel, char_exponent, char_exponent_derivative, variance_rate
from models import MertonParams, OptionFunctionGrid


def _phi_expansion(model: LevyModel, z: complex, T: float):
    """phi_T, phi_T' and phi_T'' at z."""
    z = np.array([z], dtype=complex)
    psi = char_exponent(model, z)[0]
    d1 = char_exponent_derivative(model, z, 1)[0]
    d2 = char_exponent_derivative(model, z, 2)[0]
    phi = np.exp(T * psi)
    return phi, T * d1 * phi, (T * d2 + T ** 2 * d1 ** 2) * phi


def option_ft(model: LevyModel, u, T: float) -> np.ndarray:
    """F O(u) on the strip 0 <= Im(u) <= 1, with series limits at u = 0 and u = i."""
    u = np.asarray(u, dtype=complex)
    if np.any(u.imag < -1e-12) or np.any(u.imag > 1.0 + 1e-12):
        raise DomainError("option transform requires 0 <= Im(u) <= 1")
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    radius = config.pricing.singular_radius
    near_zero = np.abs(u) < radius
    near_i = np.abs(u - 1j) < radius
    regular = ~(near_zero | near_i)

    out = np.empty(u.shape, dtype=complex)
    ur = u[regular]
    if ur.size:
        out[regular] = (1.0 - np.exp(T * char_exponent(model, ur - 1j))) / (ur * (ur - 1j))
    if near_zero.any():
        phi, d1, d2 = _phi_expansion(model, -1j, T)
        if abs(1.0 - phi) > 1e-8:
            raise DomainError(f"phi_T(-i) = {phi:.6g}: model violates the martingale condition")
        eps = u[near_zero]
        out[near_zero] = (-d1 - d2 * eps / 2) / (eps - 1j)
    if near_i.any():
        _, d1, d2 = _phi_expansion(model, 0.0, T)
        eps = u[near_i] - 1j
        out[near_i] = (-d1 - d2 * eps / 2) / (1j + eps)
    return out[0] if scalar else out


def bs_option_function(x, variance: float, T: float) -> np.ndarray:
    """Black-Scholes option function for a martingale log-price with variance rate ``variance``."""
    x = np.asarray(x, dtype=float)
    sd = math.sqrt(variance * T)
    d1 = (-x + sd ** 2 / 2) / sd
    d2 = d1 - sd
    call = norm.cdf(d1) - np.exp(x) * norm.cdf(d2)
    put = np.exp(x) * norm.cdf(-d2) - norm.cdf(-d1)
    return np.where(x >= 0, call, put)


def _reference_variance(model: LevyModel) -> float:
    return max(variance_rate(model), config.pricing.min_reference_variance)


def _corrected_transform(model: LevyModel, T: float):
    u = pricing_u_grid()
    s2 = _reference_variance(model)
    reference = MertonParams(sigma=math.sqrt(s2), lam=0.0)
    g = (option_ft(model, u, T) - option_ft(reference, u, T)) * simpson_weights(u.size)
    return u, g, s2


def _check_nonnegative(values: np.ndarray, x: np.ndarray):
    tolerance = config.pricing.negativity_tolerance
    worst = int(np.argmin(values))
    if values[worst] < -tolerance:
        raise NumericalError(f"Fourier inversion produced O({x[worst]:.4g}) = {values[worst]:.3g} < -{tolerance:g}; "
                             "grid too coarse or aliased")


def price_curve(model: LevyModel, T: float, r: float, grid: XGrid = None) -> OptionFunctionGrid:
    """O(x) on a uniform grid by one FFT."""
    grid = grid or model_grid()
    u, g, s2 = _corrected_transform(model, T)
    values = inverse_ft(g, u, grid).real + bs_option_function(grid.x, s2, T)
    _check_nonnegative(values, grid.x)
    logger.debug(f"Priced {type(model).__name__} on {grid.n} points, T={T}, reference variance {s2:.4g}")
    return OptionFunctionGrid(x=grid.x, values=values, T=T, r=r)


def price_at(model: LevyModel, x, T: float) -> np.ndarray:
    """O(x) at arbitrary log-moneyness points by direct summation."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u, g, s2 = _corrected_transform(model, T)
    values = inverse_ft_points(g, u, x).real + bs_option_function(x, s2, T)
    _check_nonnegative(values, x)
    return values


def curve_frame(curve: OptionFunctionGrid, S0: float = 1.0) -> pd.DataFrame:
    """Columns x, O, K as written by the price command."""
    return pd.DataFrame({"x": curve.x, "O": curve.values, "K": curve.strikes(S0)})
