"""
Finite-sample variances and confidence intervals for the spectral estimators.

Observation noise is treated as white noise N^{-1/2} rho(x) dW(x) with rho = delta / sqrt(h),
h the design density. After linearizing log(1 + z) ~ z every estimation error takes the form
N^{-1/2} int c(x) rho(x) dW(x), so its variance is (1/N) int c^2 rho^2 dx.
"""
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import trapezoid
from scipy.stats import norm

from calib_fa import fa_weights, flat_top
from calib_sd import OneSidedKernel, one_sided_kernel, psi_prime_from_transforms, sd_weights, truncate_small
from config import config
from errors import DataError, NumericalError
from fourier import XGrid, exponent_spacing, inverse_ft, inverse_ft_points, model_grid, symmetric_u_grid
from levy_models import LevyModel, char_exponent, char_exponent_derivative
from market_data import OptionCurve, curve_ft
from models import FA_QUANTITIES, SD_QUANTITIES, ConfidenceInterval, QuoteSet

TWO_PI = 2.0 * np.pi
FUNCTION_QUANTITY = {"fa": "nu", "sd": "k"}
_CHUNK = 2048


@dataclass(frozen=True)
class TriangularKDE:
    """Triangular-kernel density estimate; `bandwidth` is the kernel's standard deviation."""
    points: np.ndarray
    bandwidth: float

    @property
    def half_width(self) -> float:
        return float(np.sqrt(6.0) * self.bandwidth)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        a = self.half_width
        out = np.empty(flat.size)
        for start in range(0, flat.size, _CHUNK):
            t = np.abs(flat[start:start + _CHUNK, None] - self.points[None, :]) / a
            out[start:start + _CHUNK] = np.maximum(1.0 - t, 0.0).sum(axis=1)
        return (out / (a * self.points.size)).reshape(x.shape)


def silverman_bandwidth(points) -> float:
    """0.9 min(sd, IQR/1.34) n^{-1/5}; the IQR term is skipped when it vanishes."""
    points = np.asarray(points, dtype=float)
    if points.size < 2 or np.ptp(points) == 0.0:
        raise DataError("design points have zero spread; the design density is undefined")
    sd = float(np.std(points, ddof=1))
    q1, q3 = np.quantile(points, [0.25, 0.75])
    iqr = float(q3 - q1)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * points.size ** -0.2


def estimate_h(points) -> TriangularKDE:
    points = np.sort(np.asarray(points, dtype=float))
    if points.size < 2:
        raise DataError(f"density estimation needs at least two points, got {points.size}")
    bandwidth = silverman_bandwidth(points)
    logger.debug(f"Design density: {points.size} points, bandwidth {bandwidth:.4g}")
    return TriangularKDE(points=points, bandwidth=bandwidth)


@dataclass(frozen=True)
class NoiseProfile:
    """Generalized noise level rho = delta / sqrt(h); zero outside the quoted range."""
    x: np.ndarray
    delta: np.ndarray
    density: TriangularKDE
    n: int

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.x[0]) & (x <= self.x[-1])

    def delta_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(self.inside(x), np.interp(x, self.x, self.delta), 0.0)

    def rho(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = self.density(x)
        valid = self.inside(x) & (h > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(valid, self.delta_at(x) / np.sqrt(np.where(valid, h, 1.0)), 0.0)

    def with_size(self, n: int) -> "NoiseProfile":
        return dataclasses.replace(self, n=n)


def noise_profile(quotes: QuoteSet) -> NoiseProfile:
    return NoiseProfile(x=quotes.x, delta=quotes.delta, density=estimate_h(quotes.x), n=quotes.n)


@dataclass(frozen=True)
class CharacteristicFunction:
    """phi_T(u - i), phi_T(u) and phi_T'(u) on a symmetric u-grid."""
    u: np.ndarray
    phi_minus_i: np.ndarray
    phi: np.ndarray
    phi_prime: np.ndarray
    T: float


def _default_u() -> np.ndarray:
    return symmetric_u_grid(config.estimation.exponent_u_max, exponent_spacing())


def empirical_cf(curve: OptionCurve, u: Optional[np.ndarray] = None) -> CharacteristicFunction:
    """Plug-in phi_T from the fitted curve, floored at modulus N^{-1/2} like psi~'."""
    u = _default_u() if u is None else np.asarray(u, dtype=float)
    n = curve.n
    ft = curve_ft(curve, u)
    shifted = curve_ft(curve, u + 1j)
    shifted_x = curve_ft(curve, u + 1j, weighted_by_x=True)
    phi = truncate_small(1.0 - u * (u + 1j) * shifted, n)
    derivative = psi_prime_from_transforms(u, shifted, shifted_x, curve.T, n)
    return CharacteristicFunction(
        u=u,
        phi_minus_i=truncate_small(1.0 + 1j * u * (1.0 + 1j * u) * ft, n),
        phi=phi,
        phi_prime=curve.T * derivative * phi,
        T=curve.T,
    )


def model_cf(model: LevyModel, T: float, u: Optional[np.ndarray] = None) -> CharacteristicFunction:
    u = _default_u() if u is None else np.asarray(u, dtype=float)
    phi = np.exp(T * char_exponent(model, u))
    return CharacteristicFunction(
        u=u,
        phi_minus_i=np.exp(T * char_exponent(model, u - 1j)),
        phi=phi,
        phi_prime=T * char_exponent_derivative(model, u, 1) * phi,
        T=T,
    )


@dataclass
class VarianceKernels:
    """Weighted transform kernels f of one estimator family at one cut-off U."""
    family: str
    U: float
    cf: CharacteristicFunction
    s: int
    grid: XGrid
    kernel: Optional[OneSidedKernel] = None
    _inverse: Dict[str, np.ndarray] = field(default_factory=dict, init=False, repr=False)
    _fw: Dict[bool, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    @property
    def u(self) -> np.ndarray:
        return self.cf.u

    @cached_property
    def weights(self):
        return fa_weights(self.U, self.s) if self.family == "fa" else sd_weights(self.U, self.s)

    @cached_property
    def nu_weight(self) -> np.ndarray:
        return np.where(np.abs(self.u) < self.U, flat_top(self.u / self.U), 0.0)

    @cached_property
    def response_minus_i(self) -> np.ndarray:
        # d psi_{-i} / d F O
        u = self.u
        return 1j * u * (1.0 + 1j * u) / (self.cf.T * self.cf.phi_minus_i)

    @cached_property
    def response(self) -> np.ndarray:
        # d psi / d F O(. + i)
        u = self.u
        return -u * (u + 1j) / (self.cf.T * self.cf.phi)

    def f(self, quantity: str) -> np.ndarray:
        u, w = self.u, self.weights
        if self.family == "fa":
            if quantity == "sigma2":
                return w.sigma(u) * self.response_minus_i
            if quantity == "gamma":
                return w.gamma(u) * self.response_minus_i
            if quantity == "lambda":
                return w.lam(u) * self.response_minus_i
            if quantity == "nu":
                return self.nu_weight * self.response
        else:
            if quantity == "gamma":
                return w.gamma(u) * self.response_minus_i
            if quantity == "alpha":
                return w.alpha(u) * self.response_minus_i
        raise ValueError(f"no kernel for {quantity!r} in family {self.family!r}")

    def G(self, quantity: str) -> np.ndarray:
        """F^{-1} f(-x) on the grid."""
        if quantity not in self._inverse:
            self._inverse[quantity] = inverse_ft(self.f(quantity), self.u, self.grid, sign=1)
        return self._inverse[quantity]

    def g(self, m: int, x0: float) -> complex:
        return complex(inverse_ft_points(self.u ** m * self.nu_weight, self.u, np.array([x0]))[0])

    def kernel_ft(self, positive: bool) -> np.ndarray:
        """FW(u/U) for the x >= 0 branch, FW(-u/U) otherwise."""
        if positive not in self._fw:
            scaled = self.u / self.U
            self._fw[positive] = self.kernel.ft(scaled if positive else -scaled)
        return self._fw[positive]

    def f_k(self, x0: float) -> Tuple[np.ndarray, np.ndarray]:
        """Kernels multiplying F[x e^{-x} dW] and F[e^{-x} dW] in the error of k^(x0)."""
        u, T, phi = self.u, self.cf.T, self.cf.phi
        fw = self.kernel_ft(x0 >= 0)
        f1 = fw * (u - 1j * u ** 2) / (T * phi)
        f2 = fw * ((u ** 2 + 1j * u) * self.cf.phi_prime / (T * phi ** 2) - (2 * u + 1j) / (T * phi))
        return f1, f2

    def shifted_inverse(self, values: np.ndarray, x0: float) -> np.ndarray:
        """F^{-1} values (x0 - x) on the grid."""
        return inverse_ft(values * np.exp(-1j * self.u * x0), self.u, self.grid, sign=1)


def variance_kernels(family: str, U: float, cf: CharacteristicFunction, s: Optional[int] = None,
                     kernel: Optional[OneSidedKernel] = None, grid: Optional[XGrid] = None) -> VarianceKernels:
    if family not in FUNCTION_QUANTITY:
        raise ValueError(f"unknown model family {family!r}")
    if U <= 0:
        raise ValueError(f"cut-off must be positive, got {U}")
    if U > cf.u[-1] + 1e-12:
        raise NumericalError(f"cut-off U={U:g} beyond the characteristic function grid (|u| <= {cf.u[-1]:g})")
    s = s or config.estimation.smoothness
    if family == "sd" and kernel is None:
        kernel = one_sided_kernel(s)
    return VarianceKernels(family=family, U=float(U), cf=cf, s=s, grid=grid or model_grid(), kernel=kernel)


def error_coefficient(quantity: str, kernels: VarianceKernels, x0: Optional[float] = None) -> np.ndarray:
    """c(x) on the grid such that the linearized error is N^{-1/2} int c rho dW."""
    x = kernels.grid.x
    if kernels.family == "fa":
        if quantity not in FA_QUANTITIES:
            raise ValueError(f"unknown FA quantity {quantity!r}")
        g_sigma = kernels.G("sigma2").real
        if quantity == "sigma2":
            return TWO_PI * g_sigma
        g_gamma = kernels.G("gamma").imag
        if quantity == "gamma":
            return TWO_PI * (g_gamma - g_sigma)
        g_lambda = kernels.G("lambda").real
        if quantity == "lambda":
            return TWO_PI * (-0.5 * g_sigma + g_gamma - g_lambda)
        g0, g1, g2 = (kernels.g(m, x0) for m in range(3))
        c1 = (-1j * g1).real
        direct = np.exp(-x) * kernels.shifted_inverse(kernels.f("nu"), x0).real
        return direct + TWO_PI * (g_sigma * (0.5 * g2.real - c1 - 0.5 * g0.real)
                                  + g_gamma * (c1 + g0.real) - g_lambda * g0.real)

    if quantity == "gamma":
        return TWO_PI * kernels.G("gamma").imag
    if quantity == "alpha":
        return TWO_PI * kernels.G("alpha").real
    if quantity == "k":
        f1, f2 = kernels.f_k(x0)
        inner = np.exp(-x) * (x * kernels.shifted_inverse(f1, x0) + kernels.shifted_inverse(f2, x0))
        return inner.imag if x0 >= 0 else -inner.imag
    raise ValueError(f"unknown SD quantity {quantity!r}")


def variance(quantity: str, noise: NoiseProfile, kernels: VarianceKernels, x0: Optional[float] = None) -> float:
    """Finite-sample variance of one estimate; x0 is required for nu and k."""
    if quantity == FUNCTION_QUANTITY[kernels.family] and x0 is None:
        raise ValueError(f"{quantity} needs an evaluation point x0")
    x = kernels.grid.x
    inside = noise.inside(x)
    if inside.sum() < 2:
        return 0.0
    c = error_coefficient(quantity, kernels, x0)[inside]
    xs = x[inside]
    return float(trapezoid((c * noise.rho(xs)) ** 2, xs) / noise.n)


def interval(estimate: float, s_hat: float, level: float) -> ConfidenceInterval:
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if not (s_hat >= 0 and np.isfinite(s_hat)):
        raise ValueError(f"standard deviation must be finite and nonnegative, got {s_hat}")
    q = float(norm.ppf(1.0 - level / 2.0))
    return ConfidenceInterval(estimate=estimate, s_hat=s_hat, level=level,
                              lower=estimate - q * s_hat, upper=estimate + q * s_hat)


def sigma_delta_method(sigma2: float, s_sigma2: float) -> Tuple[float, float]:
    """(sigma^, s_sigma) with s_sigma^2 = s_{sigma^2}^2 / (4 sigma^2)."""
    if sigma2 <= 0:
        raise NumericalError(f"delta method undefined at sigma^2 = {sigma2:g}")
    sigma = float(np.sqrt(sigma2))
    return sigma, s_sigma2 / (2.0 * sigma)


def level_key(level: float) -> str:
    return f"{level:g}"


def function_estimate(calibration, family: str, x0):
    """nu^ (FA) or the rearranged k^* (SD) interpolated at x0."""
    raw = calibration.raw
    values = raw.nu if family == "fa" else raw.k_rearranged
    return np.interp(x0, raw.x, values)


def confidence_report(curve: OptionCurve, calibration, family: str, levels: Sequence[float] = (0.5, 0.05),
                      x0: float = -0.2, cf: Optional[CharacteristicFunction] = None,
                      threads: Optional[int] = None,
                      kernel: Optional[OneSidedKernel] = None) -> Dict[str, Dict[str, ConfidenceInterval]]:
    """Intervals for every quantity of the family, each at the cut-off its estimate used."""
    raw = calibration.raw
    noise = noise_profile(curve.quotes)
    cf = cf or empirical_cf(curve, calibration.exponents.u)
    if family == "sd" and kernel is None:
        kernel = one_sided_kernel()
    kernels = {U: variance_kernels(family, U, cf, kernel=kernel) for U in set(raw.cutoffs.values())}
    quantities = FA_QUANTITIES if family == "fa" else SD_QUANTITIES
    function = FUNCTION_QUANTITY[family]

    def evaluate(quantity: str) -> float:
        point = x0 if quantity == function else None
        return variance(quantity, noise, kernels[raw.cutoffs[quantity]], point)

    with ThreadPoolExecutor(max_workers=threads or config.run.threads) as pool:
        variances = dict(zip(quantities, pool.map(evaluate, quantities)))

    estimates = {**raw.scalars(), function: float(function_estimate(calibration, family, x0))}
    report = {}
    for quantity in quantities:
        s_hat = float(np.sqrt(max(variances[quantity], 0.0)))
        report[quantity] = {level_key(t): interval(estimates[quantity], s_hat, t) for t in levels}
    if family == "fa":
        try:
            sigma, s_sigma = sigma_delta_method(raw.sigma2, report["sigma2"][level_key(levels[0])].s_hat)
            report["sigma"] = {level_key(t): interval(sigma, s_sigma, t) for t in levels}
        except NumericalError as exc:
            logger.warning(f"No interval for sigma: {exc}")
    logger.info(f"Confidence intervals for {family.upper()} quantities at levels {list(levels)}")
    return report


def pointwise_band(curve: OptionCurve, calibration, family: str, points, level: float = 0.05,
                   cf: Optional[CharacteristicFunction] = None, threads: Optional[int] = None,
                   kernel: Optional[OneSidedKernel] = None) -> pd.DataFrame:
    """Pointwise intervals for nu^ (FA) or k^* (SD) on the given x0 points."""
    quantity = FUNCTION_QUANTITY[family]
    U = calibration.raw.cutoffs[quantity]
    kernels = variance_kernels(family, U, cf or empirical_cf(curve, calibration.exponents.u), kernel=kernel)
    noise = noise_profile(curve.quotes)
    points = np.asarray(points, dtype=float)
    if family == "fa":
        for name in ("sigma2", "gamma", "lambda"):
            kernels.G(name)

    with ThreadPoolExecutor(max_workers=threads or config.run.threads) as pool:
        variances = np.array(list(pool.map(lambda p: variance(quantity, noise, kernels, p), points)))

    estimate = function_estimate(calibration, family, points)
    s_hat = np.sqrt(np.maximum(variances, 0.0))
    q = float(norm.ppf(1.0 - level / 2.0))
    return pd.DataFrame({"x": points, "estimate": estimate, "s_hat": s_hat,
                         "lower": estimate - q * s_hat, "upper": estimate + q * s_hat})


def _quadrature(u: np.ndarray, U: float) -> np.ndarray:
    """Trapezoid weights of the sub-grid |u| <= U."""
    mask = np.abs(u) <= U
    weights = np.where(mask, u[1] - u[0], 0.0)
    index = np.flatnonzero(mask)
    if index.size:
        weights[index[0]] *= 0.5
        weights[index[-1]] *= 0.5
    return weights


def simulate_linearized_error(kernels: VarianceKernels, noise: NoiseProfile, draws: int,
                              rng: np.random.Generator, x0: Optional[float] = None, stride: int = 4,
                              chunk: int = 250) -> Dict[str, np.ndarray]:
    """Draws of the linearized errors, simulated directly from Brownian increments on the quoted range.

    The function quantity (nu or k) is included only when x0 is given.
    """
    grid, cf, U = kernels.grid, kernels.cf, kernels.U
    x = grid.x[::stride]
    x = x[noise.inside(x)]
    dx = grid.dx * stride
    rho = noise.rho(x)

    family = kernels.family
    u_all = kernels.u
    reach = np.ones(u_all.size, dtype=bool) if (family == "sd" and x0 is not None) else np.abs(u_all) <= U
    u = u_all[reach]
    du = float(u_all[1] - u_all[0])
    T, phi = cf.T, cf.phi[reach]
    quad = _quadrature(u, U)
    response_minus_i = kernels.response_minus_i[reach]
    response = kernels.response[reach]
    root_n = np.sqrt(noise.n)

    wave = np.exp(1j * np.outer(u, x)) * rho
    damped = wave * np.exp(-x)
    weighted = damped * x if family == "sd" and x0 is not None else None

    if family == "fa":
        w = kernels.weights
        w_sigma, w_gamma, w_lambda = quad * w.sigma(u), quad * w.gamma(u), quad * w.lam(u)
        if x0 is not None:
            g0, g1, g2 = (kernels.g(m, x0) for m in range(3))
            nu_sum = np.exp(-1j * u * x0) * kernels.nu_weight[reach] * du / TWO_PI
    else:
        w = kernels.weights
        w_gamma, w_alpha = quad * w.gamma(u), quad * w.alpha(u)
        if x0 is not None:
            sign = -1j if x0 >= 0 else 1j
            k_sum = sign * np.exp(-1j * u * x0) * kernels.kernel_ft(x0 >= 0)[reach] * du / TWO_PI
            slope_x = ((u - 1j * u ** 2) / (T * phi))[:, None]
            slope_1 = ((u ** 2 + 1j * u) * cf.phi_prime[reach] / (T * phi ** 2) - (2 * u + 1j) / (T * phi))[:, None]

    out: Dict[str, list] = {}
    for start in range(0, draws, chunk):
        m = min(chunk, draws - start)
        dW = rng.standard_normal((x.size, m)) * np.sqrt(dx)
        eps0 = wave @ dW / root_n
        eps1 = damped @ dW / root_n
        d_minus_i = response_minus_i[:, None] * eps0
        batch = {}
        if family == "fa":
            sigma2 = w_sigma @ d_minus_i.real
            gamma = -sigma2 + w_gamma @ d_minus_i.imag
            lam = 0.5 * sigma2 + gamma - w_lambda @ d_minus_i.real
            batch.update(sigma2=sigma2, gamma=gamma, **{"lambda": lam})
            if x0 is not None:
                direct = (nu_sum @ (response[:, None] * eps1)).real
                batch["nu"] = direct + 0.5 * sigma2 * g2.real + (-1j * g1).real * gamma + lam * g0.real
        else:
            batch["gamma"] = w_gamma @ d_minus_i.imag
            batch["alpha"] = w_alpha @ d_minus_i.real
            if x0 is not None:
                eps_x = weighted @ dW / root_n
                d_prime = slope_x * eps_x + slope_1 * eps1
                batch["k"] = (k_sum @ d_prime).real
        for name, values in batch.items():
            out.setdefault(name, []).append(np.asarray(values))
    return {name: np.concatenate(values) for name, values in out.items()}


def plancherel_check(values: np.ndarray, u: np.ndarray, dx: Optional[float] = None) -> float:
    """Relative gap between int |f|^2 du and 2 pi int |F^{-1} f|^2 dx over one full period."""
    u = np.asarray(u, dtype=float)
    du = float(u[1] - u[0])
    dx = dx or model_grid().dx
    n = int(round(TWO_PI / (du * dx)))
    period = XGrid(x0=-0.5 * n * dx, dx=dx, n=n)
    back = inverse_ft(values, u, period, sign=1)
    lhs = float(np.sum(np.abs(values) ** 2) * du)
    rhs = float(TWO_PI * np.sum(np.abs(back) ** 2) * dx)
    if lhs == 0.0:
        return abs(rhs)
    return abs(lhs - rhs) / lhs
