"""
Finite-activity spectral estimators.

psi_{-i}(u) = -sigma^2 u^2/2 + i(sigma^2 + gamma)u + (sigma^2/2 + gamma - lambda) + F mu(u), mu = e^x nu.
sigma^2, gamma and lambda are weighted projections of the empirical psi_{-i} on [-U, U];
nu is the flat-top filtered inverse transform of the empirical psi with the quadratic part removed.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np
from loguru import logger
from numpy.polynomial import Polynomial

from config import config
from errors import NumericalError
from fourier import XGrid, exponent_spacing, inverse_ft, model_grid, symmetric_u_grid, trapezoid_on
from levy_models import martingale_drift
from market_data import OptionCurve, curve_ft
from models import FA_QUANTITIES, LevyModelFA

FLAT_TOP_INNER = 0.05


@dataclass(frozen=True)
class EmpiricalExponents:
    """psi~(u) and psi~_{-i}(u) on the symmetric grid u_j = j du."""
    u: np.ndarray
    psi: np.ndarray
    psi_minus_i: np.ndarray
    T: float
    ill_conditioned: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def du(self) -> float:
        return float(self.u[1] - self.u[0])

    @property
    def u_max(self) -> float:
        return float(self.u[-1])

    def check_cutoff(self, U: float):
        if U > self.u_max + 1e-12:
            raise NumericalError(f"cut-off U={U:g} beyond the exponent grid (|u| <= {self.u_max:g})")
        bad = self.ill_conditioned[np.abs(self.ill_conditioned) <= U]
        if bad.size:
            raise NumericalError(f"ill-conditioned frequencies inside the cut-off U={U:g}: {bad[:5].tolist()}")


def continuous_log(values: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Logarithm whose imaginary part is unwound from u=0 outward in both directions."""
    i0 = int(np.argmin(np.abs(u)))
    angle = np.angle(values)
    right = np.unwrap(angle[i0:])
    left = np.unwrap(angle[i0::-1])[::-1]
    phase = np.concatenate([left[:-1], right])
    return np.log(np.abs(values)) + 1j * phase


def exponents_from_transforms(u: np.ndarray, ft: np.ndarray, ft_shifted: np.ndarray, T: float) -> EmpiricalExponents:
    """Empirical exponents from F O(u) and F O(u+i)."""
    arg_minus_i = 1.0 + 1j * u * (1.0 + 1j * u) * ft
    arg = 1.0 - u * (u + 1j) * ft_shifted
    tol = config.estimation.ill_conditioned_tol
    bad = (np.abs(arg_minus_i) < tol) | (np.abs(arg) < tol)
    if bad.any():
        logger.warning(f"{int(bad.sum())} ill-conditioned frequencies, first at |u|={np.abs(u[bad]).min():.4g}")
    with np.errstate(divide="ignore"):
        psi_minus_i = continuous_log(arg_minus_i, u) / T
        psi = continuous_log(arg, u) / T
    return EmpiricalExponents(u=u, psi=psi, psi_minus_i=psi_minus_i, T=T, ill_conditioned=u[bad])


def empirical_exponents(curve: OptionCurve, u_max: Optional[float] = None) -> EmpiricalExponents:
    u = symmetric_u_grid(u_max or config.estimation.exponent_u_max, exponent_spacing())
    return exponents_from_transforms(u, curve_ft(curve, u), curve_ft(curve, u + 1j), curve.T)


def monomial_series(coefficients, first_power: int, step: int = 2) -> Polynomial:
    coef = np.zeros(first_power + step * (len(coefficients) - 1) + 1)
    coef[first_power::step] = coefficients
    return Polynomial(coef)


def _integral(poly: Polynomial, lower: float = -1.0, upper: float = 1.0) -> float:
    antiderivative = poly.integ()
    return float(antiderivative(upper) - antiderivative(lower))


@dataclass(frozen=True)
class FAWeights:
    """Polynomial weights in y = u/U whose value and first two derivatives vanish at y = +-1."""
    U: float
    s: int
    c_sigma: float
    c_gamma: float
    c_lambda: float
    p_sigma: Polynomial
    p_gamma: Polynomial
    p_lambda: Polynomial

    def _evaluate(self, poly: Polynomial, scale: float, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= self.U, scale * poly(u / self.U), 0.0)

    def sigma(self, u) -> np.ndarray:
        return self._evaluate(self.p_sigma, self.c_sigma / self.U ** 3, u)

    def gamma(self, u) -> np.ndarray:
        return self._evaluate(self.p_gamma, self.c_gamma / self.U ** 2, u)

    def lam(self, u) -> np.ndarray:
        return self._evaluate(self.p_lambda, self.c_lambda / self.U, u)


def fa_weights(U: float, s: Optional[int] = None) -> FAWeights:
    s = s or config.estimation.smoothness
    if U <= 0 or s < 1:
        raise ValueError(f"need U > 0 and s >= 1, got U={U}, s={s}")
    p_sigma = monomial_series([2 * s + 1, -4 * (2 * s + 3), 6 * (2 * s + 5), -4 * (2 * s + 7), 2 * s + 9], 2 * s)
    p_gamma = monomial_series([1, -3, 3, -1], 2 * s + 1)
    p_lambda = monomial_series([2 * s + 3, -4 * (2 * s + 5), 6 * (2 * s + 7), -4 * (2 * s + 9), 2 * s + 11], 2 * s)
    y = Polynomial([0, 1])
    return FAWeights(
        U=float(U), s=s,
        c_sigma=-2.0 / _integral(y ** 2 * p_sigma),
        c_gamma=1.0 / _integral(y * p_gamma),
        c_lambda=1.0 / _integral(p_lambda),
        p_sigma=p_sigma, p_gamma=p_gamma, p_lambda=p_lambda,
    )


def flat_top(u) -> np.ndarray:
    """1 on |u| <= 0.05, smooth decay to 0 at |u| = 1."""
    a = np.abs(np.asarray(u, dtype=float))
    middle = (a > FLAT_TOP_INNER) & (a < 1.0)
    out = np.where(a <= FLAT_TOP_INNER, 1.0, 0.0)
    am = a[middle]
    with np.errstate(over="ignore", divide="ignore"):
        out[middle] = np.exp(-np.exp(-(am - FLAT_TOP_INNER) ** -2.0) / (am - 1.0) ** 2)
    return out


@dataclass(frozen=True)
class FAScalars:
    sigma2: float
    gamma: float
    lam: float
    sigma2_raw: float


def estimate_fa_scalars(exponents: EmpiricalExponents, weights: FAWeights) -> FAScalars:
    U = weights.U
    exponents.check_cutoff(U)
    u = exponents.u
    psi = exponents.psi_minus_i
    sigma2_raw = trapezoid_on(psi.real * weights.sigma(u), u, -U, U)
    sigma2 = max(sigma2_raw, 0.0)
    if sigma2_raw < 0:
        logger.warning(f"Negative variance estimate {sigma2_raw:.4g} at U={U:g} clipped to 0")
    gamma = -sigma2 + trapezoid_on(psi.imag * weights.gamma(u), u, -U, U)
    lam = sigma2 / 2 + gamma - trapezoid_on(psi.real * weights.lam(u), u, -U, U)
    return FAScalars(sigma2=sigma2, gamma=gamma, lam=lam, sigma2_raw=sigma2_raw)


def estimate_nu(exponents: EmpiricalExponents, sigma2: float, gamma: float, lam: float, U: float,
                grid: Optional[XGrid] = None) -> np.ndarray:
    exponents.check_cutoff(U)
    grid = grid or model_grid()
    u = exponents.u
    integrand = (exponents.psi + sigma2 * u ** 2 / 2 - 1j * gamma * u + lam) * flat_top(u / U)
    return inverse_ft(np.where(np.abs(u) < U, integrand, 0.0), u, grid).real


@dataclass(frozen=True)
class FAEstimate:
    """Raw estimates, each quantity at its own cut-off; nu on the model grid."""
    sigma2: float
    gamma: float
    lam: float
    nu: np.ndarray
    grid: XGrid
    cutoffs: Dict[str, float]
    sigma2_clipped: bool = False

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def scalars(self) -> Dict[str, float]:
        return {"sigma2": self.sigma2, "gamma": self.gamma, "lambda": self.lam}


def resolve_cutoffs(cutoffs, quantities) -> Dict[str, float]:
    """A single value applies to every quantity; a mapping must name each one."""
    if isinstance(cutoffs, Mapping):
        missing = [q for q in quantities if q not in cutoffs]
        if missing:
            raise ValueError(f"missing cut-offs for {missing}")
        return {q: float(cutoffs[q]) for q in quantities}
    return {q: float(cutoffs) for q in quantities}


def estimate_fa(exponents: EmpiricalExponents, cutoffs, s: Optional[int] = None,
                grid: Optional[XGrid] = None) -> FAEstimate:
    cutoffs = resolve_cutoffs(cutoffs, FA_QUANTITIES)
    grid = grid or model_grid()
    at = {}
    for U in sorted(set(cutoffs.values())):
        at[U] = estimate_fa_scalars(exponents, fa_weights(U, s))
    nu_scalars = at[cutoffs["nu"]]
    nu = estimate_nu(exponents, nu_scalars.sigma2, nu_scalars.gamma, nu_scalars.lam, cutoffs["nu"], grid)
    return FAEstimate(
        sigma2=at[cutoffs["sigma2"]].sigma2,
        gamma=at[cutoffs["gamma"]].gamma,
        lam=at[cutoffs["lambda"]].lam,
        nu=nu,
        grid=grid,
        cutoffs=cutoffs,
        sigma2_clipped=at[cutoffs["sigma2"]].sigma2_raw < 0,
    )


def correct_fa(estimate: FAEstimate) -> LevyModelFA:
    """Clip nu at zero and refit the drift from the martingale condition."""
    model = LevyModelFA(sigma2=estimate.sigma2, gamma=0.0, x0=estimate.grid.x0, dx=estimate.grid.dx,
                        nu=np.maximum(estimate.nu, 0.0))
    return dataclasses.replace(model, gamma=martingale_drift(model))


@dataclass(frozen=True)
class FACalibration:
    exponents: EmpiricalExponents
    raw: FAEstimate
    corrected: LevyModelFA

    def summary(self) -> Dict[str, float]:
        return {**self.raw.scalars(), "sigma": float(np.sqrt(self.raw.sigma2))}

    def corrected_summary(self) -> Dict[str, float]:
        return {"sigma2": self.corrected.sigma2, "gamma": self.corrected.gamma, "lambda": self.corrected.lam}


def calibrate_fa(curve: OptionCurve, cutoffs, s: Optional[int] = None,
                 exponents: Optional[EmpiricalExponents] = None) -> FACalibration:
    cutoffs = resolve_cutoffs(cutoffs, FA_QUANTITIES)
    if exponents is None:
        reach = max(config.estimation.exponent_u_max, max(cutoffs.values()))
        exponents = empirical_exponents(curve, reach)
    raw = estimate_fa(exponents, cutoffs, s)
    corrected = correct_fa(raw)
    logger.debug(f"FA calibration at {cutoffs}: sigma2={raw.sigma2:.5g}, gamma={raw.gamma:.5g}, lambda={raw.lam:.5g}")
    return FACalibration(exponents=exponents, raw=raw, corrected=corrected)
