"""
Self-decomposable spectral estimators: drift, alpha = k(0+) + k(0-), and the k-function.

gamma and alpha are projections of Im/Re psi~_{-i} on polynomial weights; k is recovered from
psi~' through a one-sided kernel on each half-line and then rearranged to be monotone.
"""
import dataclasses
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from loguru import logger
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from calib_fa import EmpiricalExponents, empirical_exponents, flat_top, monomial_series, resolve_cutoffs
from config import config
from errors import NumericalError
from fourier import XGrid, exponent_spacing, inverse_ft, model_grid, symmetric_u_grid, trapezoid_on, trapezoid_weights
from levy_models import martingale_drift
from market_data import OptionCurve, curve_ft
from models import SD_QUANTITIES, LevyModelSD

_CHUNK = 512


def _solve(matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        solution = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular {what} system: {exc}") from exc
    if not np.all(np.isfinite(solution)):
        raise NumericalError(f"{what} system produced non-finite coefficients")
    return solution


@dataclass(frozen=True)
class SDWeights:
    """w_gamma (odd) and w_alpha (even) on [-U, U]; both vanish at |u| = U."""
    U: float
    s: int
    a: np.ndarray
    b: np.ndarray
    p_gamma: Polynomial
    p_alpha: Polynomial

    def gamma(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= self.U, self.p_gamma(u / self.U) / self.U ** 2, 0.0)

    def alpha(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= self.U, self.p_alpha(u / self.U) / self.U, 0.0)


def sd_weights(U: float, s: Optional[int] = None) -> SDWeights:
    s = s or config.estimation.smoothness
    if U <= 0 or s < 1:
        raise ValueError(f"need U > 0 and s >= 1, got U={U}, s={s}")
    k = np.arange(s + 2)
    p = 2 * (k + s) - 1
    q = 2 * (k + s)

    # Rows in y = u/U; every condition is free of U after the substitution.
    rows_a = [1.0 / (p + 2), 1.0 / (p + 1)] + [1.0 / (p - 2 * l + 2) for l in range(1, s)] + [np.ones(s + 2)]
    rhs_a = np.zeros(s + 2)
    rhs_a[0] = 0.5
    rows_b = [1.0 / (q + 1) ** 2, 1.0 / (q + 1)] + [1.0 / (q - 2 * l + 1) for l in range(1, s)] + [np.ones(s + 2)]
    rhs_b = np.zeros(s + 2)
    rhs_b[0] = 0.5

    a = _solve(np.vstack(rows_a), rhs_a, "drift weight")
    b = _solve(np.vstack(rows_b), rhs_b, "alpha weight")
    return SDWeights(U=float(U), s=s, a=a, b=b,
                     p_gamma=monomial_series(a, 2 * s - 1), p_alpha=monomial_series(b, 2 * s))


def estimate_sd_scalars(exponents: EmpiricalExponents, weights: SDWeights):
    """(gamma_sd, alpha) by trapezoid projection of psi~_{-i} on [-U, U]."""
    U = weights.U
    exponents.check_cutoff(U)
    u = exponents.u
    psi = exponents.psi_minus_i
    gamma = trapezoid_on(psi.imag * weights.gamma(u), u, -U, U)
    alpha = trapezoid_on(psi.real * weights.alpha(u), u, -U, U)
    return gamma, alpha


def psi_prime_from_transforms(u: np.ndarray, ft_shifted: np.ndarray, ft_x_shifted: np.ndarray, T: float,
                              n: int) -> np.ndarray:
    """psi~'(u) from F O(u+i) and F[x O](u+i); denominators below n^{-1/2} keep their phase at that modulus."""
    u = np.asarray(u, dtype=float)
    numerator = (u - 1j * u ** 2) * ft_x_shifted - (2 * u + 1j) * ft_shifted
    denominator = 1.0 - u * (u + 1j) * ft_shifted
    return numerator / (T * truncate_small(denominator, n))


def truncate_small(values: np.ndarray, n: int) -> np.ndarray:
    floor = 1.0 / np.sqrt(n)
    modulus = np.abs(values)
    small = modulus < floor
    if small.any():
        logger.debug(f"{int(small.sum())} values truncated at modulus {floor:.3g}")
    phase = np.where(modulus > 0, values / np.where(modulus > 0, modulus, 1.0), 1.0)
    return np.where(small, floor * phase, values)


def psi_prime(curve: OptionCurve, u: Optional[np.ndarray] = None) -> np.ndarray:
    if u is None:
        u = symmetric_u_grid(config.estimation.exponent_u_max, exponent_spacing())
    shifted = u + 1j
    return psi_prime_from_transforms(u, curve_ft(curve, shifted), curve_ft(curve, shifted, weighted_by_x=True),
                                     curve.T, curve.n)


def _kernel_moment(n: int) -> float:
    value, _ = quad(lambda x: x ** n * flat_top(x + 1.0), -2.0, 0.0, points=[-1.05, -0.95],
                    limit=200, epsabs=1e-14, epsrel=1e-13)
    return value


@dataclass(frozen=True)
class OneSidedKernel:
    """W(x) = sum_m c_m x^m F(x+1) supported on [-2, 0], with unit mass and 2s-1 vanishing moments."""
    s: int
    coeffs: np.ndarray
    x: np.ndarray
    values: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.polynomial.polynomial.polyval(x, self.coeffs) * flat_top(x + 1.0)

    def ft(self, v) -> np.ndarray:
        """F W(v) by trapezoid sums over the samples."""
        v = np.asarray(v, dtype=float)
        shape = v.shape
        v = v.ravel()
        h = float(self.x[1] - self.x[0])
        weighted = self.values * trapezoid_weights(self.x.size) * h
        out = np.empty(v.size, dtype=complex)
        for start in range(0, v.size, _CHUNK):
            out[start:start + _CHUNK] = np.exp(1j * np.outer(v[start:start + _CHUNK], self.x)) @ weighted
        return out.reshape(shape)


def one_sided_kernel(s: Optional[int] = None, samples: Optional[int] = None) -> OneSidedKernel:
    s = s or config.estimation.smoothness
    if s < 1:
        raise ValueError(f"need s >= 1, got {s}")
    size = 2 * s + 1
    moments = np.array([_kernel_moment(n) for n in range(2 * size - 1)])
    gram = np.array([[moments[l + m] for m in range(size)] for l in range(size)])
    rhs = np.zeros(size)
    rhs[0] = 1.0
    coeffs = _solve(gram, rhs, "kernel moment")
    x = np.linspace(-2.0, 0.0, samples or config.estimation.kernel_samples)
    values = np.polynomial.polynomial.polyval(x, coeffs) * flat_top(x + 1.0)
    return OneSidedKernel(s=s, coeffs=coeffs, x=x, values=values)


def estimate_k(derivative: np.ndarray, u: np.ndarray, gamma: float, U: float, kernel: OneSidedKernel,
               grid: Optional[XGrid] = None) -> np.ndarray:
    """k^ on the grid: the x >= 0 branch uses FW(u/U), the x < 0 branch FW(-u/U)."""
    grid = grid or model_grid()
    positive = inverse_ft((-gamma - 1j * derivative) * kernel.ft(u / U), u, grid).real
    negative = inverse_ft((gamma + 1j * derivative) * kernel.ft(-u / U), u, grid).real
    return np.where(grid.x >= -0.5 * grid.dx, positive, negative)


def rearrange(k: np.ndarray, x: np.ndarray, C: Optional[float] = None) -> np.ndarray:
    """Decreasing rearrangement of max(k, 0) on [0, C], increasing on [-C, 0), zero elsewhere."""
    C = config.grid.half_width if C is None else C
    dx = float(x[1] - x[0]) if x.size > 1 else 1.0
    clipped = np.maximum(k, 0.0)
    out = np.zeros_like(clipped)
    right = (x >= -0.5 * dx) & (x <= C)
    left = (x < -0.5 * dx) & (x >= -C)
    out[right] = np.sort(clipped[right])[::-1]
    out[left] = np.sort(clipped[left])
    return out


@dataclass(frozen=True)
class SDEstimate:
    gamma: float
    alpha: float
    k: np.ndarray
    k_rearranged: np.ndarray
    grid: XGrid
    C: float
    cutoffs: Dict[str, float]

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def alpha_rearranged(self) -> float:
        i0 = int(np.searchsorted(self.x, -0.5 * self.grid.dx, side="right"))
        return float(self.k_rearranged[i0] + self.k_rearranged[i0 - 1])

    def scalars(self) -> Dict[str, float]:
        return {"gamma": self.gamma, "alpha": self.alpha}


def estimate_sd(exponents: EmpiricalExponents, derivative: np.ndarray, cutoffs, s: Optional[int] = None,
                kernel: Optional[OneSidedKernel] = None, C: Optional[float] = None,
                grid: Optional[XGrid] = None) -> SDEstimate:
    cutoffs = resolve_cutoffs(cutoffs, SD_QUANTITIES)
    grid = grid or model_grid()
    kernel = kernel or one_sided_kernel(s)
    C = config.grid.half_width if C is None else C
    at = {U: estimate_sd_scalars(exponents, sd_weights(U, s)) for U in sorted(set(cutoffs.values()))}
    U_k = cutoffs["k"]
    k = estimate_k(derivative, exponents.u, at[U_k][0], U_k, kernel, grid)
    return SDEstimate(
        gamma=at[cutoffs["gamma"]][0],
        alpha=at[cutoffs["alpha"]][1],
        k=k,
        k_rearranged=rearrange(k, grid.x, C),
        grid=grid,
        C=float(C),
        cutoffs=cutoffs,
    )


def correct_sd(estimate: SDEstimate) -> LevyModelSD:
    """Rearranged k with the drift refitted from the martingale condition."""
    model = LevyModelSD(gamma=0.0, x0=estimate.grid.x0, dx=estimate.grid.dx, k=estimate.k_rearranged)
    return dataclasses.replace(model, gamma=martingale_drift(model))


@dataclass(frozen=True)
class SDCalibration:
    exponents: EmpiricalExponents
    derivative: np.ndarray
    raw: SDEstimate
    corrected: LevyModelSD

    def summary(self) -> Dict[str, float]:
        return {**self.raw.scalars(), "alpha_rearranged": self.raw.alpha_rearranged}

    def corrected_summary(self) -> Dict[str, float]:
        return {"gamma": self.corrected.gamma, "alpha": self.corrected.alpha}


def calibrate_sd(curve: OptionCurve, cutoffs, s: Optional[int] = None, C: Optional[float] = None,
                 exponents: Optional[EmpiricalExponents] = None,
                 kernel: Optional[OneSidedKernel] = None, derivative: Optional[np.ndarray] = None) -> SDCalibration:
    cutoffs = resolve_cutoffs(cutoffs, SD_QUANTITIES)
    if exponents is None:
        reach = max(config.estimation.exponent_u_max, max(cutoffs.values()))
        exponents = empirical_exponents(curve, reach)
    if derivative is None:
        derivative = psi_prime(curve, exponents.u)
    raw = estimate_sd(exponents, derivative, cutoffs, s, kernel, C)
    corrected = correct_sd(raw)
    logger.debug(f"SD calibration at {cutoffs}: gamma={raw.gamma:.5g}, alpha={raw.alpha:.5g}")
    return SDCalibration(exponents=exponents, derivative=derivative, raw=raw, corrected=corrected)
