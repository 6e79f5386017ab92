"""
Cut-off selection: least squares against the quotes, the oracle for simulations, and the 4/3 rule.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from calib_fa import EmpiricalExponents, calibrate_fa, empirical_exponents
from calib_sd import OneSidedKernel, calibrate_sd, one_sided_kernel
from config import config
from errors import LevySpecError
from fourier_pricing import price_at
from levy_models import LevyModel, drift, sample_on_grid
from market_data import OptionCurve, fit_curve, noise_scale
from models import FA_QUANTITIES, SD_QUANTITIES, CutoffScanReport, MertonParams, QuoteSet, VarianceGammaParams

CI_FACTOR = 4.0 / 3.0


def calibrate(curve: OptionCurve, family: str, cutoffs, exponents: Optional[EmpiricalExponents] = None,
              kernel: Optional[OneSidedKernel] = None):
    """Run the FA or SD pipeline; the result exposes .raw, .corrected and .exponents."""
    if family == "fa":
        return calibrate_fa(curve, cutoffs, exponents=exponents)
    if family == "sd":
        return calibrate_sd(curve, cutoffs, exponents=exponents, kernel=kernel)
    raise ValueError(f"unknown model family {family!r}")


def quantities_of(family: str):
    return FA_QUANTITIES if family == "fa" else SD_QUANTITIES


def rss(quotes: QuoteSet, model: LevyModel) -> float:
    """Sum of squared differences between repriced and quoted option values."""
    repriced = price_at(model, quotes.x, quotes.T)
    return float(np.sum((repriced - quotes.prices) ** 2))


def scan_grid(quotes: QuoteSet, points: Optional[int] = None) -> np.ndarray:
    """Geometric cut-off grid on [lower, factor / Delta]."""
    _, gap = noise_scale(quotes)
    lower = config.tuning.scan_lower
    upper = max(config.tuning.scan_upper_factor / gap, lower * 1.5)
    return np.geomspace(lower, upper, points or config.tuning.scan_points)


def _local_minima(values: np.ndarray) -> int:
    finite = np.where(np.isfinite(values), values, np.inf)
    padded = np.concatenate([[np.inf], finite, [np.inf]])
    return int(np.sum((padded[1:-1] < padded[:-2]) & (padded[1:-1] <= padded[2:])))


@dataclass
class CutoffScan:
    cutoffs: np.ndarray
    rss: np.ndarray
    selected: float
    selected_rss: float
    multi_minimum: bool = False
    oracle_losses: Dict[str, np.ndarray] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"U": self.cutoffs, "RSS": self.rss})
        for quantity, losses in self.oracle_losses.items():
            frame[f"loss_{quantity}"] = losses
        return frame

    def report(self) -> CutoffScanReport:
        return CutoffScanReport(cutoffs=self.cutoffs.tolist(), rss=self.rss.tolist(), selected=self.selected,
                                multi_minimum=self.multi_minimum)


def _rss_at(curve: OptionCurve, family: str, exponents, kernel) -> Callable[[float], float]:
    def evaluate(U: float) -> float:
        try:
            calibration = calibrate(curve, family, U, exponents=exponents, kernel=kernel)
            return rss(curve.quotes, calibration.corrected)
        except LevySpecError as exc:
            logger.warning(f"RSS at U={U:.4g} unavailable: {exc}")
            return np.inf
    return evaluate


def select_cutoff(quotes: QuoteSet, family: str, degree: Optional[int] = None,
                  cutoffs: Optional[Sequence[float]] = None, threads: Optional[int] = None,
                  refine: bool = True) -> CutoffScan:
    """Minimize the RSS over a geometric grid, then refine by golden-section search around the grid minimum."""
    curve = fit_curve(quotes, degree or config.estimation.spline_degree)
    grid = np.asarray(cutoffs if cutoffs is not None else scan_grid(quotes), dtype=float)
    exponents = empirical_exponents(curve, max(config.estimation.exponent_u_max, float(grid.max())))
    kernel = one_sided_kernel() if family == "sd" else None
    evaluate = _rss_at(curve, family, exponents, kernel)

    with ThreadPoolExecutor(max_workers=threads or config.run.threads) as pool:
        values = np.array(list(pool.map(evaluate, grid)))

    if not np.any(np.isfinite(values)):
        raise LevySpecError("no cut-off on the scan produced a valid calibration")
    best = int(np.argmin(np.where(np.isfinite(values), values, np.inf)))
    selected, selected_rss = float(grid[best]), float(values[best])
    multi = _local_minima(values) > 1
    if multi:
        logger.warning(f"RSS scan has several local minima; keeping the global grid minimum U={selected:.4g}")

    if refine and 0 < best < grid.size - 1 and values[best] < min(values[best - 1], values[best + 1]):
        result = minimize_scalar(evaluate, bracket=(grid[best - 1], grid[best], grid[best + 1]), method="golden",
                                 options={"xtol": 1e-3})
        if np.isfinite(result.fun) and result.fun < selected_rss:
            selected, selected_rss = float(result.x), float(result.fun)

    logger.info(f"Selected cut-off U*={selected:.4g} with RSS={selected_rss:.4g}")
    return CutoffScan(cutoffs=grid, rss=values, selected=selected, selected_rss=selected_rss, multi_minimum=multi)


def truth_values(truth: Union[MertonParams, VarianceGammaParams], family: str) -> Dict[str, Union[float, np.ndarray]]:
    """True scalars and the true density (FA) or k-function (SD) on the model grid."""
    sampled = sample_on_grid(truth)
    if family == "fa":
        return {"sigma2": truth.sigma ** 2, "gamma": drift(truth), "lambda": truth.lam, "nu": sampled.nu}
    return {"gamma": drift(truth), "alpha": truth.alpha, "k": sampled.k}


def estimation_losses(estimate, truth: Dict[str, Union[float, np.ndarray]], family: str) -> Dict[str, float]:
    """Squared errors of the scalars and L2 errors of the function estimate."""
    losses = {q: float((v - truth[q]) ** 2) for q, v in estimate.scalars().items()}
    if family == "fa":
        losses["nu"] = float(trapezoid((estimate.nu - truth["nu"]) ** 2, dx=estimate.grid.dx))
    else:
        losses["k"] = float(trapezoid((estimate.k_rearranged - truth["k"]) ** 2, dx=estimate.grid.dx))
    return losses


def oracle_cutoff(truth: Union[MertonParams, VarianceGammaParams], curve: OptionCurve, family: str,
                  cutoffs: Sequence[float], exponents: Optional[EmpiricalExponents] = None,
                  kernel: Optional[OneSidedKernel] = None) -> Dict[str, float]:
    """Per-quantity cut-off minimizing the loss against the known truth over the given grid."""
    return oracle_scan(truth, curve, family, cutoffs, exponents, kernel)[0]


def oracle_scan(truth, curve: OptionCurve, family: str, cutoffs: Sequence[float],
                exponents: Optional[EmpiricalExponents] = None, kernel: Optional[OneSidedKernel] = None):
    cutoffs = np.asarray(cutoffs, dtype=float)
    if exponents is None:
        exponents = empirical_exponents(curve, max(config.estimation.exponent_u_max, float(cutoffs.max())))
    if family == "sd" and kernel is None:
        kernel = one_sided_kernel()
    reference = truth_values(truth, family)
    quantities = quantities_of(family)
    losses: Dict[str, List[float]] = {q: [] for q in quantities}
    for U in cutoffs:
        try:
            raw = calibrate(curve, family, float(U), exponents=exponents, kernel=kernel).raw
            for quantity, loss in estimation_losses(raw, reference, family).items():
                losses[quantity].append(loss)
        except LevySpecError as exc:
            logger.warning(f"Oracle loss at U={U:.4g} unavailable: {exc}")
            for quantity in quantities:
                losses[quantity].append(np.inf)
    table = {q: np.asarray(v) for q, v in losses.items()}
    best = {q: float(cutoffs[int(np.argmin(v))]) for q, v in table.items()}
    logger.info(f"Oracle cut-offs: {best}")
    return best, table


def ci_cutoff(U_oracle: float) -> float:
    """Cut-off for confidence intervals: 4/3 of the oracle value."""
    if U_oracle <= 0:
        raise ValueError(f"oracle cut-off must be positive, got {U_oracle}")
    return CI_FACTOR * U_oracle
