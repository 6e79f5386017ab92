"""
Monte Carlo studies on simulated quotes: interval coverage, RMSE of sigma^ along a
noise/size sweep, and pointwise band data with replicate estimates.

Every iteration draws from its own stream SeedSequence(seed, spawn_key=(..., i)), so
results do not depend on the number of worker processes.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from calib_fa import calibrate_fa
from calib_sd import OneSidedKernel, one_sided_kernel
from confidence import confidence_report, function_estimate, level_key, pointwise_band
from config import config
from errors import LevySpecError
from levy_models import drift, k_function_vg, levy_density_merton
from market_data import OptionCurve, clean_quotes, fit_curve, perturb_quotes
from models import CoverageRow, ExperimentConfig, MertonParams, QuoteSet, VarianceGammaParams
from tuning import calibrate, ci_cutoff, oracle_cutoff, scan_grid, select_cutoff

DEFAULT_BAND_CUTOFF = {"fa": 19.0, "sd": 2.8}

Params = Union[MertonParams, VarianceGammaParams]


def iteration_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@lru_cache(maxsize=None)
def _shared_kernel() -> OneSidedKernel:
    return one_sided_kernel()


def _kernel_for(family: str) -> Optional[OneSidedKernel]:
    return _shared_kernel() if family == "sd" else None


def true_parameters(cfg: ExperimentConfig) -> Params:
    return cfg.merton if cfg.family == "fa" else cfg.vg


def true_function(params: Params, x) -> np.ndarray:
    if isinstance(params, MertonParams):
        return levy_density_merton(params, x)
    return k_function_vg(params, x)


def true_values(params: Params, x0: float) -> Dict[str, float]:
    point = float(true_function(params, np.array([x0]))[0])
    if isinstance(params, MertonParams):
        return {"sigma2": params.sigma ** 2, "sigma": params.sigma, "gamma": drift(params), "lambda": params.lam,
                "nu": point}
    return {"gamma": drift(params), "alpha": params.alpha, "k": point}


def choose_cutoffs(cfg: ExperimentConfig, quotes: QuoteSet, curve: OptionCurve, params: Params,
                   kernel: Optional[OneSidedKernel] = None) -> Dict[str, float]:
    policy = cfg.cutoff_policy
    if policy == "fixed":
        return cfg.resolved_cutoffs()
    if policy == "rss":
        selected = select_cutoff(quotes, cfg.family, cfg.spline_degree, threads=1).selected
        return {q: selected for q in cfg.quantities}
    oracle = oracle_cutoff(params, curve, cfg.family, scan_grid(quotes), kernel=kernel)
    if policy == "ci":
        return {q: ci_cutoff(U) for q, U in oracle.items()}
    return oracle


def _workers(cfg: ExperimentConfig, threads: Optional[int]) -> int:
    return threads or cfg.threads or config.run.threads


def _map(fn: Callable, tasks: Sequence, workers: int) -> list:
    """Order-preserving map, in worker processes when more than one is requested."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    chunksize = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunksize))


def _coverage_iteration(task) -> Optional[Dict[str, Dict[str, bool]]]:
    cfg, clean, index = task
    params = true_parameters(cfg)
    truth = true_values(params, cfg.x0)
    kernel = _kernel_for(cfg.family)
    try:
        quotes = perturb_quotes(clean, cfg.tau, iteration_rng(cfg.seed, index))
        curve = fit_curve(quotes, cfg.spline_degree)
        cutoffs = choose_cutoffs(cfg, quotes, curve, params, kernel)
        calibration = calibrate(curve, cfg.family, cutoffs, kernel=kernel)
        report = confidence_report(curve, calibration, cfg.family, cfg.levels, cfg.x0, threads=1, kernel=kernel)
    except LevySpecError as exc:
        logger.error(f"Coverage iteration {index} failed: {exc}")
        return None
    logger.debug(f"Coverage iteration {index} at cut-offs {cutoffs}")
    return {q: {key: ci.contains(truth[q]) for key, ci in intervals.items()} for q, intervals in report.items()}


def summarize_coverage(results: Sequence[Optional[Dict[str, Dict[str, bool]]]], quantities: Sequence[str],
                       levels: Sequence[float]) -> List[CoverageRow]:
    """Coverage in percent with binomial standard errors; missing intervals count as failures."""
    rows = []
    for quantity in quantities:
        for level in levels:
            key = level_key(level)
            outcomes = [r[quantity][key] for r in results if r is not None and quantity in r]
            trials = len(outcomes)
            hits = int(sum(outcomes))
            p = hits / trials if trials else math.nan
            se = math.sqrt(p * (1.0 - p) / trials) if trials else math.nan
            rows.append(CoverageRow(quantity=quantity, level=level, coverage=100.0 * p, std_error=100.0 * se,
                                    hits=hits, trials=trials, failures=len(results) - trials))
    return rows


def coverage_quantities(cfg: ExperimentConfig) -> List[str]:
    return list(cfg.quantities) + (["sigma"] if cfg.family == "fa" else [])


def run_coverage(cfg: ExperimentConfig, threads: Optional[int] = None) -> List[CoverageRow]:
    params = true_parameters(cfg)
    clean = clean_quotes(params, cfg.N, cfg.T, cfg.r)
    workers = _workers(cfg, threads)
    logger.info(f"Coverage study: {cfg.family.upper()}, {cfg.iterations} iterations, N={cfg.N}, tau={cfg.tau}, "
                f"cut-offs {cfg.cutoff_policy}, {workers} workers")
    results = _map(_coverage_iteration, [(cfg, clean, i) for i in range(cfg.iterations)], workers)
    failed = sum(r is None for r in results)
    if failed:
        logger.warning(f"{failed} of {cfg.iterations} iterations failed")
    rows = summarize_coverage(results, coverage_quantities(cfg), cfg.levels)
    for row in rows:
        logger.info(f"{row.quantity} at t={row.level:g}: {row.coverage:.1f}% +- {row.std_error:.1f}")
    return rows


def coverage_frame(rows: Sequence[CoverageRow]) -> pd.DataFrame:
    return pd.DataFrame([row.dict() for row in rows])


def _rmse_iteration(task) -> Dict[int, Optional[float]]:
    cfg, clean, tau, point, index, degrees = task
    params = true_parameters(cfg)
    quotes = perturb_quotes(clean, tau, iteration_rng(cfg.seed, point, index))
    sigmas: Dict[int, Optional[float]] = {}
    for degree in degrees:
        try:
            curve = fit_curve(quotes, degree)
            cutoffs = choose_cutoffs(cfg.copy(update={"spline_degree": degree}), quotes, curve, params)
            sigmas[degree] = float(np.sqrt(calibrate_fa(curve, cutoffs).raw.sigma2))
        except LevySpecError as exc:
            logger.error(f"RMSE point {point}, iteration {index}, degree {degree} failed: {exc}")
            sigmas[degree] = None
    return sigmas


def run_rmse(cfg: ExperimentConfig, degrees: Sequence[int] = (1, 2), threads: Optional[int] = None) -> pd.DataFrame:
    """RMSE of sigma^ for each (tau, N) of the sweep and each spline degree, on common random numbers."""
    if cfg.family != "fa":
        raise ValueError("the RMSE sweep reports sigma^ and needs the FA family")
    workers = _workers(cfg, threads)
    sigma = cfg.merton.sigma
    rows = []
    for point, (tau, N) in enumerate(cfg.sweep):
        clean = clean_quotes(cfg.merton, N, cfg.T, cfg.r)
        tasks = [(cfg, clean, tau, point, i, tuple(degrees)) for i in range(cfg.iterations)]
        results = _map(_rmse_iteration, tasks, workers)
        for degree in degrees:
            values = np.array([r[degree] for r in results if r[degree] is not None])
            errors = values - sigma
            rows.append({
                "tau": tau, "N": N, "degree": degree,
                "rmse": float(np.sqrt(np.mean(errors ** 2))) if values.size else math.nan,
                "bias": float(np.mean(errors)) if values.size else math.nan,
                "trials": int(values.size),
                "failures": len(results) - int(values.size),
            })
        logger.info(f"RMSE sweep point tau={tau}, N={N} done")
    return pd.DataFrame(rows)


def band_cutoffs(cfg: ExperimentConfig) -> Dict[str, float]:
    U = cfg.band_cutoff or DEFAULT_BAND_CUTOFF[cfg.family]
    return {q: U for q in cfg.quantities}


def _band_replicate(task) -> Optional[np.ndarray]:
    cfg, clean, index, points = task
    kernel = _kernel_for(cfg.family)
    try:
        curve = fit_curve(perturb_quotes(clean, cfg.tau, iteration_rng(cfg.seed, index)), cfg.spline_degree)
        calibration = calibrate(curve, cfg.family, band_cutoffs(cfg), kernel=kernel)
    except LevySpecError as exc:
        logger.error(f"Band replicate {index} failed: {exc}")
        return None
    return np.asarray(function_estimate(calibration, cfg.family, points))


def run_band_figure(cfg: ExperimentConfig, threads: Optional[int] = None) -> pd.DataFrame:
    """Truth, estimate and pointwise band on the band grid, plus one column per replicate estimate."""
    params = true_parameters(cfg)
    clean = clean_quotes(params, cfg.N, cfg.T, cfg.r)
    points = np.linspace(cfg.band_range[0], cfg.band_range[1], cfg.band_points)
    kernel = _kernel_for(cfg.family)
    workers = _workers(cfg, threads)

    curve = fit_curve(perturb_quotes(clean, cfg.tau, iteration_rng(cfg.seed, 0)), cfg.spline_degree)
    calibration = calibrate(curve, cfg.family, band_cutoffs(cfg), kernel=kernel)
    frame = pointwise_band(curve, calibration, cfg.family, points, level=min(cfg.levels), threads=workers,
                           kernel=kernel)
    frame.insert(1, "truth", true_function(params, points))

    tasks = [(cfg, clean, 1 + j, points) for j in range(cfg.replicates)]
    replicates = _map(_band_replicate, tasks, workers)
    columns = {f"replicate_{j:03d}": values if values is not None else np.full(points.size, np.nan)
               for j, values in enumerate(replicates)}
    frame = pd.concat([frame, pd.DataFrame(columns, index=frame.index)], axis=1)
    logger.info(f"Band data: {points.size} points, {cfg.replicates} replicates, "
                f"truth inside the band at {band_containment(frame):.0%} of the points")
    return frame


def band_containment(frame: pd.DataFrame) -> float:
    inside = (frame["truth"] >= frame["lower"]) & (frame["truth"] <= frame["upper"])
    return float(inside.mean())
