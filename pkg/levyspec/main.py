import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from config import config
from confidence import confidence_report, pointwise_band
from errors import DataError, LevySpecError
from experiments import band_containment, coverage_frame, run_band_figure, run_coverage, run_rmse
from fourier_pricing import curve_frame, price_curve
from levy_models import load_model, model_to_json
from market_data import fit_curve, load_quotes, quotes_to_csv, simulate_quotes
from models import CalibrationReport, ExperimentConfig, MertonParams, RunManifest, RunTiming, VarianceGammaParams
from tuning import calibrate, oracle_cutoff, oracle_scan, rss, scan_grid, select_cutoff

EXIT_USAGE = 64
LOG_LEVELS = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None):
    """Configure logging for the application."""
    level = level or config.logging.log_level
    # Remove default logger
    logger.remove()

    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        colorize=True
    )

    if log_file:
        logger.add(
            log_file,
            level=level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            rotation="10 MB",
            retention="7 days",
            compression="zip"
        )


class UsageParser(argparse.ArgumentParser):
    """Argument errors exit with EX_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunContext:
    """Output directory, resolved seed and thread count of one CLI run, plus the files it touched."""
    output_dir: Path
    threads: int
    seed: Optional[int]
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        path = self.output_dir / name
        self.outputs.append(str(path))
        return path

    def write_csv(self, frame: pd.DataFrame, name: str):
        frame.to_csv(self.path(name), index=False, float_format="%.10g")

    def write_json(self, payload, name: str):
        text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True, default=str)
        self.path(name).write_text(text + "\n")

    def read(self, path: str) -> str:
        self.inputs.append(str(path))
        return path


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in ("numpy", "scipy", "pandas", "pydantic", "python-dotenv", "loguru"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def config_hash(args: argparse.Namespace) -> str:
    settings = {key: value for key, value in vars(args).items() if key != "handler"}
    canonical = json.dumps(settings, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _cutoff_arg(text: str):
    if text in ("auto", "oracle"):
        return text
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"cut-off must be 'auto', 'oracle', a number or a JSON object, got {text!r}")
    if isinstance(value, (int, float)) and value > 0:
        return float(value)
    if isinstance(value, dict) and all(isinstance(v, (int, float)) and v > 0 for v in value.values()):
        return {key: float(v) for key, v in value.items()}
    raise argparse.ArgumentTypeError(f"cut-offs must be positive, got {text!r}")


def _levels_arg(text: str) -> List[float]:
    try:
        levels = [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated numbers, got {text!r}")
    if not all(0 < t < 1 for t in levels):
        raise argparse.ArgumentTypeError("levels must lie in (0, 1)")
    return levels


def _parse_file(model, path: str):
    try:
        return model.parse_file(path)
    except (OSError, ValueError, ValidationError) as e:
        raise DataError(f"cannot read {model.__name__} from {path}: {e}") from e


def cmd_price(args, ctx: RunContext):
    model = load_model(ctx.read(args.model))
    curve = price_curve(model, args.T, args.r)
    ctx.write_csv(curve_frame(curve, args.S0), "prices.csv")
    logger.info(f"Priced {curve.x.size} log-moneyness points at T={args.T}")


def cmd_simulate(args, ctx: RunContext):
    model = load_model(ctx.read(args.model))
    quotes = simulate_quotes(model, args.N, args.tau, args.T, args.r, ctx.seed, S0=args.S0)
    quotes_to_csv(quotes, ctx.path("quotes.csv"))
    logger.info(f"Simulated {quotes.n} quotes with tau={args.tau} and seed {ctx.seed}")


def _estimate_frame(calibration, family: str) -> pd.DataFrame:
    raw = calibration.raw
    if family == "fa":
        return pd.DataFrame({"x": raw.x, "nu_raw": raw.nu, "nu_corrected": calibration.corrected.nu})
    return pd.DataFrame({"x": raw.x, "k_raw": raw.k, "k_rearranged": raw.k_rearranged})


def _parametric_truth(path: Optional[str], ctx: RunContext):
    if path is None:
        raise DataError("oracle cut-offs need --truth")
    truth = load_model(ctx.read(path))
    if not isinstance(truth, (MertonParams, VarianceGammaParams)):
        raise DataError("oracle losses need a parametric truth (merton or vg)")
    return truth


def cmd_calibrate(args, ctx: RunContext):
    quotes = load_quotes(ctx.read(args.quotes), args.maturity)
    curve = fit_curve(quotes, args.degree)
    family = args.model
    scan = None
    if args.cutoff == "auto":
        scan = select_cutoff(quotes, family, args.degree, threads=ctx.threads)
        cutoffs, policy = scan.selected, "rss"
    elif args.cutoff == "oracle":
        truth = _parametric_truth(args.truth, ctx)
        cutoffs, policy = oracle_cutoff(truth, curve, family, scan_grid(quotes)), "oracle"
    else:
        cutoffs, policy = args.cutoff, "fixed"
    try:
        calibration = calibrate(curve, family, cutoffs)
    except ValueError as e:
        raise DataError(str(e)) from e

    notes = []
    if family == "fa" and calibration.raw.sigma2_clipped:
        notes.append("negative sigma^2 estimate clipped to 0")
    if scan is not None and scan.multi_minimum:
        notes.append("RSS scan has several local minima")
    try:
        repricing = rss(quotes, calibration.corrected)
    except LevySpecError as e:
        repricing = None
        notes.append(f"repricing failed: {e}")

    report = CalibrationReport(
        family=family, T=quotes.T, r=quotes.r, S0=quotes.S0, n_quotes=quotes.n, spline_degree=args.degree,
        cutoff_policy=policy, cutoffs=calibration.raw.cutoffs, estimates=calibration.summary(),
        corrected=calibration.corrected_summary(), rss=repricing, scan=scan.report() if scan else None, notes=notes,
    )
    if args.intervals:
        report.intervals = confidence_report(curve, calibration, family, args.levels, args.x0, threads=ctx.threads)
    ctx.write_json(report.json(indent=2), "report.json")
    ctx.write_json(model_to_json(calibration.corrected), "model.json")
    ctx.write_csv(_estimate_frame(calibration, family), "estimate.csv")
    logger.info(f"Calibrated {family.upper()} model at cut-offs {calibration.raw.cutoffs}")


def cmd_confidence(args, ctx: RunContext):
    report = _parse_file(CalibrationReport, ctx.read(args.report))
    quotes = load_quotes(ctx.read(args.quotes), report.T)
    curve = fit_curve(quotes, report.spline_degree)
    calibration = calibrate(curve, report.family, report.cutoffs)
    intervals = confidence_report(curve, calibration, report.family, args.levels, args.x0, threads=ctx.threads)
    ctx.write_json({q: {key: ci.dict() for key, ci in by_level.items()} for q, by_level in intervals.items()},
                   "intervals.json")
    points = np.linspace(args.band_range[0], args.band_range[1], args.band_points)
    band = pointwise_band(curve, calibration, report.family, points, level=args.band_level, threads=ctx.threads)
    ctx.write_csv(band, "band.csv")


def _experiment_config(args, ctx: RunContext, **overrides) -> ExperimentConfig:
    cfg = _parse_file(ExperimentConfig, ctx.read(args.config)) if args.config else ExperimentConfig()
    updates = {key: value for key, value in overrides.items() if value is not None}
    seed = ctx.seed if ctx.seed is not None else cfg.seed
    updates.update(seed=seed, threads=ctx.threads)
    try:
        return ExperimentConfig(**{**cfg.dict(), **updates})
    except ValidationError as e:
        raise DataError(f"invalid experiment configuration: {e}") from e


def cmd_mc_coverage(args, ctx: RunContext):
    cfg = _experiment_config(args, ctx, family=args.family, iterations=args.iterations,
                             cutoff_policy=args.cutoff_policy)
    rows = run_coverage(cfg, threads=ctx.threads)
    ctx.write_csv(coverage_frame(rows), "coverage.csv")
    ctx.write_json({"config": json.loads(cfg.json()), "rows": [row.dict() for row in rows]}, "summary.json")


def cmd_rmse_sweep(args, ctx: RunContext):
    cfg = _experiment_config(args, ctx, family="fa", iterations=args.iterations, cutoff_policy=args.cutoff_policy)
    frame = run_rmse(cfg, degrees=args.degrees, threads=ctx.threads)
    ctx.write_csv(frame, "rmse.csv")
    ctx.write_json({"config": json.loads(cfg.json()), "rows": frame.to_dict(orient="records")}, "summary.json")


def cmd_band_figure(args, ctx: RunContext):
    cfg = _experiment_config(args, ctx, family=args.family, replicates=args.replicates, band_cutoff=args.cutoff)
    frame = run_band_figure(cfg, threads=ctx.threads)
    ctx.write_csv(frame, "band.csv")
    ctx.write_json({"config": json.loads(cfg.json()), "containment": band_containment(frame)}, "summary.json")


def cmd_cutoff_scan(args, ctx: RunContext):
    quotes = load_quotes(ctx.read(args.quotes), args.maturity)
    grid = scan_grid(quotes, args.points)
    scan = select_cutoff(quotes, args.model, args.degree, cutoffs=grid, threads=ctx.threads)
    summary = json.loads(scan.report().json())
    if args.truth:
        truth = _parametric_truth(args.truth, ctx)
        best, losses = oracle_scan(truth, fit_curve(quotes, args.degree), args.model, scan.cutoffs)
        scan.oracle_losses = losses
        summary["oracle"] = best
    ctx.write_csv(scan.frame(), "scan.csv")
    ctx.write_json(summary, "scan.json")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="levyspec", description="Spectral calibration of exponential Levy models")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads/processes (default: all cores)")
    parser.add_argument("--seed", type=int, default=None, help="Master seed; LEVYSPEC_SEED takes precedence")
    parser.add_argument("--output-dir", default=".", help="Directory for outputs and manifest.json")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="Logging level")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    price = commands.add_parser("price", help="Option function of a model on the x-grid")
    price.add_argument("--model", required=True, help="Model JSON")
    price.add_argument("--T", type=float, required=True)
    price.add_argument("--r", type=float, required=True)
    price.add_argument("--S0", type=float, default=1.0)
    price.set_defaults(handler=cmd_price)

    simulate = commands.add_parser("simulate", help="Noisy quotes at the normal-quantile design")
    simulate.add_argument("--model", required=True, help="Model JSON")
    simulate.add_argument("--N", type=int, default=100)
    simulate.add_argument("--tau", type=float, default=0.01)
    simulate.add_argument("--T", type=float, default=0.25)
    simulate.add_argument("--r", type=float, default=0.06)
    simulate.add_argument("--S0", type=float, default=1.0)
    simulate.set_defaults(handler=cmd_simulate)

    calibrate_cmd = commands.add_parser("calibrate", help="Estimate an FA or SD model from quotes")
    calibrate_cmd.add_argument("--model", choices=["fa", "sd"], required=True)
    calibrate_cmd.add_argument("--quotes", required=True, help="Quote CSV")
    calibrate_cmd.add_argument("--maturity", type=float, default=None)
    calibrate_cmd.add_argument("--cutoff", type=_cutoff_arg, default="auto",
                               help="'auto', 'oracle' (needs --truth), one value, or a JSON object of "
                                    "per-quantity values")
    calibrate_cmd.add_argument("--truth", default=None, help="Model JSON of the generating model, for --cutoff oracle")
    calibrate_cmd.add_argument("--degree", type=int, choices=[1, 2], default=config.estimation.spline_degree)
    calibrate_cmd.add_argument("--intervals", action="store_true", help="Add confidence intervals to the report")
    calibrate_cmd.add_argument("--levels", type=_levels_arg, default=[0.5, 0.05])
    calibrate_cmd.add_argument("--x0", type=float, default=-0.2)
    calibrate_cmd.set_defaults(handler=cmd_calibrate)

    conf = commands.add_parser("confidence", help="Intervals and a pointwise band for a calibration report")
    conf.add_argument("--report", required=True, help="report.json from calibrate")
    conf.add_argument("--quotes", required=True, help="Quote CSV the report was built from")
    conf.add_argument("--levels", type=_levels_arg, default=[0.5, 0.05])
    conf.add_argument("--x0", type=float, default=-0.2)
    conf.add_argument("--band-level", type=float, default=0.05)
    conf.add_argument("--band-points", type=int, default=161)
    conf.add_argument("--band-range", type=float, nargs=2, default=[-1.0, 1.0])
    conf.set_defaults(handler=cmd_confidence)

    coverage = commands.add_parser("mc-coverage", help="Monte Carlo coverage of the confidence intervals")
    coverage.add_argument("--config", default=None, help="ExperimentConfig JSON")
    coverage.add_argument("--family", choices=["fa", "sd"], default=None)
    coverage.add_argument("--iterations", type=int, default=None)
    coverage.add_argument("--cutoff-policy", choices=["fixed", "oracle", "ci", "rss"], default=None)
    coverage.set_defaults(handler=cmd_mc_coverage)

    sweep = commands.add_parser("rmse-sweep", help="RMSE of sigma^ along the (tau, N) sweep")
    sweep.add_argument("--config", default=None, help="ExperimentConfig JSON")
    sweep.add_argument("--iterations", type=int, default=None)
    sweep.add_argument("--cutoff-policy", choices=["fixed", "oracle", "ci", "rss"], default=None)
    sweep.add_argument("--degrees", type=int, nargs="+", choices=[1, 2], default=[1, 2])
    sweep.set_defaults(handler=cmd_rmse_sweep)

    band = commands.add_parser("band-figure", help="Truth, estimate, band and replicate estimates on a grid")
    band.add_argument("--config", default=None, help="ExperimentConfig JSON")
    band.add_argument("--family", choices=["fa", "sd"], default=None)
    band.add_argument("--replicates", type=int, default=None)
    band.add_argument("--cutoff", type=float, default=None)
    band.set_defaults(handler=cmd_band_figure)

    scan = commands.add_parser("cutoff-scan", help="RSS (and optional oracle loss) over a cut-off grid")
    scan.add_argument("--model", choices=["fa", "sd"], required=True)
    scan.add_argument("--quotes", required=True, help="Quote CSV")
    scan.add_argument("--maturity", type=float, default=None)
    scan.add_argument("--degree", type=int, choices=[1, 2], default=config.estimation.spline_degree)
    scan.add_argument("--points", type=int, default=None)
    scan.add_argument("--truth", default=None, help="Model JSON of the generating model, for oracle losses")
    scan.set_defaults(handler=cmd_cutoff_scan)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    log_file = str(output_dir / config.logging.log_file) if config.logging.log_file else None
    setup_logging(args.log_level, log_file)

    ctx = RunContext(output_dir=output_dir, threads=args.threads or config.run.threads,
                     seed=config.resolve_seed(args.seed))
    started_at = datetime.utcnow()
    clock = time.perf_counter()
    logger.info(f"levyspec {args.command} started, seed={ctx.seed}, threads={ctx.threads}")

    exit_code = 0
    try:
        args.handler(args, ctx)
    except LevySpecError as e:
        logger.error(f"{args.command} failed: {e}")
        exit_code = e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        exit_code = 130

    manifest = RunManifest(
        command=args.command, config_hash=config_hash(args), seed=ctx.seed, versions=package_versions(),
        inputs=ctx.inputs, outputs=ctx.outputs, extra={"exit_code": exit_code},
    )
    (output_dir / "manifest.json").write_text(manifest.json(indent=2) + "\n")
    timing = RunTiming(command=args.command, started_at=started_at, wall_time_seconds=time.perf_counter() - clock)
    (output_dir / "timing.json").write_text(timing.json(indent=2) + "\n")
    if exit_code == 0:
        logger.info(f"levyspec {args.command} finished in {timing.wall_time_seconds:.1f}s")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
