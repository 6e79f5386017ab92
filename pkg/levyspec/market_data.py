"""
Quote sets: synthetic observations, CSV ingestion, and the fitted option curve.

The fitted curve is a piecewise polynomial on [x_1, x_N], zero outside, whose
Fourier transforms are evaluated exactly piece by piece on the complex strip.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.interpolate import PPoly, make_interp_spline, make_lsq_spline
from scipy.special import factorial
from scipy.stats import norm

from errors import DataError, NumericalError
from fourier_pricing import price_at
from levy_models import LevyModel
from models import QuoteSet

REQUIRED_COLUMNS = ("type", "strike", "price", "maturity_years", "spot")
DEFAULT_RELATIVE_NOISE = 0.01
_SERIES_TERMS = 24
_U_CHUNK = 512


def design_points(N: int) -> np.ndarray:
    """k/(N+1)-quantiles of the normal law with mean 0 and variance 1/2."""
    if N < 1:
        raise DataError(f"need at least one design point, got {N}")
    return norm.ppf(np.arange(1, N + 1) / (N + 1), scale=math.sqrt(0.5))


def clean_quotes(model: LevyModel, N: int, T: float, r: float, S0: float = 1.0) -> QuoteSet:
    x = design_points(N)
    return QuoteSet(x=x, prices=price_at(model, x, T), delta=np.zeros(N), T=T, r=r, S0=S0)


def perturb_quotes(clean: QuoteSet, tau: float, rng: np.random.Generator) -> QuoteSet:
    """O_j + delta_j eps_j with delta_j = tau O(x_j)."""
    if tau < 0:
        raise DataError(f"relative noise level must be nonnegative, got {tau}")
    delta = tau * np.abs(clean.prices)
    noisy = clean.prices + delta * rng.standard_normal(clean.n)
    return QuoteSet(x=clean.x, prices=noisy, delta=delta, T=clean.T, r=clean.r, S0=clean.S0)


def simulate_quotes(model: LevyModel, N: int, tau: float, T: float, r: float, seed: Optional[int],
                    S0: float = 1.0) -> QuoteSet:
    quotes = perturb_quotes(clean_quotes(model, N, T, r, S0), tau, np.random.default_rng(seed))
    logger.debug(f"Simulated {N} quotes with tau={tau}, T={T}, seed={seed}")
    return quotes


def noise_scale(quotes: QuoteSet) -> Tuple[float, float]:
    """(epsilon, Delta) with Delta the largest design gap and epsilon = Delta^{3/2} + Delta^{1/2} max delta."""
    if quotes.n < 2:
        raise DataError("noise scale needs at least two quotes")
    gap = float(np.max(np.diff(quotes.x)))
    eps = gap ** 1.5 + math.sqrt(gap) * float(np.max(quotes.delta))
    return eps, gap


@dataclass(frozen=True)
class OptionCurve:
    """Piecewise polynomial fit of the observed option function.

    coeffs[m, i] multiplies (x - breaks[i])^m on [breaks[i], breaks[i+1]].
    """
    breaks: np.ndarray
    coeffs: np.ndarray
    degree: int
    quotes: QuoteSet

    @property
    def T(self) -> float:
        return self.quotes.T

    @property
    def n(self) -> int:
        return self.quotes.n

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breaks)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x >= self.breaks[0]) & (x <= self.breaks[-1])
        piece = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.breaks.size - 2)
        t = x - self.breaks[piece]
        values = np.zeros(x.shape)
        for m in range(self.coeffs.shape[0] - 1, -1, -1):
            values = values * t + self.coeffs[m, piece]
        return np.where(inside, values, 0.0)


def _ascending_pieces(pp: PPoly) -> Tuple[np.ndarray, np.ndarray]:
    keep = np.diff(pp.x) > 0
    starts = pp.x[:-1][keep]
    breaks = np.append(starts, pp.x[1:][keep][-1])
    # PPoly stores the highest power first
    coeffs = pp.c[::-1, keep]
    return breaks, coeffs


def _clip_negative_pieces(breaks: np.ndarray, coeffs: np.ndarray) -> Tuple[np.ndarray, int]:
    """Replace quadratic pieces that dip below zero by the chord of their clipped end values."""
    h = np.diff(breaks)
    c0, c1, c2 = coeffs
    left = c0
    right = c0 + c1 * h + c2 * h ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(c2 != 0, -c1 / (2 * c2), -1.0)
    inner = (vertex > 0) & (vertex < h)
    minimum = np.minimum(left, right)
    minimum = np.where(inner, np.minimum(minimum, c0 + c1 * vertex + c2 * vertex ** 2), minimum)
    bad = minimum < 0
    if bad.any():
        a = np.maximum(left[bad], 0.0)
        b = np.maximum(right[bad], 0.0)
        coeffs = coeffs.copy()
        coeffs[0, bad] = a
        coeffs[1, bad] = (b - a) / h[bad]
        coeffs[2, bad] = 0.0
    return coeffs, int(bad.sum())


def quadratic_knots(x: np.ndarray) -> np.ndarray:
    """Clamped quadratic knots with every other interior quote as a knot.

    Knots at all quotes would give N + 1 basis functions for N points; thinning
    keeps the least-squares system overdetermined and satisfies Schoenberg-Whitney.
    """
    return np.concatenate([[x[0]] * 3, x[2:-2:2], [x[-1]] * 3])


def fit_curve(quotes: QuoteSet, degree: int = 1) -> OptionCurve:
    """Linear interpolation (degree 1) or least-squares quadratic B-spline (degree 2) of the quotes."""
    x = quotes.x
    y = np.maximum(quotes.prices, 0.0)
    if degree == 1:
        spline = make_interp_spline(x, y, k=1)
    elif degree == 2:
        try:
            spline = make_lsq_spline(x, y, quadratic_knots(x), k=2)
        except (ValueError, np.linalg.LinAlgError) as e:
            raise NumericalError(f"degenerate quadratic spline system: {e}") from e
    else:
        raise DataError(f"spline degree must be 1 or 2, got {degree}")

    breaks, coeffs = _ascending_pieces(PPoly.from_spline(spline))
    if degree == 2:
        coeffs, clipped = _clip_negative_pieces(breaks, coeffs)
        if clipped:
            logger.debug(f"Replaced {clipped} negative quadratic pieces by chords")
    return OptionCurve(breaks=breaks, coeffs=coeffs, degree=degree, quotes=quotes)


def _exp_moments(w: np.ndarray, order: int) -> np.ndarray:
    """E_m(w) = int_0^1 s^m e^{ws} ds for m = 0..order."""
    out = np.empty((order + 1,) + w.shape, dtype=complex)
    small = np.abs(w) < 1.0
    ws = w[small]
    k = np.arange(_SERIES_TERMS)
    powers = ws[..., None] ** k / factorial(k)
    for m in range(order + 1):
        out[m][small] = powers @ (1.0 / (m + k + 1))
    wl = w[~small]
    ew = np.exp(wl)
    e = (ew - 1.0) / wl
    out[0][~small] = e
    for m in range(1, order + 1):
        e = (ew - m * e) / wl
        out[m][~small] = e
    return out


def curve_ft(curve: OptionCurve, u, weighted_by_x: bool = False) -> np.ndarray:
    """F O~(u) (or F[x O~](u)) in closed form for complex u."""
    u = np.asarray(u, dtype=complex)
    shape = u.shape
    u = u.ravel()
    a = curve.breaks[:-1]
    h = curve.widths
    coeffs = curve.coeffs
    if weighted_by_x:
        # (a + t) p(t): one degree up
        shifted = np.zeros((coeffs.shape[0] + 1, coeffs.shape[1]))
        shifted[:-1] += a * coeffs
        shifted[1:] += coeffs
        coeffs = shifted
    order = coeffs.shape[0] - 1
    scaled = coeffs * h ** np.arange(1, order + 2)[:, None]

    out = np.empty(u.size, dtype=complex)
    for start in range(0, u.size, _U_CHUNK):
        us = u[start:start + _U_CHUNK, None]
        moments = _exp_moments(1j * us * h, order)
        pieces = np.einsum("mp,mup->up", scaled, moments)
        out[start:start + _U_CHUNK] = np.sum(np.exp(1j * us * a) * pieces, axis=1)
    return out.reshape(shape)


def infer_rate(strikes: np.ndarray, calls: np.ndarray, puts: np.ndarray, S0: float, T: float) -> float:
    """Least-squares rate from C - P = S0 - K e^{-rT} across matched strikes."""
    strikes = np.asarray(strikes, dtype=float)
    if strikes.size == 0:
        raise DataError("rate inference needs at least one strike with both a call and a put")
    y = S0 - (np.asarray(calls, dtype=float) - np.asarray(puts, dtype=float))
    discount = float(np.dot(strikes, y) / np.dot(strikes, strikes))
    if discount <= 0:
        raise DataError(f"put-call parity implies a nonpositive discount factor {discount:.4g}")
    return -math.log(discount) / T


def _row_error(path, index, message) -> DataError:
    return DataError(f"{path}: row {index + 1}: {message}")


def _validate_rows(frame: pd.DataFrame, path) -> pd.DataFrame:
    missing = [column for column in REQUIRED_COLUMNS if column not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {', '.join(missing)}")
    frame = frame.copy()
    frame["type"] = frame["type"].astype(str).str.strip().str.upper()
    numeric = ["strike", "price", "maturity_years", "spot"] + [c for c in ("bid", "ask", "rate") if c in frame]
    for column in numeric:
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    for index, row in frame.iterrows():
        if row["type"] not in ("C", "P"):
            raise _row_error(path, index, f"type must be C or P, got {row['type']!r}")
        for column in ("strike", "price", "maturity_years", "spot"):
            value = row[column]
            if not np.isfinite(value) or value <= 0:
                raise _row_error(path, index, f"{column} must be a positive number, got {value}")
    return frame


def quotes_from_frame(frame: pd.DataFrame, maturity: Optional[float] = None, path="<frame>") -> QuoteSet:
    """Quotes of one maturity: puts below the forward, calls above, parity for the missing side."""
    frame = _validate_rows(frame, path)
    maturities = np.unique(frame["maturity_years"].to_numpy())
    if maturity is None:
        if maturities.size > 1:
            raise DataError(f"{path}: unmatched maturities {maturities.tolist()}; select one")
        maturity = float(maturities[0])
    frame = frame[np.isclose(frame["maturity_years"], maturity, rtol=0, atol=1e-9)]
    if frame.empty:
        raise DataError(f"{path}: no quotes with maturity {maturity}")

    spots = np.unique(frame["spot"].to_numpy())
    if spots.size > 1:
        raise DataError(f"{path}: several spot values {spots.tolist()} for one maturity")
    S0 = float(spots[0])
    T = float(maturity)

    duplicated = frame.duplicated(subset=["type", "strike"], keep=False)
    if duplicated.any():
        index = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise _row_error(path, frame.index[index], "duplicate strike for the same option type")

    calls = frame[frame["type"] == "C"].set_index("strike")
    puts = frame[frame["type"] == "P"].set_index("strike")
    if "rate" in frame and frame["rate"].notna().any():
        rates = np.unique(frame["rate"].dropna().to_numpy())
        if rates.size > 1:
            raise DataError(f"{path}: several rates {rates.tolist()} for one maturity")
        r = float(rates[0])
    else:
        both = calls.index.intersection(puts.index)
        r = infer_rate(both.to_numpy(), calls.loc[both, "price"].to_numpy(), puts.loc[both, "price"].to_numpy(),
                       S0, T)
        logger.info(f"Inferred rate r={r:.6f} from {both.size} call/put pairs")

    x_list, prices, deltas = [], [], []
    for strike in np.unique(frame["strike"].to_numpy()):
        x = math.log(strike / S0) - r * T
        wanted, other = (calls, puts) if x >= 0 else (puts, calls)
        if strike in wanted.index:
            row = wanted.loc[strike]
            price = row["price"] / S0
        else:
            row = other.loc[strike]
            # O_call - O_put = 1 - e^x
            parity = 1.0 - math.exp(x)
            price = row["price"] / S0 - parity if x < 0 else row["price"] / S0 + parity
        if "bid" in row and "ask" in row and np.isfinite(row["bid"]) and np.isfinite(row["ask"]):
            delta = (row["ask"] - row["bid"]) / (2.0 * S0)
        else:
            delta = DEFAULT_RELATIVE_NOISE * price
        x_list.append(x)
        prices.append(price)
        deltas.append(abs(delta))

    quotes = QuoteSet(x=np.array(x_list), prices=np.array(prices), delta=np.array(deltas), T=T, r=r, S0=S0)
    logger.info(f"Loaded {quotes.n} quotes from {path} (T={T}, r={r:.4f}, S0={S0})")
    return quotes


def load_quotes(path: Union[str, Path], maturity: Optional[float] = None) -> QuoteSet:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read quote file {path}: {e}") from e
    return quotes_from_frame(frame, maturity=maturity, path=path)


def quotes_to_frame(quotes: QuoteSet) -> pd.DataFrame:
    """One row per strike; delta is carried as a symmetric bid/ask spread."""
    S0 = quotes.S0
    return pd.DataFrame({
        "type": np.where(quotes.x >= 0, "C", "P"),
        "strike": quotes.strikes,
        "price": quotes.prices * S0,
        "bid": (quotes.prices - quotes.delta) * S0,
        "ask": (quotes.prices + quotes.delta) * S0,
        "maturity_years": quotes.T,
        "spot": S0,
        "rate": quotes.r,
    })


def quotes_to_csv(quotes: QuoteSet, path: Union[str, Path]):
    quotes_to_frame(quotes).to_csv(path, index=False, float_format="%.17g")
