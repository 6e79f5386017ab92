import math
from statistics import NormalDist

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from conftest import R_REF, T_REF
from errors import DataError
from fourier_pricing import price_at
from market_data import (
    clean_quotes,
    curve_ft,
    design_points,
    fit_curve,
    infer_rate,
    load_quotes,
    noise_scale,
    perturb_quotes,
    quadratic_knots,
    quotes_to_csv,
    simulate_quotes,
)
from models import QuoteSet


def make_quotes(x, y, delta=None, T=T_REF, r=R_REF):
    x = np.asarray(x, dtype=float)
    delta = np.zeros_like(x) if delta is None else np.asarray(delta, dtype=float)
    return QuoteSet(x=x, prices=np.asarray(y, dtype=float), delta=delta, T=T, r=r)


def quad_ft(curve, u, weight=lambda x: 1.0):
    lo, hi = curve.breaks[0], curve.breaks[-1]
    f = lambda x: np.exp(1j * u * x) * weight(x) * curve(x)
    kwargs = dict(points=curve.breaks[1:-1], limit=500, epsabs=1e-14, epsrel=1e-13)
    re, _ = quad(lambda x: f(x).real, lo, hi, **kwargs)
    im, _ = quad(lambda x: f(x).imag, lo, hi, **kwargs)
    return re + 1j * im


def test_design_points():
    assert design_points(1) == pytest.approx([0.0], abs=1e-15)
    x = design_points(100)
    np.testing.assert_allclose(x, -x[::-1], atol=1e-14)
    assert np.all(np.diff(x) > 0)
    reference = NormalDist(0.0, math.sqrt(0.5))
    assert x[0] == pytest.approx(reference.inv_cdf(1 / 101), abs=1e-10)
    assert x[-1] == pytest.approx(reference.inv_cdf(100 / 101), abs=1e-10)


def test_simulation_without_noise_is_exact(merton):
    quotes = simulate_quotes(merton, 50, 0.0, T_REF, R_REF, seed=3)
    np.testing.assert_array_equal(quotes.prices, price_at(merton, design_points(50), T_REF))


def test_simulation_is_deterministic(merton):
    first = simulate_quotes(merton, 40, 0.01, T_REF, R_REF, seed=11)
    second = simulate_quotes(merton, 40, 0.01, T_REF, R_REF, seed=11)
    assert first.prices.tobytes() == second.prices.tobytes()
    assert first.delta.tobytes() == second.delta.tobytes()


def test_relative_noise_variance(merton, rng):
    clean = clean_quotes(merton, 100, T_REF, R_REF)
    tau = 0.01
    relative = np.concatenate([(perturb_quotes(clean, tau, rng).prices - clean.prices) / clean.prices
                               for _ in range(2000)])
    assert relative.var() == pytest.approx(tau ** 2, rel=0.05)


def test_linear_fit_interpolates():
    x = np.linspace(-1, 1, 15)
    y = np.exp(-x ** 2)
    curve = fit_curve(make_quotes(x, y), degree=1)
    np.testing.assert_allclose(curve(x), y, atol=1e-14)
    assert np.all(curve(np.array([-1.5, -1.0001, 1.0001, 3.0])) == 0.0)


def test_quadratic_fit_beats_linear_on_smooth_convex_data():
    x = np.linspace(-1, 1, 41)
    fine = np.linspace(-1, 1, 4001)
    quotes = make_quotes(x, np.exp(x))
    linear = np.max(np.abs(fit_curve(quotes, 1)(fine) - np.exp(fine)))
    quadratic = np.max(np.abs(fit_curve(quotes, 2)(fine) - np.exp(fine)))
    assert quadratic <= linear


def test_quadratic_knots_use_every_other_quote():
    x = design_points(41)
    knots = quadratic_knots(x)
    assert knots[:3].tolist() == [x[0]] * 3 and knots[-3:].tolist() == [x[-1]] * 3
    np.testing.assert_array_equal(knots[3:-3], x[2:-2:2])
    # coefficients of a clamped quadratic spline
    assert knots.size - 3 < x.size


def test_fits_are_nonnegative(rng):
    x = np.linspace(-2, 2, 40)
    y = np.exp(-4 * x ** 2) + 0.05 * rng.standard_normal(x.size)
    fine = np.linspace(-2.5, 2.5, 5001)
    for degree in (1, 2):
        assert np.all(fit_curve(make_quotes(x, y), degree)(fine) >= 0.0)


def test_unknown_degree_rejected():
    with pytest.raises(DataError):
        fit_curve(make_quotes(np.linspace(-1, 1, 12), np.ones(12)), degree=3)


def test_curve_ft_of_zero_curve():
    curve = fit_curve(make_quotes(np.linspace(-1, 1, 12), np.zeros(12)))
    assert np.all(curve_ft(curve, np.array([0.0, 2.0, 3.0 + 0.5j])) == 0.0)


def test_curve_ft_is_linear():
    x = np.linspace(-1, 1, 12)
    a, b = np.cos(x), x ** 2
    u = np.array([0.0, 1.7, -4.0 + 0.3j, 25.0 + 1j])
    total = curve_ft(fit_curve(make_quotes(x, a + b)), u)
    parts = curve_ft(fit_curve(make_quotes(x, a)), u) + curve_ft(fit_curve(make_quotes(x, b)), u)
    np.testing.assert_allclose(total, parts, atol=1e-12)


def test_curve_ft_of_hat_function():
    width = 0.4
    x = np.linspace(-2, 2, 11)
    curve = fit_curve(make_quotes(x, np.where(np.isclose(x, 0.0), 1.0, 0.0)))
    u = np.array([0.3, 2.0, -7.5, 0.3 + 0.5j, 12.0 + 1j])
    expected = 2 * (1 - np.cos(width * u)) / (width * u ** 2)
    np.testing.assert_allclose(curve_ft(curve, u), expected, atol=1e-12)
    assert curve_ft(curve, 0.0) == pytest.approx(width, abs=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_curve_ft_matches_quadrature(degree, merton):
    quotes = clean_quotes(merton, 30, T_REF, R_REF)
    curve = fit_curve(quotes, degree)
    for u in (0.0, 3.0, -11.0, 4.0 + 1j, -20.0 + 0.5j):
        assert curve_ft(curve, u) == pytest.approx(quad_ft(curve, u), abs=1e-10)
        assert curve_ft(curve, u, weighted_by_x=True) == pytest.approx(quad_ft(curve, u, lambda x: x), abs=1e-10)


def test_noise_scale_uniform_grid():
    h = 0.1
    quotes = make_quotes(np.arange(12) * h, np.ones(12))
    eps, gap = noise_scale(quotes)
    assert gap == pytest.approx(h)
    assert eps == pytest.approx(h ** 1.5)
    wider, _ = noise_scale(make_quotes(np.arange(12) * 2 * h, np.ones(12)))
    assert wider == pytest.approx(2 ** 1.5 * eps)


def test_noise_scale_on_design(merton, rng):
    quotes = perturb_quotes(clean_quotes(merton, 100, T_REF, R_REF), 0.01, rng)
    eps, gap = noise_scale(quotes)
    brute = max(quotes.x[j + 1] - quotes.x[j] for j in range(quotes.n - 1))
    assert gap == brute
    assert eps == pytest.approx(brute ** 1.5 + math.sqrt(brute) * quotes.delta.max())


def _bs_prices(S0, strikes, r, T, sigma=0.2):
    d1 = (np.log(S0 / strikes) + (r + sigma ** 2 / 2) * T) / (sigma * math.sqrt(T))
    call = S0 * norm.cdf(d1) - strikes * math.exp(-r * T) * norm.cdf(d1 - sigma * math.sqrt(T))
    return call, call - S0 + strikes * math.exp(-r * T)


def _quote_frame(S0=100.0, r=0.06, T=0.25, with_rate=False):
    strikes = np.linspace(80, 120, 13)
    call, put = _bs_prices(S0, strikes, r, T)
    frame = pd.DataFrame({
        "type": ["C"] * strikes.size + ["P"] * strikes.size,
        "strike": np.concatenate([strikes, strikes]),
        "price": np.concatenate([call, put]),
        "maturity_years": T,
        "spot": S0,
    })
    if with_rate:
        frame["rate"] = r
    return frame


def test_rate_inferred_from_parity(tmp_path):
    path = tmp_path / "quotes.csv"
    _quote_frame().to_csv(path, index=False, float_format="%.17g")
    quotes = load_quotes(path)
    assert quotes.r == pytest.approx(0.06, abs=1e-6)
    assert quotes.n == 13 and quotes.S0 == 100.0
    np.testing.assert_allclose(quotes.delta, 0.01 * quotes.prices)


def test_infer_rate_exact_pairs():
    strikes = np.array([90.0, 100.0, 110.0])
    call, put = _bs_prices(100.0, strikes, 0.035, 0.5)
    assert infer_rate(strikes, call, put, 100.0, 0.5) == pytest.approx(0.035, abs=1e-10)


def test_bid_ask_sets_noise_level(tmp_path):
    frame = _quote_frame(with_rate=True)
    frame["bid"] = frame["price"] - 0.05
    frame["ask"] = frame["price"] + 0.05
    path = tmp_path / "quotes.csv"
    frame.to_csv(path, index=False)
    quotes = load_quotes(path)
    np.testing.assert_allclose(quotes.delta, 0.05 / 100.0)


def test_one_sided_quotes_use_parity(tmp_path):
    full = _quote_frame(with_rate=True)
    calls_only = full[full["type"] == "C"]
    path = tmp_path / "calls.csv"
    calls_only.to_csv(path, index=False, float_format="%.17g")
    both = load_quotes(tmp_path / "calls.csv")
    full_path = tmp_path / "full.csv"
    full.to_csv(full_path, index=False, float_format="%.17g")
    reference = load_quotes(full_path)
    np.testing.assert_allclose(both.prices, reference.prices, atol=1e-12)


def test_bad_row_is_named(tmp_path):
    frame = _quote_frame(with_rate=True)
    frame.loc[2, "price"] = -1.0
    path = tmp_path / "bad.csv"
    frame.to_csv(path, index=False)
    with pytest.raises(DataError, match="row 3"):
        load_quotes(path)


def test_maturities_must_be_selected(tmp_path):
    frame = pd.concat([_quote_frame(with_rate=True), _quote_frame(T=0.5, with_rate=True)], ignore_index=True)
    path = tmp_path / "two.csv"
    frame.to_csv(path, index=False)
    with pytest.raises(DataError, match="maturities"):
        load_quotes(path)
    assert load_quotes(path, maturity=0.5).T == 0.5


def test_simulated_quotes_survive_csv(tmp_path, merton):
    quotes = simulate_quotes(merton, 60, 0.01, T_REF, R_REF, seed=5, S0=100.0)
    path = tmp_path / "sim.csv"
    quotes_to_csv(quotes, path)
    loaded = load_quotes(path)
    np.testing.assert_allclose(loaded.x, quotes.x, atol=1e-12)
    np.testing.assert_allclose(loaded.prices, quotes.prices, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(loaded.delta, quotes.delta, rtol=1e-9, atol=1e-15)
