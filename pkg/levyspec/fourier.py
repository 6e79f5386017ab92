"""
Transform grids and quadrature shared by pricing, estimation and the variance formulas.

Convention: F g(u) = int e^{iux} g(x) dx and F^{-1} g(x) = (1/2pi) int e^{-iux} g(u) du.
"""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from config import config

_CHUNK = 256


@dataclass(frozen=True)
class XGrid:
    """Uniform grid x_k = x0 + k*dx, k = 0..n-1."""
    x0: float
    dx: float
    n: int

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n)


def model_grid() -> XGrid:
    """Uniform grid on [-A, A) with M points; x=0 is a grid point."""
    A = config.grid.half_width
    M = config.grid.points
    return XGrid(x0=-A, dx=2.0 * A / M, n=M)


def exponent_spacing() -> float:
    """u-spacing whose FFT conjugate is the model grid zero-padded four times."""
    return np.pi / (4.0 * config.grid.half_width)


def symmetric_u_grid(u_max: float, du: float) -> np.ndarray:
    """Grid j*du, j = -J..J, covering [-u_max, u_max]."""
    J = int(np.ceil(u_max / du))
    return du * np.arange(-J, J + 1)


def pricing_u_grid() -> np.ndarray:
    """u_j = (j - n/2) du with du = pi/(2 A_p); U_max = 2048*pi/A at the defaults.

    Simpson weights alias at x +- 2 A_p, so A_p must exceed the reach of the
    heaviest call tail priced on the model grid.
    """
    n = config.pricing.u_points
    du = np.pi / (2.0 * config.pricing.half_width)
    return du * (np.arange(n) - n // 2)


def simpson_weights(n: int) -> np.ndarray:
    """Simpson weights with the Kronecker endpoint correction, in units of du."""
    j = np.arange(n)
    delta = np.zeros(n)
    delta[0] = 1.0
    return (3.0 + (-1.0) ** (j + 1) - delta) / 3.0


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def _fft_size(du: float, dx: float, needed: int):
    n_float = 2.0 * np.pi / (du * dx)
    n = int(round(n_float))
    if n >= needed and abs(n_float - n) < 1e-9 * n:
        return n
    return None


def _integer_steps(u: np.ndarray, du: float):
    m = np.rint(u / du)
    if np.allclose(m * du, u, rtol=0.0, atol=1e-9 * max(du, 1.0)):
        return m.astype(np.int64)
    return None


def inverse_ft(values: np.ndarray, u: np.ndarray, grid: XGrid, sign: int = -1) -> np.ndarray:
    """(1/2pi) sum_j e^{sign*i*u_j*x_k} values_j du on the grid (values must vanish at the ends of u).

    Uses an FFT when u is an integer multiple of a spacing du with 2pi/(du*dx)
    integral; otherwise falls back to a chunked direct sum.
    """
    values = np.asarray(values, dtype=complex)
    u = np.asarray(u, dtype=float)
    du = float(u[1] - u[0]) if u.size > 1 else 1.0
    steps = _integer_steps(u, du)
    n_fft = _fft_size(du, grid.dx, max(grid.n, u.size)) if steps is not None else None
    if n_fft is not None:
        a = np.zeros(n_fft, dtype=complex)
        np.add.at(a, np.mod(steps, n_fft), values * np.exp(sign * 1j * u * grid.x0))
        if sign < 0:
            s = np.fft.fft(a)
        else:
            s = np.fft.ifft(a) * n_fft
        return s[: grid.n] * du / (2.0 * np.pi)

    return inverse_ft_points(values, u, grid.x, sign=sign)


def inverse_ft_points(values: np.ndarray, u: np.ndarray, x: np.ndarray, sign: int = -1) -> np.ndarray:
    """Direct-sum version of inverse_ft at arbitrary x."""
    values = np.asarray(values, dtype=complex)
    u = np.asarray(u, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    du = float(u[1] - u[0]) if u.size > 1 else 1.0
    out = np.empty(x.size, dtype=complex)
    for start in range(0, x.size, _CHUNK):
        xs = x[start:start + _CHUNK]
        out[start:start + _CHUNK] = np.exp(sign * 1j * np.outer(xs, u)) @ values
    return out * du / (2.0 * np.pi)


def forward_ft(values: np.ndarray, grid: XGrid, u: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature of int e^{iux} g(x) dx for g sampled on the grid and complex u.

    When Im(u) is constant and Re(u) sits on integer multiples of a spacing
    compatible with the grid, the sum is evaluated by one FFT.
    """
    values = np.asarray(values, dtype=complex) * trapezoid_weights(grid.n)
    u = np.asarray(u, dtype=complex)
    shape = u.shape
    u = u.ravel()
    x = grid.x
    if u.size > 1:
        im = u.imag
        re = u.real
        du = float(np.min(np.abs(np.diff(re)))) if u.size > 1 else 0.0
        if np.ptp(im) == 0.0 and du > 0:
            steps = _integer_steps(re, du)
            n_fft = _fft_size(du, grid.dx, grid.n) if steps is not None else None
            if n_fft is not None:
                g = np.zeros(n_fft, dtype=complex)
                g[: grid.n] = values * np.exp(-im[0] * x)
                s = np.fft.ifft(g) * n_fft
                out = np.exp(1j * re * grid.x0) * s[np.mod(steps, n_fft)] * grid.dx
                return out.reshape(shape)

    out = np.empty(u.size, dtype=complex)
    for start in range(0, u.size, _CHUNK):
        us = u[start:start + _CHUNK]
        out[start:start + _CHUNK] = np.exp(1j * np.outer(us, x)) @ values
    return (out * grid.dx).reshape(shape)


def trapezoid_on(values: np.ndarray, u: np.ndarray, lower: float, upper: float) -> float:
    """Trapezoid integral of samples restricted to [lower, upper]."""
    mask = (u >= lower) & (u <= upper)
    if mask.sum() < 2:
        return 0.0
    return float(trapezoid(values[mask], u[mask]))
