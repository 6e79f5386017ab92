"""
Model families, characteristic exponents and the martingale condition.

psi(u) = -sigma^2 u^2/2 + i gamma u + int (e^{iux} - 1) nu(x) dx, phi_T(u) = exp(T psi(u)).
Every function here is pure; u may be any complex array inside the strip Im(u) in [-1, 0].
"""
import dataclasses
import json
import math
from pathlib import Path
from typing import Union

import numpy as np
from loguru import logger

from errors import DataError, DomainError
from fourier import XGrid, forward_ft, model_grid
from models import LevyModelFA, LevyModelSD, MertonParams, VarianceGammaParams
from scipy.integrate import trapezoid

LevyModel = Union[MertonParams, VarianceGammaParams, LevyModelFA, LevyModelSD]


def levy_density_merton(params: MertonParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return params.lam / (math.sqrt(2.0 * math.pi) * params.v) * np.exp(-(x - params.eta) ** 2 / (2.0 * params.v ** 2))


def k_function_vg(params: VarianceGammaParams, x) -> np.ndarray:
    """k_VG(x); the origin takes the right limit k(0+)."""
    x = np.asarray(x, dtype=float)
    left = np.exp(np.minimum(x, 0.0) / params.eta_m) / params.rho
    right = np.exp(-np.maximum(x, 0.0) / params.eta_p) / params.rho
    return np.where(x < 0, left, right)


def _grid_of(model) -> XGrid:
    values = model.nu if isinstance(model, LevyModelFA) else model.k
    return XGrid(x0=model.x0, dx=model.dx, n=values.size)


def _sd_pieces(model: LevyModelSD):
    """k/|x| with the origin zeroed, and the jump k(0+) - k(0-) carried separately."""
    x = model.x
    i0 = model.origin_index
    with np.errstate(divide="ignore"):
        g = np.where(np.abs(x) > 0.5 * model.dx, model.k / np.abs(x), 0.0)
    has_origin = i0 < x.size and abs(x[i0]) < 0.5 * model.dx
    right = model.k[i0] if i0 < x.size else 0.0
    left = model.k[i0 - 1] if i0 > 0 else 0.0
    jump = (right - left) if has_origin else 0.0
    return g, jump


def martingale_drift(model: LevyModel) -> float:
    """gamma = -sigma^2/2 - int (e^x - 1) nu(dx); any drift stored on the model is ignored."""
    if isinstance(model, MertonParams):
        gamma = -model.sigma ** 2 / 2 - model.lam * (math.exp(model.eta + model.v ** 2 / 2) - 1.0)
    elif isinstance(model, VarianceGammaParams):
        base = 1.0 - model.theta * model.rho - model.sigma ** 2 * model.rho / 2
        if base <= 0:
            raise DomainError("variance gamma parameters admit no exponential moment of order one")
        gamma = math.log(base) / model.rho
    elif isinstance(model, LevyModelFA):
        gamma = -model.sigma2 / 2 - float(trapezoid((np.exp(model.x) - 1.0) * model.nu, dx=model.dx))
    elif isinstance(model, LevyModelSD):
        g, jump = _sd_pieces(model)
        integrand = (np.exp(model.x) - 1.0) * g
        # (e^x - 1)/|x| -> sgn(x) at the origin: midpoint of the two one-sided limits
        gamma = -(float(trapezoid(integrand, dx=model.dx)) + 0.5 * jump * model.dx)
    else:
        raise DataError(f"unsupported model type {type(model).__name__}")
    if not math.isfinite(gamma):
        raise DomainError("martingale integral diverges: inadmissible right tail")
    return gamma


def drift(model: LevyModel) -> float:
    gamma = getattr(model, "gamma", None)
    return martingale_drift(model) if gamma is None else float(gamma)


def with_martingale_drift(model: LevyModel) -> LevyModel:
    gamma = martingale_drift(model)
    if isinstance(model, (MertonParams, VarianceGammaParams)):
        return model.copy(update={"gamma": gamma})
    return dataclasses.replace(model, gamma=gamma)


def _vg_base(params: VarianceGammaParams, u: np.ndarray) -> np.ndarray:
    base = 1.0 - 1j * params.theta * params.rho * u + params.sigma ** 2 * params.rho * u ** 2 / 2
    # Re(base) > 0 keeps the principal logarithm continuous along any path from u=0
    if np.any(base.real <= 0):
        raise DomainError("variance gamma base crosses the branch cut of the complex power")
    return base


def char_exponent(model: LevyModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if isinstance(model, MertonParams):
        gamma = drift(model)
        jumps = model.lam * (np.exp(1j * u * model.eta - model.v ** 2 * u ** 2 / 2) - 1.0)
        psi = -model.sigma ** 2 * u ** 2 / 2 + 1j * gamma * u + jumps
    elif isinstance(model, VarianceGammaParams):
        psi = 1j * drift(model) * u - np.log(_vg_base(model, u)) / model.rho
    elif isinstance(model, LevyModelFA):
        grid = _grid_of(model)
        lam = model.lam
        psi = -model.sigma2 * u ** 2 / 2 + 1j * model.gamma * u + forward_ft(model.nu, grid, u) - lam
    elif isinstance(model, LevyModelSD):
        grid = _grid_of(model)
        g, jump = _sd_pieces(model)
        mass = forward_ft(g, grid, np.zeros(1))[0]
        psi = 1j * model.gamma * u + forward_ft(g, grid, u) - mass + 0.5j * u * jump * model.dx
    else:
        raise DataError(f"unsupported model type {type(model).__name__}")
    if not np.all(np.isfinite(psi)):
        raise DomainError("characteristic exponent is not finite: parameters outside the admissible strip")
    return psi


def char_exponent_derivative(model: LevyModel, u, order: int = 1) -> np.ndarray:
    """First or second derivative of psi."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    u = np.asarray(u, dtype=complex)
    if isinstance(model, MertonParams):
        jump = np.exp(1j * u * model.eta - model.v ** 2 * u ** 2 / 2)
        slope = 1j * model.eta - model.v ** 2 * u
        if order == 1:
            return -model.sigma ** 2 * u + 1j * drift(model) + model.lam * slope * jump
        return -model.sigma ** 2 + model.lam * (slope ** 2 - model.v ** 2) * jump
    if isinstance(model, VarianceGammaParams):
        base = _vg_base(model, u)
        d1 = -1j * model.theta * model.rho + model.sigma ** 2 * model.rho * u
        if order == 1:
            return 1j * drift(model) - d1 / (model.rho * base)
        d2 = model.sigma ** 2 * model.rho
        return -(d2 * base - d1 ** 2) / (model.rho * base ** 2)
    if isinstance(model, LevyModelFA):
        grid = _grid_of(model)
        x = model.x
        if order == 1:
            return -model.sigma2 * u + 1j * model.gamma + 1j * forward_ft(x * model.nu, grid, u)
        return -model.sigma2 - forward_ft(x ** 2 * model.nu, grid, u)
    if isinstance(model, LevyModelSD):
        grid = _grid_of(model)
        x = model.x
        i0 = model.origin_index
        if order == 1:
            signed = np.sign(x) * model.k
            if i0 < x.size and abs(x[i0]) < 0.5 * model.dx:
                signed[i0] = 0.5 * (model.k[i0] - (model.k[i0 - 1] if i0 > 0 else 0.0))
            return 1j * model.gamma + 1j * forward_ft(signed, grid, u)
        return -forward_ft(np.abs(x) * model.k, grid, u)
    raise DataError(f"unsupported model type {type(model).__name__}")


def vg_char_function(params: VarianceGammaParams, u, t: float) -> np.ndarray:
    """(1 - i theta rho u + sigma^2 rho u^2/2)^(-t/rho) times the drift factor e^{i gamma u t}."""
    u = np.asarray(u, dtype=complex)
    base = _vg_base(params, u)
    return np.exp(-t / params.rho * np.log(base) + 1j * drift(params) * u * t)


def variance_rate(model: LevyModel) -> float:
    """Variance of X_1, i.e. -psi''(0)."""
    return float(-char_exponent_derivative(model, np.zeros(1), order=2)[0].real)


def sample_on_grid(params: Union[MertonParams, VarianceGammaParams], grid: XGrid = None):
    """Sampled counterpart of a parametric model on the model grid."""
    grid = grid or model_grid()
    if isinstance(params, MertonParams):
        return LevyModelFA(sigma2=params.sigma ** 2, gamma=drift(params), x0=grid.x0, dx=grid.dx,
                           nu=levy_density_merton(params, grid.x))
    if isinstance(params, VarianceGammaParams):
        return LevyModelSD(gamma=drift(params), x0=grid.x0, dx=grid.dx, k=k_function_vg(params, grid.x))
    raise DataError(f"cannot sample {type(params).__name__}")


def model_from_json(data: dict) -> LevyModel:
    """Build a model from {"model": "merton"|"vg"|"fa-grid"|"sd-grid", ...}."""
    kind = data.get("model")
    fields = {key: value for key, value in data.items() if key != "model"}
    try:
        if kind == "merton":
            return MertonParams(**fields)
        if kind == "vg":
            return VarianceGammaParams(**fields)
        if kind == "fa-grid":
            model = LevyModelFA(sigma2=float(fields.get("sigma2", 0.0)), gamma=0.0, x0=float(fields["x0"]),
                                dx=float(fields["dx"]), nu=np.asarray(fields["values"], dtype=float))
            if fields.get("gamma") is None:
                return with_martingale_drift(model)
            return dataclasses.replace(model, gamma=float(fields["gamma"]))
        if kind == "sd-grid":
            model = LevyModelSD(gamma=0.0, x0=float(fields["x0"]), dx=float(fields["dx"]),
                                k=np.asarray(fields["values"], dtype=float))
            if fields.get("gamma") is None:
                return with_martingale_drift(model)
            return dataclasses.replace(model, gamma=float(fields["gamma"]))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"invalid {kind} model description: {e}") from e
    raise DataError(f"unknown model kind {kind!r}")


def model_to_json(model: LevyModel) -> dict:
    if isinstance(model, MertonParams):
        return {"model": "merton", **json.loads(model.json(by_alias=True))}
    if isinstance(model, VarianceGammaParams):
        return {"model": "vg", **json.loads(model.json())}
    if isinstance(model, LevyModelFA):
        return {"model": "fa-grid", "sigma2": model.sigma2, "gamma": model.gamma, "x0": model.x0,
                "dx": model.dx, "values": model.nu.tolist()}
    if isinstance(model, LevyModelSD):
        return {"model": "sd-grid", "gamma": model.gamma, "x0": model.x0, "dx": model.dx,
                "values": model.k.tolist()}
    raise DataError(f"unsupported model type {type(model).__name__}")


def load_model(path: Union[str, Path]) -> LevyModel:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read model file {path}: {e}") from e
    model = model_from_json(data)
    logger.debug(f"Loaded {data.get('model')} model from {path}")
    return model
