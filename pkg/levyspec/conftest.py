import numpy as np
import pytest

from models import MertonParams, VarianceGammaParams

T_REF = 0.25
R_REF = 0.06


@pytest.fixture
def merton():
    """Reference jump diffusion: sigma=0.1, lambda=5, eta=-0.1, v=0.2."""
    return MertonParams(sigma=0.1, lam=5.0, eta=-0.1, v=0.2)


@pytest.fixture
def vg():
    """Reference variance gamma: sigma=1.2, rho=0.2, theta=-0.15."""
    return VarianceGammaParams(sigma=1.2, rho=0.2, theta=-0.15)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
