import os
from typing import Optional
from dotenv import load_dotenv
from pydantic import BaseSettings, Field

load_dotenv()


class GridConfig(BaseSettings):
    """Uniform x-grid shared by sampled Lévy densities, k-functions and priced curves."""
    half_width: float = Field(default=5.0, env="LEVYSPEC_GRID_HALF_WIDTH")
    points: int = Field(default=2 ** 13, env="LEVYSPEC_GRID_POINTS")

    class Config:
        env_file = ".env"

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.points


class PricingConfig(BaseSettings):
    """Fourier pricing configuration."""
    half_width: float = Field(default=20.0, env="LEVYSPEC_PRICING_HALF_WIDTH")
    u_points: int = Field(default=2 ** 15, env="LEVYSPEC_PRICING_U_POINTS")
    singular_radius: float = Field(default=1e-6, env="LEVYSPEC_PRICING_SINGULAR_RADIUS")
    negativity_tolerance: float = Field(default=1e-6, env="LEVYSPEC_PRICING_NEGATIVITY_TOL")
    min_reference_variance: float = Field(default=1e-4, env="LEVYSPEC_PRICING_MIN_REF_VARIANCE")

    class Config:
        env_file = ".env"


class EstimationConfig(BaseSettings):
    """Spectral estimation configuration."""
    smoothness: int = Field(default=2, env="LEVYSPEC_SMOOTHNESS")
    exponent_u_max: float = Field(default=160.0, env="LEVYSPEC_EXPONENT_U_MAX")
    ill_conditioned_tol: float = Field(default=1e-12, env="LEVYSPEC_ILL_CONDITIONED_TOL")
    spline_degree: int = Field(default=1, env="LEVYSPEC_SPLINE_DEGREE")
    kernel_samples: int = Field(default=4001, env="LEVYSPEC_KERNEL_SAMPLES")

    class Config:
        env_file = ".env"


class TuningConfig(BaseSettings):
    """Cut-off scan configuration."""
    scan_points: int = Field(default=24, env="LEVYSPEC_SCAN_POINTS")
    scan_lower: float = Field(default=2.0, env="LEVYSPEC_SCAN_LOWER")
    scan_upper_factor: float = Field(default=30.0, env="LEVYSPEC_SCAN_UPPER_FACTOR")

    class Config:
        env_file = ".env"


class RunConfig(BaseSettings):
    """Run-level settings shared by the CLI and the experiment harness."""
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, env="LEVYSPEC_THREADS")
    seed: Optional[int] = Field(default=None, env="LEVYSPEC_SEED")

    class Config:
        env_file = ".env"


class LoggingConfig(BaseSettings):
    """Logging configuration."""
    log_level: str = Field(default="INFO", env="LEVYSPEC_LOG_LEVEL")
    log_file: Optional[str] = Field(default="levyspec.log", env="LEVYSPEC_LOG_FILE")

    class Config:
        env_file = ".env"


class Config:
    """Main configuration class that combines all config sections."""

    def __init__(self):
        self.grid = GridConfig()
        self.pricing = PricingConfig()
        self.estimation = EstimationConfig()
        self.tuning = TuningConfig()
        self.run = RunConfig()
        self.logging = LoggingConfig()

    def resolve_seed(self, seed: Optional[int]) -> Optional[int]:
        """The LEVYSPEC_SEED environment variable overrides seeds from config files."""
        if self.run.seed is not None:
            return self.run.seed
        return seed


# Global config instance
config = Config()
