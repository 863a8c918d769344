"""
Configuration management for the metric-graph diffusion simulator.

This module handles environment variables and simulation defaults using
pydantic for validation and type safety. Command-line flags override these
values; the resolved result is echoed into every run manifest.
"""

from typing import Optional

from pydantic_settings import BaseSettings
from pydantic import Field
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """
    Application settings with environment variable support.

    Uses pydantic BaseSettings to automatically load and validate
    environment variables with type hints and default values.
    """

    # Discretization
    DT: float = Field(default=1e-4, gt=0, description="Euler step / global grid step (s)")
    HORIZON: float = Field(default=1.0, gt=0, description="Global time horizon (s)")
    EDGE_HORIZON: Optional[float] = Field(
        default=None, description="Per-edge clock budget (s); defaults to HORIZON"
    )
    SEED: int = Field(default=20240601, ge=0, description="Master RNG seed (64-bit)")

    # Local time estimation
    KERNEL_EPS: float = Field(default=1e-2, gt=0, description="Kernel half-width epsilon")
    DOWNCROSS_DELTA: float = Field(default=1e-2, gt=0, description="Downcrossing level delta")
    SIGMA_MIN: float = Field(
        default=1e-3, gt=0, description="Uniform ellipticity floor for volatility"
    )

    # Time change
    QUANTUM: float = Field(
        default=2.0**-10, gt=0, description="Allocation quantum in local-time units"
    )
    SOLVE_TOL: Optional[float] = Field(
        default=None, description="Ratio tolerance for the equation solver; defaults to QUANTUM"
    )

    # Experiments
    EXIT_DELTA: float = Field(default=0.05, gt=0, description="Exit radius for exit experiments")
    PATHS: int = Field(default=1000, ge=1, description="Monte Carlo replicas")
    THREADS: int = Field(default=1, ge=1, description="Worker threads over replica chunks")
    CHUNK_SIZE: int = Field(default=32, ge=1, description="Replicas simulated per batch")
    KS_THRESHOLD: float = Field(default=0.02, gt=0, description="Two-sample KS pass threshold")
    CONFIDENCE_LEVEL: float = Field(
        default=0.99, gt=0, lt=1, description="Confidence level for all reported intervals"
    )

    # Application Configuration
    ENVIRONMENT: str = Field(default="development", description="Environment (development/production)")
    OUTPUT_DIR: str = Field(default="data/runs", description="Default output directory")
    LOG_DIR: str = Field(default="logs", description="Log directory")
    LOG_LEVEL: str = Field(default="INFO", description="Logging level")

    # Web Interface
    HOST: str = Field(default="0.0.0.0", description="Server host")
    PORT: int = Field(default=8000, description="Server port")

    class Config:
        """Pydantic configuration."""

        env_file = ".env"
        case_sensitive = True


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """
    Get application settings.

    Returns:
        Settings: Application settings instance.
    """
    return settings
