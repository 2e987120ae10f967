"""
Configuration management for the sparse input localizer
"""

import logging
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class SolverSettings(BaseSettings):
    """Group LASSO / ADMM defaults"""

    model_config = SettingsConfigDict(
        env_prefix="LOCALIZER_SOLVER_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    rho: float = Field(1.0, gt=0, description="Initial ADMM penalty")
    max_iter: int = Field(10000, ge=1, description="Maximum ADMM iterations")
    tol_abs: float = Field(1e-7, gt=0, description="Absolute stopping tolerance")
    tol_rel: float = Field(1e-5, gt=0, description="Relative stopping tolerance")
    support_rel_threshold: float = Field(
        1e-3, gt=0, description="Group norm threshold relative to the largest group"
    )

    # Residual balancing
    adaptive_rho: bool = Field(True, description="Enable residual-balancing penalty updates")
    rho_scale: float = Field(2.0, gt=1, description="Multiplicative penalty update factor")
    rho_trigger: float = Field(10.0, gt=1, description="Primal/dual residual ratio triggering an update")

    factor_cache_size: int = Field(32, ge=1, description="Cached Cholesky factors")


class AnalysisSettings(BaseSettings):
    """Structural and incoherence analysis defaults"""

    model_config = SettingsConfigDict(
        env_prefix="LOCALIZER_ANALYSIS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    rank_tol: Optional[float] = Field(
        None, description="Absolute rank tolerance; None uses max(dim)*eps*sigma_max"
    )
    delay_cap: Optional[int] = Field(None, ge=1, description="Delay search cap; None uses n")
    nrank_probes: int = Field(7, ge=3, description="Random probes for the normal rank")
    probe_seed: int = Field(0, description="Seed for probes and pencil compression")
    zero_tol: float = Field(1e-8, gt=0, description="Relative rank-drop tolerance for zero verification")
    eig_tol: float = Field(1e-9, gt=0, description="Distance to spec(A) / unit circle treated as singular")

    mic_grid_points: int = Field(512, ge=2, description="Frequency grid on the upper half circle")
    mic_refine_factor: int = Field(4, ge=1, description="Refinement density around the arg-max")

    delta: float = Field(0.05, gt=0, lt=1, description="Confidence parameter for lambda_T and beta_min")
    delta1: float = Field(0.05, gt=0, lt=1, description="Confidence parameter for the oracle bound")


class CampaignSettings(BaseSettings):
    """Monte-Carlo campaign defaults"""

    model_config = SettingsConfigDict(
        env_prefix="LOCALIZER_CAMPAIGN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    max_workers: int = Field(4, ge=1, description="Worker threads for trials")
    output_dir: Optional[Path] = Field(None, description="Default directory for reports")
    float_digits: int = Field(17, ge=1, le=17, description="Significant digits in JSON reports")

    @field_validator('output_dir', mode='after')
    @classmethod
    def create_directories(cls, v: Optional[Path]) -> Optional[Path]:
        if v:
            v.mkdir(parents=True, exist_ok=True)
            logger.debug(f"Created directory: {v}")
        return v


class Settings:
    """Singleton settings manager"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self.solver = SolverSettings()
        self.analysis = AnalysisSettings()
        self.campaign = CampaignSettings()
        self._initialized = True
        logger.debug("Settings initialized")

    def reload(self) -> None:
        """Reload configuration from environment and files"""
        self.solver = SolverSettings()
        self.analysis = AnalysisSettings()
        self.campaign = CampaignSettings()
        logger.info("Settings reloaded")


# Global settings instance
settings = Settings()
