"""
Solver configuration for group-LASSO estimation
"""

from pydantic import BaseModel, ConfigDict, Field

from config import settings


class GroupLassoConfig(BaseModel):
    """Configuration for one group-LASSO solve (immutable)"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(..., ge=0, alias="lambda", description="Regularization weight lambda_T")

    # ADMM
    rho: float = Field(default_factory=lambda: settings.solver.rho, gt=0)
    max_iter: int = Field(default_factory=lambda: settings.solver.max_iter, ge=1)
    tol_abs: float = Field(default_factory=lambda: settings.solver.tol_abs, gt=0)
    tol_rel: float = Field(default_factory=lambda: settings.solver.tol_rel, gt=0)
    adaptive_rho: bool = Field(default_factory=lambda: settings.solver.adaptive_rho)
    rho_scale: float = Field(default_factory=lambda: settings.solver.rho_scale, gt=1)
    rho_trigger: float = Field(default_factory=lambda: settings.solver.rho_trigger, gt=1)

    # Support extraction
    support_rel_threshold: float = Field(
        default_factory=lambda: settings.solver.support_rel_threshold, gt=0
    )

    def with_lambda(self, lam: float) -> "GroupLassoConfig":
        """Copy with a different lambda (validated)."""
        return GroupLassoConfig(**{**self.model_dump(), "lam": lam})
