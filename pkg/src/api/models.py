"""
Pydantic models for reports, manifests and API request/response schemas.

This module defines the machine-readable outputs shared by the CLI and the
FastAPI service, with validation, type hints, and documentation.
"""

from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class TaskStatus(str, Enum):
    """Enumeration of background task status values."""

    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class CheckOutcome(BaseModel):
    """One named invariant check."""

    model_config = ConfigDict(populate_by_name=True)

    value: float = Field(..., description="Worst observed value over all replicas")
    threshold: Optional[float] = Field(None, description="Pass threshold (value <= threshold)")
    passed: bool = Field(..., alias="pass", description="Whether the check passed")


class ExperimentReport(BaseModel):
    """Machine-readable report of one experiment or invariant suite."""

    model_config = ConfigDict(populate_by_name=True)

    experiment: str = Field(..., description="Experiment name")
    params: Dict[str, Any] = Field(..., description="Fully resolved parameters")
    statistics: Dict[str, Any] = Field(..., description="Estimates and named checks")
    ci: Dict[str, Any] = Field(default_factory=dict, description="Confidence interval half-widths")
    passed: bool = Field(..., alias="pass", description="Overall verdict")

    @property
    def failed_checks(self) -> List[str]:
        checks = self.statistics.get("checks", {})
        return sorted(name for name, check in checks.items() if not check.get("pass", True))

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


class RunManifest(BaseModel):
    """Everything needed to rerun a command byte-identically."""

    model_config = ConfigDict(extra="forbid")

    command: str = Field(..., description="CLI subcommand")
    config_path: str = Field(..., description="Graph config path")
    parameters: Dict[str, Any] = Field(..., description="Resolved parameters, no implicit defaults")
    seed: int = Field(..., description="Master RNG seed")
    output_dir: str = Field(..., description="Output directory")
    tool_version: str = Field(..., description="Package version")


class SimulationRequest(BaseModel):
    """Parameters shared by every experiment request."""

    model_config = ConfigDict(extra="forbid")

    graph: Dict[str, Any] = Field(..., description="Inline graph document")
    root: Optional[str] = Field(None, description="Root vertex (defaults to the first interior vertex)")
    horizon: Optional[float] = Field(None, gt=0, description="Global horizon (s)")
    dt: Optional[float] = Field(None, gt=0, description="Time step (s)")
    quantum: Optional[float] = Field(None, gt=0, description="Allocation quantum")
    kernel_eps: Optional[float] = Field(None, gt=0, description="Kernel half-width")
    seed: Optional[int] = Field(None, ge=0, description="Master RNG seed")


class ExitProbRequest(SimulationRequest):
    """Request for an exit-direction experiment."""

    delta: Optional[float] = Field(None, gt=0, description="Exit radius")
    paths: Optional[int] = Field(None, ge=1, description="Monte Carlo replicas")


class VerifyRequest(SimulationRequest):
    """Request for the invariant suite."""

    paths: Optional[int] = Field(None, ge=1, description="Monte Carlo replicas")
    negative_control: bool = Field(default=False, description="Feed a mismatched clock")


class TaskResponse(BaseModel):
    """Response model for an enqueued task."""

    task_id: str = Field(..., description="Unique task identifier")
    status: TaskStatus = Field(..., description="Task status")
    message: str = Field(default="Task queued", description="Status message")
    created_at: datetime = Field(default_factory=_utc_now, description="Creation timestamp")


class TaskStatusResponse(BaseModel):
    """Response model for task status queries."""

    task_id: str = Field(..., description="Task identifier")
    status: TaskStatus = Field(..., description="Current task status")
    progress: Optional[str] = Field(None, description="Progress description")


class ValidationResponse(BaseModel):
    """Response model for inline graph validation."""

    ok: bool = Field(..., description="Whether every rule holds")
    violations: List[Dict[str, Any]] = Field(default_factory=list, description="Failed rules")


class HealthCheckResponse(BaseModel):
    """Health check response model."""

    status: str = Field(default="healthy", description="Service status")
    service: str = Field(default="graph-diffusion", description="Service name")
    version: str = Field(default="1.0.0", description="Service version")
    timestamp: datetime = Field(default_factory=_utc_now, description="Check timestamp")
