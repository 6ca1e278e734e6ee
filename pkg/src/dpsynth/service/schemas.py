"""Request and response models for the HTTP service.

The pipeline configuration model is shared with the core package; these
wrappers add the transport-level envelopes.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..pipeline import PipelineConfig


class AccountRequest(BaseModel):
    sigma: float = Field(gt=0, description="noise multiplier of the training mechanism")
    q: float = Field(gt=0, le=1, description="subsampling rate, batch size over corpus size")
    steps: int = Field(ge=1, description="number of optimizer steps")
    delta: float = Field(gt=0, lt=1)
    hist_sigma: Optional[float] = Field(default=None, gt=0, description="optional one-shot histogram release noise")
    grid_spacing: float = Field(default=1e-4, gt=0)


class MechanismBreakdown(BaseModel):
    kind: str
    sigma: float
    repetitions: int
    standalone_epsilon: float
    sensitivity: Optional[float] = None
    sampling_rate: Optional[float] = None


class AccountResponse(BaseModel):
    epsilon: float
    delta: float
    grid_spacing: float
    error_bound: float
    direction_epsilons: dict[str, float]
    per_mechanism: list[MechanismBreakdown]


class CalibrateRequest(BaseModel):
    epsilon: float = Field(gt=0, description="target end-to-end epsilon for training")
    delta: float = Field(gt=0, lt=1)
    q: float = Field(gt=0, le=1)
    steps: int = Field(ge=1)
    grid_spacing: float = Field(default=1e-4, gt=0)


class CalibrateResponse(BaseModel):
    sigma: float
    achieved_epsilon: float
    delta: float


class StageRunRequest(BaseModel):
    workspace: str
    stage: str
    config: PipelineConfig = Field(default_factory=PipelineConfig)


class StageRunResponse(BaseModel):
    stage: str
    outputs: dict[str, str]
    seed: int


class RunAllRequest(BaseModel):
    workspace: str
    config: PipelineConfig = Field(default_factory=PipelineConfig)


class RunAllResponse(BaseModel):
    stages: dict[str, StageRunResponse]


class ReportRequest(BaseModel):
    workspace: str
    artifact: str = "report"


class MauveRequest(BaseModel):
    p_masses: list[float]
    q_masses: list[float]
    c: float = 5.0
    lambda_grid: int = 500
    smoothing_epsilon: float = 1e-9


class MauveResponse(BaseModel):
    score: float
    c: float
    lambda_grid: int
    frontier: list[tuple[float, float]]


class ErrorBody(BaseModel):
    error: str
    kind: str
    deficits: Optional[list[int]] = None
