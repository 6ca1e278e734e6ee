"""HTTP service wrapping the curation toolkit.

Endpoints mirror the CLI surface: privacy accounting and calibration as pure
queries, pipeline stages as operations on a server-side workspace directory.
The CLI is a thin client over the same handlers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from ..accounting import calibrate_sigma, training_budget
from ..divergence import DistributionHistogram, mauve_score
from ..errors import ConfigError, DpSynthError, ExternalServiceError, InfeasiblePlanError, StaleInputError
from ..pipeline import Workspace, run_all, run_stage
from .schemas import (
    AccountRequest,
    AccountResponse,
    CalibrateRequest,
    CalibrateResponse,
    MauveRequest,
    MauveResponse,
    ReportRequest,
    RunAllRequest,
    RunAllResponse,
    StageRunRequest,
    StageRunResponse,
)


def handle_account(req: AccountRequest) -> AccountResponse:
    report = training_budget(
        sigma=req.sigma,
        sampling_rate=req.q,
        steps=req.steps,
        delta=req.delta,
        histogram_sigma=req.hist_sigma,
        grid_spacing=req.grid_spacing,
    )
    return AccountResponse(**report.to_dict())


def handle_calibrate(req: CalibrateRequest) -> CalibrateResponse:
    sigma = calibrate_sigma(req.epsilon, req.delta, req.q, req.steps, grid_spacing=req.grid_spacing)
    achieved = training_budget(sigma, req.q, req.steps, req.delta, grid_spacing=req.grid_spacing).epsilon
    return CalibrateResponse(sigma=sigma, achieved_epsilon=achieved, delta=req.delta)


def handle_stage(req: StageRunRequest) -> StageRunResponse:
    ws = Workspace(req.workspace)
    entry = run_stage(req.config, ws, req.stage)
    return StageRunResponse(stage=req.stage, outputs=entry["outputs"], seed=entry["seed"])


def handle_run_all(req: RunAllRequest) -> RunAllResponse:
    ws = Workspace(req.workspace)
    entries = run_all(req.config, ws)
    return RunAllResponse(
        stages={
            name: StageRunResponse(stage=name, outputs=entry["outputs"], seed=entry["seed"])
            for name, entry in entries.items()
        }
    )


_REPORT_ARTIFACTS = ("report", "mauve", "budget", "plan", "selection", "histogram", "leakage", "pii")


def handle_report(req: ReportRequest) -> dict:
    if req.artifact not in _REPORT_ARTIFACTS:
        raise ConfigError(f"unknown artifact {req.artifact!r}; expected one of {_REPORT_ARTIFACTS}")
    path = Path(req.workspace) / f"{req.artifact}.json"
    if not path.exists():
        raise ConfigError(f"no {req.artifact} in workspace {req.workspace}; run its stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def handle_mauve(req: MauveRequest) -> MauveResponse:
    p = DistributionHistogram(masses=np.asarray(req.p_masses), representation="unigram")
    q = DistributionHistogram(masses=np.asarray(req.q_masses), representation="unigram")
    report = mauve_score(p, q, c=req.c, lambda_grid=req.lambda_grid, smoothing_epsilon=req.smoothing_epsilon)
    return MauveResponse(score=report.score, c=report.c, lambda_grid=report.lambda_grid, frontier=report.frontier)


def create_app() -> FastAPI:
    app = FastAPI(title="dpsynth", description="Private synthetic instruction curation service")

    @app.exception_handler(DpSynthError)
    async def dpsynth_error_handler(request, exc: DpSynthError):
        status = 400
        body = {"error": str(exc), "kind": type(exc).__name__}
        if isinstance(exc, InfeasiblePlanError):
            status = 409
            body["deficits"] = [int(v) for v in exc.deficits]
        elif isinstance(exc, StaleInputError):
            status = 409
        elif isinstance(exc, ExternalServiceError):
            status = 502
        return JSONResponse(status_code=status, content=body)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/account", response_model=AccountResponse)
    def account(req: AccountRequest) -> AccountResponse:
        return handle_account(req)

    @app.post("/account/calibrate", response_model=CalibrateResponse)
    def calibrate(req: CalibrateRequest) -> CalibrateResponse:
        return handle_calibrate(req)

    @app.post("/stages/run", response_model=StageRunResponse)
    def stage_run(req: StageRunRequest) -> StageRunResponse:
        return handle_stage(req)

    @app.post("/runs", response_model=RunAllResponse)
    def runs(req: RunAllRequest) -> RunAllResponse:
        return handle_run_all(req)

    @app.post("/report")
    def report(req: ReportRequest) -> dict:
        return handle_report(req)

    @app.post("/mauve", response_model=MauveResponse)
    def mauve(req: MauveRequest) -> MauveResponse:
        return handle_mauve(req)

    return app


app = create_app()
