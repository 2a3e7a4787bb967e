"""HTTP service exposing the experiment runners.

Endpoints are stateless request -> report computations; clients (the CLI
included) send a resolved config and write any output files themselves.
"""

from __future__ import annotations

import yaml
from fastapi import FastAPI, HTTPException

from .. import __version__, experiments
from .schemas import HealthResponse, RunRequest, RunResponse, SceneRequest, SceneResponse

app = FastAPI(
    title="bevkit",
    version=__version__,
    description="Temporal-stereo depth, BEV pooling, and NMS experiments",
)


def _run(runner, request: RunRequest) -> RunResponse:
    try:
        report = runner(request.config)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    checks = report.get("checks", {})
    return RunResponse(ok=all(checks.values()), checks=checks, report=report)


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/v1/depth", response_model=RunResponse)
def depth(request: RunRequest) -> RunResponse:
    return _run(experiments.run_depth, request)


@app.post("/v1/nms", response_model=RunResponse)
def nms(request: RunRequest) -> RunResponse:
    return _run(experiments.run_nms, request)


@app.post("/v1/pool", response_model=RunResponse)
def pool(request: RunRequest) -> RunResponse:
    return _run(experiments.run_pool, request)


@app.post("/v1/scene", response_model=SceneResponse)
def scene(request: SceneRequest) -> SceneResponse:
    try:
        data = experiments.gen_scene(request.preset, seed=request.seed)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return SceneResponse(scene=data, yaml_text=yaml.safe_dump(data, sort_keys=False))
