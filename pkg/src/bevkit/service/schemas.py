"""Request/response models of the experiment service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel

from ..configs import ExperimentConfig


class RunRequest(BaseModel):
    """A fully resolved experiment configuration (scenes inlined)."""

    config: ExperimentConfig


class RunResponse(BaseModel):
    """Experiment outcome: ok iff every declared invariant check passed."""

    ok: bool
    checks: dict[str, bool]
    report: dict


class SceneRequest(BaseModel):
    preset: str = "static-planes"
    seed: int = 42


class SceneResponse(BaseModel):
    scene: dict
    yaml_text: str


class HealthResponse(BaseModel):
    status: str
    version: str
