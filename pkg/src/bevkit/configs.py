"""Experiment configuration: pydantic models, YAML loading, path resolution.

A config file on disk references scenes by path; :func:`load_config`
resolves those paths (relative to the config file) and inlines the scene
specs, producing a self-contained :class:`ExperimentConfig` that can be
shipped to the service as JSON. Reports embed this resolved form, so a
report always carries the full provenance of its run.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from .geometry import CameraIntrinsics, RigidTransform
from .scene import SceneSpec
from .stereo import StereoConfig
from .fusion import MonoModel

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unreadable, inconsistent, or missing configuration."""


class CameraModel(BaseModel):
    fx: float = 160.0
    fy: float = 160.0
    cx: float = 47.5
    cy: float = 31.5
    width: int = 96
    height: int = 64

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                                width=self.width, height=self.height)


class StereoModel(BaseModel):
    k_candidates: int = 9
    n_splits: int = 3
    n_iters: int = 3
    spread: float = 2.0
    temperature: float = 0.1
    sigma_min: float = 0.25
    sigma_max: float = 400.0
    d_min: float = 2.0
    d_max: float = 58.0
    n_bins: int = 112
    min_spacing: float = 0.05
    evidence_floor: float = 0.05

    def to_config(self) -> StereoConfig:
        return StereoConfig(**self.model_dump())


class MonoModelConfig(BaseModel):
    bias_frac: float = 1.0
    jitter_frac: float = 0.15
    smoothing_bins: int = 6
    seed: Optional[int] = None  # None: derive from the global seed

    def to_model(self, global_seed: int) -> MonoModel:
        seed = self.seed if self.seed is not None else global_seed
        return MonoModel(bias_frac=self.bias_frac, jitter_frac=self.jitter_frac,
                         smoothing_bins=self.smoothing_bins, seed=seed)


class DepthConfig(BaseModel):
    """Depth experiment: scenes (inlined), camera pair, stereo and mono knobs."""

    scene: dict  # inlined SceneSpec dict
    moving_scene: Optional[dict] = None
    camera: CameraModel = CameraModel()
    ref_position: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    ref_rpy_deg: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    src_position: list[float] = Field(default_factory=lambda: [0.5, 0.0, 0.0])
    src_rpy_deg: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    dt: float = 0.5
    iter_sweep: list[int] = Field(default_factory=lambda: [0, 1, 2, 3])
    stereo: StereoModel = StereoModel()
    mono: MonoModelConfig = MonoModelConfig()
    tau_w: float = 0.05
    parallax_px: float = 1.0

    @field_validator("iter_sweep")
    @classmethod
    def _sweep_sorted(cls, v):
        if not v or sorted(set(v)) != v:
            raise ValueError("iter_sweep must be strictly increasing and non-empty")
        if v[0] < 0:
            raise ValueError("iter_sweep entries must be >= 0")
        return v

    def scene_spec(self) -> SceneSpec:
        return SceneSpec.from_dict(self.scene)

    def moving_scene_spec(self) -> Optional[SceneSpec]:
        return SceneSpec.from_dict(self.moving_scene) if self.moving_scene else None

    def ref_pose(self) -> RigidTransform:
        return _camera_pose(self.ref_position, self.ref_rpy_deg)

    def src_pose(self) -> RigidTransform:
        return _camera_pose(self.src_position, self.src_rpy_deg)


def _camera_pose(position, rpy_deg) -> RigidTransform:
    """World-to-camera transform from an authored camera placement."""
    import numpy as np

    cam_to_world = RigidTransform.from_rpy(np.deg2rad(np.asarray(rpy_deg, dtype=float)),
                                           np.asarray(position, dtype=float))
    return cam_to_world.inverse()


class NmsExperimentConfig(BaseModel):
    n_suites: int = 100
    oracle_iou: float = 0.3
    circle_radius_grid: list[float] = Field(
        default_factory=lambda: [0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0])
    scale_w_grid: list[float] = Field(
        default_factory=lambda: [0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.8])

    @model_validator(mode="after")
    def _check(self):
        if self.n_suites < 1:
            raise ValueError("n_suites must be >= 1")
        if not (0 < self.oracle_iou < 1):
            raise ValueError("oracle_iou must lie in (0, 1)")
        if not self.circle_radius_grid or not self.scale_w_grid:
            raise ValueError("hyperparameter grids must be non-empty")
        return self


class PoolBenchSize(BaseModel):
    n: int = 200000
    x: int = 128
    y: int = 128
    c: int = 32


class PoolExperimentConfig(BaseModel):
    bench_grid: list[PoolBenchSize] = Field(default_factory=lambda: [PoolBenchSize()])
    workers: int = 8
    repeats: int = 3
    equivalence_batches: int = 10
    equivalence_max_n: int = 200000
    equivalence_channels: int = 8


class ExperimentConfig(BaseModel):
    """Fully resolved experiment configuration (scenes inlined)."""

    schema_version: int = CONFIG_SCHEMA_VERSION
    seed: int = 42
    depth: DepthConfig
    nms: NmsExperimentConfig = NmsExperimentConfig()
    pool: PoolExperimentConfig = PoolExperimentConfig()

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version: {v}")
        return v


def _load_scene_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"scene file not found: {path}")
    with open(path) as f:
        data = yaml.safe_load(f)
    SceneSpec.from_dict(data)  # validate eagerly, errors point at the file
    return data


def load_config(path, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Load a YAML config file, resolving scene paths against its directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"failed to parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")

    depth = raw.get("depth")
    if isinstance(depth, dict):
        base = path.parent
        for key in ("scene", "moving_scene"):
            ref = depth.get(key)
            if isinstance(ref, str):
                depth[key] = _load_scene_file((base / ref).resolve())
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    try:
        return ExperimentConfig(**raw)
    except Exception as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def default_config_path() -> Path:
    return Path(__file__).parent / "data" / "configs" / "default.yaml"


def packaged_scene_path(name: str) -> Path:
    return Path(__file__).parent / "data" / "scenes" / f"{name}.yaml"
