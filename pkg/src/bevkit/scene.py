"""Synthetic scene rendering with exact ground-truth depth.

Scenes are built from textured rectangles (standalone planes, or the six
faces of a box). Each surface carries a feature signature seed; the feature
vector at any surface point is a smooth deterministic function of the
point's surface-local coordinates, so the same physical point renders to
the same feature vector from every viewpoint. That Lambertian-feature
assumption is what makes inner-product matching peak at the true
correspondence, standing in for a trained feature extractor.

Rendering is a nearest-hit ray cast per pixel, fully vectorized; pixels
that hit nothing are "sky" and carry depth 0 and a zero feature vector.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import CameraIntrinsics, RigidTransform

SCENE_SCHEMA_VERSION = 1

DEFAULT_WAVELENGTHS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_CHANNELS = 16


class SceneError(ValueError):
    """Raised for invalid scene specifications or authoring violations."""


@dataclass(frozen=True)
class PlaneSpec:
    """A finite textured rectangle.

    The rectangle spans ``extent`` in its local x/y axes; ``rpy_deg``
    orients the local frame in the world (at 0,0,0 the rectangle lies in
    the world x-y plane with normal +z, facing a camera that looks down +z).
    """

    center: tuple
    extent: tuple  # (ex, ey) meters
    rpy_deg: tuple = (0.0, 0.0, 0.0)
    signature_seed: int = 0
    velocity: tuple = (0.0, 0.0, 0.0)
    wavelengths: tuple = DEFAULT_WAVELENGTHS

    kind = "plane"


@dataclass(frozen=True)
class BoxSpec:
    """An oriented textured box, rendered as its six faces."""

    center: tuple
    extent: tuple  # (ex, ey, ez) meters
    rpy_deg: tuple = (0.0, 0.0, 0.0)
    signature_seed: int = 0
    velocity: tuple = (0.0, 0.0, 0.0)
    wavelengths: tuple = DEFAULT_WAVELENGTHS

    kind = "box"


@dataclass(frozen=True)
class SceneSpec:
    """A collection of textured objects plus the valid depth range."""

    objects: tuple
    d_min: float
    d_max: float
    seed: int = 0
    channels: int = DEFAULT_CHANNELS

    def __post_init__(self):
        if not self.d_min > 0:
            raise SceneError(f"d_min must be positive, got {self.d_min}")
        if not self.d_max > self.d_min:
            raise SceneError("d_max must exceed d_min")
        if self.channels < 1:
            raise SceneError("channels must be >= 1")

    def to_dict(self) -> dict:
        objs = []
        for ob in self.objects:
            entry = {"kind": ob.kind}
            entry.update(dataclasses.asdict(ob))
            for key in ("center", "extent", "rpy_deg", "velocity", "wavelengths"):
                entry[key] = [float(x) for x in entry[key]]
            objs.append(entry)
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "seed": int(self.seed),
            "d_min": float(self.d_min),
            "d_max": float(self.d_max),
            "channels": int(self.channels),
            "objects": objs,
        }

    @staticmethod
    def from_dict(data: dict) -> "SceneSpec":
        version = data.get("schema_version")
        if version != SCENE_SCHEMA_VERSION:
            raise SceneError(f"unsupported scene schema_version: {version!r}")
        objects = []
        for entry in data.get("objects", []):
            entry = dict(entry)
            kind = entry.pop("kind", None)
            entry = {k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}
            if kind == "plane":
                objects.append(PlaneSpec(**entry))
            elif kind == "box":
                objects.append(BoxSpec(**entry))
            else:
                raise SceneError(f"unknown object kind: {kind!r}")
        return SceneSpec(
            objects=tuple(objects),
            d_min=float(data["d_min"]),
            d_max=float(data["d_max"]),
            seed=int(data.get("seed", 0)),
            channels=int(data.get("channels", DEFAULT_CHANNELS)),
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @staticmethod
    def from_yaml(text: str) -> "SceneSpec":
        return SceneSpec.from_dict(yaml.safe_load(text))


@dataclass
class FrameBundle:
    """One rendered synthetic frame.

    depth_gt holds the exact per-pixel camera depth in meters (0 for sky);
    object_ids holds the index of the hit object in SceneSpec.objects
    (-1 for sky). pose maps world coordinates into this camera's frame.
    """

    feature: np.ndarray  # (H, W, C)
    depth_gt: np.ndarray  # (H, W)
    K: CameraIntrinsics
    pose: RigidTransform
    object_ids: np.ndarray  # (H, W) int

    @property
    def mask(self) -> np.ndarray:
        return self.depth_gt > 0


@dataclass(frozen=True)
class _Surface:
    """One rectangle ready for intersection: center + orthonormal in-plane axes."""

    center: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    half1: float
    half2: float
    signature_seed: int
    velocity: np.ndarray
    object_id: int
    wavelengths: tuple


def _object_surfaces(obj, object_id: int) -> list:
    rot = RigidTransform.from_rpy(np.deg2rad(np.asarray(obj.rpy_deg, dtype=np.float64)),
                                  np.zeros(3)).rotation
    center = np.asarray(obj.center, dtype=np.float64)
    vel = np.asarray(obj.velocity, dtype=np.float64)
    ax = rot[:, 0]
    ay = rot[:, 1]
    az = rot[:, 2]

    def make(c_local, e1, e2, h1, h2, face):
        return _Surface(
            center=center + c_local,
            e1=e1,
            e2=e2,
            half1=h1,
            half2=h2,
            signature_seed=int(obj.signature_seed) * 8 + face,
            velocity=vel,
            object_id=object_id,
            wavelengths=tuple(obj.wavelengths),
        )

    if obj.kind == "plane":
        ex, ey = (float(x) for x in obj.extent)
        return [make(np.zeros(3), ax, ay, ex / 2, ey / 2, 0)]

    ex, ey, ez = (float(x) for x in obj.extent)
    return [
        make(+az * (ez / 2), ax, ay, ex / 2, ey / 2, 1),
        make(-az * (ez / 2), ax, ay, ex / 2, ey / 2, 2),
        make(+ax * (ex / 2), ay, az, ey / 2, ez / 2, 3),
        make(-ax * (ex / 2), ay, az, ey / 2, ez / 2, 4),
        make(+ay * (ey / 2), ax, az, ex / 2, ez / 2, 5),
        make(-ay * (ey / 2), ax, az, ex / 2, ez / 2, 6),
    ]


def scene_surfaces(spec: SceneSpec) -> list:
    surfaces = []
    for i, obj in enumerate(spec.objects):
        if not all(x > 0 for x in obj.extent):
            raise SceneError(f"object {i} has non-positive extent {obj.extent}")
        surfaces.extend(_object_surfaces(obj, i))
    return surfaces


def _signature_params(spec: SceneSpec, surface: _Surface):
    """Per-channel sinusoid mixture parameters, deterministic in the seeds."""
    rng = np.random.default_rng([spec.seed, surface.signature_seed])
    n_oct = len(surface.wavelengths)
    k_mag = 2 * np.pi / np.asarray(surface.wavelengths, dtype=np.float64)
    psi = rng.uniform(0, 2 * np.pi, size=(spec.channels, n_oct))
    phase = rng.uniform(0, 2 * np.pi, size=(spec.channels, n_oct))
    kx = k_mag * np.cos(psi)
    ky = k_mag * np.sin(psi)
    # Unit RMS per channel: J octaves of amplitude sqrt(2/J), E[sin^2] = 1/2.
    amp = np.sqrt(2.0 / n_oct)
    return kx, ky, phase, amp


def _surface_feature_values(spec, surface, a, b) -> np.ndarray:
    kx, ky, phase, amp = _signature_params(spec, surface)
    arg = a[..., None, None] * kx + b[..., None, None] * ky + phase
    raw = amp * np.sin(arg).sum(axis=-1)
    # Normalize each point's feature vector to squared norm C; inner products
    # against other surface points then peak exactly at the true
    # correspondence instead of wherever the field happens to run hot.
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    return raw * np.sqrt(spec.channels) / np.where(norm > 1e-12, norm, 1.0)


def evaluate_surface_features(spec: SceneSpec, t: float, points: np.ndarray,
                              surface_index: int, surfaces=None) -> np.ndarray:
    """Feature vectors of world points lying on one surface at time t.

    The independent route to the renderer's feature output: callers supply
    world points (shape (..., 3)) known to lie on the surface.
    """
    if surfaces is None:
        surfaces = scene_surfaces(spec)
    s = surfaces[surface_index]
    center = s.center + s.velocity * t
    rel = np.asarray(points, dtype=np.float64) - center
    a = rel @ s.e1
    b = rel @ s.e2
    return _surface_feature_values(spec, s, a, b)


def render(spec: SceneSpec, K: CameraIntrinsics, pose: RigidTransform,
           t: float = 0.0) -> FrameBundle:
    """Ray-cast the scene into a frame at time t.

    Object positions are advanced by velocity * t. Per pixel the nearest
    surface hit wins; depth is the exact camera-axis depth of the hit.
    Raises SceneError if any hit falls outside [d_min, d_max] (scene
    authoring contract).
    """
    if t < 0:
        raise SceneError("t must be >= 0")
    surfaces = scene_surfaces(spec)
    h, w = K.height, K.width

    cam_to_world = pose.inverse()
    origin = cam_to_world.translation
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], axis=-1)
    # Depth parameterization: point(z) = origin + z * dirs_world has camera
    # depth exactly z, because dirs_cam has unit z component.
    dirs_world = dirs_cam @ cam_to_world.rotation.T

    best_z = np.full((h, w), np.inf)
    best_idx = np.full((h, w), -1, dtype=np.int64)
    hits = []
    for si, s in enumerate(surfaces):
        center = s.center + s.velocity * t
        normal = np.cross(s.e1, s.e2)
        denom = dirs_world @ normal
        safe = np.abs(denom) > 1e-12
        z = np.where(safe, np.dot(center - origin, normal) / np.where(safe, denom, 1.0), np.inf)
        rel0 = origin - center
        a = rel0 @ s.e1 + z * (dirs_world @ s.e1)
        b = rel0 @ s.e2 + z * (dirs_world @ s.e2)
        inside = safe & (z > 1e-9) & (np.abs(a) <= s.half1) & (np.abs(b) <= s.half2)
        hits.append((a, b, inside))
        closer = inside & (z < best_z)
        best_z = np.where(closer, z, best_z)
        best_idx = np.where(closer, si, best_idx)

    depth_gt = np.where(best_idx >= 0, best_z, 0.0)
    hit_mask = best_idx >= 0
    if np.any(hit_mask):
        zhit = depth_gt[hit_mask]
        if zhit.min() < spec.d_min or zhit.max() > spec.d_max:
            raise SceneError(
                f"surface hits outside depth range [{spec.d_min}, {spec.d_max}]: "
                f"[{zhit.min():.3f}, {zhit.max():.3f}]"
            )

    feature = np.zeros((h, w, spec.channels))
    object_ids = np.full((h, w), -1, dtype=np.int64)
    for si, s in enumerate(surfaces):
        px = best_idx == si
        if not np.any(px):
            continue
        a, b, _ = hits[si]
        feature[px] = _surface_feature_values(spec, s, a[px], b[px])
        object_ids[px] = s.object_id

    return FrameBundle(feature=feature, depth_gt=depth_gt, K=K, pose=pose,
                       object_ids=object_ids)


def make_pair(spec: SceneSpec, K: CameraIntrinsics, ref_pose: RigidTransform,
              src_pose: RigidTransform, dt: float = 0.0):
    """Render a (reference, source) frame pair and their relative transform.

    The source frame is rendered at time dt, so moving objects are
    displaced between the two frames while M_ref2src describes only the
    camera motion - exactly the situation that breaks naive cross-frame
    matching.
    """
    ref = render(spec, K, ref_pose, t=0.0)
    src = render(spec, K, src_pose, t=dt)
    m_ref2src = src_pose.compose(ref_pose.inverse())
    return ref, src, m_ref2src
