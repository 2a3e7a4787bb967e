"""Pinhole camera model, rigid transforms, and cross-frame pixel warping.

All operations accept scalars or numpy arrays for pixel coordinates and
depths; array inputs broadcast together. Nothing in this module mutates its
inputs, so every function is safe to call from concurrent workers.

Conventions:
    - Pixel coordinates are continuous, with texel centers at integer
      positions; (0, 0) is the center of the top-left texel.
    - Depth is measured along the camera z axis in meters, not ray length.
    - ``RigidTransform`` maps points of one frame into another via
      ``R @ x + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Points closer than this to the camera plane are treated as degenerate.
EPS_Z = 1e-6


class InvalidDepthError(ValueError):
    """Raised for operations that require a strictly positive depth."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; skew is not supported."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}"
            )


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: ``x_out = rotation @ x_in + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= 1e-9:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation has determinant -1 (reflection)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_rpy(rpy_rad, translation) -> "RigidTransform":
        """Build from roll/pitch/yaw about x/y/z, applied in that order."""
        roll, pitch, yaw = (float(a) for a in rpy_rad)
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return RigidTransform(rz @ ry @ rx, np.asarray(translation, dtype=np.float64))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass
class PixelDepth:
    """A (possibly batched) pixel location with depth and validity flag.

    ``valid`` implies ``z > 0`` and the pixel lying inside the image.
    """

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    valid: np.ndarray


def unproject(K: CameraIntrinsics, u, v, d) -> np.ndarray:
    """Lift pixel(s) (u, v) at depth d to 3D camera-frame point(s).

    Returns an array of shape (..., 3). Raises InvalidDepthError if any
    depth is non-positive.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise InvalidDepthError("unproject requires depth > 0")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("pixel coordinates must be finite")
    x = (u - K.cx) / K.fx * d
    y = (v - K.cy) / K.fy * d
    return np.stack(np.broadcast_arrays(x, y, d), axis=-1)


def project(K: CameraIntrinsics, points: np.ndarray):
    """Project camera-frame point(s) of shape (..., 3) to (u, v, z).

    No validity checks are applied; callers inspect z themselves.
    """
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    u = K.fx * pts[..., 0] / z + K.cx
    v = K.fy * pts[..., 1] / z + K.cy
    return u, v, z


def warp_to_source(
    K_ref: CameraIntrinsics,
    K_src: CameraIntrinsics,
    M: RigidTransform,
    u,
    v,
    d,
) -> PixelDepth:
    """Reproject reference pixel(s) at hypothesized depth into the source view.

    Computes ``K_src * M * K_ref^-1 * (d * [u, v, 1])`` and divides through
    by the source depth. Degenerate results (source depth <= EPS_Z, pixel
    outside [0, width) x [0, height), or non-positive input depth) are
    flagged invalid rather than raised, so batch callers never abort on one
    bad pixel.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    u, v, d = np.broadcast_arrays(u, v, d)

    d_safe = np.where(d > 0, d, 1.0)
    x = (u - K_ref.cx) / K_ref.fx * d_safe
    y = (v - K_ref.cy) / K_ref.fy * d_safe
    pts = np.stack([x, y, d_safe], axis=-1)
    pts_src = pts @ M.rotation.T + M.translation

    z = pts_src[..., 2]
    z_safe = np.where(np.abs(z) > EPS_Z, z, 1.0)
    u_src = K_src.fx * pts_src[..., 0] / z_safe + K_src.cx
    v_src = K_src.fy * pts_src[..., 1] / z_safe + K_src.cy

    # Lower bound tolerates ~1e-13 float dust so a pixel warping onto the
    # image border (e.g. under the identity transform) stays valid.
    eps = 1e-9
    valid = (
        (d > 0)
        & (z > EPS_Z)
        & (u_src >= -eps)
        & (u_src < K_src.width)
        & (v_src >= -eps)
        & (v_src < K_src.height)
    )
    return PixelDepth(u=u_src, v=v_src, z=z, valid=valid)


def bilinear_sample(fm: np.ndarray, u: float, v: float):
    """Bilinearly interpolate one sample from an (H, W, C) feature map.

    Returns the C-vector, or None when (u, v) lies outside the sampleable
    domain [0, W-1] x [0, H-1].
    """
    feats, valid = bilinear_sample_many(fm, np.asarray([u]), np.asarray([v]))
    if not valid[0]:
        return None
    return feats[0]


def bilinear_sample_many(fm: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Vectorized bilinear sampling of an (H, W, C) map at arbitrary points.

    Returns ``(features, valid)`` where features has shape u.shape + (C,)
    and invalid locations hold zeros.
    """
    fm = np.asarray(fm)
    if fm.ndim != 3 or fm.size == 0:
        raise ValueError("feature map must be a non-empty (H, W, C) array")
    h, w, _ = fm.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    # Boundary tolerance: a warp that lands on the last texel center may
    # carry ~1e-13 of float dust; it must not flip validity.
    eps = 1e-9
    valid = (u >= -eps) & (u <= w - 1 + eps) & (v >= -eps) & (v <= h - 1 + eps)

    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0)[..., None]
    fv = (vc - v0)[..., None]

    out = (
        fm[v0, u0] * (1 - fu) * (1 - fv)
        + fm[v0, u1] * fu * (1 - fv)
        + fm[v1, u0] * (1 - fu) * fv
        + fm[v1, u1] * fu * fv
    )
    out = np.where(valid[..., None], out, 0.0)
    return out, valid
