"""Single-frame depth stand-in and mono/stereo fusion.

The mono provider replaces a learned single-frame depth branch with a
seeded corruption of ground truth: a discretized Gaussian centered at
depth_gt * bias_frac * (1 + jitter). The weight map replaces a learned
gating net with a geometric consistency check: each reference pixel is
warped into the source frame at its hypothesized depth, and the source
frame's own mono depth at that location is compared against the depth the
warp predicts. Pixels whose stereo hypothesis is geometrically consistent
with the source view get weight near 1; occluded, out-of-view, moved, or
mismatched pixels get gated toward 0, so fusing can only add stereo
evidence where it survives the cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, bilinear_sample_many, warp_to_source
from .scene import FrameBundle
from .stereo import DepthDistribution, GaussianDepthField

DEFAULT_TAU_W = 0.05


@dataclass(frozen=True)
class MonoModel:
    """Corruption parameters of the single-frame depth stand-in."""

    bias_frac: float = 1.0
    jitter_frac: float = 0.15
    smoothing_bins: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.jitter_frac < 0:
            raise ValueError("jitter_frac must be >= 0")
        if self.smoothing_bins < 1:
            raise ValueError("smoothing_bins must be >= 1")


def mono_depth(bundle: FrameBundle, model: MonoModel, bin_depths: np.ndarray) -> DepthDistribution:
    """Discretized Gaussian around biased, jittered ground truth.

    The jitter field depends only on the model seed and image shape, so
    the same model applied to two aligned frames errs identically at
    identical pixel coordinates. Sky pixels get the uniform distribution.
    """
    bins = np.asarray(bin_depths, dtype=np.float64)
    h, w = bundle.depth_gt.shape
    rng = np.random.default_rng(model.seed)
    jitter = rng.standard_normal((h, w)) * model.jitter_frac
    center = bundle.depth_gt * model.bias_frac * (1.0 + jitter)

    width = np.median(np.diff(bins)) * model.smoothing_bins
    scores = np.exp(-0.5 * ((bins[:, None, None] - center) / width) ** 2)
    total = scores.sum(axis=0)
    n = bins.shape[0]
    probs = np.divide(scores, total, out=np.full_like(scores, 1.0 / n), where=total > 0)
    probs = np.where(bundle.mask[None], probs, 1.0 / n)
    return DepthDistribution(bin_depths=bins, probs=probs)


def expected_depth(d: DepthDistribution) -> np.ndarray:
    """Per-pixel expectation sum(bin_depth * P), shape (H, W)."""
    return np.einsum("n,nhw->hw", d.bin_depths, d.probs)


def collapse_depth(field: GaussianDepthField) -> np.ndarray:
    """Single per-pixel depth from a multi-split field: sum(mass * mu)."""
    return (field.mass * field.mu).sum(axis=0)


def weight_map(mono_ref: np.ndarray, mono_src: np.ndarray, field: GaussianDepthField,
               M, K_ref: CameraIntrinsics, K_src: CameraIntrinsics,
               tau_w: float = DEFAULT_TAU_W, parallax_px: float = 1.0,
               match_floor: float = 0.05) -> np.ndarray:
    """Per-pixel stereo gate in [0, 1] from cross-frame mono consistency.

    mono_ref / mono_src are per-pixel expected depth maps of the two
    frames (mono_ref fixes the expected shape; the residual itself is
    measured in the source frame). Each reference pixel is warped into the
    source view at its hypothesized depth; the base weight is
    exp(-|sampled source mono depth - warped depth| / (tau_w * depth)),
    and 0 wherever the warp is invalid. The residual is scaled relative to
    depth because depth error grows with distance.

    Two further factors gate the failure modes a depth residual cannot see:

    * parallax: 1 - exp(-s / parallax_px), where s is how many pixels the
      warp moves per unit log-depth. A residual of zero is meaningless
      when warps at every depth land on the same source pixel (static
      ego), so zero-parallax pixels gate to ~0.
    * match quality: q / (q + match_floor) with q = exp(field.match_gap).
      A pixel whose feature was never found in the source frame (it moved,
      or is occluded) can still be geometrically consistent with whatever
      surface its warp happens to hit; refusing to trust hypotheses that
      only ever scored noise closes that hole. Fields that never ran a
      refinement round carry no gap and skip this factor.
    """
    if mono_ref.shape != mono_src.shape:
        raise ValueError(f"mono map shape mismatch: {mono_ref.shape} vs {mono_src.shape}")
    if tau_w <= 0 or parallax_px <= 0 or match_floor <= 0:
        raise ValueError("tau_w, parallax_px, and match_floor must be positive")
    h, w = mono_ref.shape
    depth = collapse_depth(field)
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    warped = warp_to_source(K_ref, K_src, M, us, vs, depth)
    sampled, samp_ok = bilinear_sample_many(mono_src[..., None], warped.u, warped.v)
    valid = warped.valid & samp_ok
    residual = np.abs(sampled[..., 0] - warped.z)
    weights = np.exp(-residual / (tau_w * depth))

    step = 1.05  # 5% depth perturbation for the parallax finite difference
    nudged = warp_to_source(K_ref, K_src, M, us, vs, depth * step)
    shift = np.hypot(nudged.u - warped.u, nudged.v - warped.v) / np.log(step)
    weights = weights * (1.0 - np.exp(-shift / parallax_px))

    if field.match_gap is not None:
        gap = field.match_gap
        quality = np.exp(gap, where=np.isfinite(gap), out=np.zeros_like(gap))
        weights = weights * (quality / (quality + match_floor))
    return np.where(valid, weights, 0.0)


def fuse(mono: DepthDistribution, stereo: DepthDistribution, w: np.ndarray) -> DepthDistribution:
    """Accumulate mono and gated stereo: P_final proportional to P_mono + w * P_stereo.

    Pixels with w exactly 0 return the mono distribution bit-for-bit.
    Raises on mismatched bin grids.
    """
    if mono.bin_depths.shape != stereo.bin_depths.shape or np.any(
            mono.bin_depths != stereo.bin_depths):
        raise ValueError("mono and stereo distributions use different bin grids")
    combined = mono.probs + w[None] * stereo.probs
    total = combined.sum(axis=0)
    probs = combined / total
    probs = np.where(w[None] == 0, mono.probs, probs)
    return DepthDistribution(bin_depths=mono.bin_depths, probs=probs)
