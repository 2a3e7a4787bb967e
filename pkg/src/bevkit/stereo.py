"""Dynamic temporal stereo with Gaussian depth hypotheses.

Each pixel carries one depth hypothesis (mu, sigma) per range split, where
mu is the depth center in meters and sigma the squared search range in
square meters. Refinement alternates, per split:

    sample candidates around mu  ->  warp + score against the source frame
    ->  mu := sum_i D_i * P_i    ->  sigma := sigma / (2 * P_mu)

Candidate confidences come from a temperature softmax over channel-averaged
feature inner products; the weight-sum update makes mu the expectation of
the sampled candidates, which leaves mu untouched when no candidate stands
out (zero parallax, moving objects) and pulls it toward the best match
otherwise. The refined field renders to a discrete per-pixel depth
distribution by evaluating exp(-((D - mu)^2) / (2 * sigma)) per bin with
the hypothesis of the bin's containing split.

Per-pixel computations are independent and side-effect free; any pixel
partitioning across workers yields identical results.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .geometry import bilinear_sample_many, warp_to_source
from .scene import FrameBundle


@dataclass(frozen=True)
class StereoConfig:
    """Hyperparameters of the candidate search and refinement loop."""

    k_candidates: int = 9
    n_splits: int = 3
    n_iters: int = 3
    spread: float = 2.0  # candidate half-span in units of sqrt(sigma)
    temperature: float = 0.1
    sigma_min: float = 0.25  # m^2
    sigma_max: float = 400.0  # m^2
    d_min: float = 2.0
    d_max: float = 58.0
    n_bins: int = 112
    min_spacing: float = 0.05  # minimum candidate separation, meters
    evidence_floor: float = 0.05  # residual split weight when nothing matches

    def __post_init__(self):
        if self.k_candidates < 2:
            raise ValueError("k_candidates must be >= 2")
        if self.n_splits < 1 or self.n_iters < 0:
            raise ValueError("n_splits must be >= 1 and n_iters >= 0")
        if not (self.spread > 0 and self.temperature > 0):
            raise ValueError("spread and temperature must be positive")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if not (0 < self.d_min < self.d_max):
            raise ValueError("need 0 < d_min < d_max")
        split_width = (self.d_max - self.d_min) / self.n_splits
        if split_width <= (self.k_candidates - 1) * self.min_spacing:
            raise ValueError("splits too narrow for k_candidates at min_spacing")

    @property
    def split_edges(self) -> np.ndarray:
        """n_splits+1 equal-width sub-range edges over [d_min, d_max]."""
        return np.linspace(self.d_min, self.d_max, self.n_splits + 1)

    @property
    def bin_depths(self) -> np.ndarray:
        """Bin-center depths of the discrete output distribution."""
        width = (self.d_max - self.d_min) / self.n_bins
        return self.d_min + (np.arange(self.n_bins) + 0.5) * width


@dataclass
class DepthDistribution:
    """Discrete per-pixel depth distribution on a shared bin grid.

    bin_depths: (N,) strictly increasing meters.
    probs: (N, H, W), non-negative, summing to 1 per pixel.
    """

    bin_depths: np.ndarray
    probs: np.ndarray

    def validate(self, tol: float = 1e-6):
        if self.probs.shape[0] != self.bin_depths.shape[0]:
            raise ValueError("probs leading axis must match bin_depths")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be non-negative")
        sums = self.probs.sum(axis=0)
        if np.abs(sums - 1.0).max() > tol:
            raise ValueError("per-pixel probabilities must sum to 1")


@dataclass
class GaussianDepthField:
    """Per-pixel, per-split depth hypotheses.

    mu, sigma, mass: (S, H, W). mass is each split's share of the pixel's
    probability (non-negative, summing to 1 over splits); it seeds from the
    single-frame distribution and is sharpened by match confidence during
    iteration, so splits that never find support stop contributing to the
    rendered distribution.

    match_gap (H, W) records, after refinement, how far the best candidate
    similarity fell short of the pixel's self-similarity (<= 0; -inf when
    nothing was matchable; None before any refinement). Downstream gating
    uses it to tell "found the surface" from "scored noise".
    """

    mu: np.ndarray
    sigma: np.ndarray
    mass: np.ndarray
    split_edges: np.ndarray
    match_gap: np.ndarray = None

    @property
    def n_splits(self) -> int:
        return self.mu.shape[0]


@dataclass
class CandidateSet:
    """Sampled depth candidates with confidences, (S, K, H, W) each.

    Depths are non-decreasing along K (strictly increasing except for
    degenerate hypotheses pinned at a split edge). Confidences are a
    softmax over valid candidates; pixels where every warp failed fall
    back to the uniform 1/K. peak_score (S, H, W) keeps the best raw
    similarity per split (-inf when no candidate was valid): the softmax
    normalizes it away, but it is what tells a split with a real match
    apart from one scoring noise.
    """

    depths: np.ndarray
    probs: np.ndarray
    peak_score: np.ndarray
    self_score: np.ndarray  # (H, W): similarity a perfect correspondence would get


def init_hypothesis(mono: DepthDistribution, cfg: StereoConfig) -> GaussianDepthField:
    """Seed (mu, sigma, mass) per split from a single-frame depth distribution.

    mu is the expectation of the distribution restricted to the split's
    sub-range (sub-range midpoint when the split holds no mass), sigma a
    quarter of the sub-range width squared, and mass the split's share of
    the distribution.
    """
    edges = cfg.split_edges
    _, h, w = mono.probs.shape
    s = cfg.n_splits
    mu = np.empty((s, h, w))
    sigma = np.empty((s, h, w))
    mass = np.empty((s, h, w))
    for i in range(s):
        lo, hi = edges[i], edges[i + 1]
        in_split = (mono.bin_depths >= lo) & (mono.bin_depths < hi)
        if i == s - 1:
            in_split |= mono.bin_depths == hi
        p = mono.probs[in_split]
        d = mono.bin_depths[in_split]
        m = p.sum(axis=0)
        if d.size:
            fallback = d.mean()
            expect = np.divide(
                (p * d[:, None, None]).sum(axis=0), m,
                out=np.full((h, w), fallback), where=m > 1e-12,
            )
        else:
            expect = np.full((h, w), (lo + hi) / 2)
        mu[i] = np.clip(expect, lo, hi)
        sigma[i] = np.clip(((hi - lo) / 4.0) ** 2, cfg.sigma_min, cfg.sigma_max)
        mass[i] = m
    total = mass.sum(axis=0)
    mass = np.divide(mass, total, out=np.full_like(mass, 1.0 / s), where=total > 1e-12)
    return GaussianDepthField(mu=mu, sigma=sigma, mass=mass, split_edges=edges.copy())


def sample_candidates(field: GaussianDepthField, cfg: StereoConfig) -> np.ndarray:
    """Evenly spaced candidate depths around mu, (S, K, H, W).

    The grid spans mu +/- spread * sqrt(sigma), shrunk symmetrically so it
    stays inside the split's sub-range. Symmetry about mu is deliberate:
    it makes the weight-sum update an exact fixed point when confidences
    are uniform. The half-span is widened (still symmetric, still inside
    the sub-range where possible) to keep candidates min_spacing apart.
    """
    k = cfg.k_candidates
    lo = field.split_edges[:-1][:, None, None]
    hi = field.split_edges[1:][:, None, None]
    room = np.minimum(field.mu - lo, hi - field.mu)
    half = np.minimum(cfg.spread * np.sqrt(field.sigma), room)
    half_min = np.minimum((k - 1) * cfg.min_spacing / 2.0, room)
    half = np.maximum(half, half_min)
    # (i - (K-1)/2) * step is exactly antisymmetric, so candidates mirror
    # about mu to the last bit.
    steps = (np.arange(k) - (k - 1) / 2.0)[None, :, None, None]
    return field.mu[:, None] + steps * (2.0 * half[:, None] / (k - 1))


def score_candidates(ref: FrameBundle, src: FrameBundle, M, depths: np.ndarray,
                     cfg: StereoConfig) -> CandidateSet:
    """Warp candidates into the source frame and score them.

    Similarity of candidate i is the feature inner product between the
    reference pixel and the bilinearly sampled warped source location,
    scaled by 1 / (C * temperature). Candidates whose warp is degenerate
    or lands outside the source image score -inf; the confidences are the
    softmax over the K candidates of each pixel and split, uniform when
    every candidate is invalid.
    """
    if ref.feature.shape != src.feature.shape:
        raise ValueError(
            f"frame shape mismatch: {ref.feature.shape} vs {src.feature.shape}")
    s, k, h, w = depths.shape
    c = ref.feature.shape[-1]
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    warped = warp_to_source(ref.K, src.K, M, us[None, None], vs[None, None], depths)
    feats, samp_ok = bilinear_sample_many(src.feature, warped.u, warped.v)
    valid = warped.valid & samp_ok

    sim = np.einsum("hwc,skhwc->skhw", ref.feature, feats) / (c * cfg.temperature)
    sim = np.where(valid, sim, -np.inf)

    peak = np.max(sim, axis=1, keepdims=True)
    any_valid = np.isfinite(peak)
    expd = np.exp(sim - np.where(any_valid, peak, 0.0), where=valid, out=np.zeros_like(sim))
    norm = expd.sum(axis=1, keepdims=True)
    probs = np.divide(expd, norm, out=np.full_like(expd, 1.0 / k), where=norm > 0)
    self_score = np.einsum("hwc,hwc->hw", ref.feature, ref.feature) / (c * cfg.temperature)
    return CandidateSet(depths=depths, probs=probs, peak_score=peak[:, 0],
                        self_score=self_score)


def update_mu(cs: CandidateSet, split_edges: np.ndarray) -> np.ndarray:
    """Weight-sum update: mu = sum_i D_i * P_i, clamped to each sub-range."""
    mu = (cs.depths * cs.probs).sum(axis=1)
    lo = split_edges[:-1][:, None, None]
    hi = split_edges[1:][:, None, None]
    return np.clip(mu, lo, hi)


def confidence_at_mu(cs: CandidateSet, mu: np.ndarray, cfg: StereoConfig) -> np.ndarray:
    """Piecewise-linear interpolation of candidate confidences at depth mu.

    The weight-sum mu rarely coincides with a candidate, so its confidence
    is read off the candidate grid by linear interpolation. Degenerate
    grids (all candidates equal) return the uniform 1/K.
    """
    k = cs.depths.shape[1]
    d0 = cs.depths[:, 0]
    step = cs.depths[:, 1] - cs.depths[:, 0]
    degenerate = step <= 0
    pos = np.divide(mu - d0, step, out=np.zeros_like(mu), where=~degenerate)
    pos = np.clip(pos, 0.0, k - 1.0)
    i0 = np.minimum(pos.astype(np.int64), k - 2)
    frac = pos - i0
    p0 = np.take_along_axis(cs.probs, i0[:, None], axis=1)[:, 0]
    p1 = np.take_along_axis(cs.probs, (i0 + 1)[:, None], axis=1)[:, 0]
    p_mu = p0 * (1 - frac) + p1 * frac
    return np.where(degenerate, 1.0 / k, p_mu)


def update_sigma(sigma_old, p_mu, cfg: StereoConfig):
    """Search-range update: sigma_new = sigma_old / (2 * P_mu), clamped.

    High confidence at mu halves the range and below-half confidence grows
    it; non-positive confidence means no information, so the range opens to
    sigma_max. Accepts scalars or arrays.
    """
    sigma_old = np.asarray(sigma_old, dtype=np.float64)
    p_mu = np.asarray(p_mu, dtype=np.float64)
    safe = np.where(p_mu > 0, p_mu, 1.0)
    out = np.where(
        p_mu > 0,
        np.clip(sigma_old / (2.0 * safe), cfg.sigma_min, cfg.sigma_max),
        cfg.sigma_max,
    )
    return float(out) if out.ndim == 0 else out


def _mass_update(mass: np.ndarray, cs: CandidateSet, cfg: StereoConfig) -> np.ndarray:
    """Reweight split masses by absolute match evidence.

    Each split's best similarity is measured against the pixel's
    self-similarity (the score of a perfect correspondence):
    factor = exp(peak - self) + evidence_floor. A split holding a true
    match keeps its mass while splits scoring only noise are starved; the
    floor keeps factors near-uniform wherever nothing matches well - zero
    parallax, vanished (moving) features, warps off the source image - so
    stereo-blind pixels retain their single-frame prior instead of
    flipping onto noise.
    """
    gap = np.minimum(cs.peak_score - cs.self_score[None], 0.0)
    factor = np.exp(gap, where=np.isfinite(gap), out=np.zeros_like(gap))
    factor += cfg.evidence_floor
    scaled = mass * factor
    total = scaled.sum(axis=0)
    return np.divide(scaled, total, out=mass.copy(), where=total > 1e-300)


def iterate_states(ref: FrameBundle, src: FrameBundle, M,
                   field: GaussianDepthField, cfg: StereoConfig) -> list:
    """Run cfg.n_iters refinement rounds, returning every intermediate field.

    Element 0 is the input field; element i the field after i rounds.
    """
    states = [field]
    for _ in range(cfg.n_iters):
        depths = sample_candidates(field, cfg)
        cs = score_candidates(ref, src, M, depths, cfg)
        mu = update_mu(cs, field.split_edges)
        p_mu = confidence_at_mu(cs, mu, cfg)
        sigma = update_sigma(field.sigma, p_mu, cfg)
        mass = _mass_update(field.mass, cs, cfg)
        gap = np.minimum(cs.peak_score.max(axis=0) - cs.self_score, 0.0)
        field = GaussianDepthField(mu=mu, sigma=sigma, mass=mass,
                                   split_edges=field.split_edges, match_gap=gap)
        states.append(field)
    return states


def iterate(ref: FrameBundle, src: FrameBundle, M, field: GaussianDepthField,
            cfg: StereoConfig) -> GaussianDepthField:
    """Refine the field for cfg.n_iters rounds (identity when n_iters=0)."""
    return iterate_states(ref, src, M, field, cfg)[-1]


def stereo_bin_scores(field: GaussianDepthField, bin_depths: np.ndarray) -> np.ndarray:
    """Unnormalized per-bin scores (N, H, W) of the rendered distribution.

    Each bin is scored by the split whose sub-range contains it:
    mass * exp(-((D - mu)^2) / (2 * sigma)).
    """
    edges = field.split_edges
    bins = np.asarray(bin_depths, dtype=np.float64)
    idx = np.clip(np.searchsorted(edges, bins, side="right") - 1, 0, field.n_splits - 1)
    mu = field.mu[idx]
    sigma = field.sigma[idx]
    mass = field.mass[idx]
    return mass * np.exp(-0.5 * (bins[:, None, None] - mu) ** 2 / sigma)


def render_stereo_depth(field: GaussianDepthField, cfg: StereoConfig) -> DepthDistribution:
    """Render the hypothesis field to a normalized discrete distribution."""
    bins = cfg.bin_depths
    scores = stereo_bin_scores(field, bins)
    total = scores.sum(axis=0)
    n = bins.shape[0]
    probs = np.divide(scores, total, out=np.full_like(scores, 1.0 / n), where=total > 0)
    return DepthDistribution(bin_depths=bins, probs=probs)


def save_field(field: GaussianDepthField, path) -> None:
    """Write a field as a text header plus flat little-endian float32 arrays.

    Header line: "H W n_splits\\n"; payload: mu, sigma, mass (each S*H*W
    float32, C order), then the S+1 split edges as float64.
    """
    s, h, w = field.mu.shape
    with open(path, "wb") as f:
        f.write(f"{h} {w} {s}\n".encode("ascii"))
        for arr in (field.mu, field.sigma, field.mass):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(field.split_edges, dtype="<f8").tobytes())


def load_field(path) -> GaussianDepthField:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        h, w, s = (int(x) for x in header)
        count = s * h * w
        arrs = [
            np.frombuffer(f.read(4 * count), dtype="<f4").astype(np.float64).reshape(s, h, w)
            for _ in range(3)
        ]
        edges = np.frombuffer(f.read(8 * (s + 1)), dtype="<f8").copy()
    return GaussianDepthField(mu=arrs[0], sigma=arrs[1], mass=arrs[2], split_edges=edges)
