"""Circle NMS, size-aware circle NMS, and an exact rotated-IoU oracle.

All suppressors share greedy semantics: boxes are visited in descending
score order (ties broken by index) and a box is dropped when it conflicts
with an already-kept box of the same class (any class when class-agnostic).
They differ only in the pairwise conflict test:

* circle NMS: BEV center distance below a fixed radius;
* size-aware circle NMS: per-axis center distances below thresholds built
  from both boxes' dimensions and orientations, so big boxes suppress over
  a wider footprint and thin boxes do not shadow their neighbors;
* the IoU oracle: exact rotated-rectangle IoU above a threshold - the
  expensive criterion the two cheap tests approximate, used to score them.

Functions are pure over immutable box lists; the greedy loop itself is
sequential by definition.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box3D:
    """Oriented BEV box.

    yaw measures the length (dx) axis from the BEV +y axis, the convention
    under which the per-axis suppression thresholds are the w-scaled sums
    of the boxes' axis projections: at yaw 0 the box extends dy across x
    and dx across y.
    """

    x: float
    y: float
    z: float
    dx: float  # length
    dy: float  # width
    dz: float  # height
    yaw: float
    vx: float = 0.0
    vy: float = 0.0
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError(f"box dims must be positive, got ({self.dx}, {self.dy}, {self.dz})")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class NmsConfig:
    scale_w: float = 0.5  # size-aware scale factor
    circle_radius: float = 2.0
    class_agnostic: bool = False

    def __post_init__(self):
        if self.scale_w <= 0 or self.circle_radius <= 0:
            raise ValueError("scale_w and circle_radius must be positive")


def _score_order(boxes) -> list:
    return sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))


def circle_nms(boxes, cfg: NmsConfig) -> list:
    """Greedy suppression by BEV center distance. Returns kept indices."""
    if not boxes:
        raise ValueError("boxes must be non-empty")
    xs = np.array([b.x for b in boxes])
    ys = np.array([b.y for b in boxes])
    cls = np.array([b.class_id for b in boxes])
    kept = []
    for i in _score_order(boxes):
        ka = np.array(kept, dtype=np.int64)
        if ka.size:
            dist = np.hypot(xs[ka] - xs[i], ys[ka] - ys[i])
            conflict = dist < cfg.circle_radius
            if not cfg.class_agnostic:
                conflict &= cls[ka] == cls[i]
            if np.any(conflict):
                continue
        kept.append(i)
    return sorted(kept)


def _axis_terms(boxes):
    """Per-box contributions to the size-aware thresholds.

    The orientation enters through |sin| and |cos|, i.e. folded into
    [0, pi/2], so a box and its half-turn rotation threshold identically.
    """
    sin = np.abs(np.sin([b.yaw for b in boxes]))
    cos = np.abs(np.cos([b.yaw for b in boxes]))
    dx = np.array([b.dx for b in boxes])
    dy = np.array([b.dy for b in boxes])
    tx = sin * dx + cos * dy
    ty = sin * dy + cos * dx
    return tx, ty


def size_aware_thresholds(a: Box3D, b: Box3D, w: float):
    """Per-axis suppression thresholds (x_thre, y_thre) for a box pair."""
    tx, ty = _axis_terms([a, b])
    return w * (tx[0] + tx[1]), w * (ty[0] + ty[1])


def size_aware_circle_nms(boxes, cfg: NmsConfig) -> list:
    """Greedy suppression by per-axis center distance under size-aware thresholds.

    A candidate is dropped against a kept box when |dx_center| < x_thre AND
    |dy_center| < y_thre, with distances measured on the global BEV axes.
    Returns kept indices.
    """
    if not boxes:
        raise ValueError("boxes must be non-empty")
    xs = np.array([b.x for b in boxes])
    ys = np.array([b.y for b in boxes])
    cls = np.array([b.class_id for b in boxes])
    tx, ty = _axis_terms(boxes)
    kept = []
    for i in _score_order(boxes):
        ka = np.array(kept, dtype=np.int64)
        if ka.size:
            x_thre = cfg.scale_w * (tx[ka] + tx[i])
            y_thre = cfg.scale_w * (ty[ka] + ty[i])
            conflict = (np.abs(xs[ka] - xs[i]) < x_thre) & (np.abs(ys[ka] - ys[i]) < y_thre)
            if not cfg.class_agnostic:
                conflict &= cls[ka] == cls[i]
            if np.any(conflict):
                continue
        kept.append(i)
    return sorted(kept)


def box_corners(b: Box3D) -> np.ndarray:
    """BEV corners (4, 2), counter-clockwise.

    The dx (length) axis points along (sin yaw, cos yaw): +y at yaw 0.
    """
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    length_axis = np.array([s, c])
    width_axis = np.array([c, -s])
    local = np.array([[-b.dx, -b.dy], [-b.dx, b.dy], [b.dx, b.dy], [b.dx, -b.dy]]) / 2.0
    return local[:, :1] * length_axis + local[:, 1:] * width_axis + np.array([b.x, b.y])


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_polygon(poly, edge_a, edge_b):
    """Sutherland-Hodgman step: clip poly to the left of edge a->b."""
    ex, ey = edge_b[0] - edge_a[0], edge_b[1] - edge_a[1]
    out = []
    n = len(poly)
    for i in range(n):
        cur = poly[i]
        prev = poly[i - 1]
        cur_in = ex * (cur[1] - edge_a[1]) - ey * (cur[0] - edge_a[0]) >= 0
        prev_in = ex * (prev[1] - edge_a[1]) - ey * (prev[0] - edge_a[0]) >= 0
        if cur_in != prev_in:
            dcur = ex * (cur[1] - edge_a[1]) - ey * (cur[0] - edge_a[0])
            dprev = ex * (prev[1] - edge_a[1]) - ey * (prev[0] - edge_a[0])
            t = dprev / (dprev - dcur)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
        if cur_in:
            out.append((cur[0], cur[1]))
    return out


def rotated_iou(a: Box3D, b: Box3D) -> float:
    """Exact BEV IoU of two oriented rectangles via convex polygon clipping."""
    # Circumradius gate: disjoint for sure when centers are far apart.
    reach = (math.hypot(a.dx, a.dy) + math.hypot(b.dx, b.dy)) / 2.0
    if math.hypot(a.x - b.x, a.y - b.y) > reach:
        return 0.0
    poly = [tuple(p) for p in box_corners(a)]
    clipper = box_corners(b)
    for i in range(4):
        if not poly:
            return 0.0
        poly = _clip_polygon(poly, clipper[i], clipper[(i + 1) % 4])
    inter = _polygon_area(np.asarray(poly)) if len(poly) >= 3 else 0.0
    union = a.dx * a.dy + b.dx * b.dy - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_nms_oracle(boxes, iou_thre: float, class_agnostic: bool = False) -> list:
    """Greedy rotated-IoU NMS, standard semantics. Returns kept indices."""
    if not boxes:
        raise ValueError("boxes must be non-empty")
    kept = []
    for i in _score_order(boxes):
        suppressed = False
        for j in kept:
            if not class_agnostic and boxes[j].class_id != boxes[i].class_id:
                continue
            if rotated_iou(boxes[j], boxes[i]) > iou_thre:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return sorted(kept)


CSV_FIELDS = ("x", "y", "z", "dx", "dy", "dz", "yaw", "vx", "vy", "score", "class")


def boxes_to_csv(boxes) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_FIELDS)
    for b in boxes:
        writer.writerow([repr(float(v)) for v in
                         (b.x, b.y, b.z, b.dx, b.dy, b.dz, b.yaw, b.vx, b.vy, b.score)]
                        + [int(b.class_id)])
    return buf.getvalue()


def boxes_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"box CSV missing columns: {sorted(missing)}")
    boxes = []
    for row in reader:
        boxes.append(Box3D(
            x=float(row["x"]), y=float(row["y"]), z=float(row["z"]),
            dx=float(row["dx"]), dy=float(row["dy"]), dz=float(row["dz"]),
            yaw=float(row["yaw"]), vx=float(row["vx"]), vy=float(row["vy"]),
            score=float(row["score"]), class_id=int(row["class"]),
        ))
    return boxes
