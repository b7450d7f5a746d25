"""
Projection between radar space and the image plane, mask association,
distance matrices, and the hull/arc constructions used for outline simulation.

Homogeneous convention: the extrinsic D_E (4x4) maps [x, y, z, 1] to the camera
frame; its first three rows feed the 3x3 intrinsic D_I, giving (u*w, v*w, w).
The stored depth d is w, which equals the camera z whenever D_I has the usual
(0, 0, 1) bottom row.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core import (
    CalibratedFrame,
    DegenerateInput,
    DimensionMismatch,
    InstanceMask,
    ProjectedPoint,
    SingularExtrinsic,
    SingularIntrinsic,
    ValidationError,
    frozen_array,
)

_COLLINEAR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Polyline2D:
    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        verts = frozen_array(self.vertices).reshape(-1, 2)
        if len(verts) < 2:
            raise ValidationError("vertices", "a polyline needs at least 2 vertices")
        nxt = np.roll(verts, -1, axis=0) if self.closed else verts[1:]
        cur = verts if self.closed else verts[:-1]
        if np.any(np.hypot(*(nxt - cur).T) <= 1e-9):
            raise ValidationError("vertices", "consecutive vertices must be distinct")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    def segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(start, end) vertex pairs, including the closing pair for closed polylines."""
        n = len(self.vertices)
        stop = n if self.closed else n - 1
        return [(self.vertices[i], self.vertices[(i + 1) % n]) for i in range(stop)]


# --- Projection ---


def _check_intrinsic(frame: CalibratedFrame) -> None:
    if abs(np.linalg.det(frame.intrinsic)) <= 1e-12:
        raise SingularIntrinsic("intrinsic", "matrix is not invertible")


def project_array(xyz: np.ndarray, frame: CalibratedFrame) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) points; returns (N, 3) (u, v, d) and the keep mask."""
    _check_intrinsic(frame)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    homo = np.hstack([xyz, np.ones((len(xyz), 1))])
    cam = (homo @ frame.extrinsic.T)[:, :3]
    uvw = cam @ frame.intrinsic.T
    d = uvw[:, 2]
    in_front = d > 0
    safe = np.where(in_front, d, 1.0)
    u = uvw[:, 0] / safe
    v = uvw[:, 1] / safe
    keep = in_front & (u >= 0) & (u < frame.image_width) & (v >= 0) & (v < frame.image_height)
    return np.column_stack([u, v, d]), keep


def project_points(frame: CalibratedFrame) -> list[ProjectedPoint]:
    uvd, keep = project_array(frame.xyz, frame)
    return [ProjectedPoint(float(u), float(v), float(d), int(i)) for i, (u, v, d) in enumerate(uvd) if keep[i]]


def back_project(points: Iterable[Sequence[float]] | np.ndarray, frame: CalibratedFrame) -> np.ndarray:
    """Map (u, v, d) rows back to radar (x, y, z) with D_E^-1 D_I^-1."""
    _check_intrinsic(frame)
    uvd = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any(uvd[:, 2] <= 0):
        raise ValidationError("d", "depth must be > 0 for back-projection")
    if abs(np.linalg.det(frame.extrinsic[:3, :3])) <= 1e-12:
        raise SingularExtrinsic("extrinsic", "rotation block is not invertible")
    scaled = np.column_stack([uvd[:, 0] * uvd[:, 2], uvd[:, 1] * uvd[:, 2], uvd[:, 2]])
    cam = np.linalg.solve(frame.intrinsic, scaled.T).T
    homo = np.hstack([cam, np.ones((len(cam), 1))])
    return np.linalg.solve(frame.extrinsic, homo.T).T[:, :3]


# --- Mask association ---


def pixel_index(u: np.ndarray, v: np.ndarray, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest pixel (row, col), rounding half up and clamped to the raster."""
    height, width = shape
    cols = np.clip(np.floor(np.asarray(u) + 0.5).astype(np.int64), 0, width - 1)
    rows = np.clip(np.floor(np.asarray(v) + 0.5).astype(np.int64), 0, height - 1)
    return rows, cols


def inside_mask(uv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """True where the half-up rounded pixel lies on the raster and is set.

    Only u in [-0.5, W - 0.5) and v in [-0.5, H - 0.5) reach the raster; a point with u in
    [W - 0.5, W) rounds to column W and is outside every mask, even though it is in the image.
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    height, width = mask.shape
    in_raster = (uv[:, 0] >= -0.5) & (uv[:, 0] < width - 0.5) & (uv[:, 1] >= -0.5) & (uv[:, 1] < height - 0.5)
    rows, cols = pixel_index(uv[:, 0], uv[:, 1], mask.shape)
    return in_raster & mask[rows, cols]


def associate_masks(
    projected: Sequence[ProjectedPoint],
    masks: Sequence[InstanceMask],
    image_shape: tuple[int, int] | None = None,
) -> dict[int, list[ProjectedPoint]]:
    """Per-instance point sets; a point inside several masks joins every one of them."""
    if not masks:
        return {}
    shape = image_shape or masks[0].shape
    for m in masks:
        if m.shape != tuple(shape):
            raise DimensionMismatch("mask", f"instance {m.instance_id} raster {m.shape} != image {tuple(shape)}")
    if not projected:
        return {m.instance_id: [] for m in sorted(masks, key=lambda m: m.instance_id)}
    uv = np.array([(p.u, p.v) for p in projected])
    out: dict[int, list[ProjectedPoint]] = {}
    for m in sorted(masks, key=lambda m: m.instance_id):
        hits = inside_mask(uv, m.mask)
        out[m.instance_id] = [p for p, hit in zip(projected, hits) if hit]
    return out


# --- Distances ---


def manhattan_matrix(points: np.ndarray) -> np.ndarray:
    """Zero-diagonal symmetric matrix of L1 distances."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 1 or not np.all(np.isfinite(pts)):
        raise ValidationError("points", "need at least one finite point")
    return np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=-1)


# --- Edge points ---


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def _is_collinear(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    scale = float(np.abs(centered).max()) if len(pts) else 0.0
    if scale == 0.0:
        return True
    sv = np.linalg.svd(centered / scale, compute_uv=False)
    return len(sv) < 2 or sv[1] <= 1e-10 * sv[0]


def convex_hull(points2d: np.ndarray) -> np.ndarray:
    """Strictly convex hull vertices, counter-clockwise, starting at the lexicographic minimum."""
    pts = np.unique(np.asarray(points2d, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) < 3 or _is_collinear(pts):
        raise DegenerateInput("points are collinear or fewer than 3 distinct")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInput(f"convex hull failed: {exc}") from exc
    verts = pts[hull.vertices]
    # qhull lists 2-D hulls counter-clockwise; enforce it anyway
    area = 0.5 * np.sum(verts[:, 0] * np.roll(verts[:, 1], -1) - np.roll(verts[:, 0], -1) * verts[:, 1])
    if area < 0:
        verts = verts[::-1]
    start = np.lexsort((verts[:, 1], verts[:, 0]))[0]
    return np.roll(verts, -start, axis=0)


def extract_edge_points(points2d: np.ndarray, count: int) -> Polyline2D:
    """Resample the hull boundary at `count` arc-length-uniform positions."""
    if count < 3:
        raise ValidationError("count", "edge point count must be >= 3")
    hull = convex_hull(points2d)
    closed = np.vstack([hull, hull[:1]])
    seg_len = np.hypot(*np.diff(closed, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    perimeter = cum[-1]
    targets = np.arange(count) * (perimeter / count)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg_len) - 1)
    t = (targets - cum[idx]) / seg_len[idx]
    samples = closed[idx] + t[:, None] * (closed[idx + 1] - closed[idx])
    return Polyline2D(samples, closed=True)


# --- Referring points ---


def _circumcircle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, float]:
    d = 2.0 * _cross(a, b, c)
    a2, b2, c2 = a @ a, b @ b, c @ c
    ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d
    uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d
    center = np.array([ux, uy])
    return center, float(np.hypot(*(a - center)))


def referring_points_between(
    p_start: Sequence[float],
    p_end: Sequence[float],
    count: int,
    control: Sequence[float] | None = None,
) -> np.ndarray:
    """`count` interior points, equally spaced by arc length, on the arc start-control-end.

    Falls back to the straight chord when `control` is missing or collinear with the endpoints.
    """
    if count < 1:
        raise ValidationError("R", "referring point count must be >= 1")
    a = np.asarray(p_start, dtype=np.float64)
    b = np.asarray(p_end, dtype=np.float64)
    fractions = np.arange(1, count + 1) / (count + 1)
    chord = lambda: a + fractions[:, None] * (b - a)  # noqa: E731
    if control is None:
        return chord()
    q = np.asarray(control, dtype=np.float64)
    span = max(np.hypot(*(b - a)), np.hypot(*(q - a)), np.hypot(*(q - b)))
    if span == 0.0 or abs(_cross(a, q, b)) <= _COLLINEAR_TOL * span * span:
        return chord()
    center, radius = _circumcircle(a, q, b)
    theta_a = math.atan2(a[1] - center[1], a[0] - center[0])
    theta_q = math.atan2(q[1] - center[1], q[0] - center[0])
    theta_b = math.atan2(b[1] - center[1], b[0] - center[0])
    ccw_to_b = (theta_b - theta_a) % (2 * math.pi)
    ccw_to_q = (theta_q - theta_a) % (2 * math.pi)
    sweep = ccw_to_b if ccw_to_q <= ccw_to_b else ccw_to_b - 2 * math.pi
    angles = theta_a + fractions * sweep
    return center + radius * np.column_stack([np.cos(angles), np.sin(angles)])


def arc_control(p_start: np.ndarray, p_end: np.ndarray, centroid: np.ndarray) -> np.ndarray | None:
    """Control point on the far side of the chord from the centroid, at the endpoints' mean radius."""
    mid = 0.5 * (p_start + p_end)
    outward = mid - centroid
    norm = float(np.hypot(*outward))
    if norm <= 1e-12:
        return None
    radius = 0.5 * (np.hypot(*(p_start - centroid)) + np.hypot(*(p_end - centroid)))
    return centroid + outward * (radius / norm)


def insert_referring_points(edge: Polyline2D, R: int) -> list[np.ndarray]:
    """R interior boundary-path points for every consecutive edge pair of a closed polyline."""
    if not edge.closed:
        raise ValidationError("edge", "referring points need a closed polyline")
    if R < 1:
        raise ValidationError("R", "referring point count must be >= 1")
    centroid = edge.vertices.mean(axis=0)
    return [
        referring_points_between(start, end, R, arc_control(start, end, centroid))
        for start, end in edge.segments()
    ]


def segment_paths(edge: Polyline2D, R: int) -> list[np.ndarray]:
    """Per segment: start, the R referring points, end, as an (R + 2, 2) array."""
    inner = insert_referring_points(edge, R)
    return [np.vstack([start, pts, end]) for (start, end), pts in zip(edge.segments(), inner)]


def associations_to_arrays(assoc: Mapping[int, Sequence[ProjectedPoint]]) -> dict[int, np.ndarray]:
    """(u, v, d, source_index) rows per instance."""
    return {
        iid: np.array([(p.u, p.v, p.d, p.source_index) for p in pts], dtype=np.float64).reshape(-1, 4)
        for iid, pts in assoc.items()
    }
