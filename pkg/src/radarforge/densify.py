"""
Instance-level radar densification: depth-mode filtering, key-point selection,
Gaussian surface simulation and curvature-driven outline generation, followed by
back-projection of the simulated pixels into radar space.

All randomness flows through a caller-owned numpy Generator. Frame-level runs
derive one child seed per instance (ascending instance id) so the output does not
depend on how many workers are used.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .core import (
    CalibratedFrame,
    DegenerateInput,
    InstanceMask,
    ProjectedPoint,
    RadarForgeError,
    RadarPoint,
    SimDenConfig,
    ValidationError,
    ZeroSegment,
    frozen_array,
    seeded_rng,
)
from .density import bandwidth, density_rank
from .geometry import (
    associate_masks,
    back_project,
    extract_edge_points,
    inside_mask,
    pixel_index,
    project_array,
    project_points,
    segment_paths,
)

logger = logging.getLogger(__name__)

_COLLINEAR_TOL = 1e-12
_SEGMENT_TOL = 1e-12


# --- Types ---


@dataclass(frozen=True, eq=False)
class InstancePointSet:
    """Depth-filtered priors of one object: (u, v, d) rows plus their source attributes."""

    instance_id: int
    points2d: np.ndarray
    mode_depth: float
    source_attrs: np.ndarray
    source_indices: tuple[int, ...] = ()
    schema: tuple[str, ...] = ()

    def __post_init__(self):
        pts = frozen_array(self.points2d).reshape(-1, 3)
        if len(pts) == 0:
            raise ValidationError("points2d", f"instance {self.instance_id} has no prior point")
        floor_mode = math.floor(self.mode_depth)
        if np.any(np.floor(pts[:, 2]) != floor_mode):
            raise ValidationError("points2d", "every depth must share the floor of mode_depth")
        attrs = np.asarray(self.source_attrs, dtype=np.float64)
        attrs = frozen_array(attrs.reshape(len(pts), attrs.size // len(pts)))
        object.__setattr__(self, "points2d", pts)
        object.__setattr__(self, "source_attrs", attrs)
        object.__setattr__(self, "mode_depth", float(self.mode_depth))

    def __len__(self):
        return len(self.points2d)

    @property
    def uv(self) -> np.ndarray:
        return self.points2d[:, :2]


@dataclass(frozen=True, eq=False)
class KeyPointSet:
    points3d: np.ndarray
    center3d: np.ndarray
    center2d: np.ndarray
    covariance2d: np.ndarray
    indices: tuple[int, ...] = ()

    def __len__(self):
        return len(self.points3d)


@dataclass(frozen=True, eq=False)
class DensifiedInstance:
    instance_id: int
    surface2d: np.ndarray
    outline2d: np.ndarray
    merged3d: tuple[RadarPoint, ...]
    generation_meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.surface2d) + len(self.outline2d)


@dataclass(frozen=True)
class InstanceReport:
    instance_id: int
    status: str
    prior_count: int = 0
    key_count: int = 0
    surface: int = 0
    outline: int = 0
    sigma_eigenvalues: tuple[float, ...] = ()
    curvature: dict | None = None
    seed: int | None = None
    error: str | None = None

    @property
    def generated(self) -> int:
        return self.surface + self.outline

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "status": self.status,
            "prior_count": self.prior_count,
            "key_count": self.key_count,
            "generated": self.generated,
            "surface": self.surface,
            "outline": self.outline,
            "sigma_eigenvalues": list(self.sigma_eigenvalues),
            "curvature": self.curvature,
            "seed": self.seed,
            "error": self.error,
        }


@dataclass(frozen=True)
class FrameReport:
    input_points: int
    output_points: int
    instances: tuple[InstanceReport, ...] = ()

    @property
    def added(self) -> int:
        return self.output_points - self.input_points

    def by_status(self, status: str) -> list[int]:
        return [r.instance_id for r in self.instances if r.status == status]

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_points": self.input_points,
            "output_points": self.output_points,
            "added": self.added,
            "skipped": self.by_status("skipped"),
            "instances": [r.to_dict() for r in self.instances],
        }


# --- Filtering and key points ---


def depth_mode_filter(
    raw: Sequence[ProjectedPoint] | np.ndarray,
    instance_id: int = 1,
    frame: CalibratedFrame | None = None,
) -> InstancePointSet:
    """Keep the points whose floored depth is the most common one (ties: nearest)."""
    if len(raw) == 0:
        raise ValidationError("raw", "need at least one projected point")
    if isinstance(raw, np.ndarray):
        uvd = np.asarray(raw, dtype=np.float64).reshape(-1, 3)
        indices = np.arange(len(uvd))
    else:
        uvd = np.array([(p.u, p.v, p.d) for p in raw], dtype=np.float64)
        indices = np.array([p.source_index for p in raw], dtype=np.int64)
    floors = np.floor(uvd[:, 2]).astype(np.int64)
    classes, counts = np.unique(floors, return_counts=True)
    mode_floor = classes[int(np.argmax(counts))]
    keep = floors == mode_floor
    kept = uvd[keep]
    if frame is not None and frame.points and not isinstance(raw, np.ndarray):
        attrs = frame.attributes[indices[keep]]
        schema = frame.schema
    else:
        attrs = np.zeros((len(kept), 0))
        schema = ()
    mode_depth = float(kept[:, 2].mean())
    # the mean of depths in [k, k + 1) can round up to k + 1
    mode_depth = min(max(mode_depth, float(mode_floor)), math.nextafter(float(mode_floor + 1), -math.inf))
    return InstancePointSet(instance_id, kept, mode_depth, attrs, tuple(int(i) for i in indices[keep]), schema)


def select_key_points(
    inst: InstancePointSet,
    frame: CalibratedFrame,
    cfg: SimDenConfig,
    mask: InstanceMask | None = None,
) -> KeyPointSet:
    pts3d = back_project(inst.points2d, frame)
    W = len(pts3d)
    bw = bandwidth(cfg.bandwidth_rule, W, 3, cfg.user_bandwidth)
    order = density_rank(pts3d, bw, cfg.kernel, cfg.gamma, cfg.distance_metric)
    top = order[: min(cfg.max_key_points, W)]
    keys = pts3d[top]
    center3d = keys.mean(axis=0)
    uvd, _ = project_array(center3d[None, :], frame)
    reg = cfg.covariance_regularization * np.eye(2)
    if W >= 3:
        sigma = np.cov(inst.uv.T)
    elif mask is not None:
        u_min, v_min, u_max, v_max = mask.bbox
        sigma = np.diag([((u_max - u_min + 1) / 6.0) ** 2, ((v_max - v_min + 1) / 6.0) ** 2])
    else:
        sigma = np.eye(2)
    return KeyPointSet(
        frozen_array(keys),
        frozen_array(center3d),
        frozen_array(uvd[0, :2]),
        frozen_array(0.5 * (sigma + sigma.T) + reg),
        tuple(int(i) for i in top),
    )


# --- Surface simulation ---


def clamp_to_mask(uv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Move every point outside `mask` to the center of its nearest true pixel."""
    uv = np.array(uv, dtype=np.float64).reshape(-1, 2)
    outside = ~inside_mask(uv, mask)
    if not outside.any():
        return uv
    _, (near_rows, near_cols) = distance_transform_edt(~mask, return_indices=True)
    rows, cols = pixel_index(uv[outside, 0], uv[outside, 1], mask.shape)
    uv[outside, 0] = near_cols[rows, cols]
    uv[outside, 1] = near_rows[rows, cols]
    return uv


def gaussian_simulate(
    keys: KeyPointSet,
    n: int,
    rng: np.random.Generator,
    mask: InstanceMask | None = None,
    attempts: int = 10,
) -> np.ndarray:
    """n draws from N(center2d, covariance2d); off-mask draws are redrawn, then clamped."""
    if n < 0:
        raise ValidationError("n", "must be >= 0")
    if n == 0:
        return np.empty((0, 2))
    try:
        chol = np.linalg.cholesky(keys.covariance2d)
    except np.linalg.LinAlgError:
        raise ValidationError("covariance2d", "matrix is not positive definite") from None
    mu = keys.center2d
    samples = mu + rng.standard_normal((n, 2)) @ chol.T
    if mask is None:
        return samples
    for _ in range(attempts):
        bad = ~inside_mask(samples, mask.mask)
        if not bad.any():
            return samples
        samples[bad] = mu + rng.standard_normal((int(bad.sum()), 2)) @ chol.T
    return clamp_to_mask(samples, mask.mask)


# --- Curvature outline ---


def _turn_sine(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[float, float]:
    """(sin of the angle at b, outer chord |c - a|) via the cosine theorem."""
    la = float(np.hypot(*(b - a)))
    lc = float(np.hypot(*(c - b)))
    if la <= _SEGMENT_TOL or lc <= _SEGMENT_TOL:
        raise ZeroSegment("consecutive stencil points coincide")
    lo = float(np.hypot(*(c - a)))
    cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
    if abs(cross) / (la * lc) < _COLLINEAR_TOL:
        return 0.0, lo
    cos_t = (la * la + lc * lc - lo * lo) / (2.0 * la * lc)
    return math.sqrt(max(0.0, 1.0 - cos_t * cos_t)), lo


def segment_curvature(triple: Sequence[Sequence[float]], delta_s: float | None = None) -> float:
    """omega = sqrt(1 - cos^2(theta)) / delta_s at the middle point of the triple.

    With delta_s omitted, half the outer chord is used, which makes omega the
    reciprocal circumradius of the three points.
    """
    a, b, c = (np.asarray(p, dtype=np.float64) for p in triple)
    sine, outer = _turn_sine(a, b, c)
    ds = 0.5 * outer if delta_s is None else float(delta_s)
    if ds <= _SEGMENT_TOL:
        raise ZeroSegment(f"arc length {ds} is not positive")
    return sine / ds


def path_curvature(referring: np.ndarray) -> float:
    """Sum of turn sines over the interior vertices of a segment path."""
    pts = np.asarray(referring, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise ValidationError("referring", "need at least 3 points")
    return float(sum(_turn_sine(pts[i - 1], pts[i], pts[i + 1])[0] for i in range(1, len(pts) - 1)))


def interpolate_outline(p_r, p_prev, omega: float) -> np.ndarray:
    """(p_r + omega * p_prev) / (1 + omega), a point on [p_prev, p_r]."""
    if omega < 0:
        raise ValidationError("omega", "curvature must be >= 0")
    return (np.asarray(p_r, dtype=np.float64) + omega * np.asarray(p_prev, dtype=np.float64)) / (1.0 + omega)


def _outline_points(prior_uv: np.ndarray, surface: np.ndarray, budget: int, cfg: SimDenConfig) -> tuple[np.ndarray, list[float], int]:
    edge = extract_edge_points(np.vstack([prior_uv, surface]), cfg.edge_point_count)
    per_segment = max(cfg.referring_point_count, math.ceil(budget / len(edge)))
    candidates, omegas = [], []
    for path in segment_paths(edge, per_segment):
        omega = path_curvature(path)
        omegas.append(omega)
        candidates.append(interpolate_outline(path[1:-1], path[0], omega))
    pool = np.vstack(candidates)
    picks = (np.arange(budget) * len(pool)) // max(budget, 1)
    return pool[picks], omegas, per_segment


# --- Pipeline ---


def _nearest_rows(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Index of the closest reference row for each query row; ties go to the lowest index."""
    if not len(query):
        return np.zeros(0, dtype=np.int64)
    tree = cKDTree(reference, copy_data=True)
    dist, _ = tree.query(query)
    hits = tree.query_ball_point(query, dist * (1 + 1e-12) + 1e-12)
    return np.array([min(h) for h in hits], dtype=np.int64)


def densify_instance(
    inst: InstancePointSet,
    mask: InstanceMask,
    frame: CalibratedFrame,
    cfg: SimDenConfig,
    rng: np.random.Generator,
    seed: int | None = None,
) -> DensifiedInstance:
    """Simulate cfg.points_per_instance radar points for one object."""
    if mask.shape != (frame.image_height, frame.image_width):
        raise ValidationError("mask", f"raster {mask.shape} does not match the frame image")
    surface_n, outline_n = cfg.split_budget()
    keys = select_key_points(inst, frame, cfg, mask)
    surface = gaussian_simulate(keys, surface_n, rng, mask, cfg.mask_resample_attempts)
    degenerate = False
    omegas: list[float] = []
    per_segment = 0
    if outline_n == 0:
        outline = np.empty((0, 2))
    else:
        try:
            outline, omegas, per_segment = _outline_points(inst.uv, surface, outline_n, cfg)
            outline = clamp_to_mask(outline, mask.mask)
        except DegenerateInput as exc:
            logger.info("instance %d: %s; surface-only fallback", inst.instance_id, exc)
            degenerate = True
            extra = gaussian_simulate(keys, outline_n, rng, mask, cfg.mask_resample_attempts)
            surface = np.vstack([surface, extra])
            outline = np.empty((0, 2))

    uv = np.vstack([surface, outline])
    uvd = np.column_stack([uv, np.full(len(uv), inst.mode_depth)])
    xyz = back_project(uvd, frame)
    nearest = _nearest_rows(uv, inst.uv)
    merged = tuple(
        RadarPoint(x, y, z, tuple(zip(inst.schema, inst.source_attrs[j])))
        for (x, y, z), j in zip(xyz.tolist(), nearest.tolist())
    )
    meta = {
        "seed": seed,
        "config": cfg.to_dict(),
        "degenerate": degenerate,
        "prior_count": len(inst),
        "key_count": len(keys),
        "sigma_eigenvalues": [float(v) for v in np.linalg.eigvalsh(keys.covariance2d)],
        "referring_per_segment": per_segment,
        "curvature": _curvature_summary(omegas),
    }
    logger.debug("instance %d: %d surface, %d outline", inst.instance_id, len(surface), len(outline))
    return DensifiedInstance(inst.instance_id, frozen_array(surface), frozen_array(outline), merged, meta)


def _curvature_summary(omegas: Sequence[float]) -> dict | None:
    if not omegas:
        return None
    arr = np.asarray(omegas)
    return {"segments": len(arr), "min": float(arr.min()), "mean": float(arr.mean()), "max": float(arr.max())}


def _process(frame, mask, points, cfg, seed) -> tuple[InstanceReport, tuple[RadarPoint, ...]]:
    iid = mask.instance_id
    if not points:
        logger.info("instance %d: no associated radar point, skipped", iid)
        return InstanceReport(iid, "skipped", seed=seed), ()
    try:
        inst = depth_mode_filter(points, iid, frame)
        result = densify_instance(inst, mask, frame, cfg, seeded_rng(seed), seed=seed)
    except RadarForgeError as exc:
        logger.warning("instance %d failed: %s", iid, exc)
        return InstanceReport(iid, "failed", prior_count=len(points), seed=seed, error=str(exc)), ()
    meta = result.generation_meta
    report = InstanceReport(
        iid,
        "degenerate" if meta["degenerate"] else "densified",
        prior_count=meta["prior_count"],
        key_count=meta["key_count"],
        surface=len(result.surface2d),
        outline=len(result.outline2d),
        sigma_eigenvalues=tuple(meta["sigma_eigenvalues"]),
        curvature=meta["curvature"],
        seed=seed,
    )
    logger.info("instance %d: %d priors -> %d points", iid, report.prior_count, report.generated)
    return report, result.merged3d


def densify_frame(
    frame: CalibratedFrame,
    masks: Sequence[InstanceMask],
    cfg: SimDenConfig | None = None,
    rng: np.random.Generator | None = None,
    jobs: int = 1,
) -> tuple[CalibratedFrame, FrameReport]:
    """Densify every masked instance; original points are kept and new points appended by instance id."""
    cfg = cfg or SimDenConfig()
    if jobs < 1:
        raise ValidationError("jobs", "must be >= 1")
    if not masks:
        return frame, FrameReport(len(frame.points), len(frame.points))
    rng = rng if rng is not None else seeded_rng(cfg.rng_seed)
    ordered = sorted(masks, key=lambda m: m.instance_id)
    ids = [m.instance_id for m in ordered]
    if len(set(ids)) != len(ids):
        raise ValidationError("instance_id", "instance ids must be unique")
    assoc = associate_masks(project_points(frame), ordered, (frame.image_height, frame.image_width))
    seeds = [int(rng.integers(0, 2**63)) for _ in ordered]
    tasks = [(frame, m, assoc[m.instance_id], cfg, s) for m, s in zip(ordered, seeds)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda t: _process(*t), tasks))
    else:
        results = [_process(*t) for t in tasks]
    new_points = [p for _, pts in results for p in pts]
    out = frame.with_points(frame.points + tuple(new_points))
    report = FrameReport(len(frame.points), len(out.points), tuple(r for r, _ in results))
    logger.info("frame: %d -> %d points over %d instances", report.input_points, report.output_points, len(ordered))
    return out, report
