"""Kernel density estimation and the grid / BEV pillar density diagnostics."""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    BandwidthRule,
    Kernel,
    PillarConfig,
    RadarPoint,
    ValidationError,
    _cell_count,
    frozen_array,
)

logger = logging.getLogger(__name__)

# Queries evaluated per block; bounds the (queries x samples x J) working set.
_QUERY_BLOCK = 4096


@dataclass(frozen=True)
class BandwidthVector:
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values or not all(v > 0 and math.isfinite(v) for v in values):
            raise ValidationError("bandwidth", "every component must be finite and > 0")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, item):
        return self.values[item]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def head(self, n: int) -> "BandwidthVector":
        return BandwidthVector(self.values[:n])


def bandwidth(rule: BandwidthRule | str, W: int, J: int, user_value: float | None = None) -> BandwidthVector:
    """Rule-of-thumb bandwidth, equal in every dimension."""
    rule = BandwidthRule(rule)
    if W < 1:
        raise ValidationError("W", "sample count must be >= 1")
    if J < 1:
        raise ValidationError("J", "dimension must be >= 1")
    if rule is BandwidthRule.SCOTT:
        b = float(W) ** (-1.0 / (J + 4))
    elif rule is BandwidthRule.SILVERMAN:
        b = (W * (J + 2) / 2.0) ** (-1.0 / (J + 4))
    else:
        if user_value is None:
            raise ValidationError("user_bandwidth", "user-defined rule needs a value")
        b = float(user_value)
    return BandwidthVector((b,) * J)


def kernel_value(kernel: Kernel | str, r, gamma: float = 1.0):
    """Kernel profile at scaled distance r >= 0; scalar in, scalar out."""
    kernel = Kernel(kernel)
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < 0):
        raise ValidationError("r", "scaled distance must be >= 0")
    out = _profile(kernel, r_arr, gamma)
    return float(out) if np.ndim(r) == 0 else out


def _profile(kernel: Kernel, r: np.ndarray, gamma: float, r_sq: np.ndarray | None = None) -> np.ndarray:
    if kernel is Kernel.GAUSS:
        sq = r * r if r_sq is None else r_sq
        return np.exp(-0.5 * gamma * sq)
    if kernel is Kernel.EPANECHNIKOV:
        return 0.75 * np.maximum(0.0, 1.0 - r * r)
    if kernel is Kernel.UNIFORM:
        return np.where(r <= 1.0, 0.5, 0.0)
    if kernel is Kernel.TRIANGLE:
        return np.maximum(0.0, 1.0 - r)
    return np.where(r <= 1.0, (math.pi / 4.0) * np.cos(0.5 * math.pi * np.minimum(r, 1.0)), 0.0)


def _as_points(points, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or len(arr) == 0:
        raise ValidationError(name, "expected a non-empty (n, J) array")
    return arr


def kde_values(
    queries,
    samples,
    bw: BandwidthVector,
    kernel: Kernel | str = Kernel.GAUSS,
    gamma: float = 1.0,
    metric: str = "euclidean",
    normalized: bool = False,
) -> np.ndarray:
    """K(q) = 1/(W * prod(B)) * sum_w kernel(|(q - p_w) / B|) for every query row.

    `metric="manhattan"` replaces the scaled Euclidean norm with the scaled L1 norm.
    `normalized=True` adds the (2*pi/gamma)^(-J/2) factor so a Gauss estimate integrates to 1.
    """
    kernel = Kernel(kernel)
    q = _as_points(queries, "queries")
    s = _as_points(samples, "samples")
    B = bw.as_array()
    J = s.shape[1]
    if q.shape[1] != J or len(B) != J:
        raise ValidationError("bandwidth", f"dimension mismatch: queries {q.shape[1]}, samples {J}, bandwidth {len(B)}")
    if metric not in ("euclidean", "manhattan"):
        raise ValidationError("distance_metric", f"unknown metric {metric!r}")
    if normalized and kernel is not Kernel.GAUSS:
        raise ValidationError("kernel", "the full normalizer is defined for the Gauss kernel only")
    prefactor = 1.0 / (len(s) * float(np.prod(B)))
    if normalized:
        prefactor *= (2.0 * math.pi / gamma) ** (-J / 2.0)
    out = np.empty(len(q))
    for start in range(0, len(q), _QUERY_BLOCK):
        block = q[start:start + _QUERY_BLOCK]
        scaled = (block[:, None, :] - s[None, :, :]) / B
        if metric == "manhattan":
            r = np.abs(scaled).sum(axis=-1)
            r_sq = None
        else:
            r_sq = (scaled * scaled).sum(axis=-1)
            r = np.sqrt(r_sq)
        out[start:start + len(block)] = _profile(kernel, r, gamma, r_sq).sum(axis=1) * prefactor
    return out


def kde_density(query, samples, bw: BandwidthVector, kernel=Kernel.GAUSS, gamma: float = 1.0, metric="euclidean") -> float:
    return float(kde_values(np.atleast_2d(np.asarray(query, dtype=np.float64)), samples, bw, kernel, gamma, metric)[0])


def density_rank(points, bw: BandwidthVector, kernel=Kernel.GAUSS, gamma: float = 1.0, metric="euclidean") -> np.ndarray:
    """Indices ordered by descending self-density; ties keep ascending index."""
    values = kde_values(points, points, bw, kernel, gamma, metric)
    return np.argsort(-values, kind="stable")


# --- Grids ---


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Dense 2-D surface; values[row][col], rows along the second axis (v or y)."""

    origin: tuple[float, float]
    cell_size: tuple[float, float]
    values: np.ndarray

    def __post_init__(self):
        values = frozen_array(self.values)
        if values.ndim != 2 or values.size == 0:
            raise ValidationError("values", "expected a non-empty 2-D array")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValidationError("values", "densities must be finite and >= 0")
        cell = tuple(float(c) for c in self.cell_size)
        if len(cell) != 2 or not all(c > 0 for c in cell):
            raise ValidationError("cell_size", "needs two positive components")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "cell_size", cell)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def argmax_center(self) -> tuple[float, float]:
        """Center of the maximal cell as (first axis coordinate, second axis coordinate)."""
        row, col = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return (
            self.origin[0] + (col + 0.5) * self.cell_size[0],
            self.origin[1] + (row + 0.5) * self.cell_size[1],
        )

    def value_at(self, a: float, b: float) -> float:
        col = min(max(int((a - self.origin[0]) // self.cell_size[0]), 0), self.shape[1] - 1)
        row = min(max(int((b - self.origin[1]) // self.cell_size[1]), 0), self.shape[0] - 1)
        return float(self.values[row, col])


def grid_density_surface(points2d, image_dims: tuple[int, int], grid_cell: int = 32) -> DensityGrid:
    """Count in-image (u, v) points per image cell; edge remainders fold into the last cell."""
    width, height = (int(v) for v in image_dims)
    if grid_cell < 1:
        raise ValidationError("grid_cell", "must be >= 1 pixel")
    if width < 1 or height < 1:
        raise ValidationError("image_dims", "must be positive")
    cols = max(1, width // grid_cell)
    rows = max(1, height // grid_cell)
    uv = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
    uv = uv[inside]
    c = np.minimum((uv[:, 0] // grid_cell).astype(np.int64), cols - 1)
    r = np.minimum((uv[:, 1] // grid_cell).astype(np.int64), rows - 1)
    counts = np.bincount(r * cols + c, minlength=rows * cols).reshape(rows, cols)
    return DensityGrid((0.0, 0.0), (float(grid_cell), float(grid_cell)), counts.astype(np.float64))


@dataclass(frozen=True)
class BevLattice:
    """Bird's-eye-view (x, y) lattice with nodes at cell centers."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    cell: float

    def __post_init__(self):
        for name in ("x_range", "y_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not hi > lo:
                raise ValidationError(name, "extent must be positive")
            object.__setattr__(self, name, (lo, hi))
        if not self.cell > 0:
            raise ValidationError("cell", "must be > 0")
        object.__setattr__(self, "cell", float(self.cell))

    @property
    def shape(self) -> tuple[int, int]:
        """(rows along y, columns along x)."""
        return (
            _cell_count(self.y_range[1] - self.y_range[0], self.cell),
            _cell_count(self.x_range[1] - self.x_range[0], self.cell),
        )

    def nodes(self) -> np.ndarray:
        rows, cols = self.shape
        xs = self.x_range[0] + (np.arange(cols) + 0.5) * self.cell
        ys = self.y_range[0] + (np.arange(rows) + 0.5) * self.cell
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @classmethod
    def from_pillars(cls, config: PillarConfig, cell: float | None = None) -> "BevLattice":
        return cls(config.x_range, config.y_range, cell or config.pillar_size[0])


def kde_surface_3d(
    points3d,
    bw: BandwidthVector,
    kernel=Kernel.GAUSS,
    gamma: float = 1.0,
    lattice: BevLattice | None = None,
    metric: str = "euclidean",
) -> DensityGrid:
    """(x, y) marginal density on a BEV lattice; z is integrated out."""
    pts = _as_points(_xyz(points3d), "points3d")
    if lattice is None:
        raise ValidationError("lattice", "a BEV lattice is required")
    values = kde_values(lattice.nodes(), pts[:, :2], bw.head(2), kernel, gamma, metric)
    return DensityGrid((lattice.x_range[0], lattice.y_range[0]), (lattice.cell, lattice.cell), values.reshape(lattice.shape))


# --- Pillars ---


@dataclass(frozen=True, eq=False)
class PillarHistogram:
    """Point counts over (x index, y index) pillars."""

    config: PillarConfig
    counts: np.ndarray
    uncapped: np.ndarray
    evicted: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def nonempty(self) -> int:
        return int(np.count_nonzero(self.counts))

    def to_grid(self, capped: bool = True) -> DensityGrid:
        """Rows along y, columns along x."""
        data = self.counts if capped else self.uncapped
        cfg = self.config
        return DensityGrid((cfg.x_range[0], cfg.y_range[0]), cfg.pillar_size[:2], data.T.astype(np.float64))

    def count_at(self, x: float, y: float, capped: bool = True) -> int:
        ix, iy = _pillar_index(np.array([[x, y]]), self.config)
        data = self.counts if capped else self.uncapped
        return int(data[ix[0], iy[0]])


def _xyz(points) -> np.ndarray:
    if len(points) and isinstance(points[0], RadarPoint):
        return np.array([(p.x, p.y, p.z) for p in points], dtype=np.float64)
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _pillar_index(xy: np.ndarray, config: PillarConfig) -> tuple[np.ndarray, np.ndarray]:
    nx, ny = config.grid_shape
    ix = np.minimum(((xy[:, 0] - config.x_range[0]) // config.pillar_size[0]).astype(np.int64), nx - 1)
    iy = np.minimum(((xy[:, 1] - config.y_range[0]) // config.pillar_size[1]).astype(np.int64), ny - 1)
    return ix, iy


def in_range(points, config: PillarConfig) -> np.ndarray:
    xyz = _xyz(points)
    mask = np.ones(len(xyz), dtype=bool)
    for axis, (lo, hi) in enumerate((config.x_range, config.y_range, config.z_range)):
        mask &= (xyz[:, axis] >= lo) & (xyz[:, axis] <= hi)
    return mask


def pillarize(points: Sequence[RadarPoint] | np.ndarray, config: PillarConfig) -> PillarHistogram:
    """Bin in-range points into BEV pillars, capping points per pillar and the pillar count."""
    xyz = _xyz(points)
    keep = in_range(xyz, config)
    nx, ny = config.grid_shape
    ix, iy = _pillar_index(xyz[keep], config)
    uncapped = np.bincount(ix * ny + iy, minlength=nx * ny)
    capped = np.minimum(uncapped, config.max_points_per_pillar)
    occupied = np.flatnonzero(uncapped)
    evicted = 0
    if len(occupied) > config.max_pillars:
        order = np.lexsort((occupied, -uncapped[occupied]))
        dropped = occupied[order[config.max_pillars:]]
        capped[dropped] = 0
        evicted = len(dropped)
        logger.info("pillar cap %d reached; evicted %d pillars", config.max_pillars, evicted)
    return PillarHistogram(
        config,
        frozen_array(capped.reshape(nx, ny), dtype=np.int64),
        frozen_array(uncapped.reshape(nx, ny), dtype=np.int64),
        evicted,
    )
