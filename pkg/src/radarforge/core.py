import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

# --- Constants and Configuration ---

APP_NAME = "RadarForge"
APP_VERSION = "0.4.0"

DEFAULT_SCHEMA = ("x", "y", "z", "rcs", "v_r", "v_r_comp", "time")
SEED_LIMIT = 2**64

# --- Errors ---


class RadarForgeError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(RadarForgeError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SingularIntrinsic(ValidationError):
    pass


class SingularExtrinsic(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class IndivisibleShape(ValidationError):
    pass


class UnstableParameter(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class DegenerateInput(RadarForgeError):
    pass


class ZeroSegment(RadarForgeError):
    pass


class ParseError(RadarForgeError):
    """Malformed input file. `offset` is a byte offset, `path` a JSON location."""

    def __init__(self, message: str, offset: int | None = None, path: str | None = None):
        where = f" at byte {offset}" if offset is not None else f" at {path}" if path else ""
        super().__init__(f"{message}{where}")
        self.offset = offset
        self.path = path


# --- Utility Functions ---


def frozen_array(values: Any, dtype=np.float64) -> np.ndarray:
    """Copy `values` into a read-only array."""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream whose output is a pure function of `seed` on every platform."""
    _check_seed(seed)
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent child stream keyed by (seed, *keys)."""
    _check_seed(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def _check_seed(seed: int) -> None:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValidationError("rng_seed", f"must be an integer, got {seed!r}")
    if not 0 <= int(seed) < SEED_LIMIT:
        raise ValidationError("rng_seed", "must lie in [0, 2**64)")


def _require(ok: bool, name: str, message: str) -> None:
    if not ok:
        raise ValidationError(name, message)


def _check_count(value: Any, name: str, minimum: int) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(name, f"must be an integer, got {value!r}")
    _require(value >= minimum, name, f"must be >= {minimum}")


# --- Domain Types ---


@dataclass(frozen=True)
class RadarPoint:
    """One radar return: position in meters plus named attributes (rcs, v_r, ...)."""

    x: float
    y: float
    z: float
    attrs: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for name in ("x", "y", "z"):
            value = float(getattr(self, name))
            _require(math.isfinite(value), name, "coordinate must be finite")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "attrs", tuple((str(k), float(v)) for k, v in self.attrs))

    @property
    def schema(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.attrs)

    def attr(self, name: str) -> float:
        for key, value in self.attrs:
            if key == name:
                return value
        raise KeyError(name)


@dataclass(frozen=True)
class ProjectedPoint:
    u: float
    v: float
    d: float
    source_index: int


@dataclass(frozen=True, eq=False)
class CalibratedFrame:
    """Image size, D_I (3x3), D_E (4x4) and the radar points of one capture."""

    image_width: int
    image_height: int
    intrinsic: np.ndarray
    extrinsic: np.ndarray
    points: tuple[RadarPoint, ...] = ()

    def __post_init__(self):
        _require(int(self.image_width) > 0, "image_width", "must be > 0")
        _require(int(self.image_height) > 0, "image_height", "must be > 0")
        intrinsic = frozen_array(self.intrinsic)
        extrinsic = frozen_array(self.extrinsic)
        _require(intrinsic.shape == (3, 3), "intrinsic", f"expected 3x3, got {intrinsic.shape}")
        _require(extrinsic.shape == (4, 4), "extrinsic", f"expected 4x4, got {extrinsic.shape}")
        _require(bool(np.all(np.isfinite(intrinsic))), "intrinsic", "entries must be finite")
        _require(bool(np.all(np.isfinite(extrinsic))), "extrinsic", "entries must be finite")
        if abs(np.linalg.det(intrinsic)) <= 1e-12:
            raise SingularIntrinsic("intrinsic", "matrix is not invertible")
        _require(
            bool(np.array_equal(extrinsic[3], [0.0, 0.0, 0.0, 1.0])),
            "extrinsic",
            "bottom row must be exactly (0, 0, 0, 1)",
        )
        points = tuple(self.points)
        if points:
            schema = points[0].schema
            for i, p in enumerate(points):
                _require(p.schema == schema, "points", f"point {i} attribute schema differs from point 0")
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))
        object.__setattr__(self, "intrinsic", intrinsic)
        object.__setattr__(self, "extrinsic", extrinsic)
        object.__setattr__(self, "points", points)

    @property
    def schema(self) -> tuple[str, ...]:
        return self.points[0].schema if self.points else ()

    @cached_property
    def xyz(self) -> np.ndarray:
        return frozen_array([(p.x, p.y, p.z) for p in self.points]).reshape(-1, 3)

    @cached_property
    def attributes(self) -> np.ndarray:
        return frozen_array([[v for _, v in p.attrs] for p in self.points]).reshape(len(self.points), len(self.schema))

    def with_points(self, points: Iterable[RadarPoint]) -> "CalibratedFrame":
        return replace(self, points=tuple(points))

    def __eq__(self, other):
        if not isinstance(other, CalibratedFrame):
            return NotImplemented
        return (
            self.image_width == other.image_width
            and self.image_height == other.image_height
            and np.array_equal(self.intrinsic, other.intrinsic)
            and np.array_equal(self.extrinsic, other.extrinsic)
            and self.points == other.points
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Binary raster (height x width) of one segmented object."""

    instance_id: int
    mask: np.ndarray

    def __post_init__(self):
        _require(int(self.instance_id) > 0, "instance_id", "must be a positive integer")
        mask = frozen_array(self.mask, dtype=bool)
        _require(mask.ndim == 2, "mask", f"expected a 2-D raster, got {mask.ndim}-D")
        _require(bool(mask.any()), "mask", f"instance {self.instance_id} has no true pixel")
        object.__setattr__(self, "instance_id", int(self.instance_id))
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @cached_property
    def bbox(self) -> tuple[int, int, int, int]:
        """(u_min, v_min, u_max, v_max), inclusive pixel bounds."""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])

    def to_runs(self) -> list[list[int]]:
        """Row-major (start, length) runs of true pixels."""
        flat = np.concatenate(([0], self.mask.ravel().view(np.int8), [0]))
        edges = np.flatnonzero(np.diff(flat))
        return [[int(s), int(e - s)] for s, e in zip(edges[::2], edges[1::2])]

    @classmethod
    def from_runs(cls, instance_id: int, width: int, height: int, runs: Sequence[Sequence[int]]) -> "InstanceMask":
        flat = np.zeros(width * height, dtype=bool)
        for start, length in runs:
            _require(start >= 0 and length > 0 and start + length <= flat.size, "runs", f"run {start}+{length} outside raster")
            flat[start:start + length] = True
        return cls(instance_id, flat.reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return self.instance_id == other.instance_id and np.array_equal(self.mask, other.mask)

    __hash__ = None


# --- Configuration Records ---


class Kernel(str, Enum):
    GAUSS = "gauss"
    EPANECHNIKOV = "epanechnikov"
    UNIFORM = "uniform"
    TRIANGLE = "triangle"
    COSINE = "cosine"


class BandwidthRule(str, Enum):
    SCOTT = "scott"
    SILVERMAN = "silverman"
    USER_DEFINED = "user_defined"


class _Record:
    """Dict round-trip shared by the config dataclasses."""

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]):
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ValidationError(key, f"unknown {cls.__name__} field")
        return cls(**dict(data))


@dataclass(frozen=True)
class SimDenConfig(_Record):
    kernel: Kernel = Kernel.GAUSS
    bandwidth_rule: BandwidthRule = BandwidthRule.SILVERMAN
    user_bandwidth: float | None = None
    gamma: float = 1.0
    max_key_points: int = 4
    edge_point_count: int = 20
    referring_point_count: int = 10
    points_per_instance: int = 200
    surface_fraction: float = 0.7
    rng_seed: int = 0
    distance_metric: str = "euclidean"
    mask_resample_attempts: int = 10
    covariance_regularization: float = 1e-6

    def __post_init__(self):
        try:
            object.__setattr__(self, "kernel", Kernel(self.kernel))
        except ValueError:
            raise ValidationError("kernel", f"unknown kernel {self.kernel!r}") from None
        try:
            object.__setattr__(self, "bandwidth_rule", BandwidthRule(self.bandwidth_rule))
        except ValueError:
            raise ValidationError("bandwidth_rule", f"unknown rule {self.bandwidth_rule!r}") from None
        if self.bandwidth_rule is BandwidthRule.USER_DEFINED:
            _require(
                self.user_bandwidth is not None and self.user_bandwidth > 0,
                "user_bandwidth",
                "user-defined rule needs a bandwidth > 0",
            )
        elif self.user_bandwidth is not None:
            _require(self.user_bandwidth > 0, "user_bandwidth", "must be > 0")
        _require(self.gamma > 0, "gamma", "must be > 0")
        _check_count(self.max_key_points, "max_key_points", 1)
        _check_count(self.edge_point_count, "edge_point_count", 3)
        _check_count(self.referring_point_count, "referring_point_count", 1)
        _check_count(self.points_per_instance, "points_per_instance", 1)
        _require(0.0 < self.surface_fraction <= 1.0, "surface_fraction", "must lie in (0, 1]")
        _check_seed(self.rng_seed)
        _require(self.distance_metric in ("euclidean", "manhattan"), "distance_metric", "must be 'euclidean' or 'manhattan'")
        _check_count(self.mask_resample_attempts, "mask_resample_attempts", 0)
        _require(self.covariance_regularization > 0, "covariance_regularization", "must be > 0")

    def split_budget(self) -> tuple[int, int]:
        """(surface, outline) point counts; the outline share is rounded down."""
        outline = int(math.floor(self.points_per_instance * (1.0 - self.surface_fraction) + 1e-9))
        return self.points_per_instance - outline, outline


def _interval(value, name: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in value)
    _require(hi > lo, name, f"extent must be positive, got [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class PillarConfig(_Record):
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    pillar_size: tuple[float, float, float]
    max_pillars: int
    max_points_per_pillar: int

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            object.__setattr__(self, name, _interval(getattr(self, name), name))
        size = tuple(float(s) for s in self.pillar_size)
        _require(len(size) == 3 and all(s > 0 for s in size), "pillar_size", "needs three positive components")
        object.__setattr__(self, "pillar_size", size)
        _check_count(self.max_pillars, "max_pillars", 1)
        _check_count(self.max_points_per_pillar, "max_points_per_pillar", 1)

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Pillar columns along (x, y)."""
        return (
            _cell_count(self.x_range[1] - self.x_range[0], self.pillar_size[0]),
            _cell_count(self.y_range[1] - self.y_range[0], self.pillar_size[1]),
        )


def _cell_count(extent: float, size: float) -> int:
    n = extent / size
    nearest = round(n)
    return int(nearest) if abs(n - nearest) < 1e-6 else int(math.ceil(n))


# Radar parameter table: ranges, pillar sizes, pillar caps (train / test), points per pillar.
_PRESETS = {
    "vod": ((0.0, 51.2), (-25.6, 25.6), (-3.0, 2.0), (0.16, 0.16, 0.16)),
    "tj4d": ((0.0, 69.12), (-39.68, 39.68), (-4.0, 2.0), (0.32, 0.32, 0.32)),
    "astyx": ((0.0, 76.8), (-40.96, 40.96), (-3.0, 1.0), (0.16, 0.16, 4.0)),
    "bev1m": ((0.0, 51.2), (-25.6, 25.6), (-3.0, 2.0), (1.0, 1.0, 5.0)),
}
_PILLAR_CAPS = {"train": 16000, "test": 40000}
PILLAR_PRESETS = tuple(_PRESETS)


def pillar_preset(name: str, split: str = "test") -> PillarConfig:
    if name not in _PRESETS:
        raise ValidationError("preset", f"unknown pillar preset {name!r}; choose from {', '.join(_PRESETS)}")
    if split not in _PILLAR_CAPS:
        raise ValidationError("split", "must be 'train' or 'test'")
    x, y, z, size = _PRESETS[name]
    if name == "bev1m":
        return PillarConfig(x, y, z, size, max_pillars=10**6, max_points_per_pillar=10**6)
    return PillarConfig(x, y, z, size, max_pillars=_PILLAR_CAPS[split], max_points_per_pillar=5)


@dataclass(frozen=True)
class LossConfig(_Record):
    alpha: float = 0.25
    sigma: float = 2.0
    beta: float = 0.1
    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 2.0, 0.2)

    def __post_init__(self):
        _require(0.0 < self.alpha < 1.0, "alpha", "must lie in (0, 1)")
        _require(self.sigma >= 0, "sigma", "must be >= 0")
        _require(self.beta > 0, "beta", "must be > 0")
        lambdas = tuple(float(v) for v in self.lambdas)
        _require(len(lambdas) == 4, "lambdas", "needs exactly four weights")
        _require(all(v >= 0 for v in lambdas), "lambdas", "weights must be >= 0")
        object.__setattr__(self, "lambdas", lambdas)
