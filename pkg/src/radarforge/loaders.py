"""Readers for calibration JSON, radar clouds (binary or CSV), instance masks and grid CSVs."""

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import (
    DEFAULT_SCHEMA,
    CalibratedFrame,
    DimensionMismatch,
    InstanceMask,
    ParseError,
    RadarPoint,
    ValidationError,
)
from .density import DensityGrid

logger = logging.getLogger(__name__)

RECORD_DTYPE = np.dtype("<f4")
COORDS = ("x", "y", "z")


@dataclass(frozen=True)
class CloudData:
    """Points plus the on-disk layout needed to write them back the same way."""

    points: tuple[RadarPoint, ...]
    fields: tuple[str, ...]
    fmt: str


def sidecar_path(cloud_path: str | Path) -> Path:
    cloud_path = Path(cloud_path)
    return cloud_path.with_name(cloud_path.name + ".json")


def cloud_format(path: str | Path) -> str:
    return "csv" if Path(path).suffix.lower() == ".csv" else "bin"


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path.name}: invalid JSON ({exc.msg})", offset=exc.pos) from None


def _numbers(doc: dict, key: str, count: int) -> list[float]:
    values = doc.get(key)
    if not isinstance(values, list) or len(values) != count:
        raise ParseError(f"'{key}' must be a list of {count} numbers", path=f"$.{key}")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"'{key}' entry is not a number", path=f"$.{key}[{i}]")
    return [float(v) for v in values]


def _integer(doc: dict, key: str) -> int:
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"'{key}' must be an integer", path=f"$.{key}")
    return value


def load_calib(path: str | Path) -> CalibratedFrame:
    """Calibration skeleton: dimensions and matrices, no points."""
    path = Path(path)
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ParseError("calibration must be a JSON object", path="$")
    intrinsic = np.array(_numbers(doc, "intrinsic", 9)).reshape(3, 3)
    extrinsic = np.array(_numbers(doc, "extrinsic", 16)).reshape(4, 4)
    return CalibratedFrame(_integer(doc, "image_width"), _integer(doc, "image_height"), intrinsic, extrinsic)


def _schema(fields: Sequence[str]) -> tuple[str, ...]:
    fields = tuple(str(f) for f in fields)
    missing = [c for c in COORDS if c not in fields]
    if missing:
        raise ParseError(f"schema lacks {', '.join(missing)}", path="$.fields")
    if len(set(fields)) != len(fields):
        raise ParseError("schema repeats a field name", path="$.fields")
    return fields


def _records_to_points(records: np.ndarray, fields: tuple[str, ...]) -> tuple[RadarPoint, ...]:
    cols = [fields.index(c) for c in COORDS]
    attr_cols = [(i, f) for i, f in enumerate(fields) if f not in COORDS]
    return tuple(
        RadarPoint(row[cols[0]], row[cols[1]], row[cols[2]], tuple((f, row[i]) for i, f in attr_cols))
        for row in records.tolist()
    )


def read_binary_cloud(path: Path) -> CloudData:
    sidecar = sidecar_path(path)
    if sidecar.exists():
        doc = _read_json(sidecar)
        if not isinstance(doc, dict) or not isinstance(doc.get("fields"), list):
            raise ParseError(f"{sidecar.name}: expected {{\"fields\": [...]}}", path="$.fields")
        fields = _schema(doc["fields"])
    else:
        fields = DEFAULT_SCHEMA
    raw = path.read_bytes()
    stride = RECORD_DTYPE.itemsize * len(fields)
    if len(raw) % stride:
        raise ParseError(
            f"{path.name}: {len(raw)} bytes is not a multiple of the {stride}-byte record",
            offset=len(raw) - len(raw) % stride,
        )
    records = np.frombuffer(raw, dtype=RECORD_DTYPE).reshape(-1, len(fields)).astype(np.float64)
    return CloudData(_records_to_points(records, fields), fields, "bin")


def read_csv_cloud(path: Path) -> CloudData:
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path.name}: missing header row", path="line 1") from None
    fields = _schema(h.strip() for h in header)
    rows = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(fields):
            raise ParseError(f"{path.name}: expected {len(fields)} values", path=f"line {line_no}")
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise ParseError(f"{path.name}: non-numeric value", path=f"line {line_no}") from None
    records = np.array(rows, dtype=np.float64).reshape(-1, len(fields))
    return CloudData(_records_to_points(records, fields), fields, "csv")


def load_cloud(path: str | Path) -> CloudData:
    path = Path(path)
    data = read_csv_cloud(path) if cloud_format(path) == "csv" else read_binary_cloud(path)
    logger.info("%s: %d points, fields %s", path.name, len(data.points), ",".join(data.fields))
    return data


def load_frame(calib_path: str | Path, cloud_path: str | Path) -> CalibratedFrame:
    return load_calib(calib_path).with_points(load_cloud(cloud_path).points)


def _masks_from_png(path: Path) -> list[InstanceMask]:
    try:
        with Image.open(path) as img:
            raster = np.array(img)
    except UnidentifiedImageError:
        raise ParseError(f"{path.name}: not a readable image") from None
    if raster.ndim != 2:
        raise ParseError(f"{path.name}: instance masks must be single-channel")
    return [InstanceMask(int(k), raster == k) for k in np.unique(raster) if k > 0]


def _masks_from_json(path: Path) -> tuple[list[InstanceMask], tuple[int, int]]:
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ParseError("mask file must be a JSON object", path="$")
    width, height = _integer(doc, "image_width"), _integer(doc, "image_height")
    instances = doc.get("instances")
    if not isinstance(instances, list):
        raise ParseError("'instances' must be a list", path="$.instances")
    masks = []
    for i, entry in enumerate(instances):
        if not isinstance(entry, dict) or not isinstance(entry.get("runs"), list):
            raise ParseError("instance needs 'instance_id' and 'runs'", path=f"$.instances[{i}]")
        iid = entry.get("instance_id")
        if isinstance(iid, bool) or not isinstance(iid, int):
            raise ParseError("'instance_id' must be an integer", path=f"$.instances[{i}].instance_id")
        masks.append(InstanceMask.from_runs(iid, width, height, entry["runs"]))
    return masks, (height, width)


def load_masks(path: str | Path, image_shape: tuple[int, int] | None = None) -> list[InstanceMask]:
    """Instance masks from a label PNG or a run-length JSON; `image_shape` is (height, width)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        masks, _ = _masks_from_json(path)
    else:
        masks = _masks_from_png(path)
    ids = [m.instance_id for m in masks]
    if len(set(ids)) != len(ids):
        raise ValidationError("instance_id", "instance ids must be unique")
    if image_shape is not None:
        for m in masks:
            if m.shape != tuple(image_shape):
                raise DimensionMismatch("mask", f"instance {m.instance_id} raster {m.shape} != image {tuple(image_shape)}")
    logger.info("%s: %d instance masks", path.name, len(masks))
    return sorted(masks, key=lambda m: m.instance_id)


def read_grid_csv(path: str | Path) -> DensityGrid:
    """Parse a grid written by `Exporter.write_grid_csv`."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ParseError(f"{path.name}: missing '#origin_x=...' header", path="line 1")
    try:
        meta = dict(item.split("=", 1) for item in lines[0][1:].split(","))
        origin = (float(meta["origin_x"]), float(meta["origin_y"]))
        cell = (float(meta["cell_x"]), float(meta["cell_y"]))
        values = [[float(v) for v in line.split(",")] for line in lines[1:] if line]
    except (KeyError, ValueError):
        raise ParseError(f"{path.name}: malformed grid file") from None
    return DensityGrid(origin, cell, np.array(values))
