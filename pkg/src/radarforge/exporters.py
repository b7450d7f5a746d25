import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import DEFAULT_SCHEMA, CalibratedFrame, InstanceMask, RadarPoint, ValidationError
from .density import DensityGrid, PillarHistogram
from .densify import FrameReport
from .loaders import COORDS, RECORD_DTYPE, cloud_format, sidecar_path


def _fmt(value: float) -> str:
    """Shortest repr that parses back to the same float."""
    return repr(float(value))


def _atomic_write(path: Path, data: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _records(points: Sequence[RadarPoint], fields: Sequence[str]) -> np.ndarray:
    rows = []
    for p in points:
        attrs = dict(p.attrs)
        coords = {"x": p.x, "y": p.y, "z": p.z}
        try:
            rows.append([coords[f] if f in COORDS else attrs[f] for f in fields])
        except KeyError as exc:
            raise ValidationError("fields", f"point has no attribute {exc.args[0]!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, len(fields))


def grid_to_csv(grid: DensityGrid) -> str:
    ox, oy = grid.origin
    cx, cy = grid.cell_size
    lines = [f"#origin_x={_fmt(ox)},origin_y={_fmt(oy)},cell_x={_fmt(cx)},cell_y={_fmt(cy)}"]
    lines += [",".join(_fmt(v) for v in row) for row in grid.values]
    return "\n".join(lines) + "\n"


class Exporter:
    """Writes clouds, calibrations, grids and reports; every file lands atomically."""

    def write_cloud(
        self, points: Sequence[RadarPoint], path: str | Path, fields: Sequence[str] | None = None, fmt: str | None = None
    ) -> Path:
        """Binary float32 records (plus a schema sidecar) or CSV; `fmt` defaults to the one the suffix implies."""
        path = Path(path)
        fmt = fmt or cloud_format(path)
        if fmt not in ("bin", "csv"):
            raise ValidationError("fmt", f"unknown cloud format {fmt!r}")
        if fields is None:
            fields = ("x", "y", "z", *points[0].schema) if points else DEFAULT_SCHEMA
        records = _records(points, fields)
        if fmt == "csv":
            lines = [",".join(fields)] + [",".join(_fmt(v) for v in row) for row in records]
            return _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
        _atomic_write(sidecar_path(path), (json.dumps({"fields": list(fields)}) + "\n").encode("utf-8"))
        return _atomic_write(path, records.astype(RECORD_DTYPE).tobytes())

    def write_calib(self, frame: CalibratedFrame, path: str | Path) -> Path:
        doc = {
            "image_width": frame.image_width,
            "image_height": frame.image_height,
            "intrinsic": frame.intrinsic.ravel().tolist(),
            "extrinsic": frame.extrinsic.ravel().tolist(),
        }
        return _atomic_write(Path(path), (json.dumps(doc, indent=2) + "\n").encode("utf-8"))

    def write_frame(self, frame: CalibratedFrame, calib_path: str | Path, cloud_path: str | Path, fields=None) -> tuple[Path, Path]:
        return self.write_calib(frame, calib_path), self.write_cloud(frame.points, cloud_path, fields)

    def write_masks_json(self, masks: Sequence[InstanceMask], path: str | Path) -> Path:
        if not masks:
            raise ValidationError("masks", "need at least one mask to record the image size")
        height, width = masks[0].shape
        doc = {
            "image_width": width,
            "image_height": height,
            "instances": [{"instance_id": m.instance_id, "runs": m.to_runs()} for m in masks],
        }
        return _atomic_write(Path(path), (json.dumps(doc) + "\n").encode("utf-8"))

    def write_masks_png(self, masks: Sequence[InstanceMask], path: str | Path) -> Path:
        """Label image: pixel value k marks instance k; later masks win on overlap."""
        if not masks:
            raise ValidationError("masks", "need at least one mask to record the image size")
        if max(m.instance_id for m in masks) > 255:
            raise ValidationError("instance_id", "label PNGs hold ids up to 255")
        labels = np.zeros(masks[0].shape, dtype=np.uint8)
        for m in masks:
            labels[m.mask] = m.instance_id
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
        os.close(fd)
        Image.fromarray(labels).save(tmp, format="PNG")
        os.replace(tmp, path)
        return path

    def write_grid_csv(self, grid: DensityGrid, path: str | Path) -> Path:
        return _atomic_write(Path(path), grid_to_csv(grid).encode("utf-8"))

    def write_pillars_csv(self, hist: PillarHistogram, path: str | Path, capped: bool = True) -> Path:
        return self.write_grid_csv(hist.to_grid(capped), path)

    def write_report(self, report: FrameReport, path: str | Path) -> Path:
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        return _atomic_write(Path(path), text.encode("utf-8"))
