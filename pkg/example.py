# --------------------------------------------------------------------------
# Example: Using RadarForge as a Python Library
# --------------------------------------------------------------------------
#
# This script builds a small synthetic scene (a pinhole camera looking along
# the radar's x axis, two objects with rectangular masks), densifies it and
# writes the result plus the density diagnostics to ./example_output.
#
# Before running, install the package, for example by running `pip install .`
# in the root of this repository.
#
# --------------------------------------------------------------------------

from pathlib import Path

import numpy as np

from radarforge import (
    CalibratedFrame,
    Exporter,
    InstanceMask,
    RadarPoint,
    SimDenConfig,
    densify_frame,
    grid_density_surface,
    pillar_preset,
    pillarize,
)
from radarforge.geometry import project_array

OUT = Path("example_output")

INTRINSIC = [[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]]
# radar x forward, y left, z up -> camera z forward, x right, y down
EXTRINSIC = [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]


def build_scene(rng: np.random.Generator):
    points, masks = [], []
    frame = CalibratedFrame(640, 480, INTRINSIC, EXTRINSIC)
    for iid, (x, y) in enumerate([(12.4, 2.0), (18.6, -3.0)], start=1):
        xyz = np.column_stack([x + rng.uniform(0, 0.5, 8), y + rng.uniform(-0.6, 0.6, 8), rng.uniform(-0.5, 0.5, 8)])
        for px, py, pz in xyz:
            points.append(RadarPoint(px, py, pz, (("rcs", rng.uniform(-5, 15)), ("v_r", rng.normal()))))
        uvd, _ = project_array(xyz, frame)
        mask = np.zeros((480, 640), dtype=bool)
        u0, v0 = np.floor(uvd[:, :2].min(axis=0)).astype(int) - 6
        u1, v1 = np.ceil(uvd[:, :2].max(axis=0)).astype(int) + 6
        mask[max(v0, 0):v1, max(u0, 0):u1] = True
        masks.append(InstanceMask(iid, mask))
    return frame.with_points(points), masks


def main():
    print("--- Running Densification Example ---")
    rng = np.random.default_rng(7)
    frame, masks = build_scene(rng)

    dense, report = densify_frame(frame, masks, SimDenConfig(rng_seed=42))
    print(f"{report.input_points} radar points -> {report.output_points} after densification")
    for inst in report.instances:
        print(f"  instance {inst.instance_id}: {inst.status}, {inst.prior_count} priors, {inst.generated} generated")

    exporter = Exporter()
    exporter.write_frame(dense, OUT / "calib.json", OUT / "dense.bin")
    exporter.write_report(report, OUT / "report.json")

    uvd, keep = project_array(dense.xyz, dense)
    exporter.write_grid_csv(grid_density_surface(uvd[keep, :2], (640, 480), 16), OUT / "grid2d.csv")
    exporter.write_pillars_csv(pillarize(dense.points, pillar_preset("bev1m")), OUT / "pillars.csv")

    print(f"\nSuccess! Outputs saved to '{OUT}'")
    print("-" * 40)


if __name__ == "__main__":
    print("RadarForge Library Usage Example")
    print("================================")
    main()
