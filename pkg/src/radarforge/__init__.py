"""
RadarForge Package
==================

Radar point-cloud densification guided by camera instance masks, density
diagnostics (KDE surfaces, image grids, BEV pillars) and a numeric reference of
the radar/camera fusion blocks and detection losses.

Example:
    from radarforge import SimDenConfig, densify_frame, load_frame, load_masks

    frame = load_frame("calib.json", "scan.bin")
    masks = load_masks("masks.png", (frame.image_height, frame.image_width))

    dense, report = densify_frame(frame, masks, SimDenConfig(rng_seed=42))
    print(report.added, "points added")

"""

# Make key functions available at the top level of the package
from .checks import run_fusion_checks
from .core import (
    CalibratedFrame,
    InstanceMask,
    LossConfig,
    PillarConfig,
    RadarForgeError,
    RadarPoint,
    SimDenConfig,
    pillar_preset,
    seeded_rng,
)
from .densify import densify_frame, densify_instance
from .density import grid_density_surface, kde_surface_3d, pillarize
from .exporters import Exporter
from .geometry import back_project, project_points
from .loaders import load_frame, load_masks
from .settings import load_settings

__version__ = "0.4.0"
