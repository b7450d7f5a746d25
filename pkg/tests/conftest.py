import numpy as np
import pytest

from radarforge.core import CalibratedFrame, InstanceMask, RadarPoint
from radarforge.geometry import project_array

WIDTH, HEIGHT = 640, 480
INTRINSIC = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
# radar x forward, y left, z up -> camera z forward, x right, y down
EXTRINSIC = np.array(
    [
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)

# (x0, y) of each object; every x0 + 0.5 stays below the next integer so all priors share one depth floor
OBJECTS = [(10.2, 4.0), (12.3, 2.0), (14.1, 0.0), (16.4, -2.0), (18.2, -4.0)]


def empty_frame() -> CalibratedFrame:
    return CalibratedFrame(WIDTH, HEIGHT, INTRINSIC, EXTRINSIC)


def object_xyz(rng: np.random.Generator, x0: float, y0: float, n: int = 8) -> np.ndarray:
    return np.column_stack(
        [x0 + rng.uniform(0.0, 0.5, n), y0 + rng.uniform(-0.4, 0.4, n), rng.uniform(-0.4, 0.4, n)]
    )


def to_points(rng: np.random.Generator, xyz: np.ndarray) -> list[RadarPoint]:
    return [
        RadarPoint(x, y, z, (("rcs", float(rng.uniform(-5, 15))), ("v_r", float(rng.normal()))))
        for x, y, z in xyz
    ]


def box_mask(xyz: np.ndarray, instance_id: int, margin: int = 6) -> InstanceMask:
    uvd, _ = project_array(xyz, empty_frame())
    u0, v0 = np.floor(uvd[:, :2].min(axis=0)).astype(int) - margin
    u1, v1 = np.ceil(uvd[:, :2].max(axis=0)).astype(int) + margin
    mask = np.zeros((HEIGHT, WIDTH), dtype=bool)
    mask[max(v0, 0):min(v1 + 1, HEIGHT), max(u0, 0):min(u1 + 1, WIDTH)] = True
    return InstanceMask(instance_id, mask)


def background_xyz(rng: np.random.Generator, n: int = 20) -> np.ndarray:
    """Far points projected above every object mask, plus a few behind the sensor."""
    far = np.column_stack([rng.uniform(40.0, 45.0, n), rng.uniform(-10.0, 10.0, n), rng.uniform(3.0, 4.0, n)])
    behind = np.column_stack([-rng.uniform(1.0, 5.0, 3), rng.uniform(-1.0, 1.0, 3), np.zeros(3)])
    return np.vstack([far, behind])


def build_scene(seed: int, objects=OBJECTS, priors: int = 8):
    rng = np.random.default_rng(seed)
    points, masks = [], []
    for iid, (x0, y0) in enumerate(objects, start=1):
        xyz = object_xyz(rng, x0, y0, priors)
        points += to_points(rng, xyz)
        masks.append(box_mask(xyz, iid))
    points += to_points(rng, background_xyz(rng))
    return empty_frame().with_points(points), masks


@pytest.fixture
def frame():
    return empty_frame()


@pytest.fixture
def scene5():
    return build_scene(11)


@pytest.fixture
def scene3():
    return build_scene(12, OBJECTS[:3])


@pytest.fixture
def single_scene():
    """One object with 6 priors at about 12.5 m, plus background."""
    return build_scene(13, [(12.3, 0.0)], priors=6)
