import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from semmap.geometry import CameraModel, RoiSpec
from semmap.grid import CellScores, GridIndex, SemanticGridMap
from semmap.simulator import (
    DriveConfig,
    NoiseSpec,
    WorldTemplate,
    generate_world,
    simulate_drive,
    straight_path,
)
from semmap.utils import as_quat


# Looking straight down from 1.5 m above (2, 0); image u grows to the vehicle's right.
NADIR_ROTATION = np.array(
    [
        [0.0, -1.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
    ]
)


@pytest.fixture(scope="session")
def camera():
    return CameraModel.from_mounting()


@pytest.fixture(scope="session")
def nadir_camera():
    r_c = as_quat(Rotation.from_matrix(NADIR_ROTATION), canonical=True)
    return CameraModel(
        fx=500.0,
        fy=500.0,
        cx=320.0,
        cy=240.0,
        r_c=tuple(r_c.tolist()),
        t_c=(0.0, 2.0, 1.5),
        image_w=640,
        image_h=480,
    )


@pytest.fixture(scope="session")
def roi():
    return RoiSpec()


@pytest.fixture(scope="session")
def straight_world():
    return generate_world(WorldTemplate.STRAIGHT_ROAD, seed=3)


@pytest.fixture(scope="session")
def noiseless_frames(straight_world, camera, roi):
    return simulate_drive(
        straight_world,
        straight_path(),
        camera,
        noise=NoiseSpec.noiseless(seed=11),
        config=DriveConfig(),
        roi=roi,
    )


@pytest.fixture
def small_grid():
    return SemanticGridMap.from_cells(
        [
            (GridIndex(0, 0, 0), CellScores.of(lane_line=3, ground=1)),
            (GridIndex(1, 0, 0), CellScores.of(stop_line=2)),
            (GridIndex(-1, 5, 0), CellScores.of(ground=4)),
            (GridIndex(4096, 2, -1), CellScores.of(crosswalk=1, ground_sign=1)),
        ]
    )


@pytest.fixture(scope="session")
def sparse_map():
    """Single cells one meter apart within 5 m of the origin, cycling marking labels."""
    indices, counts = [], []
    cells = [(ix, iy) for ix in range(-50, 51, 10) for iy in range(-50, 51, 10)]
    for k, (ix, iy) in enumerate(cells):
        row = [0] * 5
        row[1 + k % 3] = 2
        indices.append((ix, iy, 0))
        counts.append(row)

    return SemanticGridMap.from_arrays(np.array(indices), np.array(counts))
