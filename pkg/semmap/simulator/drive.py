"""
Vehicle trajectories through a world and the sensor stream recorded along them.
"""

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveFloat

from semmap.exceptions import SimulationError
from semmap.geometry import CameraModel, Pose, RoiSpec
from semmap.logging import logger
from semmap.posegraph import GnssMeasurement, OdometryMeasurement
from semmap.simulator.noise import NoiseSpec
from semmap.simulator.render import empty_pixels, render_segmentation
from semmap.simulator.world import WorldModel, WorldParams
from semmap.utils import as_quat, as_rotation, yaw_rotation

ARC_STEP = 0.25
"""Maximum chord length when sampling a fillet arc, meters."""


class DriveConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    speed: PositiveFloat = 5.0
    """Meters per second."""
    frame_rate: PositiveFloat = 10.0
    """Frames per second."""


def _miter_offset(points: np.ndarray, offset: float) -> np.ndarray:
    directions = np.diff(points, axis=0)
    lengths = np.linalg.norm(directions, axis=1)
    if np.any(lengths <= 1e-9):
        raise SimulationError("Path has repeated waypoints.")

    directions /= lengths[:, None]
    normals = np.column_stack((-directions[:, 1], directions[:, 0]))
    shifted = points.copy()
    shifted[0] += offset * normals[0]
    shifted[-1] += offset * normals[-1]
    for i in range(1, len(points) - 1):
        n0, n1 = normals[i - 1], normals[i]
        denominator = 1.0 + float(n0 @ n1)
        if denominator < 1e-6:
            raise SimulationError(f"Path reverses direction at waypoint {i}.")

        shifted[i] += offset * (n0 + n1) / denominator

    return shifted


def _fillet(points: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0 or len(points) < 3:
        return points

    result = [points[0]]
    for i in range(1, len(points) - 1):
        before, vertex, after = result[-1], points[i], points[i + 1]
        d0 = vertex - before
        d1 = after - vertex
        l0, l1 = float(np.linalg.norm(d0)), float(np.linalg.norm(d1))
        d0, d1 = d0 / l0, d1 / l1
        turn = math.atan2(d0[0] * d1[1] - d0[1] * d1[0], float(d0 @ d1))
        if abs(turn) < 1e-6:
            result.append(vertex)
            continue

        # the fillet may use at most half of each adjacent leg
        tangent = min(radius * math.tan(abs(turn) / 2.0), l0 / 2.0, l1 / 2.0)
        r = tangent / math.tan(abs(turn) / 2.0)
        side = math.copysign(1.0, turn)
        start = vertex - d0 * tangent
        center = start + side * r * np.array([-d0[1], d0[0]])
        radial = start - center
        a0 = math.atan2(radial[1], radial[0])
        steps = max(2, math.ceil(r * abs(turn) / ARC_STEP))
        for angle in a0 + np.linspace(0.0, turn, steps + 1):
            result.append(center + r * np.array([math.cos(angle), math.sin(angle)]))

    result.append(points[-1])
    return np.asarray(result)


class DrivePath:
    """
    Arclength-parametrized planar polyline; the heading is the direction of the segment
    under the vehicle.
    """

    def __init__(self, vertices: np.ndarray):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        steps = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
        keep = np.concatenate(([True], steps > 1e-9))
        self.vertices = vertices[keep]
        if len(self.vertices) < 2:
            raise SimulationError("A drive path needs two distinct vertices.")

        segments = np.diff(self.vertices, axis=0)
        self._cumulative = np.concatenate(([0.0], np.cumsum(np.linalg.norm(segments, axis=1))))
        self._headings = np.arctan2(segments[:, 1], segments[:, 0])

    @classmethod
    def from_waypoints(
        cls,
        waypoints: Sequence[Sequence[float]],
        lane_offset: float = 0.0,
        corner_radius: float = 0.0,
    ) -> "DrivePath":
        """
        Build a path along ``waypoints`` shifted ``lane_offset`` meters to the left
        (negative: right) with corners rounded to ``corner_radius``.
        """
        points = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        if len(points) < 2:
            raise SimulationError("A drive path needs two waypoints.")

        if lane_offset:
            points = _miter_offset(points, lane_offset)

        return cls(_fillet(points, corner_radius))

    @property
    def length(self) -> float:
        return float(self._cumulative[-1])

    def pose_at(self, s: float) -> Pose:
        s = min(max(float(s), 0.0), self.length)
        last = len(self._headings) - 1
        segment = int(np.clip(np.searchsorted(self._cumulative, s, side="right") - 1, 0, last))
        s0, s1 = self._cumulative[segment], self._cumulative[segment + 1]
        a = self.vertices[segment]
        fraction = (s - s0) / (s1 - s0)
        x, y = a + fraction * (self.vertices[segment + 1] - a)
        return Pose.from_xy_yaw(float(x), float(y), float(self._headings[segment]))

    def bounds(self) -> tuple[float, float, float, float]:
        low, high = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(low[0]), float(low[1]), float(high[0]), float(high[1])


def straight_path(params: Optional[WorldParams] = None) -> DrivePath:
    """Right-hand lane of a ``straight_road`` world, start to end."""
    params = params or WorldParams()
    return DrivePath.from_waypoints(
        [(0.0, 0.0), (params.length, 0.0)], lane_offset=-params.lane_width / 2.0
    )


def intersection_path(
    params: Optional[WorldParams] = None, turn: str = "straight", corner_radius: float = 6.0
) -> DrivePath:
    """Enter an ``intersection`` world from the west arm and leave straight, left or right."""
    params = params or WorldParams()
    arm = params.length / 2.0
    exits = {"straight": (arm, 0.0), "left": (0.0, arm), "right": (0.0, -arm)}
    if turn not in exits:
        raise SimulationError(f"Unknown turn '{turn}'.")

    return DrivePath.from_waypoints(
        [(-arm, 0.0), (0.0, 0.0), exits[turn]],
        lane_offset=-params.lane_width / 2.0,
        corner_radius=corner_radius,
    )


def block_route(params: Optional[WorldParams] = None, corner_radius: float = 6.0) -> DrivePath:
    """
    A route through an ``urban_block`` world that covers every road: a snake along the
    east-west roads followed by a snake along the north-south roads.
    """
    params = params or WorldParams()
    nx, ny = params.blocks
    s = params.spacing
    waypoints: list[tuple[float, float]] = []
    for j in range(ny + 1):
        row = [(0.0, j * s), (nx * s, j * s)]
        waypoints += row if j % 2 == 0 else row[::-1]

    east_end = waypoints[-1][0] > 0
    columns = range(nx, -1, -1) if east_end else range(nx + 1)
    for k, i in enumerate(columns):
        column = [(i * s, ny * s), (i * s, 0.0)]
        waypoints += column if k % 2 == 0 else column[::-1]

    # drop the duplicated corner where the second snake starts
    deduplicated = [waypoints[0]]
    for point in waypoints[1:]:
        if point != deduplicated[-1]:
            deduplicated.append(point)

    return DrivePath.from_waypoints(
        deduplicated, lane_offset=-params.lane_width / 2.0, corner_radius=corner_radius
    )


@dataclass(frozen=True)
class Observation:
    """What the vehicle's algorithms get to see of one frame."""

    index: int
    t: float
    pixels: np.ndarray
    odom: OdometryMeasurement
    gnss: Optional[GnssMeasurement] = None


@dataclass(frozen=True)
class SimFrame:
    index: int
    t: float
    pixels: np.ndarray
    """Structured ``(u, v, label)`` array, see :data:`~semmap.simulator.render.PIXEL_DTYPE`."""
    odom: OdometryMeasurement
    truth: Pose
    gnss: Optional[GnssMeasurement] = None

    @property
    def observation(self) -> Observation:
        return Observation(
            index=self.index, t=self.t, pixels=self.pixels, odom=self.odom, gnss=self.gnss
        )


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream for frame ``index`` of a drive seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def frame_count(path: DrivePath, config: DriveConfig) -> int:
    return int(math.floor(path.length / config.speed * config.frame_rate + 1e-9))


def _noisy_odometry(
    previous: Pose, current: Pose, noise: NoiseSpec, rng: np.random.Generator
) -> OdometryMeasurement:
    delta = OdometryMeasurement.between(previous, current)
    dp = delta.dp * (1.0 + noise.odom_scale_error)
    dp = dp + np.append(rng.normal(0.0, noise.odom_p_sigma, size=2), 0.0)
    yaw_error = yaw_rotation(float(rng.normal(0.0, noise.odom_yaw_sigma)))
    dq = as_quat(as_rotation(delta.dq) * yaw_error)
    return OdometryMeasurement(dp=dp, dq=dq)


def iter_drive(
    world: WorldModel,
    path: DrivePath,
    cam: CameraModel,
    noise: Optional[NoiseSpec] = None,
    config: Optional[DriveConfig] = None,
    roi: Optional[RoiSpec] = None,
    render: bool = True,
) -> Iterator[SimFrame]:
    """
    Drive ``path`` at constant speed and yield one frame per camera exposure.

    Frame ``k`` is taken at arclength ``k * speed / frame_rate`` and is reproducible from
    ``(noise.seed, k)`` alone. ``render=False`` skips the segmentation pixels.
    """
    noise = noise or NoiseSpec()
    config = config or DriveConfig()
    step = config.speed / config.frame_rate
    previous: Optional[Pose] = None
    for k in range(frame_count(path, config)):
        rng = frame_rng(noise.seed, k)
        s = k * step
        truth = path.pose_at(s)
        if previous is None:
            odom = OdometryMeasurement()
        else:
            odom = _noisy_odometry(previous, truth, noise, rng)

        gnss = None
        gnss_noise = rng.normal(0.0, noise.gnss_sigma, size=3)
        if noise.gnss_available(s):
            gnss = GnssMeasurement(p=truth.p + gnss_noise)

        pixels = empty_pixels()
        if render:
            pixels = render_segmentation(world, truth, cam, noise=noise, roi=roi, rng=rng)

        yield SimFrame(
            index=k,
            t=k / config.frame_rate,
            pixels=pixels,
            odom=odom,
            truth=truth,
            gnss=gnss,
        )
        previous = truth


def simulate_drive(
    world: WorldModel,
    path: DrivePath,
    cam: CameraModel,
    noise: Optional[NoiseSpec] = None,
    config: Optional[DriveConfig] = None,
    roi: Optional[RoiSpec] = None,
) -> list[SimFrame]:
    frames = list(iter_drive(world, path, cam, noise=noise, config=config, roi=roi))
    logger.debug(f"Simulated {len(frames)} frames over {path.length:.1f} m.")
    return frames
