"""
The end-to-end flow: on-vehicle mapping (segmentation pixels, IPM, pose graph, voting),
cloud aggregation and distribution, and map-based localization.
"""

import itertools
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from semmap.client import BaseMapClient, MockMapClient, SessionID, VehicleID
from semmap.codec import decode, decompress_to_map
from semmap.config import PipelineConfig
from semmap.evaluation import ErrorSummary, frame_errors, write_errors, write_summary
from semmap.exceptions import LocalizationError
from semmap.geometry import CameraModel, Pose, RoiSpec, ipm_ground_points
from semmap.grid import FeatureScan, SemanticGridMap, encode_upload
from semmap.localizer import (
    LocalizationRow,
    LocalizationSession,
    LocalizerConfig,
    write_localization,
)
from semmap.logging import logger
from semmap.posegraph import (
    FactorWeights,
    OptimizationResult,
    SolverConfig,
    anchor_trajectory,
    build_problem,
    dead_reckon,
    initial_heading,
    optimize,
    trajectory_rows,
)
from semmap.simulator import (
    DrivePath,
    Observation,
    WorldModel,
    WorldTemplate,
    block_route,
    generate_world,
    intersection_path,
    iter_drive,
    straight_path,
)


def scan_from_pixels(
    pixels: np.ndarray, cam: CameraModel, roi: Optional[RoiSpec] = None, timestamp: float = 0.0
) -> FeatureScan:
    """Inverse-perspective-map labeled pixels; pixels off the ground or outside ``roi`` drop."""
    if not len(pixels):
        return FeatureScan(timestamp=timestamp)

    uv = np.column_stack((pixels["u"], pixels["v"])).astype(float)
    xy, hits = ipm_ground_points(cam, uv, roi=roi)
    return FeatureScan(xy[hits], pixels["label"][hits], timestamp)


@dataclass
class MappingResult:
    grid: SemanticGridMap
    times: list[float] = field(default_factory=list)
    raw: list[Pose] = field(default_factory=list)
    """GNSS-anchored dead reckoning, the optimizer's starting point."""
    optimization: Optional[OptimizationResult] = None
    points: int = 0

    @property
    def poses(self) -> list[Pose]:
        return self.optimization.poses if self.optimization else []

    def trajectory_rows(self) -> list[dict]:
        return trajectory_rows(self.times, self.raw, "raw") + trajectory_rows(
            self.times, self.poses, "optimized"
        )


def estimate_trajectory(
    observations: Iterable[Observation],
    weights: Optional[FactorWeights] = None,
    solver: Optional[SolverConfig] = None,
) -> MappingResult:
    """
    First mapping pass: optimize the drive's pose graph from odometry and GNSS.

    Raises:
        :class:`~semmap.exceptions.UnobservableGaugeError`: When the drive has no GNSS fix.
    """
    times, odom, gnss = [], [], {}
    for k, observation in enumerate(observations):
        times.append(observation.t)
        if k:
            odom.append(observation.odom)

        if observation.gnss is not None:
            gnss[k] = observation.gnss

    result = MappingResult(SemanticGridMap(), times=times)
    if not times:
        return result

    problem = build_problem(odom, gnss, weights)
    result.raw = list(problem.nodes)
    result.optimization = optimize(problem, solver)
    logger.info(
        f"Optimized {len(times)} poses with {len(gnss)} GNSS fixes: cost "
        f"{result.optimization.initial_cost:.4g} -> {result.optimization.final_cost:.4g} "
        f"in {result.optimization.iterations} iterations."
    )
    if not result.optimization.converged:
        logger.warning(
            "Trajectory optimization stopped before converging "
            f"(gradient {result.optimization.gradient_norm:.3g})."
        )

    return result


def accumulate_map(
    observations: Iterable[Observation],
    poses: Sequence[Pose],
    cam: CameraModel,
    roi: Optional[RoiSpec] = None,
    grid: Optional[SemanticGridMap] = None,
) -> tuple[SemanticGridMap, int]:
    """Second mapping pass: vote every frame's ground points into the grid at its pose."""
    grid = grid if grid is not None else SemanticGridMap()
    points = 0
    for observation, pose in zip(observations, poses):
        scan = scan_from_pixels(observation.pixels, cam, roi, observation.t)
        grid.insert_points(pose.transform_points(scan.points), scan.labels)
        points += len(scan)

    return grid, points


def build_map_from_frames(
    observations: Sequence[Observation],
    cam: CameraModel,
    roi: Optional[RoiSpec] = None,
    weights: Optional[FactorWeights] = None,
    solver: Optional[SolverConfig] = None,
) -> MappingResult:
    """Local semantic map of one drive held in memory."""
    result = estimate_trajectory(observations, weights, solver)
    result.grid, result.points = accumulate_map(observations, result.poses, cam, roi)
    return result


def _initial_pose(prefix: Sequence[Observation], min_baseline: float = 2.0) -> Optional[Pose]:
    gnss = {k: o.gnss for k, o in enumerate(prefix) if o.gnss is not None}
    if not gnss:
        return None

    chain = dead_reckon(Pose(), [o.odom for o in prefix[1:]])
    if initial_heading(chain, gnss, min_baseline) is None:
        return None

    return anchor_trajectory(chain, gnss)[0]


def localize_frames(
    observations: Iterable[Observation],
    grid: SemanticGridMap,
    cam: CameraModel,
    roi: Optional[RoiSpec] = None,
    config: Optional[LocalizerConfig] = None,
    initial: Optional[Pose] = None,
) -> Iterator[LocalizationRow]:
    """
    Localize a drive against ``grid``, one row per frame. Without ``initial`` the start
    pose comes from the first GNSS fixes, with the heading from the first couple of meters
    of motion.

    Raises:
        :class:`~semmap.exceptions.LocalizationError`: When GNSS never allows an initial
          pose.
    """
    session = LocalizationSession(grid, config)
    observations = iter(observations)
    prefix: list[Observation] = []
    if initial is None:
        for observation in observations:
            prefix.append(observation)
            if observation.gnss is not None and (initial := _initial_pose(prefix)) is not None:
                break
        else:
            if prefix:
                raise LocalizationError("GNSS never fixed the start pose of the drive.")

            return

    session.start(initial)
    for k, observation in enumerate(itertools.chain(prefix, observations)):
        scan = scan_from_pixels(observation.pixels, cam, roi, observation.t)
        yield session.step(observation.t, observation.odom if k else None, scan)


def route_for(template: WorldTemplate, config: PipelineConfig) -> DrivePath:
    params = config.world.params
    if template is WorldTemplate.STRAIGHT_ROAD:
        return straight_path(params)

    if template is WorldTemplate.INTERSECTION:
        return intersection_path(params, config.route.turn, config.route.corner_radius)

    return block_route(params, config.route.corner_radius)


@dataclass
class DemoReport:
    sessions: int
    upload_bytes: int
    map_bytes: int
    map_version: int
    summary: ErrorSummary
    outputs: dict[str, Path] = field(default_factory=dict)

    @property
    def compression_ratio(self) -> float:
        return self.map_bytes / self.upload_bytes if self.upload_bytes else 0.0


def _observations(frames, truths: Optional[list[Pose]] = None) -> Iterator[Observation]:
    for frame in frames:
        if truths is not None:
            truths.append(frame.truth)

        yield frame.observation


def run_demo(
    config: PipelineConfig,
    out_dir: Union[str, Path],
    client: Optional[BaseMapClient] = None,
    world: Optional[WorldModel] = None,
) -> DemoReport:
    """
    Map a generated world with several simulated vehicles, aggregate their uploads,
    distribute the compressed map and localize one more drive against it.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    client = client or MockMapClient()
    template = config.world.template
    world = world or generate_world(template, config.world.params, config.seed)
    world.save(out_dir / "world.json")
    cam = config.camera_model()
    path = route_for(template, config)
    logger.info(f"Demo on a {template.value} world, route of {path.length:.0f} m.")

    merged = SemanticGridMap()
    for session in range(config.demo.sessions):
        noise = config.noise.model_copy(update={"seed": config.seed + 1 + session})
        drive = (world, path, cam, noise, config.drive, config.roi)
        mapping = estimate_trajectory(
            _observations(iter_drive(*drive, render=False)), config.weights, config.solver
        )
        grid, _ = accumulate_map(_observations(iter_drive(*drive)), mapping.poses, cam, config.roi)
        merged.merge_map(grid)
        ack = client.upload_map(
            grid, SessionID(f"demo-{config.seed}-{session}"), VehicleID(f"vehicle-{session}")
        )
        logger.info(f"Session {session}: {len(grid)} cells uploaded, map version {ack.version}.")

    fetched = client.fetch_map()
    (out_dir / "map.smap").write_bytes(fetched.data)
    distributed = decompress_to_map(decode(fetched.data))

    truths: list[Pose] = []
    noise = config.noise.model_copy(update={"seed": config.seed + 1000})
    frames = iter_drive(world, path, cam, noise, config.drive, config.roi)
    observations = _observations(frames, truths)
    rows = list(localize_frames(observations, distributed, cam, config.roi, config.localizer))
    errors = frame_errors([row.pose for row in rows], truths)
    summary = ErrorSummary.from_errors(errors)

    outputs = {
        "world": out_dir / "world.json",
        "map": out_dir / "map.smap",
        "localization": out_dir / "localization.csv",
        "errors": out_dir / "errors.csv",
        "summary": out_dir / "summary.json",
    }
    write_localization(outputs["localization"], rows)
    write_errors(outputs["errors"], [row.t for row in rows], errors)
    write_summary(outputs["summary"], summary)
    return DemoReport(
        sessions=config.demo.sessions,
        upload_bytes=len(encode_upload(merged)),
        map_bytes=len(fetched.data),
        map_version=fetched.version,
        summary=summary,
        outputs=outputs,
    )
