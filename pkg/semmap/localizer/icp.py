"""
Label-aware 2-D ICP of a :class:`~semmap.grid.FeatureScan` against a semantic grid map.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator
from scipy.spatial import cKDTree

from semmap.exceptions import NoOverlapError
from semmap.geometry import Pose
from semmap.grid import (
    CELL_SIZE,
    FeatureScan,
    LabeledPoint,
    SemanticGridMap,
    SemanticLabel,
)
from semmap.logging import logger
from semmap.utils import rot2d, wrap_angle


class IcpConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    initial_radius: PositiveFloat = 0.5
    radius_decay: float = Field(0.7, gt=0, le=1)
    min_radius: PositiveFloat = 0.15
    max_iterations: PositiveInt = 30
    translation_tolerance: PositiveFloat = 1e-4
    yaw_tolerance: PositiveFloat = 1e-5
    min_inlier_fraction: float = Field(0.3, ge=0, le=1)
    max_points: PositiveInt = 2000
    """Scans with more marking points are thinned with a fixed stride."""

    @model_validator(mode="after")
    def _check_radius(self) -> "IcpConfig":
        if self.min_radius > self.initial_radius:
            raise ValueError("min_radius cannot exceed initial_radius.")

        return self


@dataclass
class IcpResult:
    pose: Pose
    rms_residual: float
    inlier_count: int
    converged: bool
    iterations: int = 0
    objective_history: list[tuple[float, float]] = field(default_factory=list)
    """Fixed-correspondence objective before and after each alignment step."""

    @property
    def xy_yaw(self) -> tuple[float, float, float]:
        return self.pose.xy_yaw


class MapIndex:
    """
    Per-label k-d trees over the xy centers of occupied cells, labeled by their argmax.
    """

    def __init__(self, grid: SemanticGridMap):
        indices, labels = grid.labels_array()
        self._centers: dict[int, np.ndarray] = {}
        self._trees: dict[int, cKDTree] = {}
        for label in np.unique(labels).tolist():
            centers = (indices[labels == label] + 0.5) * CELL_SIZE
            self._centers[label] = centers
            self._trees[label] = cKDTree(centers[:, :2])

    @classmethod
    def of(cls, grid: Union["MapIndex", SemanticGridMap]) -> "MapIndex":
        return grid if isinstance(grid, MapIndex) else cls(grid)

    def labels(self) -> list[SemanticLabel]:
        return [SemanticLabel(label) for label in sorted(self._trees)]

    def centers(self, label: SemanticLabel) -> np.ndarray:
        return self._centers.get(int(label), np.zeros((0, 3)))

    def query(
        self, label: SemanticLabel, xy: np.ndarray, radius: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Nearest same-label center within ``radius`` of every query point.

        Returns:
            ``(found, centers)`` where ``found`` flags queries with a match and ``centers``
            holds the ``(x, y, z)`` of each match (rows for unmatched queries are NaN).
        """
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        centers = np.full((len(xy), 3), np.nan)
        tree = self._trees.get(int(label))
        if tree is None or not len(xy):
            return np.zeros(len(xy), dtype=bool), centers

        distance, nearest = tree.query(xy, k=1, distance_upper_bound=radius)
        found = np.isfinite(distance)
        centers[found] = self._centers[int(label)][nearest[found]]
        return found, centers


def nearest_correspondence(
    point: LabeledPoint, grid: Union[MapIndex, SemanticGridMap], radius: float
) -> Optional[LabeledPoint]:
    """Closest occupied cell center with the point's label within ``radius`` (xy distance)."""
    if radius <= 0:
        raise ValueError("radius must be positive.")

    found, centers = MapIndex.of(grid).query(point.label, np.array([point.x, point.y]), radius)
    if not found[0]:
        return None

    x, y, z = centers[0]
    return LabeledPoint(float(x), float(y), float(z), SemanticLabel(point.label))


def align_2d(source: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Closed-form rigid alignment minimizing ``sum |R(theta) s + t - d|^2``.

    Returns:
        ``(theta, t)``.
    """
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    cross = (source - source_mean).T @ (target - target_mean)
    theta = math.atan2(cross[0, 1] - cross[1, 0], cross[0, 0] + cross[1, 1])
    translation = target_mean - rot2d(theta) @ source_mean
    return theta, translation


def _thin(scan: FeatureScan, max_points: int) -> FeatureScan:
    if len(scan) <= max_points:
        return scan

    stride = math.ceil(len(scan) / max_points)
    return FeatureScan(scan.points[::stride], scan.labels[::stride], scan.timestamp)


def _correspond(
    index: MapIndex, world: np.ndarray, labels: np.ndarray, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    matched = np.zeros(len(world), dtype=bool)
    targets = np.full((len(world), 2), np.nan)
    for label in np.unique(labels).tolist():
        rows = np.flatnonzero(labels == label)
        found, centers = index.query(SemanticLabel(label), world[rows], radius)
        matched[rows[found]] = True
        targets[rows[found]] = centers[found, :2]

    return matched, targets


def icp_localize(
    scan: FeatureScan,
    grid: Union[MapIndex, SemanticGridMap],
    initial: Pose,
    config: Optional[IcpConfig] = None,
) -> IcpResult:
    """
    Estimate the planar pose ``(x, y, yaw)`` that registers the scan's marking points onto
    same-label map cells, starting from ``initial``.

    Raises:
        :class:`~semmap.exceptions.NoOverlapError`: When no point has a correspondence on
          the first iteration.
    """
    config = config or IcpConfig()
    index = MapIndex.of(grid)
    scan = _thin(scan.markings(), config.max_points)
    points = scan.points
    x, y, yaw = initial.xy_yaw
    radius = config.initial_radius
    history: list[tuple[float, float]] = []
    inliers = 0
    rms = math.nan
    tolerance_met = False
    iteration = 0

    for iteration in range(1, config.max_iterations + 1):
        world = points @ rot2d(yaw).T + np.array([x, y])
        matched, targets = _correspond(index, world, scan.labels, radius)
        inliers = int(matched.sum())
        if inliers == 0:
            if iteration == 1:
                raise NoOverlapError(radius)

            break

        source, target = world[matched], targets[matched]
        before = float(np.sum((source - target) ** 2))
        theta, translation = align_2d(source, target)
        aligned = source @ rot2d(theta).T + translation
        after = float(np.sum((aligned - target) ** 2))
        history.append((before, after))
        rms = math.sqrt(after / inliers)

        new_xy = rot2d(theta) @ np.array([x, y]) + translation
        step = float(np.hypot(new_xy[0] - x, new_xy[1] - y))
        x, y = float(new_xy[0]), float(new_xy[1])
        yaw = wrap_angle(yaw + theta)
        if step < config.translation_tolerance and abs(theta) < config.yaw_tolerance:
            tolerance_met = True
            break

        radius = max(radius * config.radius_decay, config.min_radius)

    fraction = inliers / len(points) if len(points) else 0.0
    converged = tolerance_met and fraction >= config.min_inlier_fraction
    if not converged:
        logger.debug(
            f"ICP did not converge after {iteration} iterations "
            f"(inliers {inliers}/{len(points)}, tolerance met: {tolerance_met})."
        )

    return IcpResult(
        pose=Pose.from_xy_yaw(x, y, yaw, z=float(initial.p[2])),
        rms_residual=0.0 if math.isnan(rms) else rms,
        inlier_count=inliers,
        converged=converged,
        iterations=iteration,
        objective_history=history,
    )

