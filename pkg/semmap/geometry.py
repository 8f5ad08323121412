"""
Camera model, inverse perspective mapping onto the ground plane and rigid transforms.

Frames: the vehicle frame is x forward, y left, z up; the world frame is a local ENU
plane. ``CameraModel.r_c`` / ``t_c`` map vehicle-frame points into the camera frame:
``X_c = R_c @ X_v + t_c``.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation

from semmap.exceptions import (
    BehindCameraError,
    DegenerateGeometryError,
    UndistortionError,
)
from semmap.utils import (
    IDENTITY_QUAT,
    as_quat,
    as_rotation,
    quat_normalize,
    rotation_yaw,
    yaw_rotation,
)

MIN_DEPTH = 1e-6
UNDISTORT_MAX_ITERATIONS = 20
UNDISTORT_TOLERANCE = 1e-10

# Optical axes of a forward-looking camera expressed in the vehicle frame.
_FORWARD_OPTICAL = np.array(
    [
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
        [1.0, 0.0, 0.0],
    ]
)


class RoiSpec(BaseModel):
    """
    Ground rectangle in front of the vehicle from which pixels are used.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    forward_min: float = 0.0
    forward_max: float = 12.0
    half_width: float = 4.0

    @model_validator(mode="after")
    def _check_bounds(self) -> "RoiSpec":
        if not (self.forward_max > self.forward_min >= 0):
            raise ValueError("ROI needs forward_max > forward_min >= 0.")

        if self.half_width <= 0:
            raise ValueError("ROI half_width must be positive.")

        return self

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return (
            (xy[:, 0] >= self.forward_min)
            & (xy[:, 0] <= self.forward_max)
            & (np.abs(xy[:, 1]) <= self.half_width)
        )


class CameraModel(BaseModel):
    """
    Pinhole camera with two radial (k1, k2) and two tangential (p1, p2) distortion terms.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    dist: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    r_c: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    """Rotation vehicle -> camera as a (w, x, y, z) unit quaternion."""
    t_c: tuple[float, float, float] = (0.0, 0.0, 0.0)
    """Translation vehicle -> camera, meters."""
    image_w: int = Field(gt=0)
    image_h: int = Field(gt=0)

    @model_validator(mode="after")
    def _check_intrinsics(self) -> "CameraModel":
        if abs(float(np.linalg.norm(self.r_c)) - 1.0) > 1e-9:
            raise ValueError("r_c must be a unit quaternion.")

        if not (0 <= self.cx < self.image_w and 0 <= self.cy < self.image_h):
            raise ValueError("Principal point must lie inside the image.")

        return self

    @classmethod
    def from_mounting(
        cls,
        position: tuple[float, float, float] = (1.0, 0.0, 1.5),
        pitch: float = math.radians(15.0),
        yaw: float = 0.0,
        roll: float = 0.0,
        fx: float = 400.0,
        fy: float = 400.0,
        cx: float = 320.0,
        cy: float = 240.0,
        image_w: int = 640,
        image_h: int = 480,
        dist: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0),
    ) -> "CameraModel":
        """
        Build the extrinsics from where the camera sits on the vehicle.

        Args:
            position: Camera center in the vehicle frame, meters.
            pitch: Downward tilt of the optical axis, radians.
            yaw: Rotation of the optical axis to the left, radians.
            roll: Rotation about the optical axis, radians.
        """
        body = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        rotation = _FORWARD_OPTICAL @ body.T
        r_c = as_quat(Rotation.from_matrix(rotation), canonical=True)
        translation = -rotation @ np.asarray(position, dtype=float)
        return cls(
            fx=fx,
            fy=fy,
            cx=cx,
            cy=cy,
            dist=dist,
            r_c=tuple(float(v) for v in r_c),  # type: ignore[arg-type]
            t_c=tuple(float(v) for v in translation),  # type: ignore[arg-type]
            image_w=image_w,
            image_h=image_h,
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CameraModel":
        return cls.model_validate_json(Path(path).read_text())

    def save(self, path: Union[str, Path]):
        Path(path).write_text(self.model_dump_json(indent=2))

    @cached_property
    def rotation(self) -> np.ndarray:
        return as_rotation(self.r_c).as_matrix()

    @cached_property
    def translation(self) -> np.ndarray:
        return np.asarray(self.t_c, dtype=float)

    @cached_property
    def center(self) -> np.ndarray:
        """Camera center in the vehicle frame."""
        return -self.rotation.T @ self.translation

    @cached_property
    def ground_homography(self) -> np.ndarray:
        """Columns 1, 2 and 4 of ``[R_c t_c]``: maps ``(x_v, y_v, 1)`` to the camera frame."""
        return np.column_stack((self.rotation[:, 0], self.rotation[:, 1], self.translation))

    @cached_property
    def _ground_homography_inv(self) -> np.ndarray:
        homography = self.ground_homography
        if abs(np.linalg.det(homography)) < 1e-12:
            raise DegenerateGeometryError()

        return np.linalg.inv(homography)

    @property
    def has_distortion(self) -> bool:
        return any(self.dist)

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        return (
            (uv[:, 0] >= 0)
            & (uv[:, 0] < self.image_w)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] < self.image_h)
        )


def _distort(xn: np.ndarray, yn: np.ndarray, dist) -> tuple[np.ndarray, np.ndarray]:
    k1, k2, p1, p2 = dist
    r2 = xn * xn + yn * yn
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
    return xd, yd


def _undistort(
    xd: np.ndarray, yd: np.ndarray, dist
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed-point inversion of :func:`_distort`. Returns ``(x, y, converged)``."""
    if not any(dist):
        return xd, yd, np.ones_like(xd, dtype=bool)

    k1, k2, p1, p2 = dist
    x, y = xd.copy(), yd.copy()
    converged = np.zeros_like(xd, dtype=bool)
    for _ in range(UNDISTORT_MAX_ITERATIONS):
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        step = np.maximum(np.abs(x_new - x), np.abs(y_new - y))
        x, y = x_new, y_new
        converged = step < UNDISTORT_TOLERANCE
        if converged.all():
            break

    return x, y, converged


def project_points(cam: CameraModel, points_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Project camera-frame points. Returns ``(uv, visible)``; ``uv`` is NaN where the point
    is behind the camera.
    """
    points_c = np.asarray(points_c, dtype=float).reshape(-1, 3)
    depth = points_c[:, 2]
    in_front = depth > MIN_DEPTH
    safe_depth = np.where(in_front, depth, 1.0)
    xd, yd = _distort(points_c[:, 0] / safe_depth, points_c[:, 1] / safe_depth, cam.dist)
    uv = np.column_stack((cam.fx * xd + cam.cx, cam.fy * yd + cam.cy))
    uv[~in_front] = np.nan
    visible = in_front & cam.contains(uv)
    return uv, visible


def project(cam: CameraModel, point_c) -> Optional[tuple[float, float]]:
    """
    Distorted pinhole projection of one camera-frame point.

    Raises:
        :class:`~semmap.exceptions.BehindCameraError`: When the depth is not positive.

    Returns:
        The pixel ``(u, v)``, or ``None`` when it falls outside the image.
    """
    point_c = np.asarray(point_c, dtype=float)
    if point_c[2] <= MIN_DEPTH:
        raise BehindCameraError(float(point_c[2]))

    uv, visible = project_points(cam, point_c)
    if not visible[0]:
        return None

    return float(uv[0, 0]), float(uv[0, 1])


def unproject_pixels(cam: CameraModel, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit viewing rays for pixels. Returns ``(rays, converged)``."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    xd = (uv[:, 0] - cam.cx) / cam.fx
    yd = (uv[:, 1] - cam.cy) / cam.fy
    x, y, converged = _undistort(xd, yd, cam.dist)
    rays = np.column_stack((x, y, np.ones_like(x)))
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    return rays, converged


def unproject(cam: CameraModel, pixel) -> np.ndarray:
    """
    Lift a pixel into a unit ray in the camera frame.

    Raises:
        :class:`~semmap.exceptions.UndistortionError`: When the distortion inversion does
          not converge.
    """
    rays, converged = unproject_pixels(cam, np.asarray(pixel, dtype=float))
    if not converged[0]:
        raise UndistortionError(UNDISTORT_MAX_ITERATIONS)

    return rays[0]


def ipm_ground_points(
    cam: CameraModel, uv: np.ndarray, roi: Optional[RoiSpec] = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    Inverse perspective mapping of many pixels onto the vehicle-frame plane ``z = 0``.

    Returns:
        ``(xy, accepted)`` where ``xy`` is ``(N, 2)`` and ``accepted`` flags pixels whose
        ray hits the ground in front of the camera, inside ``roi`` when given.
    """
    rays, converged = unproject_pixels(cam, uv)
    ground = rays @ cam._ground_homography_inv.T
    scale = ground[:, 2]
    # NOTE: a non-positive scale means the ray meets the plane behind the camera or never.
    hits = converged & (scale > 1e-12)
    safe_scale = np.where(hits, scale, 1.0)
    xy = ground[:, :2] / safe_scale[:, None]
    if roi is not None:
        hits &= roi.contains(xy)

    xy[~hits] = np.nan
    return xy, hits


def ipm_ground_point(
    cam: CameraModel, pixel, roi: Optional[RoiSpec] = None
) -> Optional[tuple[float, float]]:
    """
    Back-project one pixel to ``(x_v, y_v)`` on the ground, or ``None`` when rejected.

    Raises:
        :class:`~semmap.exceptions.DegenerateGeometryError`: When the ground homography is
          singular.
    """
    xy, hits = ipm_ground_points(cam, np.asarray(pixel, dtype=float), roi=roi)
    if not hits[0]:
        return None

    return float(xy[0, 0]), float(xy[0, 1])


def vehicle_to_camera(cam: CameraModel, points_v: np.ndarray) -> np.ndarray:
    points_v = np.asarray(points_v, dtype=float).reshape(-1, 3)
    return points_v @ cam.rotation.T + cam.translation


@dataclass(frozen=True)
class Pose:
    """
    Vehicle pose in the world frame: position ``p`` and orientation ``q`` (world <- vehicle).
    """

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=float).reshape(4)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_xy_yaw(cls, x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        return cls(p=np.array([x, y, z]), q=as_quat(yaw_rotation(yaw)))

    @property
    def rotation(self) -> Rotation:
        return as_rotation(self.q)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.as_matrix()

    @property
    def yaw(self) -> float:
        return rotation_yaw(self.rotation)

    @property
    def xy_yaw(self) -> tuple[float, float, float]:
        return float(self.p[0]), float(self.p[1]), self.yaw

    def compose(self, other: "Pose") -> "Pose":
        rotation = self.rotation
        return Pose(p=self.p + rotation.apply(other.p), q=as_quat(rotation * other.rotation))

    def inverse(self) -> "Pose":
        inverse = self.rotation.inv()
        return Pose(p=-inverse.apply(self.p), q=as_quat(inverse))

    def between(self, other: "Pose") -> "Pose":
        """Relative pose of ``other`` expressed in this pose's frame."""
        return self.inverse().compose(other)

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.shape[-1] == 2:
            points = np.column_stack((points.reshape(-1, 2), np.zeros(points.size // 2)))

        return points.reshape(-1, 3) @ self.rotation_matrix.T + self.p

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented

        return bool(np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q))

    def __hash__(self) -> int:
        return hash((self.p.tobytes(), self.q.tobytes()))


def transform_to_world(pose: Pose, point_v) -> np.ndarray:
    """``R(q) @ point_v + p`` for one vehicle-frame point."""
    return pose.transform_points(np.asarray(point_v, dtype=float).reshape(1, -1))[0]
