"""
Planar ``(x, y, yaw)`` EKF: odometry prediction, ICP pose correction.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat
from scipy.stats import chi2

from semmap.exceptions import ConfigurationError, LocalizationError
from semmap.geometry import Pose
from semmap.localizer.icp import IcpResult
from semmap.posegraph import OdometryMeasurement
from semmap.utils import rot2d, wrap_angle

STATE_DIM = 3


class EkfConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    odom_xy_sigma: NonNegativeFloat = 0.02
    """Per-step odometry translation noise, meters."""
    odom_yaw_sigma: NonNegativeFloat = 0.001
    """Per-step odometry heading noise, radians."""
    meas_xy_sigma: PositiveFloat = 0.05
    meas_yaw_sigma: PositiveFloat = 0.005
    initial_xy_sigma: NonNegativeFloat = 0.1
    initial_yaw_sigma: NonNegativeFloat = 0.01
    gate_probability: float = Field(0.99, gt=0, lt=1)

    def process_noise(self) -> np.ndarray:
        return np.diag([self.odom_xy_sigma**2, self.odom_xy_sigma**2, self.odom_yaw_sigma**2])

    def measurement_noise(self) -> np.ndarray:
        return np.diag([self.meas_xy_sigma**2, self.meas_xy_sigma**2, self.meas_yaw_sigma**2])

    def initial_covariance(self) -> np.ndarray:
        return np.diag(
            [self.initial_xy_sigma**2, self.initial_xy_sigma**2, self.initial_yaw_sigma**2]
        )

    @property
    def gate(self) -> float:
        return float(chi2.ppf(self.gate_probability, STATE_DIM))


@dataclass(frozen=True)
class EkfState:
    x: float
    y: float
    yaw: float
    cov: np.ndarray = field(default_factory=lambda: np.zeros((STATE_DIM, STATE_DIM)))
    gated: bool = False
    """Set when the last measurement was rejected by the innovation gate."""

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def from_pose(cls, pose: Pose, cov: np.ndarray) -> "EkfState":
        x, y, yaw = pose.xy_yaw
        return cls(x, y, yaw, cov)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    @property
    def pose(self) -> Pose:
        return Pose.from_xy_yaw(self.x, self.y, self.yaw)


def _check_noise(noise: np.ndarray, what: str) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (STATE_DIM, STATE_DIM) or not np.allclose(noise, noise.T, atol=1e-12):
        raise ConfigurationError(f"{what} noise must be a symmetric 3x3 matrix.")

    try:
        np.linalg.cholesky(noise)
    except np.linalg.LinAlgError as err:
        raise ConfigurationError(f"{what} noise is not positive-definite.") from err

    return noise


def ekf_predict(state: EkfState, odom: OdometryMeasurement, noise: np.ndarray) -> EkfState:
    """
    Dead-reckon the planar part of ``odom`` and propagate the covariance. ``noise`` is the
    process covariance of ``(dx, dy, dyaw)`` in the vehicle frame.
    """
    dx, dy = float(odom.dp[0]), float(odom.dp[1])
    dyaw = odom.as_pose().yaw
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    motion = np.array(
        [
            [1.0, 0.0, -s * dx - c * dy],
            [0.0, 1.0, c * dx - s * dy],
            [0.0, 0.0, 1.0],
        ]
    )
    noise_map = np.eye(STATE_DIM)
    noise_map[:2, :2] = rot2d(state.yaw)
    cov = motion @ state.cov @ motion.T + noise_map @ np.asarray(noise) @ noise_map.T
    return EkfState(
        state.x + c * dx - s * dy,
        state.y + s * dx + c * dy,
        state.yaw + dyaw,
        cov,
    )


def ekf_update_pose(
    state: EkfState, measurement: np.ndarray, meas_noise: np.ndarray, gate: float
) -> EkfState:
    """
    Joseph-form update with an identity measurement model on ``(x, y, yaw)``.

    Raises:
        :class:`~semmap.exceptions.ConfigurationError`: When ``meas_noise`` is not
          symmetric positive-definite.
    """
    meas_noise = _check_noise(meas_noise, "Measurement")
    innovation = np.asarray(measurement, dtype=float) - state.mean
    innovation[2] = wrap_angle(innovation[2])
    innovation_cov = state.cov + meas_noise
    nis = float(innovation @ np.linalg.solve(innovation_cov, innovation))
    if nis > gate:
        return replace(state, gated=True)

    gain = np.linalg.solve(innovation_cov.T, state.cov.T).T
    mean = state.mean + gain @ innovation
    residual = np.eye(STATE_DIM) - gain
    cov = residual @ state.cov @ residual.T + gain @ meas_noise @ gain.T
    return EkfState(float(mean[0]), float(mean[1]), float(mean[2]), cov)


def ekf_update(
    state: EkfState,
    meas: Union[IcpResult, Pose],
    meas_noise: np.ndarray,
    gate_probability: float = 0.99,
) -> EkfState:
    """
    Correct ``state`` with a converged ICP pose. Measurements beyond the chi-square gate
    (3 DoF) leave the state unchanged and set ``gated``.
    """
    if isinstance(meas, IcpResult):
        if not meas.converged:
            raise LocalizationError("Cannot fuse an ICP result that did not converge.")

        meas = meas.pose

    return ekf_update_pose(
        state, np.array(meas.xy_yaw), meas_noise, float(chi2.ppf(gate_probability, STATE_DIM))
    )
