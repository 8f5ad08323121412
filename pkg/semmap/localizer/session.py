import csv
import math
from collections.abc import Iterable
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from semmap.exceptions import LocalizationError, NoOverlapError
from semmap.geometry import Pose
from semmap.grid import FeatureScan, SemanticGridMap
from semmap.localizer.ekf import EkfConfig, EkfState, ekf_predict, ekf_update_pose
from semmap.localizer.icp import IcpConfig, IcpResult, MapIndex, icp_localize
from semmap.logging import logger
from semmap.posegraph import OdometryMeasurement

LOCALIZATION_FIELDS = ("t", "x", "y", "yaw", "icp_rms", "icp_inliers", "gated")


class LocalizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    icp: IcpConfig = Field(default_factory=IcpConfig)
    ekf: EkfConfig = Field(default_factory=EkfConfig)


@dataclass
class LocalizationRow:
    t: float
    x: float
    y: float
    yaw: float
    icp_rms: float = math.nan
    icp_inliers: int = 0
    gated: bool = False

    @property
    def pose(self) -> Pose:
        return Pose.from_xy_yaw(self.x, self.y, self.yaw)


class LocalizationSession:
    """
    One vehicle's localization loop against a read-only map: predict with odometry at
    every frame, run ICP from the predicted pose and fuse converged results. A scan older
    than the last fused one is dropped.
    """

    def __init__(
        self,
        grid: Union[MapIndex, SemanticGridMap],
        config: Optional[LocalizerConfig] = None,
    ):
        self.index = MapIndex.of(grid)
        self.config = config or LocalizerConfig()
        self._process_noise = self.config.ekf.process_noise()
        self._meas_noise = self.config.ekf.measurement_noise()
        self._gate = self.config.ekf.gate
        self._state: Optional[EkfState] = None
        self._last_measurement = -math.inf

    @property
    def state(self) -> EkfState:
        if self._state is None:
            raise LocalizationError("Localization session has not been started.")

        return self._state

    def start(self, pose: Pose):
        self._state = EkfState.from_pose(pose, self.config.ekf.initial_covariance())
        self._last_measurement = -math.inf

    def predict(self, odom: OdometryMeasurement) -> EkfState:
        self._state = ekf_predict(self.state, odom, self._process_noise)
        return self._state

    def correct(self, scan: FeatureScan) -> Optional[IcpResult]:
        if scan.timestamp < self._last_measurement:
            logger.debug(f"Dropping late scan at t={scan.timestamp:.3f}.")
            return None

        try:
            result = icp_localize(scan, self.index, self.state.pose, self.config.icp)
        except NoOverlapError as err:
            logger.debug(f"t={scan.timestamp:.3f}: {err}")
            return None

        if result.converged:
            self._state = ekf_update_pose(
                self.state, result.pose.xy_yaw, self._meas_noise, self._gate
            )
            self._last_measurement = scan.timestamp

        return result

    def step(
        self, t: float, odom: Optional[OdometryMeasurement], scan: Optional[FeatureScan]
    ) -> LocalizationRow:
        if odom is not None:
            self.predict(odom)

        result = self.correct(scan) if scan is not None and len(scan) else None
        state = self.state
        row = LocalizationRow(t, state.x, state.y, state.yaw)
        if result is not None:
            row.icp_rms = result.rms_residual
            row.icp_inliers = result.inlier_count
            row.gated = result.converged and state.gated

        return row


def write_localization(path: Union[str, Path], rows: Iterable[LocalizationRow]):
    with open(path, "w", newline="") as file:
        writer = csv.DictWriter(file, fieldnames=LOCALIZATION_FIELDS)
        writer.writeheader()
        for row in rows:
            record = asdict(row)
            record["gated"] = int(record["gated"])
            writer.writerow(record)


def read_localization(path: Union[str, Path]) -> list[LocalizationRow]:
    with open(path, newline="") as file:
        return [
            LocalizationRow(
                t=float(record["t"]),
                x=float(record["x"]),
                y=float(record["y"]),
                yaw=float(record["yaw"]),
                icp_rms=float(record["icp_rms"]),
                icp_inliers=int(record["icp_inliers"]),
                gated=bool(int(record["gated"])),
            )
            for record in csv.DictReader(file)
        ]
