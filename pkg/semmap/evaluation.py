"""
Localization accuracy against simulator ground truth: per-frame errors in the true
vehicle frame (x longitudinal, y lateral) and yaw, summarized as mean and 90th
percentile of the absolute values.
"""

import csv
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import BaseModel
from rich.table import Table

from semmap.exceptions import InputMismatchError
from semmap.geometry import Pose
from semmap.localizer import LocalizationRow
from semmap.utils import wrap_angle

ERROR_FIELDS = ("t", "x_error", "y_error", "yaw_error_deg")
TIME_TOLERANCE = 1e-6


class ErrorSummary(BaseModel):
    frames: int = 0
    mean_x: float = 0.0
    mean_y: float = 0.0
    mean_yaw_deg: float = 0.0
    p90_x: float = 0.0
    p90_y: float = 0.0
    p90_yaw_deg: float = 0.0

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "ErrorSummary":
        errors = np.abs(np.asarray(errors, dtype=float).reshape(-1, 3))
        if not len(errors):
            return cls()

        mean = errors.mean(axis=0)
        p90 = np.percentile(errors, 90, axis=0)
        return cls(
            frames=len(errors),
            mean_x=float(mean[0]),
            mean_y=float(mean[1]),
            mean_yaw_deg=float(mean[2]),
            p90_x=float(p90[0]),
            p90_y=float(p90[1]),
            p90_yaw_deg=float(p90[2]),
        )

    def table(self, title: str = "Localization error") -> Table:
        table = Table(title=title)
        table.add_column("")
        table.add_column("x error (m)", justify="right")
        table.add_column("y error (m)", justify="right")
        table.add_column("yaw error (°)", justify="right")
        for name, values in (
            ("average", (self.mean_x, self.mean_y, self.mean_yaw_deg)),
            ("90%", (self.p90_x, self.p90_y, self.p90_yaw_deg)),
        ):
            table.add_row(name, *(f"{value:.3f}" for value in values))

        table.caption = f"{self.frames} frames"
        return table


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float, float]:
    """``(x, y, yaw°)`` error of ``estimate``, expressed in the frame of ``truth``."""
    heading = truth.yaw
    dx, dy = estimate.p[:2] - truth.p[:2]
    c, s = math.cos(heading), math.sin(heading)
    return (
        float(c * dx + s * dy),
        float(-s * dx + c * dy),
        math.degrees(wrap_angle(estimate.yaw - heading)),
    )


def frame_errors(estimates: Sequence[Pose], truths: Sequence[Pose]) -> np.ndarray:
    if len(estimates) != len(truths):
        raise InputMismatchError(
            f"{len(estimates)} estimates cannot be compared with {len(truths)} true poses."
        )

    return np.array([pose_error(e, t) for e, t in zip(estimates, truths)]).reshape(-1, 3)


def match_by_time(
    rows: Sequence[LocalizationRow], times: Sequence[float], truths: Sequence[Pose]
) -> tuple[list[float], list[Pose], list[Pose]]:
    """
    Pair each estimate with the true pose recorded at the same timestamp.

    Raises:
        :class:`~semmap.exceptions.InputMismatchError`: When an estimate has no frame.
    """
    truth_times = np.asarray(times, dtype=float)
    order = np.argsort(truth_times)
    matched_times, estimates, matched = [], [], []
    for row in rows:
        position = int(np.searchsorted(truth_times[order], row.t))
        candidates = [p for p in (position - 1, position) if 0 <= p < len(order)]
        best = min(candidates, key=lambda p: abs(truth_times[order[p]] - row.t), default=None)
        if best is None or abs(truth_times[order[best]] - row.t) > TIME_TOLERANCE:
            raise InputMismatchError(f"No recorded frame at t={row.t:.6f}.")

        matched_times.append(row.t)
        estimates.append(row.pose)
        matched.append(truths[order[best]])

    return matched_times, estimates, matched


def write_errors(path: Union[str, Path], times: Sequence[float], errors: np.ndarray):
    with open(path, "w", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(ERROR_FIELDS)
        for t, (x, y, yaw) in zip(times, np.asarray(errors).reshape(-1, 3).tolist()):
            writer.writerow((f"{t:.6f}", f"{x:.6f}", f"{y:.6f}", f"{yaw:.6f}"))


def write_summary(path: Union[str, Path], summary: ErrorSummary):
    Path(path).write_text(summary.model_dump_json(indent=2))
