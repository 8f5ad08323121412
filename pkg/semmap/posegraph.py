"""
Pose-graph fusion of GNSS fixes and dead-reckoned odometry.

Each node is a 6-DoF :class:`~semmap.geometry.Pose`. The solver linearizes in the tangent
space of every node (``p <- p + dp``, ``q <- q * Exp(dtheta)``) and runs Levenberg-Marquardt
over the sparse normal equations.
"""

import csv
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, PositiveFloat, PositiveInt
from scipy.sparse.linalg import spsolve
from scipy.spatial.transform import Rotation

from semmap.exceptions import DivergenceError, PoseGraphError, UnobservableGaugeError
from semmap.geometry import Pose
from semmap.logging import logger
from semmap.utils import IDENTITY_QUAT, as_quat, as_rotation, quat_normalize, rot2d, wrap_angle

STATE_DIM = 6


@dataclass(frozen=True)
class OdometryMeasurement:
    """Motion between two consecutive nodes, expressed in the earlier node's frame."""

    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dq: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        object.__setattr__(self, "dp", np.asarray(self.dp, dtype=float).reshape(3))
        object.__setattr__(self, "dq", quat_normalize(np.asarray(self.dq, dtype=float).reshape(4)))

    @classmethod
    def between(cls, start: Pose, end: Pose) -> "OdometryMeasurement":
        delta = start.between(end)
        return cls(dp=delta.p, dq=delta.q)

    def as_pose(self) -> Pose:
        return Pose(p=self.dp, q=self.dq)


@dataclass(frozen=True)
class GnssMeasurement:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise PoseGraphError("GNSS fix has non-finite components.")

        object.__setattr__(self, "p", p)


class FactorWeights(BaseModel):
    """
    Standard deviations that whiten the residuals (m per step, rad per step, m).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_odom_p: PositiveFloat = 0.02
    sigma_odom_q: PositiveFloat = 0.001
    sigma_gnss: PositiveFloat = 0.03


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: PositiveInt = 50
    gradient_tolerance: PositiveFloat = 1e-8
    relative_cost_tolerance: PositiveFloat = 1e-10
    initial_damping: PositiveFloat = 1e-4
    min_damping: PositiveFloat = 1e-10
    max_damping: PositiveFloat = 1e8


@dataclass
class PoseGraphProblem:
    nodes: list[Pose]
    odom_factors: list[OdometryMeasurement]
    gnss_factors: dict[int, GnssMeasurement] = field(default_factory=dict)
    weights: FactorWeights = field(default_factory=FactorWeights)

    def __post_init__(self):
        if len(self.odom_factors) != max(len(self.nodes) - 1, 0):
            raise PoseGraphError(
                f"Expected {max(len(self.nodes) - 1, 0)} odometry factors, "
                f"got {len(self.odom_factors)}."
            )

        for index in self.gnss_factors:
            if not 0 <= index < len(self.nodes):
                raise PoseGraphError(f"GNSS factor references missing node {index}.")

        self._dp = np.array([m.dp for m in self.odom_factors]).reshape(-1, 3)
        self._dq = np.array([m.dq for m in self.odom_factors]).reshape(-1, 4)
        self._gnss_index = np.array(sorted(self.gnss_factors), dtype=int)
        self._gnss_p = np.array(
            [self.gnss_factors[i].p for i in self._gnss_index.tolist()]
        ).reshape(-1, 3)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def state(self) -> tuple[np.ndarray, np.ndarray]:
        positions = np.array([n.p for n in self.nodes]).reshape(-1, 3)
        quats = np.array([n.q for n in self.nodes]).reshape(-1, 4)
        return positions, quats

    def residuals(self, positions: np.ndarray, quats: np.ndarray) -> np.ndarray:
        """Whitened residual vector: all odometry factors, then GNSS factors by node index."""
        return self._evaluate(positions, quats, with_jacobian=False)[0]

    def linearize(
        self, positions: np.ndarray, quats: np.ndarray
    ) -> tuple[np.ndarray, sp.csr_matrix]:
        residual, jacobian = self._evaluate(positions, quats, with_jacobian=True)
        assert jacobian is not None
        return residual, jacobian

    def _evaluate(
        self, positions: np.ndarray, quats: np.ndarray, with_jacobian: bool
    ) -> tuple[np.ndarray, Optional[sp.csr_matrix]]:
        w = self.weights
        n_odom = len(self.odom_factors)
        n_gnss = len(self._gnss_index)

        rot_prev, relative, error = _relative_rotations(quats, self._dq)
        delta = positions[1:] - positions[:-1]
        local = np.einsum("nji,nj->ni", rot_prev, delta)
        r_pos = local - self._dp
        r_rot = error[:, 1:]
        r_gnss = positions[self._gnss_index] - self._gnss_p

        residual = np.concatenate(
            (
                np.hstack((r_pos / w.sigma_odom_p, r_rot / w.sigma_odom_q)).ravel(),
                (r_gnss / w.sigma_gnss).ravel(),
            )
        )
        if not with_jacobian:
            return residual, None

        rot_prev_t = np.transpose(rot_prev, (0, 2, 1))
        blocks_prev = np.zeros((n_odom, 6, 6))
        blocks_cur = np.zeros((n_odom, 6, 6))
        blocks_prev[:, :3, :3] = -rot_prev_t / w.sigma_odom_p
        blocks_prev[:, :3, 3:] = _skews(local) / w.sigma_odom_p
        blocks_cur[:, :3, :3] = rot_prev_t / w.sigma_odom_p
        blocks_cur[:, 3:, 3:] = -0.5 * _right_mats(error)[:, 1:, 1:] / w.sigma_odom_q
        blocks_prev[:, 3:, 3:] = (
            0.5 * np.matmul(_left_mats(relative), _right_mats(self._dq))[:, 1:, 1:] / w.sigma_odom_q
        )

        row_base = np.arange(n_odom)[:, None, None] * 6 + np.arange(6)[None, :, None]
        col_offsets = np.arange(6)[None, None, :]
        rows = np.broadcast_to(row_base, (n_odom, 6, 6))
        cols_prev = np.broadcast_to(
            np.arange(n_odom)[:, None, None] * STATE_DIM + col_offsets, rows.shape
        )
        cols_cur = cols_prev + STATE_DIM

        gnss_rows = 6 * n_odom + np.arange(3 * n_gnss)
        gnss_cols = (self._gnss_index[:, None] * STATE_DIM + np.arange(3)[None, :]).ravel()

        data = np.concatenate(
            (blocks_prev.ravel(), blocks_cur.ravel(), np.full(3 * n_gnss, 1.0 / w.sigma_gnss))
        )
        row_idx = np.concatenate((rows.ravel(), rows.ravel(), gnss_rows))
        col_idx = np.concatenate((cols_prev.ravel(), cols_cur.ravel(), gnss_cols))
        jacobian = sp.coo_matrix(
            (data, (row_idx, col_idx)), shape=(residual.size, STATE_DIM * self.size)
        ).tocsr()
        return residual, jacobian


@dataclass
class OptimizationResult:
    poses: list[Pose]
    final_cost: float
    iterations: int
    initial_cost: float
    gradient_norm: float
    converged: bool


def odometry_residual(s_prev: Pose, s_cur: Pose, m: OdometryMeasurement) -> np.ndarray:
    """
    Position error in the earlier node's frame, followed by the vector part of
    ``q_cur^-1 * q_prev * dq``.
    """
    r_pos = s_prev.rotation.inv().apply(s_cur.p - s_prev.p) - m.dp
    error = as_quat(s_cur.rotation.inv() * s_prev.rotation * as_rotation(m.dq))
    return np.concatenate((r_pos, error[1:]))


def gnss_residual(s: Pose, m: GnssMeasurement) -> np.ndarray:
    return s.p - m.p


def dead_reckon(initial: Pose, odom: Iterable[OdometryMeasurement]) -> list[Pose]:
    poses = [initial]
    for measurement in odom:
        poses.append(poses[-1].compose(measurement.as_pose()))

    return poses


def retract(
    positions: np.ndarray, quats: np.ndarray, delta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Apply a tangent-space update to every node."""
    delta = delta.reshape(-1, STATE_DIM)
    new_quats = as_quat(as_rotation(quats) * Rotation.from_rotvec(delta[:, 3:]))
    return positions + delta[:, :3], new_quats


def optimize(
    problem: PoseGraphProblem, config: Optional[SolverConfig] = None
) -> OptimizationResult:
    """
    Minimize the whitened squared residual sum with Levenberg-Marquardt.

    Raises:
        :class:`~semmap.exceptions.UnobservableGaugeError`: When there is no GNSS factor.
        :class:`~semmap.exceptions.DivergenceError`: When the cost becomes non-finite.
    """
    config = config or SolverConfig()
    if not problem.gnss_factors:
        raise UnobservableGaugeError()

    positions, quats = problem.state()
    residual, jacobian = problem.linearize(positions, quats)
    cost = float(residual @ residual)
    if not math.isfinite(cost):
        raise DivergenceError(0)

    initial_cost = cost
    damping = config.initial_damping
    iterations = 0
    gradient_norm = math.inf
    converged = False

    for iteration in range(1, config.max_iterations + 1):
        gradient = jacobian.T @ residual
        gradient_norm = float(np.max(np.abs(gradient))) if gradient.size else 0.0
        if gradient_norm < config.gradient_tolerance:
            converged = True
            break

        hessian = (jacobian.T @ jacobian).tocsc()
        diagonal = hessian.diagonal()
        scale = np.maximum(diagonal, 1e-6 * max(float(diagonal.max()), 1.0))

        while True:
            damped = hessian + sp.diags(damping * scale, format="csc")
            step = spsolve(damped, -gradient)
            new_positions, new_quats = retract(positions, quats, step)
            new_residual = problem.residuals(new_positions, new_quats)
            new_cost = float(new_residual @ new_residual)
            if not math.isfinite(new_cost):
                raise DivergenceError(iteration)

            if new_cost < cost:
                damping = max(damping / 10.0, config.min_damping)
                break

            damping *= 10.0
            if damping > config.max_damping:
                break

        iterations = iteration
        if new_cost >= cost:
            # No damping level reduces the cost any further.
            logger.debug(f"Pose graph: no descent at iteration {iteration}, stopping.")
            break

        relative_change = (cost - new_cost) / max(cost, np.finfo(float).tiny)
        logger.debug(
            f"Pose graph iteration {iteration}: cost {cost:.6g} -> {new_cost:.6g} "
            f"(lambda={damping:.1e})"
        )
        positions, quats = new_positions, new_quats
        cost = new_cost
        residual, jacobian = problem.linearize(positions, quats)
        if relative_change < config.relative_cost_tolerance:
            converged = True
            break

    poses = [Pose(p=p, q=q) for p, q in zip(positions, quats)]
    return OptimizationResult(
        poses=poses,
        final_cost=cost,
        iterations=iterations,
        initial_cost=initial_cost,
        gradient_norm=gradient_norm,
        converged=converged,
    )


def initial_heading(
    dead_reckoned: Sequence[Pose],
    gnss: Mapping[int, GnssMeasurement],
    min_baseline: float = 2.0,
) -> Optional[float]:
    """
    Heading offset that rotates a dead-reckoned chain onto the GNSS fixes: the angle of the
    GNSS displacement minus the angle of the dead-reckoned displacement between the first
    fix and the farthest later fix. ``None`` when no pair is ``min_baseline`` apart.
    """
    indices = sorted(gnss)
    if len(indices) < 2:
        return None

    first = indices[0]
    origin = gnss[first].p[:2]
    spans = [np.linalg.norm(gnss[i].p[:2] - origin) for i in indices[1:]]
    best = int(np.argmax(spans))
    if spans[best] < min_baseline:
        return None

    last = indices[1 + best]
    gnss_delta = gnss[last].p[:2] - origin
    odom_delta = dead_reckoned[last].p[:2] - dead_reckoned[first].p[:2]
    if np.linalg.norm(odom_delta) < 1e-9:
        return None

    return wrap_angle(
        math.atan2(gnss_delta[1], gnss_delta[0]) - math.atan2(odom_delta[1], odom_delta[0])
    )


def anchor_trajectory(
    dead_reckoned: Sequence[Pose], gnss: Mapping[int, GnssMeasurement]
) -> list[Pose]:
    """
    Rigidly move a dead-reckoned chain so its first GNSS-fixed node sits on that fix, with
    the heading from :func:`initial_heading`. Used as the solver's initial guess.
    """
    if not gnss:
        raise UnobservableGaugeError()

    first = min(gnss)
    yaw = initial_heading(dead_reckoned, gnss) or 0.0
    rotation = Pose.from_xy_yaw(0.0, 0.0, yaw)
    rotated = [rotation.compose(pose) for pose in dead_reckoned]
    shift = gnss[first].p - rotated[first].p
    return [Pose(p=pose.p + shift, q=pose.q) for pose in rotated]


def build_problem(
    odom: Sequence[OdometryMeasurement],
    gnss: Mapping[int, GnssMeasurement],
    weights: Optional[FactorWeights] = None,
) -> PoseGraphProblem:
    """Assemble a problem whose initial nodes are the GNSS-anchored dead-reckoned chain."""
    nodes = anchor_trajectory(dead_reckon(Pose(), odom), gnss)
    return PoseGraphProblem(
        nodes=nodes,
        odom_factors=list(odom),
        gnss_factors=dict(gnss),
        weights=weights or FactorWeights(),
    )


TRAJECTORY_FIELDS = ("t", "px", "py", "pz", "qw", "qx", "qy", "qz", "source")


def trajectory_rows(times: Sequence[float], poses: Sequence[Pose], source: str) -> list[dict]:
    if source not in ("raw", "optimized", "truth"):
        raise ValueError(f"Unknown trajectory source '{source}'.")

    return [
        {
            "t": t,
            "px": pose.p[0],
            "py": pose.p[1],
            "pz": pose.p[2],
            "qw": pose.q[0],
            "qx": pose.q[1],
            "qy": pose.q[2],
            "qz": pose.q[3],
            "source": source,
        }
        for t, pose in zip(times, poses)
    ]


def write_trajectory(path: Union[str, Path], rows: Iterable[dict]):
    with open(path, "w", newline="") as file:
        writer = csv.DictWriter(file, fieldnames=TRAJECTORY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def planar_delta(start: Pose, end: Pose) -> tuple[float, float, float]:
    """``(dx, dy, dyaw)`` of ``end`` in the planar frame of ``start``."""
    dxy = rot2d(start.yaw).T @ (end.p[:2] - start.p[:2])
    return float(dxy[0]), float(dxy[1]), wrap_angle(end.yaw - start.yaw)


def _relative_rotations(
    quats: np.ndarray, dq: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Rotation matrices of every node but the last, ``q_cur^-1 * q_prev`` and the odometry
    error ``q_cur^-1 * q_prev * dq`` of every consecutive pair.
    """
    if len(quats) < 2:
        return np.zeros((0, 3, 3)), np.zeros((0, 4)), np.zeros((0, 4))

    previous = as_rotation(quats[:-1])
    relative = as_rotation(quats[1:]).inv() * previous
    return previous.as_matrix(), as_quat(relative), as_quat(relative * as_rotation(dq))


def _skews(v: np.ndarray) -> np.ndarray:
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out


def _left_mats(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        (
            np.stack((w, -x, -y, -z), axis=-1),
            np.stack((x, w, -z, y), axis=-1),
            np.stack((y, z, w, -x), axis=-1),
            np.stack((z, -y, x, w), axis=-1),
        ),
        axis=1,
    )


def _right_mats(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        (
            np.stack((w, -x, -y, -z), axis=-1),
            np.stack((x, w, z, -y), axis=-1),
            np.stack((y, -z, w, x), axis=-1),
            np.stack((z, y, -x, w), axis=-1),
        ),
        axis=1,
    )
