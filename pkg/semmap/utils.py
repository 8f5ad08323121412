"""
Rotation and angle helpers and a bounds-checked binary reader shared by the wire formats.

Quaternions are stored as ``(w, x, y, z)`` numpy arrays; the math is done by
:class:`scipy.spatial.transform.Rotation`, which keeps them as ``(x, y, z, w)``.
"""

import math
import struct
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from semmap.exceptions import ParseError

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

_XYZW = [1, 2, 3, 0]
_WXYZ = [3, 0, 1, 2]


def as_rotation(q: np.ndarray) -> Rotation:
    """Rotation of a ``(w, x, y, z)`` quaternion, or of an ``(n, 4)`` stack of them."""
    return Rotation.from_quat(np.asarray(q, dtype=float)[..., _XYZW])


def as_quat(rotation: Rotation, canonical: bool = False) -> np.ndarray:
    """``(w, x, y, z)`` of ``rotation``; with ``canonical`` the scalar part is non-negative."""
    q = rotation.as_quat()[..., _WXYZ]
    if canonical:
        q = np.where(q[..., :1] < 0.0, -q, q)

    return q


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit quaternion of the same rotation with a non-negative scalar part."""
    return as_quat(as_rotation(q), canonical=True)


def yaw_rotation(yaw: float) -> Rotation:
    return Rotation.from_euler("z", yaw)


def rotation_yaw(rotation: Rotation) -> float:
    """Heading of the rotated x axis in the x-y plane."""
    matrix = rotation.as_matrix()
    return math.atan2(matrix[1, 0], matrix[0, 0])


def wrap_angle(angle: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi

    return wrapped


def rot2d(yaw: float) -> np.ndarray:
    return yaw_rotation(yaw).as_matrix()[:2, :2]


class ByteReader:
    """
    Bounds-checked little-endian cursor over a byte buffer. Every failure is raised as
    ``error_cls(message, offset)``.
    """

    def __init__(self, data: bytes, error_cls: type[ParseError]):
        self.data = memoryview(data)
        self.offset = 0
        self.error_cls = error_cls

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def fail(self, message: str, offset: Optional[int] = None) -> ParseError:
        return self.error_cls(message, self.offset if offset is None else offset)

    def take(self, size: int, what: str = "field") -> memoryview:
        if size < 0 or size > self.remaining:
            raise self.fail(f"truncated {what} (need {size} bytes, {self.remaining} left)")

        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct, what: str = "field") -> tuple:
        return layout.unpack(self.take(layout.size, what))

    def expect_end(self):
        if self.remaining:
            raise self.fail(f"{self.remaining} trailing bytes")
