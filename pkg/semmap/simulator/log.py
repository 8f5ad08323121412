"""
Drive log ("SLOG"): the recorded frame stream of one simulated drive.

Little-endian layout::

    header   4s magic "SLOG" | u16 version | u16 image_w | u16 image_h | f64 frame_rate
             | u32 frame_count
    record   u32 body_length | body
    body     u32 index | f64 t | u8 flags (bit 0: GNSS present)
             | [3 x f64 gnss position]
             | 3 x f64 odom dp | 4 x f64 odom dq
             | 3 x f64 truth p | 4 x f64 truth q
             | u32 pixel_count | pixel_count x (f32 u | f32 v | u8 label)
"""

import struct
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from semmap.exceptions import DriveLogError, InputMismatchError
from semmap.geometry import CameraModel, Pose
from semmap.grid import NUM_LABELS
from semmap.posegraph import GnssMeasurement, OdometryMeasurement
from semmap.simulator.drive import SimFrame
from semmap.simulator.render import PIXEL_DTYPE
from semmap.utils import ByteReader

MAGIC = b"SLOG"
VERSION = 1
FLAG_GNSS = 0x01

HEADER = struct.Struct("<4sHHHdI")
RECORD_LENGTH = struct.Struct("<I")
RECORD_HEADER = struct.Struct("<IdB")
POSITION = struct.Struct("<3d")
POSE = struct.Struct("<3d4d")
PIXEL_COUNT = struct.Struct("<I")


@dataclass
class DriveLog:
    image_w: int
    image_h: int
    frame_rate: float
    frames: list[SimFrame] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def gnss_coverage(self) -> float:
        if not self.frames:
            return 0.0

        return sum(frame.gnss is not None for frame in self.frames) / len(self.frames)

    def check_camera(self, cam: CameraModel):
        """
        Raises:
            :class:`~semmap.exceptions.InputMismatchError`: When the calibration was made
              for a different image size than the log was recorded with.
        """
        if (cam.image_w, cam.image_h) != (self.image_w, self.image_h):
            raise InputMismatchError(
                f"Calibration is {cam.image_w}x{cam.image_h} px "
                f"but the drive log was recorded at {self.image_w}x{self.image_h} px."
            )


def _encode_frame(frame: SimFrame) -> bytes:
    flags = FLAG_GNSS if frame.gnss is not None else 0
    parts = [RECORD_HEADER.pack(frame.index, frame.t, flags)]
    if frame.gnss is not None:
        parts.append(POSITION.pack(*frame.gnss.p))

    parts.append(POSE.pack(*frame.odom.dp, *frame.odom.dq))
    parts.append(POSE.pack(*frame.truth.p, *frame.truth.q))
    pixels = np.ascontiguousarray(frame.pixels, dtype=PIXEL_DTYPE)
    parts.append(PIXEL_COUNT.pack(len(pixels)))
    parts.append(pixels.tobytes())
    body = b"".join(parts)
    return RECORD_LENGTH.pack(len(body)) + body


def encode_drive_log(frames: Iterable[SimFrame], cam: CameraModel, frame_rate: float) -> bytes:
    frames = list(frames)
    header = HEADER.pack(MAGIC, VERSION, cam.image_w, cam.image_h, frame_rate, len(frames))
    return header + b"".join(_encode_frame(frame) for frame in frames)


def write_drive_log(
    path: Union[str, Path], frames: Iterable[SimFrame], cam: CameraModel, frame_rate: float
) -> int:
    """Write the log and return its size in bytes."""
    data = encode_drive_log(frames, cam, frame_rate)
    Path(path).write_bytes(data)
    return len(data)


def _decode_frame(reader: ByteReader, image_w: int, image_h: int) -> SimFrame:
    (length,) = reader.unpack(RECORD_LENGTH, "record length")
    start = reader.offset
    if length > reader.remaining:
        raise reader.fail(f"record length {length} exceeds the {reader.remaining} bytes left")

    index, t, flags = reader.unpack(RECORD_HEADER, "record header")
    if flags & ~FLAG_GNSS:
        raise reader.fail(f"unknown flags 0x{flags:02x}", start + 12)

    gnss = None
    if flags & FLAG_GNSS:
        position = reader.unpack(POSITION, "GNSS position")
        if not np.all(np.isfinite(position)):
            raise reader.fail("non-finite GNSS position", reader.offset - POSITION.size)

        gnss = GnssMeasurement(p=np.array(position))

    poses = []
    for what in ("odometry", "truth pose"):
        values = np.array(reader.unpack(POSE, what))
        q = values[3:]
        if not np.all(np.isfinite(values)) or np.linalg.norm(q) < 1e-9:
            raise reader.fail(f"invalid {what}", reader.offset - POSE.size)

        poses.append((values[:3], q))

    (count,) = reader.unpack(PIXEL_COUNT, "pixel count")
    pixels_offset = reader.offset
    pixels = np.frombuffer(reader.take(count * PIXEL_DTYPE.itemsize, "pixels"), dtype=PIXEL_DTYPE)
    bad = np.flatnonzero(
        ~(
            (pixels["u"] >= 0)
            & (pixels["u"] < image_w)
            & (pixels["v"] >= 0)
            & (pixels["v"] < image_h)
            & (pixels["label"] < NUM_LABELS)
        )
    )
    if len(bad):
        raise reader.fail(
            "pixel outside the image or with an unknown label",
            pixels_offset + int(bad[0]) * PIXEL_DTYPE.itemsize,
        )

    if reader.offset - start != length:
        raise reader.fail(f"record is {reader.offset - start} bytes, header says {length}", start)

    (dp, dq), (p, q) = poses
    return SimFrame(
        index=index,
        t=t,
        pixels=pixels.copy(),
        odom=OdometryMeasurement(dp=dp, dq=dq),
        truth=Pose(p=p, q=q),
        gnss=gnss,
    )


def decode_drive_log(data: bytes) -> DriveLog:
    """
    Raises:
        :class:`~semmap.exceptions.DriveLogError`: Naming the byte offset of the first
          malformed field.
    """
    reader = ByteReader(data, DriveLogError)
    magic, version, image_w, image_h, frame_rate, count = reader.unpack(HEADER, "header")
    if magic != MAGIC:
        raise reader.fail(f"bad magic {bytes(magic)!r}", 0)

    if version != VERSION:
        raise reader.fail(f"unsupported version {version}", 4)

    if not (frame_rate > 0 and np.isfinite(frame_rate)):
        raise reader.fail(f"invalid frame rate {frame_rate}", 10)

    log = DriveLog(image_w=image_w, image_h=image_h, frame_rate=frame_rate)
    for _ in range(count):
        log.frames.append(_decode_frame(reader, image_w, image_h))

    reader.expect_end()
    return log


def read_drive_log(path: Union[str, Path]) -> DriveLog:
    return decode_drive_log(Path(path).read_bytes())
