from semmap.simulator.drive import (
    DriveConfig,
    DrivePath,
    Observation,
    SimFrame,
    block_route,
    frame_count,
    frame_rng,
    intersection_path,
    iter_drive,
    simulate_drive,
    straight_path,
)
from semmap.simulator.log import (
    DriveLog,
    decode_drive_log,
    encode_drive_log,
    read_drive_log,
    write_drive_log,
)
from semmap.simulator.noise import NoiseSpec
from semmap.simulator.render import PIXEL_DTYPE, render_segmentation
from semmap.simulator.world import (
    WorldFeature,
    WorldModel,
    WorldParams,
    WorldTemplate,
    generate_world,
)

__all__ = [
    "DriveConfig",
    "DriveLog",
    "DrivePath",
    "NoiseSpec",
    "Observation",
    "PIXEL_DTYPE",
    "SimFrame",
    "WorldFeature",
    "WorldModel",
    "WorldParams",
    "WorldTemplate",
    "block_route",
    "decode_drive_log",
    "encode_drive_log",
    "frame_count",
    "frame_rng",
    "generate_world",
    "intersection_path",
    "iter_drive",
    "read_drive_log",
    "render_segmentation",
    "simulate_drive",
    "straight_path",
    "write_drive_log",
]
