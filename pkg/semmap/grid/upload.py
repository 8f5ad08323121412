"""
Occupied-cell upload payload ("SGUP").

Little-endian layout::

    header   4s magic "SGUP" | u16 version | u32 tile_count
    tile     i32 tile_x | i32 tile_y | u32 cell_count
    cell     u24 (local ix | local iy << 12) | i16 iz | 5 x u16 counts
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from semmap.exceptions import UploadParseError
from semmap.grid.map import GridTile, SemanticGridMap, TileId
from semmap.grid.types import COUNT_MAX, NUM_LABELS, TILE_SHIFT
from semmap.utils import ByteReader

MAGIC = b"SGUP"
VERSION = 1

HEADER = struct.Struct("<4sHI")
TILE_HEADER = struct.Struct("<iiI")
CELL_DTYPE = np.dtype([("ixy", "u1", (3,)), ("iz", "<i2"), ("counts", "<u2", (NUM_LABELS,))])

_LOCAL_MASK = (1 << TILE_SHIFT) - 1


@dataclass
class UploadTile:
    tile_id: TileId
    indices: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class UploadPayload:
    tiles: list[UploadTile] = field(default_factory=list)

    @property
    def cell_count(self) -> int:
        return sum(len(tile) for tile in self.tiles)

    def to_map(self) -> SemanticGridMap:
        grid = SemanticGridMap()
        for tile in self.tiles:
            grid.merge_arrays(tile.indices, tile.counts)

        return grid


def _encode_tile(tile: GridTile) -> bytes:
    indices = tile.indices
    local_ix = indices[:, 0] & _LOCAL_MASK
    local_iy = indices[:, 1] & _LOCAL_MASK
    packed = (local_ix | (local_iy << 12)).astype(np.uint32)

    cells = np.zeros(len(tile), dtype=CELL_DTYPE)
    cells["ixy"][:, 0] = packed & 0xFF
    cells["ixy"][:, 1] = (packed >> 8) & 0xFF
    cells["ixy"][:, 2] = (packed >> 16) & 0xFF
    cells["iz"] = indices[:, 2]
    cells["counts"] = tile.counts
    return TILE_HEADER.pack(*tile.tile_id, len(tile)) + cells.tobytes()


def encode_upload(grid: SemanticGridMap) -> bytes:
    """Serialize every occupied cell, tiles in ascending id order."""
    tiles = list(grid.tiles())
    return HEADER.pack(MAGIC, VERSION, len(tiles)) + b"".join(_encode_tile(t) for t in tiles)


def decode_upload(data: bytes) -> UploadPayload:
    """
    Parse an SGUP payload.

    Raises:
        :class:`~semmap.exceptions.UploadParseError`: Naming the byte offset of the first
          malformed field.
    """
    reader = ByteReader(data, UploadParseError)
    magic, version, tile_count = reader.unpack(HEADER, "header")
    if magic != MAGIC:
        raise reader.fail(f"bad magic {bytes(magic)!r}", 0)

    if version != VERSION:
        raise reader.fail(f"unsupported version {version}", 4)

    payload = UploadPayload()
    seen: set[TileId] = set()
    for _ in range(tile_count):
        tile_offset = reader.offset
        tile_x, tile_y, cell_count = reader.unpack(TILE_HEADER, "tile header")
        if (tile_x, tile_y) in seen:
            raise reader.fail(f"duplicate tile ({tile_x}, {tile_y})", tile_offset)

        seen.add((tile_x, tile_y))
        cells_offset = reader.offset
        raw = reader.take(cell_count * CELL_DTYPE.itemsize, "cell block")
        cells = np.frombuffer(raw, dtype=CELL_DTYPE)
        counts = cells["counts"].astype(np.int64)
        empty = np.flatnonzero(counts.sum(axis=1) == 0)
        if len(empty):
            raise reader.fail(
                "cell with all-zero counts", cells_offset + int(empty[0]) * CELL_DTYPE.itemsize
            )

        ixy = cells["ixy"].astype(np.int64)
        packed = ixy[:, 0] | (ixy[:, 1] << 8) | (ixy[:, 2] << 16)
        indices = np.column_stack(
            (
                (packed & _LOCAL_MASK) + (tile_x << TILE_SHIFT),
                (packed >> 12) + (tile_y << TILE_SHIFT),
                cells["iz"].astype(np.int64),
            )
        )
        payload.tiles.append(UploadTile((tile_x, tile_y), indices, np.minimum(counts, COUNT_MAX)))

    reader.expect_end()
    return payload
