"""
Compressed map container ("SMAP").

Little-endian layout::

    header    4s magic "SMAP" | u16 version | u32 tile_count
    tile      f64 origin_x | f64 origin_y | f32 base_z | u16 contour_count
    contour   u8 label | u8 flags (bit0 = hole) | i16 z_offset_cm | u16 point_count
    points    u16 x | u16 y, then per point either i8 dx | i8 dy
              or 0x80 | i16 dx | i16 dy
"""

import struct
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from semmap.codec.contours import LabeledContour, extract_contours, fill
from semmap.codec.raster import RASTER_EXTENT, RASTER_SIZE, Region, TopViewRaster, rasterize
from semmap.exceptions import CapacityError, ContourBoundsError, MapDecodeError, MapVersionMismatch
from semmap.grid import CELL_SIZE, MARKING_LABELS, NUM_LABELS, SemanticGridMap, SemanticLabel
from semmap.utils import ByteReader

MAGIC = b"SMAP"
VERSION = 1
ESCAPE = 0x80
FLAG_HOLE = 0x01
MAX_CONTOURS = 0xFFFF
MAX_POINTS = 0xFFFF
# 0x80 doubles as the escape byte, so the short form stops at -127.
DELTA_LIMIT = 127
MAX_ORIGIN = 1e9

HEADER = struct.Struct("<4sHI")
TILE_RECORD = struct.Struct("<ddfH")
CONTOUR_HEADER = struct.Struct("<BBhH")
FIRST_POINT = struct.Struct("<HH")
SHORT_DELTA = struct.Struct("<bb")
LONG_DELTA = struct.Struct("<Bhh")


@dataclass
class CompressedTile:
    origin: tuple[float, float]
    base_z: float = 0.0
    contours: list[LabeledContour] = field(default_factory=list)

    @property
    def tile(self) -> tuple[int, int]:
        return round(self.origin[0] / RASTER_EXTENT), round(self.origin[1] / RASTER_EXTENT)

    @classmethod
    def from_contours(
        cls, tile: tuple[int, int], contours: list[LabeledContour]
    ) -> "CompressedTile":
        """
        Build a tile whose base height and contour heights are already on the encoded
        1 cm grid, so that decoding its bytes gives back an equal tile.
        """
        base_z = float(np.float32(np.mean([c.mean_z for c in contours]))) if contours else 0.0
        quantized = [
            LabeledContour(
                c.label, c.is_hole, c.points, base_z + _z_offset_cm(c.mean_z, base_z) / 100.0
            )
            for c in contours
        ]
        return cls((tile[0] * RASTER_EXTENT, tile[1] * RASTER_EXTENT), base_z, quantized)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CompressedTile):
            return NotImplemented

        return (
            self.origin == other.origin
            and self.base_z == other.base_z
            and self.contours == other.contours
        )


@dataclass
class CompressedMap:
    tiles: list[CompressedTile] = field(default_factory=list)

    @property
    def byte_size(self) -> int:
        return len(encode(self))

    @property
    def contour_count(self) -> int:
        return sum(len(tile.contours) for tile in self.tiles)

    @property
    def point_count(self) -> int:
        return sum(len(c) for tile in self.tiles for c in tile.contours)


def _z_offset_cm(mean_z: float, base_z: float) -> int:
    offset = int(round((mean_z - base_z) * 100.0))
    if not -0x8000 <= offset <= 0x7FFF:
        raise CapacityError("centimeters of contour height offset", abs(offset), 0x7FFF)

    return offset


def _encode_points(points: np.ndarray) -> bytes:
    if (points < 0).any() or (points >= RASTER_SIZE).any():
        raise ContourBoundsError(RASTER_SIZE, RASTER_SIZE)

    chunks = [FIRST_POINT.pack(int(points[0, 0]), int(points[0, 1]))]
    for dx, dy in np.diff(points, axis=0).tolist():
        if -DELTA_LIMIT <= dx <= DELTA_LIMIT and -DELTA_LIMIT <= dy <= DELTA_LIMIT:
            chunks.append(SHORT_DELTA.pack(dx, dy))
        else:
            chunks.append(LONG_DELTA.pack(ESCAPE, dx, dy))

    return b"".join(chunks)


def encode_tile(tile: CompressedTile) -> bytes:
    if len(tile.contours) > MAX_CONTOURS:
        raise CapacityError("contours in one tile", len(tile.contours), MAX_CONTOURS)

    chunks = [TILE_RECORD.pack(tile.origin[0], tile.origin[1], tile.base_z, len(tile.contours))]
    for contour in tile.contours:
        if len(contour) > MAX_POINTS:
            raise CapacityError("points in one contour", len(contour), MAX_POINTS)

        chunks.append(
            CONTOUR_HEADER.pack(
                int(contour.label),
                FLAG_HOLE if contour.is_hole else 0,
                _z_offset_cm(contour.mean_z, tile.base_z),
                len(contour),
            )
        )
        chunks.append(_encode_points(contour.points))

    return b"".join(chunks)


def encode_header(tile_count: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, tile_count)


def encode(cm: CompressedMap) -> bytes:
    """Deterministic byte encoding; tiles and contours keep their order."""
    return encode_header(len(cm.tiles)) + b"".join(encode_tile(t) for t in cm.tiles)


def _decode_points(reader: ByteReader, count: int) -> np.ndarray:
    points = np.empty((count, 2), dtype=np.int64)
    start = reader.offset
    x, y = reader.unpack(FIRST_POINT, "first point")
    if not (x < RASTER_SIZE and y < RASTER_SIZE):
        raise reader.fail(f"point ({x}, {y}) outside the raster", start)

    points[0] = x, y
    for i in range(1, count):
        offset = reader.offset
        if reader.take(1, "point delta")[0] == ESCAPE:
            reader.offset = offset
            _, dx, dy = reader.unpack(LONG_DELTA, "escaped point delta")
            if abs(dx) <= DELTA_LIMIT and abs(dy) <= DELTA_LIMIT:
                raise reader.fail("escaped delta fits the short form", offset)
        else:
            reader.offset = offset
            dx, dy = reader.unpack(SHORT_DELTA, "point delta")

        x, y = x + dx, y + dy
        if not (0 <= x < RASTER_SIZE and 0 <= y < RASTER_SIZE):
            raise reader.fail(f"point ({x}, {y}) outside the raster", offset)

        points[i] = x, y

    return points


def decode(data: bytes) -> CompressedMap:
    """
    Parse SMAP bytes.

    Raises:
        :class:`~semmap.exceptions.MapVersionMismatch`: For a format version other than 1.
        :class:`~semmap.exceptions.MapDecodeError`: For any other malformed input, naming
          the byte offset.
    """
    reader = ByteReader(data, MapDecodeError)
    magic, version, tile_count = reader.unpack(HEADER, "header")
    if magic != MAGIC:
        raise reader.fail(f"bad magic {bytes(magic)!r}", 0)

    if version != VERSION:
        raise MapVersionMismatch(version, VERSION)

    cm = CompressedMap()
    for _ in range(tile_count):
        tile_offset = reader.offset
        origin_x, origin_y, base_z, contour_count = reader.unpack(TILE_RECORD, "tile record")
        if not (abs(origin_x) < MAX_ORIGIN and abs(origin_y) < MAX_ORIGIN and np.isfinite(base_z)):
            raise reader.fail("tile record out of range", tile_offset)

        tile = CompressedTile((origin_x, origin_y), base_z)
        for _ in range(contour_count):
            contour_offset = reader.offset
            label, flags, z_offset, point_count = reader.unpack(CONTOUR_HEADER, "contour header")
            if label >= NUM_LABELS:
                raise reader.fail(f"label code {label} out of range", contour_offset)

            if flags & ~FLAG_HOLE:
                raise reader.fail(f"unknown contour flags {flags:#04x}", contour_offset + 1)

            if point_count == 0:
                raise reader.fail("contour without points", contour_offset + 4)

            tile.contours.append(
                LabeledContour(
                    SemanticLabel(label),
                    bool(flags & FLAG_HOLE),
                    _decode_points(reader, point_count),
                    base_z + z_offset / 100.0,
                )
            )

        if tile.contours and tile.contours[0].is_hole:
            raise reader.fail("tile starts with a hole contour", tile_offset)

        cm.tiles.append(tile)

    reader.expect_end()
    return cm


def compress_tile(
    raster: TopViewRaster, labels: Iterable[SemanticLabel] = MARKING_LABELS
) -> Optional[CompressedTile]:
    contours = extract_contours(raster, labels=labels)
    if not contours:
        return None

    return CompressedTile.from_contours(raster.tile, contours)


def compress_map(
    grid: SemanticGridMap,
    region: Optional[Region] = None,
    labels: Iterable[SemanticLabel] = MARKING_LABELS,
) -> CompressedMap:
    """Rasterize, extract contours and package the map. Tiles with no contour are left out."""
    labels = tuple(labels)
    tiles = [compress_tile(raster, labels) for raster in rasterize(grid, region)]
    return CompressedMap([tile for tile in tiles if tile is not None])


def decompress_tile(tile: CompressedTile) -> TopViewRaster:
    return fill(tile.contours, RASTER_SIZE, RASTER_SIZE, tile=tile.tile)


def decompress_to_map(cm: CompressedMap) -> SemanticGridMap:
    """
    Fill every tile and turn each labeled pixel into one cell voted once for its label at
    its contour's height.
    """
    grid = SemanticGridMap()
    for tile in cm.tiles:
        raster = decompress_tile(tile)
        columns, labels = raster.pixel_cells()
        if not len(columns):
            continue

        py = columns[:, 1] - raster.tile[1] * RASTER_SIZE
        px = columns[:, 0] - raster.tile[0] * RASTER_SIZE
        iz = np.floor(raster.elevations[py, px] / CELL_SIZE).astype(np.int64)
        counts = np.zeros((len(columns), NUM_LABELS), dtype=np.int64)
        counts[np.arange(len(columns)), labels.astype(np.int64)] = 1
        grid.merge_arrays(np.column_stack((columns, iz)), counts)

    return grid
