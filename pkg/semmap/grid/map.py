"""
Sparse voted 3-D grid, partitioned into 4096 x 4096-cell merge tiles.

Within a tile cells are kept as a sorted ``int64`` key column and an ``(N, 5)`` ``uint16``
count block. Inserted votes are buffered and folded in with one ``np.unique`` pass on the
next read; saturating addition on non-negative counts is associative, so the result
does not depend on how inserts were batched.
"""

import threading
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from semmap.exceptions import GridError
from semmap.geometry import Pose
from semmap.grid.types import (
    CELL_SIZE,
    COUNT_MAX,
    NUM_LABELS,
    TILE_CELLS,
    TILE_SHIFT,
    CellScores,
    FeatureScan,
    GridIndex,
    LabeledPoint,
    cell_labels,
)

TileId = tuple[int, int]

_LOCAL_MASK = TILE_CELLS - 1
_Z_BIAS = 1 << 15
_FLUSH_THRESHOLD = 1 << 20

CellList = list[tuple[GridIndex, CellScores]]


def cell_indices(xyz: np.ndarray) -> np.ndarray:
    """``floor(coordinate / 0.1)`` per axis as ``int64``."""
    return np.floor(np.asarray(xyz, dtype=float) / CELL_SIZE).astype(np.int64)


def _encode_keys(local_ix: np.ndarray, local_iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
    if iz.size and (iz.min() < -_Z_BIAS or iz.max() >= _Z_BIAS):
        raise GridError("Cell z index is outside the 16-bit range.")

    return (local_ix << 28) | (local_iy << 16) | (iz + _Z_BIAS)


@dataclass(frozen=True)
class GridTile:
    """
    Immutable consolidated contents of one merge tile.
    """

    tile_id: TileId
    keys: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, tile_id: TileId) -> "GridTile":
        return cls(tile_id, np.zeros(0, dtype=np.int64), np.zeros((0, NUM_LABELS), dtype=np.uint16))

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def indices(self) -> np.ndarray:
        """Global ``(ix, iy, iz)`` of every stored cell, in key order."""
        tx, ty = self.tile_id
        ix = (self.keys >> 28) + (tx << TILE_SHIFT)
        iy = ((self.keys >> 16) & _LOCAL_MASK) + (ty << TILE_SHIFT)
        iz = (self.keys & 0xFFFF) - _Z_BIAS
        return np.column_stack((ix, iy, iz)).astype(np.int64)

    def merged(self, keys: Iterable[np.ndarray], counts: Iterable[np.ndarray]) -> "GridTile":
        """
        New tile with per-cell, per-label saturating sums of this tile and the given blocks.
        """
        all_keys = np.concatenate([self.keys, *keys])
        all_counts = np.concatenate([self.counts.astype(np.int64), *counts])
        if len(all_keys) == len(self.keys):
            return self

        unique, inverse = np.unique(all_keys, return_inverse=True)
        summed = np.column_stack(
            [
                np.bincount(inverse, weights=all_counts[:, label], minlength=len(unique))
                for label in range(NUM_LABELS)
            ]
        )
        occupied = summed.sum(axis=1) > 0
        clipped = np.minimum(summed[occupied], COUNT_MAX).astype(np.uint16)
        return GridTile(self.tile_id, unique[occupied], clipped)

    def scores(self, index: GridIndex) -> Optional[CellScores]:
        key = _encode_keys(
            np.array([index.ix & _LOCAL_MASK]),
            np.array([index.iy & _LOCAL_MASK]),
            np.array([index.iz]),
        )[0]
        position = int(np.searchsorted(self.keys, key))
        if position < len(self.keys) and self.keys[position] == key:
            return CellScores(tuple(self.counts[position].tolist()))

        return None


class _PendingTile:
    def __init__(self, tile: GridTile):
        self.tile = tile
        self.point_keys: list[np.ndarray] = []
        self.cell_keys: list[np.ndarray] = []
        self.cell_counts: list[np.ndarray] = []
        self.pending = 0

    def consolidate(self) -> GridTile:
        if not self.pending:
            return self.tile

        keys = list(self.cell_keys)
        counts = list(self.cell_counts)
        for labeled_keys in self.point_keys:
            unique, votes = np.unique(labeled_keys, return_counts=True)
            block = np.zeros((len(unique), NUM_LABELS), dtype=np.int64)
            block[np.arange(len(unique)), unique & 0x7] = votes
            keys.append(unique >> 3)
            counts.append(block)

        self.tile = self.tile.merged(keys, counts)
        self.point_keys.clear()
        self.cell_keys.clear()
        self.cell_counts.clear()
        self.pending = 0
        return self.tile


class SemanticGridMap:
    """
    Voted semantic grid of 0.1 m cells. The same structure is used for a vehicle's local
    map and for the cloud's global map.
    """

    def __init__(self, tiles: Optional[dict[TileId, GridTile]] = None):
        self._tiles: dict[TileId, _PendingTile] = {
            tid: _PendingTile(tile) for tid, tile in (tiles or {}).items() if len(tile)
        }
        self._lock = threading.Lock()

    @classmethod
    def from_cells(cls, cells: Iterable[tuple[GridIndex, CellScores]]) -> "SemanticGridMap":
        grid = cls()
        grid.merge(cells)
        return grid

    @classmethod
    def from_arrays(cls, indices: np.ndarray, counts: np.ndarray) -> "SemanticGridMap":
        grid = cls()
        grid.merge_arrays(indices, counts)
        return grid

    def _pending(self, tile_id: TileId) -> _PendingTile:
        if tile_id not in self._tiles:
            self._tiles[tile_id] = _PendingTile(GridTile.empty(tile_id))

        return self._tiles[tile_id]

    def _maybe_flush(self, pending: _PendingTile):
        if pending.pending > _FLUSH_THRESHOLD:
            pending.consolidate()

    def insert_point(self, point: LabeledPoint):
        self.insert_points(np.array([[point.x, point.y, point.z]]), np.array([int(point.label)]))

    def insert_points(self, xyz: np.ndarray, labels: np.ndarray):
        """Add one vote per point to the label counter of the cell containing it."""
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if len(xyz) != len(labels):
            raise GridError("Points and labels differ in length.")

        if not len(xyz):
            return

        if not np.all(np.isfinite(xyz)):
            raise GridError("Cannot insert non-finite points.")

        if labels.min() < 0 or labels.max() >= NUM_LABELS:
            raise GridError("Point label outside the mappable classes.")

        index = cell_indices(xyz)
        with self._lock:
            for tile_id, rows in _group_by_tile(index):
                keys = _encode_keys(
                    index[rows, 0] & _LOCAL_MASK, index[rows, 1] & _LOCAL_MASK, index[rows, 2]
                )
                pending = self._pending(tile_id)
                pending.point_keys.append((keys << 3) | labels[rows])
                pending.pending += len(rows)
                self._maybe_flush(pending)

    def merge(self, cells: Iterable[tuple[GridIndex, CellScores]]):
        cells = list(cells)
        if not cells:
            return

        indices = np.array([tuple(index) for index, _ in cells], dtype=np.int64)
        counts = np.array([scores.counts for _, scores in cells], dtype=np.int64)
        self.merge_arrays(indices, counts)

    def merge_arrays(self, indices: np.ndarray, counts: np.ndarray):
        """Saturating per-label addition of ``counts`` onto the cells at ``indices``."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        counts = np.asarray(counts, dtype=np.int64).reshape(-1, NUM_LABELS)
        if len(indices) != len(counts):
            raise GridError("Cell indices and counts differ in length.")

        with self._lock:
            for tile_id, rows in _group_by_tile(indices):
                pending = self._pending(tile_id)
                pending.cell_keys.append(
                    _encode_keys(
                        indices[rows, 0] & _LOCAL_MASK,
                        indices[rows, 1] & _LOCAL_MASK,
                        indices[rows, 2],
                    )
                )
                pending.cell_counts.append(counts[rows])
                pending.pending += len(rows)
                self._maybe_flush(pending)

    def merge_map(self, other: "SemanticGridMap"):
        for tile in other.tiles():
            self.merge_arrays(tile.indices, tile.counts)

    def merge_tile(self, tile: GridTile):
        """Replace a whole tile. Used by stores that merge tiles themselves."""
        with self._lock:
            if len(tile):
                self._tiles[tile.tile_id] = _PendingTile(tile)
            else:
                self._tiles.pop(tile.tile_id, None)

    def tile(self, tile_id: TileId) -> GridTile:
        with self._lock:
            if tile_id not in self._tiles:
                return GridTile.empty(tile_id)

            return self._tiles[tile_id].consolidate()

    def tiles(self) -> Iterator[GridTile]:
        """Non-empty consolidated tiles in ascending tile-id order."""
        with self._lock:
            consolidated = [self._tiles[tid].consolidate() for tid in sorted(self._tiles)]

        yield from (tile for tile in consolidated if len(tile))

    def tile_ids(self) -> list[TileId]:
        return [tile.tile_id for tile in self.tiles()]

    def cells_array(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indices (N, 3) int64, counts (N, 5) uint16)`` in occupied-cell order."""
        tiles = list(self.tiles())
        if not tiles:
            return np.zeros((0, 3), dtype=np.int64), np.zeros((0, NUM_LABELS), dtype=np.uint16)

        return (
            np.concatenate([tile.indices for tile in tiles]),
            np.concatenate([tile.counts for tile in tiles]),
        )

    def labels_array(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indices, argmax labels)`` of every occupied cell."""
        indices, counts = self.cells_array()
        return indices, cell_labels(counts)

    def occupied_cells(self) -> CellList:
        indices, counts = self.cells_array()
        return [
            (GridIndex(*map(int, index)), CellScores(tuple(row)))
            for index, row in zip(indices.tolist(), counts.tolist())
        ]

    def scores(self, index: Union[GridIndex, tuple[int, int, int]]) -> Optional[CellScores]:
        index = GridIndex(*index)
        return self.tile(index.tile).scores(index)

    def copy(self) -> "SemanticGridMap":
        return SemanticGridMap({tile.tile_id: tile for tile in self.tiles()})

    def bounds(self) -> Optional[tuple[float, float, float, float]]:
        """World-frame ``(min_x, min_y, max_x, max_y)`` of the occupied cells."""
        indices, _ = self.cells_array()
        if not len(indices):
            return None

        low = indices[:, :2].min(axis=0) * CELL_SIZE
        high = (indices[:, :2].max(axis=0) + 1) * CELL_SIZE
        return float(low[0]), float(low[1]), float(high[0]), float(high[1])

    def __len__(self) -> int:
        return sum(len(tile) for tile in self.tiles())

    def __bool__(self) -> bool:
        return len(self) > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticGridMap):
            return NotImplemented

        mine, theirs = self.cells_array(), other.cells_array()
        return bool(np.array_equal(mine[0], theirs[0]) and np.array_equal(mine[1], theirs[1]))

    def __repr__(self) -> str:
        return f"<SemanticGridMap tiles={len(self.tile_ids())} cells={len(self)}>"


def _group_by_tile(indices: np.ndarray) -> Iterator[tuple[TileId, np.ndarray]]:
    tiles = indices[:, :2] >> TILE_SHIFT
    unique, inverse = np.unique(tiles, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    splits = np.cumsum(np.bincount(inverse, minlength=len(unique)))[:-1]
    for (tx, ty), rows in zip(unique.tolist(), np.split(order, splits)):
        yield (tx, ty), rows


def insert_point(grid: SemanticGridMap, point: LabeledPoint):
    grid.insert_point(point)


def occupied_cells(grid: SemanticGridMap) -> CellList:
    return grid.occupied_cells()


def merge(global_map: SemanticGridMap, cells: Iterable[tuple[GridIndex, CellScores]]):
    global_map.merge(cells)


def build_local_map(frames: Iterable[tuple[FeatureScan, Pose]]) -> SemanticGridMap:
    """
    Register each scan into the world frame with its (optimized) pose and vote every point.
    """
    grid = SemanticGridMap()
    for scan, pose in frames:
        if len(scan):
            grid.insert_points(pose.transform_points(scan.points_3d()), scan.labels)

    return grid
