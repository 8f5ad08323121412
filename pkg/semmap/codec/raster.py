from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from semmap.grid import CELL_SIZE, NUM_LABELS, SemanticGridMap, cell_labels

RASTER_SIZE = 512
RASTER_EXTENT = RASTER_SIZE * CELL_SIZE
EMPTY = -1

Region = tuple[float, float, float, float]


@dataclass
class TopViewRaster:
    """
    One 512 x 512 top-view tile; ``labels[py, px]`` is the label code of the cell column
    ``(tile_x * 512 + px, tile_y * 512 + py)`` or ``EMPTY``.
    """

    tile: tuple[int, int] = (0, 0)
    labels: np.ndarray = field(
        default_factory=lambda: np.full((RASTER_SIZE, RASTER_SIZE), EMPTY, dtype=np.int16)
    )
    elevations: np.ndarray = field(
        default_factory=lambda: np.full((RASTER_SIZE, RASTER_SIZE), np.nan)
    )

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def origin(self) -> tuple[float, float]:
        """World xy of pixel ``(0, 0)``'s lower-left corner."""
        return self.tile[0] * RASTER_EXTENT, self.tile[1] * RASTER_EXTENT

    @property
    def occupied(self) -> np.ndarray:
        return self.labels != EMPTY

    def pixel_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """``(ix, iy)`` global cell indices and label codes of every occupied pixel."""
        py, px = np.nonzero(self.occupied)
        ix = px + self.tile[0] * RASTER_SIZE
        iy = py + self.tile[1] * RASTER_SIZE
        return np.column_stack((ix, iy)).astype(np.int64), self.labels[py, px]

    def same_labels(self, other: "TopViewRaster") -> bool:
        return self.tile == other.tile and np.array_equal(self.labels, other.labels)


def raster_tile_range(region: Region) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive ``(low, high)`` raster tile coordinates touched by ``region``."""
    min_x, min_y, max_x, max_y = region
    low = np.floor(np.array([min_x, min_y]) / RASTER_EXTENT).astype(np.int64)
    high = np.floor(np.array([max_x, max_y]) / RASTER_EXTENT).astype(np.int64)
    if max_x < min_x or max_y < min_y:
        high = low - 1

    return low, high


def rasterize(grid: SemanticGridMap, region: Optional[Region] = None) -> list[TopViewRaster]:
    """
    Collapse each xy cell column to the argmax of its z-summed scores and lay the columns
    out as top-view tiles. With ``region`` only tiles intersecting it are produced.
    """
    indices, counts = grid.cells_array()
    if not len(indices):
        return []

    tiles = np.floor_divide(indices[:, :2], RASTER_SIZE)
    if region is not None:
        low, high = raster_tile_range(region)
        keep = ((tiles >= low) & (tiles <= high)).all(axis=1)
        indices, counts, tiles = indices[keep], counts[keep], tiles[keep]
        if not len(indices):
            return []

    columns, inverse = np.unique(indices[:, :2], axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    weights = counts.astype(np.float64)
    summed = np.column_stack(
        [
            np.bincount(inverse, weights=weights[:, label], minlength=len(columns))
            for label in range(NUM_LABELS)
        ]
    )
    totals = weights.sum(axis=1)
    z_centers = (indices[:, 2] + 0.5) * CELL_SIZE
    elevation = np.bincount(inverse, weights=totals * z_centers, minlength=len(columns)) / (
        summed.sum(axis=1)
    )
    labels = cell_labels(summed)

    column_tiles = np.floor_divide(columns, RASTER_SIZE)
    rasters = []
    for tile in np.unique(column_tiles, axis=0).tolist():
        in_tile = (column_tiles == tile).all(axis=1)
        raster = TopViewRaster(tile=(int(tile[0]), int(tile[1])))
        px = columns[in_tile, 0] - tile[0] * RASTER_SIZE
        py = columns[in_tile, 1] - tile[1] * RASTER_SIZE
        raster.labels[py, px] = labels[in_tile]
        raster.elevations[py, px] = elevation[in_tile]
        rasters.append(raster)

    return rasters
