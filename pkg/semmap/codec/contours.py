"""
Contour extraction from top-view rasters and the matching polygon fill.

Every 8-connected component of a label yields one outer contour (counter-clockwise),
followed directly by one clockwise contour per hole it encloses. Holes smaller than
``MIN_HOLE_AREA`` pixels are absorbed into the component.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from semmap.codec.raster import EMPTY, RASTER_SIZE, TopViewRaster
from semmap.exceptions import CodecError, ContourBoundsError
from semmap.grid import MARKING_LABELS, SemanticLabel

MIN_HOLE_AREA = 4
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(eq=False)
class LabeledContour:
    label: SemanticLabel
    is_hole: bool
    points: np.ndarray
    """``(N, 2)`` integer pixel coordinates ``(px, py)``; the closing edge is implicit."""
    mean_z: float

    def __post_init__(self):
        self.label = SemanticLabel(self.label)
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if not len(self.points):
            raise CodecError("A contour needs at least one point.")

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledContour):
            return NotImplemented

        return (
            self.label == other.label
            and self.is_hole == other.is_hole
            and self.mean_z == other.mean_z
            and np.array_equal(self.points, other.points)
        )

    @property
    def signed_area(self) -> float:
        return signed_area(self.points)

    def __repr__(self) -> str:
        kind = "hole" if self.is_hole else "outer"
        return f"<LabeledContour {self.label.name} {kind} points={len(self)} z={self.mean_z:.2f}>"


def signed_area(points: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise order with y pointing up."""
    x = points[:, 0].astype(np.float64)
    y = points[:, 1].astype(np.float64)
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _oriented(points: np.ndarray, counter_clockwise: bool) -> np.ndarray:
    area = signed_area(points)
    if (counter_clockwise and area < 0) or (not counter_clockwise and area > 0):
        return points[::-1].copy()

    return points


def extract_contours(
    raster: TopViewRaster,
    labels: Iterable[SemanticLabel] = MARKING_LABELS,
    min_hole_area: int = MIN_HOLE_AREA,
) -> list[LabeledContour]:
    """
    Border-follow every connected component of every requested label.
    """
    contours: list[LabeledContour] = []
    for label in labels:
        mask = raster.labels == int(label)
        if not mask.any():
            continue

        components, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
        index = np.arange(1, count + 1)
        mean_z = ndimage.mean(raster.elevations, labels=components, index=index)
        for component, bbox in enumerate(ndimage.find_objects(components), start=1):
            rows, cols = bbox
            blob = np.pad(components[bbox] == component, 1)
            background, holes = ndimage.label(~blob)
            if holes > 1:
                sizes = np.bincount(background.ravel(), minlength=holes + 1)
                outside = background[0, 0]
                small = [
                    hole
                    for hole in range(1, holes + 1)
                    if hole != outside and sizes[hole] < min_hole_area
                ]
                if small:
                    blob = blob | np.isin(background, small)

            found, hierarchy = cv2.findContours(
                blob.astype(np.uint8), cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE
            )
            offset = np.array([cols.start - 1, rows.start - 1])
            z = float(mean_z[component - 1])
            outer, inner = [], []
            for points, (_, _, _, parent) in zip(found, hierarchy[0]):
                points = points.reshape(-1, 2).astype(np.int64) + offset
                if parent < 0:
                    outer.append(LabeledContour(label, False, _oriented(points, True), z))
                else:
                    inner.append(LabeledContour(label, True, _oriented(points, False), z))

            contours.extend(outer)
            contours.extend(inner)

    return contours


def _groups(contours: Sequence[LabeledContour]) -> list[list[LabeledContour]]:
    groups: list[list[LabeledContour]] = []
    for contour in contours:
        if contour.is_hole:
            if not groups or groups[-1][0].label != contour.label:
                raise CodecError("Hole contour does not follow an outer contour of its label.")

            groups[-1].append(contour)
        else:
            groups.append([contour])

    return groups


def fill(
    contours: Sequence[LabeledContour],
    width: int = RASTER_SIZE,
    height: int = RASTER_SIZE,
    tile: tuple[int, int] = (0, 0),
) -> TopViewRaster:
    """
    Rebuild a raster from contours: the inside of every outer contour and its boundary
    pixels take the contour's label; hole interiors are cleared again. Components are
    painted largest first so nested ones survive.

    Raises:
        :class:`~semmap.exceptions.ContourBoundsError`: When a point lies outside the
          ``width`` x ``height`` raster.
    """
    for contour in contours:
        points = contour.points
        if (points < 0).any() or (points[:, 0] >= width).any() or (points[:, 1] >= height).any():
            raise ContourBoundsError(width, height)

    raster = TopViewRaster(
        tile=tile,
        labels=np.full((height, width), EMPTY, dtype=np.int16),
        elevations=np.full((height, width), np.nan),
    )
    groups = sorted(_groups(contours), key=lambda g: -abs(g[0].signed_area))
    for outer, *holes in groups:
        low = outer.points.min(axis=0)
        high = outer.points.max(axis=0)
        canvas = np.zeros((high[1] - low[1] + 1, high[0] - low[0] + 1), dtype=np.uint8)

        def _local(contour: LabeledContour) -> np.ndarray:
            return (contour.points - low).astype(np.int32)

        local = _local(outer)
        cv2.fillPoly(canvas, [local.reshape(-1, 1, 2)], 1)
        canvas[local[:, 1], local[:, 0]] = 1
        for hole in holes:
            hole_local = _local(hole)
            inside = (
                (hole_local >= 0).all(axis=1)
                & (hole_local[:, 0] < canvas.shape[1])
                & (hole_local[:, 1] < canvas.shape[0])
            )
            if not inside.all():
                raise CodecError("Hole contour leaves its outer contour.")

            cv2.fillPoly(canvas, [hole_local.reshape(-1, 1, 2)], 0)
            canvas[hole_local[:, 1], hole_local[:, 0]] = 1

        rows, cols = np.nonzero(canvas)
        rows, cols = rows + low[1], cols + low[0]
        raster.labels[rows, cols] = int(outer.label)
        raster.elevations[rows, cols] = outer.mean_z

    return raster
