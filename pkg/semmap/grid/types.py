import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from semmap.exceptions import EmptyCellError, GridError

CELL_SIZE = 0.1
TILE_SHIFT = 12
TILE_CELLS = 1 << TILE_SHIFT
TILE_SIZE = TILE_CELLS * CELL_SIZE
COUNT_MAX = np.iinfo(np.uint16).max
NUM_LABELS = 5


class SemanticLabel(IntEnum):
    """
    Mappable road-surface classes. The values are the stable wire codes.
    """

    GROUND = 0
    LANE_LINE = 1
    STOP_LINE = 2
    GROUND_SIGN = 3
    CROSSWALK = 4

    @property
    def is_marking(self) -> bool:
        return self is not SemanticLabel.GROUND

    @classmethod
    def parse(cls, value) -> "SemanticLabel":
        if isinstance(value, str):
            key = value.strip().upper().replace("-", "_")
            aliases = {
                "LANELINE": "LANE_LINE",
                "STOPLINE": "STOP_LINE",
                "GROUNDSIGN": "GROUND_SIGN",
            }
            return cls[aliases.get(key, key)]

        return cls(int(value))


MARKING_LABELS = tuple(label for label in SemanticLabel if label.is_marking)

# Highest priority first; breaks ties between equal vote counts.
LABEL_PRIORITY = (
    SemanticLabel.LANE_LINE,
    SemanticLabel.STOP_LINE,
    SemanticLabel.GROUND_SIGN,
    SemanticLabel.CROSSWALK,
    SemanticLabel.GROUND,
)
_PRIORITY_ORDER = np.array([int(label) for label in LABEL_PRIORITY])


class GridIndex(NamedTuple):
    ix: int
    iy: int
    iz: int

    @classmethod
    def of(cls, x: float, y: float, z: float) -> "GridIndex":
        return cls(
            math.floor(x / CELL_SIZE), math.floor(y / CELL_SIZE), math.floor(z / CELL_SIZE)
        )

    @property
    def tile(self) -> tuple[int, int]:
        return self.ix >> TILE_SHIFT, self.iy >> TILE_SHIFT

    @property
    def center(self) -> tuple[float, float, float]:
        return (
            (self.ix + 0.5) * CELL_SIZE,
            (self.iy + 0.5) * CELL_SIZE,
            (self.iz + 0.5) * CELL_SIZE,
        )


class LabeledPoint(NamedTuple):
    x: float
    y: float
    z: float
    label: SemanticLabel


@dataclass(frozen=True)
class CellScores:
    """
    Saturating 16-bit vote counters of one cell, indexed by :class:`SemanticLabel` code.
    """

    counts: tuple[int, ...] = (0, 0, 0, 0, 0)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != NUM_LABELS:
            raise GridError(f"Cell scores need {NUM_LABELS} counters, got {len(counts)}.")

        if any(c < 0 or c > COUNT_MAX for c in counts):
            raise GridError("Cell score counters must lie in [0, 65535].")

        object.__setattr__(self, "counts", counts)

    @classmethod
    def of(cls, **votes: int) -> "CellScores":
        """``CellScores.of(lane_line=3, ground=1)``"""
        counts = [0] * NUM_LABELS
        for name, value in votes.items():
            counts[SemanticLabel.parse(name)] = value

        return cls(tuple(counts))

    def __getitem__(self, label: SemanticLabel) -> int:
        return self.counts[int(label)]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def label(self) -> SemanticLabel:
        return cell_label(self)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.uint16)

    def __add__(self, other: "CellScores") -> "CellScores":
        return CellScores(tuple(min(a + b, COUNT_MAX) for a, b in zip(self.counts, other.counts)))


def cell_label(scores: CellScores) -> SemanticLabel:
    """
    Argmax label; equal counts resolve by marking priority, ground last.

    Raises:
        :class:`~semmap.exceptions.EmptyCellError`: When every counter is zero.
    """
    if scores.total == 0:
        raise EmptyCellError()

    best = max(scores.counts)
    return next(label for label in LABEL_PRIORITY if scores.counts[label] == best)


def cell_labels(counts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`cell_label` over an ``(N, 5)`` count array; ``-1`` for empty rows."""
    counts = np.asarray(counts).reshape(-1, NUM_LABELS)
    ranked = counts[:, _PRIORITY_ORDER]
    labels = _PRIORITY_ORDER[np.argmax(ranked, axis=1)].astype(np.int16)
    labels[counts.sum(axis=1) == 0] = -1
    return labels


@dataclass
class FeatureScan:
    """
    One frame's labeled ground points in the vehicle frame (``z = 0``).
    """

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.points) != len(self.labels):
            raise GridError("Scan points and labels differ in length.")

        if self.labels.size and int(self.labels.max()) >= NUM_LABELS:
            raise GridError("Scan carries a label outside the mappable classes.")

    def __len__(self) -> int:
        return len(self.labels)

    def markings(self) -> "FeatureScan":
        keep = self.labels != SemanticLabel.GROUND
        return FeatureScan(self.points[keep], self.labels[keep], self.timestamp)

    def points_3d(self) -> np.ndarray:
        return np.column_stack((self.points, np.zeros(len(self.points))))
