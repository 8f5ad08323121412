"""
Synthetic road-marking worlds. All features lie on the plane ``z = 0``; anything not
covered by a marking is ground.
"""

import math
from enum import Enum
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import shapely
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    PrivateAttr,
    field_validator,
    model_validator,
)
from shapely import STRtree
from shapely.geometry import LineString, MultiLineString, Polygon
from shapely.ops import substring

from semmap.exceptions import SimulationError
from semmap.grid import LABEL_PRIORITY, SemanticLabel

ARROW_OUTLINE = (
    (-2.5, -0.15),
    (1.0, -0.15),
    (1.0, -0.6),
    (2.5, 0.0),
    (1.0, 0.6),
    (1.0, 0.15),
    (-2.5, 0.15),
)
STRIPE_WIDTH = 0.5
STRIPE_PITCH = 1.0
CROSSWALK_DEPTH = 4.0


class WorldTemplate(str, Enum):
    STRAIGHT_ROAD = "straight_road"
    INTERSECTION = "intersection"
    URBAN_BLOCK = "urban_block"


class WorldFeature(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["polyline", "polygon"]
    label: SemanticLabel
    vertices: list[tuple[float, float]]
    width: Optional[PositiveFloat] = None
    """Painted width of a polyline, meters."""
    dash: Optional[tuple[PositiveFloat, PositiveFloat]] = None
    """``(painted, gap)`` lengths of a dashed polyline, meters."""

    @field_validator("label", mode="before")
    @classmethod
    def _parse_label(cls, value):
        return SemanticLabel.parse(value)

    @model_validator(mode="after")
    def _check_shape(self) -> "WorldFeature":
        if not np.all(np.isfinite(np.asarray(self.vertices, dtype=float))):
            raise ValueError("Feature vertices must be finite.")

        if self.type == "polyline":
            if len(self.vertices) < 2 or self.width is None:
                raise ValueError("A polyline needs two vertices and a width.")

        elif len(self.vertices) < 3:
            raise ValueError("A polygon needs three vertices.")

        if self.label is SemanticLabel.GROUND:
            raise ValueError("Ground is implicit; features must be markings.")

        return self

    @property
    def length(self) -> float:
        return LineString(self.vertices).length if self.type == "polyline" else 0.0

    def geometry(self):
        if self.type == "polygon":
            return Polygon(self.vertices)

        line = LineString(self.vertices)
        if self.dash is not None:
            painted, gap = self.dash
            starts = np.arange(0.0, line.length, painted + gap)
            line = MultiLineString(
                [substring(line, s, min(s + painted, line.length)) for s in starts]
            )

        assert self.width is not None
        return line.buffer(self.width / 2.0, cap_style="flat")


class WorldModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    features: list[WorldFeature] = Field(default_factory=list)
    _geometries: Optional[list] = PrivateAttr(default=None)
    _tree: Optional[STRtree] = PrivateAttr(default=None)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WorldModel":
        return cls.model_validate_json(Path(path).read_text())

    def save(self, path: Union[str, Path]):
        Path(path).write_text(self.serialize())

    def serialize(self) -> str:
        return self.model_dump_json(indent=1)

    def _index(self) -> tuple[list, STRtree]:
        if self._geometries is None or self._tree is None:
            self._geometries = [feature.geometry() for feature in self.features]
            for geometry in self._geometries:
                shapely.prepare(geometry)

            self._tree = STRtree(self._geometries)

        return self._geometries, self._tree

    def total_length(self, label: SemanticLabel) -> float:
        return sum(f.length for f in self.features if f.label == label and f.type == "polyline")

    def labels_at(self, xy: np.ndarray) -> np.ndarray:
        """Label code of the ground at every world ``(x, y)``; higher-priority markings win."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        labels = np.zeros(len(xy), dtype=np.uint8)
        if not len(xy) or not self.features:
            return labels

        geometries, tree = self._index()
        area = shapely.box(*xy.min(axis=0), *xy.max(axis=0))
        candidates = tree.query(area).tolist()
        for label in reversed(LABEL_PRIORITY):
            for index in candidates:
                if self.features[index].label != label:
                    continue

                inside = shapely.contains_xy(geometries[index], xy[:, 0], xy[:, 1])
                labels[inside] = int(label)

        return labels

    def bounds(self) -> tuple[float, float, float, float]:
        if not self.features:
            return 0.0, 0.0, 0.0, 0.0

        vertices = np.concatenate([np.asarray(f.vertices) for f in self.features])
        low, high = vertices.min(axis=0), vertices.max(axis=0)
        return float(low[0]), float(low[1]), float(high[0]), float(high[1])


class WorldParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lanes: PositiveInt = 2
    lane_width: PositiveFloat = 3.5
    length: PositiveFloat = 100.0
    """Road length for ``straight_road``, arm-to-arm length for ``intersection``."""
    blocks: tuple[PositiveInt, PositiveInt] = (2, 2)
    spacing: PositiveFloat = 200.0
    """Junction spacing of ``urban_block``."""
    line_width: PositiveFloat = 0.15
    stop_line_width: PositiveFloat = 0.4
    dash: tuple[PositiveFloat, PositiveFloat] = (3.0, 6.0)
    sign_spacing: PositiveFloat = 30.0
    """Arrow spacing along a ``straight_road``."""
    sign_jitter: float = Field(2.0, ge=0)

    @property
    def half_width(self) -> float:
        return self.lanes * self.lane_width / 2.0

    @property
    def stop_offset(self) -> float:
        """Distance from a junction center to its stop lines and lane-line ends."""
        return self.half_width + CROSSWALK_DEPTH + 2.0


def _unit(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    direction = b - a
    length = float(np.linalg.norm(direction))
    u = direction / length
    return u, np.array([-u[1], u[0]]), length


def _vertices(points) -> list[tuple[float, float]]:
    return [(float(p[0]), float(p[1])) for p in points]


def _arrow(center: np.ndarray, u: np.ndarray, n: np.ndarray) -> WorldFeature:
    outline = [center + x * u + y * n for x, y in ARROW_OUTLINE]
    return WorldFeature(
        type="polygon", label=SemanticLabel.GROUND_SIGN, vertices=_vertices(outline)
    )


def _crosswalk(
    junction: np.ndarray, u: np.ndarray, n: np.ndarray, params: WorldParams
) -> list[WorldFeature]:
    near = params.half_width + 1.0
    middle = junction + u * (near + CROSSWALK_DEPTH / 2.0)
    half_depth = CROSSWALK_DEPTH / 2.0
    stripes = []
    offset = -params.half_width + STRIPE_WIDTH / 2.0
    while offset + STRIPE_WIDTH / 2.0 <= params.half_width + 1e-9:
        c = middle + n * offset
        corners = [
            c - u * half_depth - n * STRIPE_WIDTH / 2.0,
            c + u * half_depth - n * STRIPE_WIDTH / 2.0,
            c + u * half_depth + n * STRIPE_WIDTH / 2.0,
            c - u * half_depth + n * STRIPE_WIDTH / 2.0,
        ]
        stripes.append(
            WorldFeature(type="polygon", label=SemanticLabel.CROSSWALK, vertices=_vertices(corners))
        )
        offset += STRIPE_PITCH

    return stripes


def _lane_offsets(params: WorldParams) -> list[float]:
    return [(k - params.lanes / 2.0) * params.lane_width for k in range(params.lanes + 1)]


def _travel_lanes(params: WorldParams) -> list[tuple[float, int]]:
    """``(lateral offset, direction)`` of each lane center; direction ``1`` follows the road."""
    if params.lanes == 1:
        return [(0.0, 1)]

    per_side = params.lanes // 2
    right = [(-(j + 0.5) * params.lane_width, 1) for j in range(per_side)]
    left = [((j + 0.5) * params.lane_width, -1) for j in range(params.lanes - per_side)]
    return right + left


def _road(
    a: np.ndarray,
    b: np.ndarray,
    params: WorldParams,
    junction_a: bool,
    junction_b: bool,
    sign_positions: list[float],
) -> list[WorldFeature]:
    """Markings of one road segment from ``a`` to ``b``; junction ends get clearances."""
    u, n, length = _unit(a, b)
    start = params.stop_offset if junction_a else 0.0
    end = length - (params.stop_offset if junction_b else 0.0)
    if end - start <= params.dash[0]:
        raise SimulationError(f"Road segment of {length:.1f} m is too short for its junctions.")

    offsets = _lane_offsets(params)
    features = []
    for k, offset in enumerate(offsets):
        solid = k in (0, len(offsets) - 1)
        features.append(
            WorldFeature(
                type="polyline",
                label=SemanticLabel.LANE_LINE,
                vertices=_vertices([a + u * start + n * offset, a + u * end + n * offset]),
                width=params.line_width,
                dash=None if solid else params.dash,
            )
        )

    half = params.half_width
    if junction_b:
        at = a + u * (end + params.stop_line_width / 2.0)
        features.append(
            WorldFeature(
                type="polyline",
                label=SemanticLabel.STOP_LINE,
                vertices=_vertices([at, at - n * half]),
                width=params.stop_line_width,
            )
        )
        features.extend(_crosswalk(b, -u, -n, params))

    if junction_a:
        at = a + u * (start - params.stop_line_width / 2.0)
        features.append(
            WorldFeature(
                type="polyline",
                label=SemanticLabel.STOP_LINE,
                vertices=_vertices([at, at + n * half]),
                width=params.stop_line_width,
            )
        )
        features.extend(_crosswalk(a, u, n, params))

    for s in sign_positions:
        for offset, direction in _travel_lanes(params):
            center = a + u * s + n * offset
            features.append(_arrow(center, u * direction, n * direction))

    return features


def _jittered(rng: np.random.Generator, positions: list[float], params: WorldParams) -> list[float]:
    return [p + float(rng.uniform(-params.sign_jitter, params.sign_jitter)) for p in positions]


def generate_world(
    template: Union[WorldTemplate, str], params: Optional[WorldParams] = None, seed: int = 0
) -> WorldModel:
    """
    Build a deterministic world from a template. Sign placement is jittered by ``seed``.

    Raises:
        :class:`~semmap.exceptions.SimulationError`: When the parameters leave no room for
          the markings.
    """
    template = WorldTemplate(template)
    params = params or WorldParams()
    rng = np.random.Generator(np.random.PCG64(seed))
    features: list[WorldFeature] = []

    if template is WorldTemplate.STRAIGHT_ROAD:
        count = int(params.length // params.sign_spacing)
        signs = [(i + 0.5) * params.sign_spacing for i in range(count)]
        signs = [s for s in _jittered(rng, signs, params) if 3.0 <= s <= params.length - 3.0]
        features += _road(
            np.array([0.0, 0.0]), np.array([params.length, 0.0]), params, False, False, signs
        )

    elif template is WorldTemplate.INTERSECTION:
        arm = params.length / 2.0
        center = np.zeros(2)
        for angle in (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi):
            end = arm * np.array([math.cos(angle), math.sin(angle)])
            middle = params.stop_offset + (arm - params.stop_offset) / 2.0
            features += _road(center, end, params, True, False, _jittered(rng, [middle], params))

    else:
        nx, ny = params.blocks
        spacing = params.spacing
        for j in range(ny + 1):
            for i in range(nx):
                a = np.array([i * spacing, j * spacing])
                b = np.array([(i + 1) * spacing, j * spacing])
                features += _road(a, b, params, True, True, _jittered(rng, [spacing / 2.0], params))

        for i in range(nx + 1):
            for j in range(ny):
                a = np.array([i * spacing, j * spacing])
                b = np.array([i * spacing, (j + 1) * spacing])
                features += _road(a, b, params, True, True, _jittered(rng, [spacing / 2.0], params))

    return WorldModel(features=features)
