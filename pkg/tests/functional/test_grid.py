import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semmap.exceptions import EmptyCellError, GridError, UploadParseError
from semmap.geometry import Pose
from semmap.grid import (
    CellScores,
    FeatureScan,
    GridIndex,
    LabeledPoint,
    SemanticGridMap,
    SemanticLabel,
    build_local_map,
    cell_label,
    cell_labels,
    decode_upload,
    encode_upload,
    insert_point,
    merge,
    occupied_cells,
)
from semmap.grid.types import COUNT_MAX
from semmap.grid.upload import CELL_DTYPE, HEADER, TILE_HEADER


def test_grid_index_floors_negative_coordinates():
    assert GridIndex.of(-0.01, 0.0, 0.19) == GridIndex(-1, 0, 1)
    assert GridIndex.of(410.0, -1.0, 0.0).tile == (1, -1)


def test_label_parse():
    assert SemanticLabel.parse("lane-line") is SemanticLabel.LANE_LINE
    assert SemanticLabel.parse("GroundSign") is SemanticLabel.GROUND_SIGN
    assert SemanticLabel.parse(4) is SemanticLabel.CROSSWALK


def test_cell_label_argmax():
    assert cell_label(CellScores.of(ground=5, lane_line=3)) is SemanticLabel.GROUND


def test_cell_label_ties_prefer_markings():
    assert cell_label(CellScores.of(ground=2, crosswalk=2)) is SemanticLabel.CROSSWALK
    assert cell_label(CellScores.of(stop_line=1, lane_line=1)) is SemanticLabel.LANE_LINE
    assert cell_label(CellScores.of(ground_sign=3, stop_line=3)) is SemanticLabel.STOP_LINE


def test_cell_label_empty():
    with pytest.raises(EmptyCellError):
        cell_label(CellScores())


def test_vectorized_labels_agree():
    counts = np.array([[0, 0, 0, 0, 0], [1, 1, 0, 0, 0], [3, 0, 0, 0, 2], [0, 0, 4, 4, 0]])
    assert cell_labels(counts).tolist() == [-1, 1, 0, 2]


def test_scores_saturate():
    big = CellScores.of(lane_line=COUNT_MAX - 1)
    assert (big + CellScores.of(lane_line=5))[SemanticLabel.LANE_LINE] == COUNT_MAX

    with pytest.raises(GridError):
        CellScores((0, 0, 0, 0, COUNT_MAX + 1))


def test_insert_point_votes_once():
    grid = SemanticGridMap()
    insert_point(grid, LabeledPoint(0.05, 0.05, 0.0, SemanticLabel.LANE_LINE))
    insert_point(grid, LabeledPoint(0.09, 0.01, 0.02, SemanticLabel.LANE_LINE))
    insert_point(grid, LabeledPoint(0.01, 0.01, 0.0, SemanticLabel.GROUND))

    assert occupied_cells(grid) == [(GridIndex(0, 0, 0), CellScores.of(lane_line=2, ground=1))]


def test_insert_rejects_bad_points():
    grid = SemanticGridMap()
    with pytest.raises(GridError):
        grid.insert_points(np.array([[np.nan, 0.0, 0.0]]), np.array([1]))

    with pytest.raises(GridError):
        grid.insert_points(np.zeros((1, 3)), np.array([7]))

    with pytest.raises(GridError):
        grid.insert_points(np.zeros((2, 3)), np.array([1]))


def test_cells_across_tiles(small_grid):
    assert len(small_grid) == 4
    assert small_grid.tile_ids() == [(-1, 0), (0, 0), (1, 0)]
    assert small_grid.scores((4096, 2, -1)) == CellScores.of(crosswalk=1, ground_sign=1)
    assert small_grid.scores((5, 5, 5)) is None


def test_merge_sums_per_label(small_grid):
    merged = small_grid.copy()
    merge(merged, [(GridIndex(0, 0, 0), CellScores.of(lane_line=1, stop_line=7))])
    assert merged.scores((0, 0, 0)) == CellScores.of(lane_line=4, stop_line=7, ground=1)
    assert small_grid.scores((0, 0, 0)) == CellScores.of(lane_line=3, ground=1)


def test_merge_order_does_not_matter(small_grid):
    other = SemanticGridMap.from_cells(
        [
            (GridIndex(0, 0, 0), CellScores.of(ground=10)),
            (GridIndex(9, 9, 9), CellScores.of(stop_line=1)),
        ]
    )
    a = small_grid.copy()
    a.merge_map(other)
    b = other.copy()
    b.merge_map(small_grid)
    assert a == b


def test_merge_saturates():
    grid = SemanticGridMap.from_cells([(GridIndex(1, 1, 0), CellScores.of(ground=COUNT_MAX))])
    grid.merge([(GridIndex(1, 1, 0), CellScores.of(ground=COUNT_MAX))])
    assert grid.scores((1, 1, 0)) == CellScores.of(ground=COUNT_MAX)


def test_bounds(small_grid):
    assert small_grid.bounds() == pytest.approx((-0.1, 0.0, 409.7, 0.6))
    assert SemanticGridMap().bounds() is None


def test_build_local_map_registers_scans():
    scan = FeatureScan(np.array([[1.05, 0.05], [1.05, 0.05], [2.05, -0.95]]), np.array([1, 1, 0]))
    grid = build_local_map([(scan, Pose.from_xy_yaw(10.0, 20.0, 0.0))])
    assert grid.scores(GridIndex.of(11.05, 20.05, 0.0)) == CellScores.of(lane_line=2)
    assert grid.scores(GridIndex.of(12.05, 19.05, 0.0)) == CellScores.of(ground=1)


def test_feature_scan_markings():
    scan = FeatureScan(np.zeros((3, 2)), np.array([0, 2, 0]))
    assert scan.markings().labels.tolist() == [2]
    assert scan.points_3d().shape == (3, 3)

    with pytest.raises(GridError):
        FeatureScan(np.zeros((2, 2)), np.array([1]))


@settings(max_examples=30, deadline=None)
@given(
    votes=st.lists(
        st.tuples(
            st.integers(-30, 30),
            st.integers(-30, 30),
            st.integers(-3, 3),
            st.integers(0, 4),
        ),
        min_size=1,
        max_size=80,
    ),
    split=st.integers(0, 80),
)
def test_insert_batching_is_irrelevant(votes, split):
    xyz = np.array([(ix * 0.1 + 0.05, iy * 0.1 + 0.05, iz * 0.1 + 0.05) for ix, iy, iz, _ in votes])
    labels = np.array([label for *_, label in votes])

    at_once = SemanticGridMap()
    at_once.insert_points(xyz, labels)
    in_parts = SemanticGridMap()
    in_parts.insert_points(xyz[:split], labels[:split])
    in_parts.insert_points(xyz[split:], labels[split:])

    assert at_once == in_parts
    assert sum(sum(scores.counts) for _, scores in at_once.occupied_cells()) == len(votes)


def test_upload_round_trip(small_grid):
    payload = decode_upload(encode_upload(small_grid))
    assert payload.cell_count == 4
    assert payload.to_map() == small_grid


def test_upload_of_empty_map():
    data = encode_upload(SemanticGridMap())
    assert data == HEADER.pack(b"SGUP", 1, 0)
    assert decode_upload(data).cell_count == 0


def test_upload_rejects_bad_magic(small_grid):
    data = bytearray(encode_upload(small_grid))
    data[:4] = b"XXXX"
    with pytest.raises(UploadParseError) as info:
        decode_upload(bytes(data))

    assert info.value.offset == 0


def test_upload_rejects_truncation(small_grid):
    data = encode_upload(small_grid)
    with pytest.raises(UploadParseError):
        decode_upload(data[:-1])


def test_upload_rejects_trailing_bytes(small_grid):
    data = encode_upload(small_grid) + b"\x00"
    with pytest.raises(UploadParseError) as info:
        decode_upload(data)

    assert info.value.offset == len(data) - 1


def test_upload_rejects_empty_cell():
    cell = np.zeros(1, dtype=CELL_DTYPE)
    data = HEADER.pack(b"SGUP", 1, 1) + TILE_HEADER.pack(0, 0, 1) + cell.tobytes()
    with pytest.raises(UploadParseError) as info:
        decode_upload(data)

    assert info.value.offset == HEADER.size + TILE_HEADER.size


def test_upload_rejects_duplicate_tile():
    cell = np.zeros(1, dtype=CELL_DTYPE)
    cell["counts"][0, 1] = 1
    tile = TILE_HEADER.pack(0, 0, 1) + cell.tobytes()
    data = HEADER.pack(b"SGUP", 1, 2) + tile + tile
    with pytest.raises(UploadParseError) as info:
        decode_upload(data)

    assert info.value.offset == HEADER.size + len(tile)


def test_upload_rejects_unknown_version(small_grid):
    data = bytearray(encode_upload(small_grid))
    struct.pack_into("<H", data, 4, 9)
    with pytest.raises(UploadParseError) as info:
        decode_upload(bytes(data))

    assert info.value.offset == 4


def test_label_flips_once_ground_overtakes():
    grid = SemanticGridMap.from_cells([(GridIndex(5, 5, 0), CellScores.of(lane_line=3))])
    labels = []
    for _ in range(4):
        grid.merge([(GridIndex(5, 5, 0), CellScores.of(ground=1))])
        labels.append(cell_label(grid.scores((5, 5, 0))))

    lane, ground = SemanticLabel.LANE_LINE, SemanticLabel.GROUND
    assert labels == [lane, lane, lane, ground]
