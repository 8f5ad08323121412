from semmap.grid.map import (
    GridTile,
    SemanticGridMap,
    build_local_map,
    cell_indices,
    insert_point,
    merge,
    occupied_cells,
)
from semmap.grid.types import (
    CELL_SIZE,
    LABEL_PRIORITY,
    MARKING_LABELS,
    NUM_LABELS,
    TILE_CELLS,
    TILE_SIZE,
    CellScores,
    FeatureScan,
    GridIndex,
    LabeledPoint,
    SemanticLabel,
    cell_label,
    cell_labels,
)
from semmap.grid.upload import UploadPayload, UploadTile, decode_upload, encode_upload

__all__ = [
    "CELL_SIZE",
    "CellScores",
    "FeatureScan",
    "GridIndex",
    "GridTile",
    "LABEL_PRIORITY",
    "LabeledPoint",
    "MARKING_LABELS",
    "NUM_LABELS",
    "SemanticGridMap",
    "SemanticLabel",
    "TILE_CELLS",
    "TILE_SIZE",
    "UploadPayload",
    "UploadTile",
    "build_local_map",
    "cell_indices",
    "cell_label",
    "cell_labels",
    "decode_upload",
    "encode_upload",
    "insert_point",
    "merge",
    "occupied_cells",
]
