from semmap.codec.contours import MIN_HOLE_AREA, LabeledContour, extract_contours, fill
from semmap.codec.raster import (
    EMPTY,
    RASTER_EXTENT,
    RASTER_SIZE,
    Region,
    TopViewRaster,
    raster_tile_range,
    rasterize,
)
from semmap.codec.smap import (
    CompressedMap,
    CompressedTile,
    compress_map,
    compress_tile,
    decode,
    decompress_tile,
    decompress_to_map,
    encode,
    encode_header,
    encode_tile,
)

__all__ = [
    "CompressedMap",
    "CompressedTile",
    "EMPTY",
    "LabeledContour",
    "MIN_HOLE_AREA",
    "RASTER_EXTENT",
    "RASTER_SIZE",
    "Region",
    "TopViewRaster",
    "compress_map",
    "compress_tile",
    "decode",
    "decompress_tile",
    "decompress_to_map",
    "encode",
    "encode_header",
    "encode_tile",
    "extract_contours",
    "fill",
    "raster_tile_range",
    "rasterize",
]
