from importlib import import_module
from typing import Any

_EXPORTS = {
    "CameraModel": "semmap.geometry",
    "Pose": "semmap.geometry",
    "RoiSpec": "semmap.geometry",
    "SemanticGridMap": "semmap.grid",
    "SemanticLabel": "semmap.grid",
    "CompressedMap": "semmap.codec",
    "compress_map": "semmap.codec",
    "decompress_to_map": "semmap.codec",
    "LocalizationSession": "semmap.localizer",
    "MapService": "semmap.server",
    "MapClient": "semmap.client",
    "MockMapClient": "semmap.client",
    "PipelineConfig": "semmap.config",
    "build_map_from_frames": "semmap.pipeline",
    "localize_frames": "semmap.pipeline",
    "run_demo": "semmap.pipeline",
}


def __getattr__(name: str) -> Any:
    # perf: importing the package should not pull in scipy, cv2 and shapely.
    if module := _EXPORTS.get(name):
        return getattr(import_module(module), name)

    raise AttributeError(name)


__all__ = sorted(_EXPORTS)
