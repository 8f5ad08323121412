from importlib.metadata import PackageNotFoundError, version
from typing import Optional

from semmap.client.base import BaseMapClient
from semmap.client.mock import MockMapClient
from semmap.client.types import (
    BBox,
    CompactStats,
    FetchedMap,
    MapStatus,
    MapVersion,
    SessionID,
    UploadAck,
    UploadError,
    VehicleID,
)
from semmap.exceptions import ClientResponseError, UploadRejected

try:
    SEMMAP_VERSION = version("semmap")
except PackageNotFoundError:
    SEMMAP_VERSION = "0.0.0"

USER_AGENT = f"semmap/{SEMMAP_VERSION}"
MAP_VERSION_HEADER = "X-Map-Version"


class MapClient(BaseMapClient):
    """
    Client of a remote map server.
    """

    def upload(
        self, payload: bytes, session_id: SessionID, vehicle_id: VehicleID = VehicleID("")
    ) -> UploadAck:
        headers = {
            "Content-Type": "application/octet-stream",
            "User-Agent": USER_AGENT,
            "X-Session-Id": session_id,
            "X-Vehicle-Id": vehicle_id,
        }
        response = self._post("upload", data=payload, headers=headers, allow_failure=True)
        if response.status_code == 400:
            raise UploadRejected(response.url, response)

        elif not response.ok:
            raise ClientResponseError(response.url, response)

        return UploadAck.model_validate(response.json())

    def fetch_map(self, bbox: Optional[BBox] = None) -> FetchedMap:
        params = None
        if bbox is not None:
            params = dict(zip(("min_x", "min_y", "max_x", "max_y"), bbox))

        response = self._get("map", params=params, headers={"User-Agent": USER_AGENT})
        map_version = response.headers.get(MAP_VERSION_HEADER)
        if map_version is None or not map_version.isdigit():
            raise ClientResponseError(
                response.url, response, message=f"Response lacks a valid {MAP_VERSION_HEADER}."
            )

        return FetchedMap(data=response.content, version=int(map_version))

    def status(self) -> MapStatus:
        response = self._get("status", headers={"User-Agent": USER_AGENT})
        return MapStatus.model_validate(response.json())


__all__ = [
    "BBox",
    "BaseMapClient",
    "CompactStats",
    "FetchedMap",
    "MapClient",
    "MapStatus",
    "MapVersion",
    "MockMapClient",
    "SessionID",
    "UploadAck",
    "UploadError",
    "VehicleID",
]
