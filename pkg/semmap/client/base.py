from abc import ABC, abstractmethod
from functools import cached_property
from typing import TYPE_CHECKING, Optional

import requests
from requests.adapters import HTTPAdapter

from semmap.client.types import (
    BBox,
    FetchedMap,
    MapStatus,
    SessionID,
    UploadAck,
    VehicleID,
)
from semmap.codec import CompressedMap, decode, decompress_to_map
from semmap.exceptions import ClientResponseError, ClientUnavailable
from semmap.grid import SemanticGridMap, encode_upload

if TYPE_CHECKING:
    from requests import Response

DEFAULT_HEADERS = {
    "Accept": "application/json, application/octet-stream",
}


class BaseMapClient(ABC):
    def __init__(self, server_url: str, timeout: float = 30.0):
        self.server_url = server_url.rstrip("/")
        self.timeout = timeout

    """Abstract methods"""

    @abstractmethod
    def upload(
        self, payload: bytes, session_id: SessionID, vehicle_id: VehicleID = VehicleID("")
    ) -> UploadAck: ...

    @abstractmethod
    def fetch_map(self, bbox: Optional[BBox] = None) -> FetchedMap: ...

    @abstractmethod
    def status(self) -> MapStatus: ...

    """Shared methods"""

    def upload_map(
        self, grid: SemanticGridMap, session_id: SessionID, vehicle_id: VehicleID = VehicleID("")
    ) -> UploadAck:
        return self.upload(encode_upload(grid), session_id, vehicle_id)

    def fetch_compressed(self, bbox: Optional[BBox] = None) -> tuple[CompressedMap, int]:
        """
        Raises:
            :class:`~semmap.exceptions.MapVersionMismatch`: When the server speaks a
              newer map format than this decoder.
        """
        fetched = self.fetch_map(bbox)
        return decode(fetched.data), fetched.version

    def fetch_grid(self, bbox: Optional[BBox] = None) -> SemanticGridMap:
        compressed, _ = self.fetch_compressed(bbox)
        return decompress_to_map(compressed)

    """Request methods"""

    @cached_property
    def session(self) -> requests.Session:
        session = requests.Session()
        adapter = HTTPAdapter(
            pool_connections=10,  # Doing all the connections to the same url
            pool_maxsize=100,  # Number of concurrent connections
            pool_block=False,
        )
        session.mount("http://", adapter)
        session.mount("https://", adapter)
        return session

    def _get(self, url: str, **kwargs) -> "Response":
        return self._request("GET", url, **kwargs)

    def _post(self, url: str, data: Optional[bytes] = None, **kwargs) -> "Response":
        return self._request("POST", url, data=data, **kwargs)

    def _request(self, method: str, url: str, **kwargs) -> "Response":
        api_url = f"{self.server_url}/v1/{url}"
        do_fail = not kwargs.pop("allow_failure", False)

        # Use `or` to handle when None is explicit.
        kwargs["timeout"] = kwargs.get("timeout") or self.timeout

        headers = kwargs.get("headers", {})
        kwargs["headers"] = {**DEFAULT_HEADERS, **headers}
        try:
            response = self.session.request(method, api_url, **kwargs)
        except (requests.ConnectionError, requests.Timeout) as err:
            raise ClientUnavailable(self.server_url, type(err).__name__) from err

        if response.status_code == 503:
            raise ClientUnavailable(self.server_url, f"Server busy: {response.text}")

        if not response.ok and do_fail:
            raise ClientResponseError(api_url, response)

        return response
