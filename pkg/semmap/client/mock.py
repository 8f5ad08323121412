from typing import TYPE_CHECKING, Optional

from semmap.client.base import BaseMapClient
from semmap.client.types import BBox, FetchedMap, MapStatus, SessionID, UploadAck, VehicleID

if TYPE_CHECKING:
    from semmap.server.service import MapService


class MockMapClient(BaseMapClient):
    """
    Talks to an in-process :class:`~semmap.server.service.MapService` instead of a server.
    """

    def __init__(self, service: Optional["MapService"] = None):
        if service is None:
            from semmap.server.service import MapService

            service = MapService()

        self.service = service
        super().__init__("memory://")

    def upload(
        self, payload: bytes, session_id: SessionID, vehicle_id: VehicleID = VehicleID("")
    ) -> UploadAck:
        return self.service.handle_upload(payload, session_id, vehicle_id)

    def fetch_map(self, bbox: Optional[BBox] = None) -> FetchedMap:
        return self.service.fetch_map(bbox)

    def status(self) -> MapStatus:
        return self.service.status()
