from datetime import datetime
from typing import NewType, Optional

from pydantic import BaseModel, Field

SessionID = NewType("SessionID", str)
VehicleID = NewType("VehicleID", str)

BBox = tuple[float, float, float, float]


class MapVersion(BaseModel):
    version: int = 0
    merged_sessions: int = 0
    updated_at: Optional[datetime] = None


class UploadAck(BaseModel):
    session_id: SessionID
    version: int
    duplicate: bool = False
    """The session was merged before; nothing changed."""
    cells: int = 0


class UploadError(BaseModel):
    error: str
    offset: Optional[int] = None


class MapStatus(MapVersion):
    tiles: int = 0
    cells: int = 0


class CompactStats(BaseModel):
    tiles: int = 0
    """Merge tiles examined."""
    regenerated: int = 0
    """Merge tiles whose compressed blocks were rebuilt."""
    raster_tiles: int = 0
    bytes: int = 0
    """Encoded size of the compressed blocks of the examined tiles."""


class FetchedMap(BaseModel):
    data: bytes = Field(repr=False)
    """SMAP bytes."""
    version: int

    def __str__(self) -> str:
        return f"Map v{self.version} ({len(self.data)} bytes)"
