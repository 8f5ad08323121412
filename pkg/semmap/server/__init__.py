from semmap.server.http import MapHTTPServer, serve
from semmap.server.service import MapService, MapSnapshot
from semmap.server.store import SessionRecord, TileStore

__all__ = [
    "MapHTTPServer",
    "MapService",
    "MapSnapshot",
    "SessionRecord",
    "TileStore",
    "serve",
]
