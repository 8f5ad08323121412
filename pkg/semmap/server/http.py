"""
HTTP/1.1 front of :class:`~semmap.server.service.MapService`.

Endpoints::

    POST /v1/upload   body: SGUP bytes, headers X-Vehicle-Id / X-Session-Id
                      200 {"session_id", "version", ...} | 400 {"error", "offset"}
    GET  /v1/map      ?min_x&min_y&max_x&max_y, 200 SMAP bytes + X-Map-Version
    GET  /v1/status   200 {"version", "tiles", "merged_sessions", ...}
"""

import math
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlsplit

from pydantic import BaseModel

from semmap.client.types import SessionID, UploadError, VehicleID
from semmap.exceptions import StoreError, UploadParseError
from semmap.logging import logger
from semmap.server.service import MapService

API_PREFIX = "/v1"
MAP_VERSION_HEADER = "X-Map-Version"
SESSION_HEADER = "X-Session-Id"
VEHICLE_HEADER = "X-Vehicle-Id"
MAX_UPLOAD_BYTES = 1 << 30
BBOX_KEYS = ("min_x", "min_y", "max_x", "max_y")
MAX_COORDINATE = 1e9


class _BadRequest(Exception):
    pass


def parse_bbox(query: str) -> Optional[tuple[float, float, float, float]]:
    """The bbox of a ``/v1/map`` query string; ``None`` when no bound is given."""
    params = parse_qs(query)
    given = [key for key in BBOX_KEYS if key in params]
    if not given:
        return None

    if len(given) != len(BBOX_KEYS):
        raise _BadRequest(f"bbox needs all of {', '.join(BBOX_KEYS)}")

    try:
        values = tuple(float(params[key][0]) for key in BBOX_KEYS)
    except ValueError as err:
        raise _BadRequest(f"bbox bounds must be numbers ({err})") from err

    if not all(math.isfinite(v) and abs(v) < MAX_COORDINATE for v in values):
        raise _BadRequest("bbox bounds must be finite world coordinates")

    return values  # type: ignore[return-value]


class MapRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "MapHTTPServer"

    @property
    def service(self) -> MapService:
        return self.server.service

    def log_message(self, format: str, *args):
        logger.debug(f"{self.address_string()} {format % args}")

    def _send(self, status: HTTPStatus, body: bytes, content_type: str, headers=None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for name, value in (headers or {}).items():
            self.send_header(name, value)

        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: HTTPStatus, model: BaseModel):
        self._send(status, model.model_dump_json().encode(), "application/json")

    def _error(self, status: HTTPStatus, message: str, offset: Optional[int] = None):
        self._send_json(status, UploadError(error=message, offset=offset))

    def do_GET(self):
        url = urlsplit(self.path)
        if url.path == f"{API_PREFIX}/status":
            self._send_json(HTTPStatus.OK, self.service.status())

        elif url.path == f"{API_PREFIX}/map":
            try:
                bbox = parse_bbox(url.query)
            except _BadRequest as err:
                self._error(HTTPStatus.BAD_REQUEST, str(err))
                return

            fetched = self.service.fetch_map(bbox)
            self._send(
                HTTPStatus.OK,
                fetched.data,
                "application/octet-stream",
                {MAP_VERSION_HEADER: str(fetched.version)},
            )

        else:
            self._error(HTTPStatus.NOT_FOUND, f"no route for GET {url.path}")

    def do_POST(self):
        url = urlsplit(self.path)
        if url.path != f"{API_PREFIX}/upload":
            self._error(HTTPStatus.NOT_FOUND, f"no route for POST {url.path}")
            return

        session_id = self.headers.get(SESSION_HEADER, "").strip()
        vehicle_id = self.headers.get(VEHICLE_HEADER, "").strip()
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self._error(HTTPStatus.LENGTH_REQUIRED, "Content-Length is required")
            return

        if not 0 <= length <= MAX_UPLOAD_BYTES:
            self._error(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, f"upload of {length} bytes")
            return

        payload = self.rfile.read(length)
        if not session_id:
            self._error(HTTPStatus.BAD_REQUEST, f"{SESSION_HEADER} header is required")
            return

        try:
            ack = self.service.handle_upload(payload, SessionID(session_id), VehicleID(vehicle_id))
        except UploadParseError as err:
            self._error(HTTPStatus.BAD_REQUEST, err.reason, err.offset)
        except StoreError as err:
            logger.error(f"Rejected session '{session_id}': {err}")
            self._error(HTTPStatus.SERVICE_UNAVAILABLE, str(err))
        else:
            self._send_json(HTTPStatus.OK, ack)


class MapHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, service: MapService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        super().__init__((host, port), MapRequestHandler)
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MapHTTPServer":
        """Serve from a background thread."""
        self._thread = threading.Thread(target=self.serve_forever, name="semmap-http", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()
            self._thread = None


def serve(service: MapService, host: str, port: int):
    """Serve until interrupted."""
    with MapHTTPServer(service, host, port) as server:
        logger.success(f"Map server listening on {server.url}")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            logger.info("Shutting down.")
