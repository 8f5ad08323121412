import numpy as np
import pytest
import requests

from semmap.client import MapClient, MockMapClient, SessionID
from semmap.codec import compress_map, decode, decompress_to_map, encode
from semmap.exceptions import ClientUnavailable, StoreWriteError, UploadRejected
from semmap.grid import SemanticGridMap, SemanticLabel, encode_upload
from semmap.server import MapHTTPServer, MapService


def lane_block() -> SemanticGridMap:
    indices = np.array([(ix, iy, 0) for ix in range(100, 130) for iy in range(40, 44)])
    counts = np.zeros((len(indices), 5), dtype=np.int64)
    counts[:, int(SemanticLabel.STOP_LINE)] = 3
    return SemanticGridMap.from_arrays(indices, counts)


@pytest.fixture
def map_service():
    with MapService() as service:
        yield service


@pytest.fixture
def http_server(map_service):
    server = MapHTTPServer(map_service).start()
    yield server
    server.stop()


@pytest.fixture
def client(http_server):
    return MapClient(http_server.url, timeout=5.0)


def test_mock_client_round_trip():
    client = MockMapClient()
    ack = client.upload_map(lane_block(), SessionID("drive-1"))
    assert ack.version == 1

    compressed, version = client.fetch_compressed()
    assert version == 1
    assert [tile.tile for tile in compressed.tiles] == [(0, 0)]

    indices, labels = client.fetch_grid().labels_array()
    assert len(indices) == len(lane_block())
    assert set(labels.tolist()) == {int(SemanticLabel.STOP_LINE)}


def test_status(client):
    status = client.status()
    assert (status.version, status.merged_sessions, status.tiles) == (0, 0, 0)
    assert status.updated_at is None


def test_upload_and_fetch(client, map_service):
    ack = client.upload_map(lane_block(), SessionID("drive-1"), "car-1")
    assert (ack.version, ack.cells, ack.duplicate) == (1, 120, False)
    assert client.upload_map(lane_block(), SessionID("drive-1")).duplicate

    fetched = client.fetch_map()
    assert fetched.version == 1
    assert fetched.data == map_service.fetch_map().data
    assert fetched.data == encode(compress_map(lane_block()))
    assert client.fetch_grid() == decompress_to_map(decode(fetched.data))

    status = client.status()
    assert (status.version, status.merged_sessions) == (1, 1)
    assert status.updated_at is not None


def test_fetch_bbox(client):
    client.upload_map(lane_block(), SessionID("drive-1"))
    compressed, version = client.fetch_compressed((-100.0, -100.0, -90.0, -90.0))
    assert version == 1
    assert compressed.tiles == []


def test_upload_rejection_names_the_offset(client):
    with pytest.raises(UploadRejected) as info:
        client.upload(b"XXXX" + bytes(6), SessionID("bad"))

    assert info.value.offset == 0
    assert client.status().version == 0


def test_store_failure_is_unavailable(client, map_service, monkeypatch):
    def broken(*args, **kwargs):
        raise StoreWriteError("sessions.log", "disk full")

    monkeypatch.setattr(map_service, "handle_upload", broken)
    with pytest.raises(ClientUnavailable):
        client.upload_map(lane_block(), SessionID("drive-1"))


def test_unreachable_server():
    server = MapHTTPServer(MapService())
    url = server.url
    server.server_close()

    with pytest.raises(ClientUnavailable) as info:
        MapClient(url, timeout=2.0).status()

    assert info.value.exit_code == 4


def test_raw_http_errors(http_server):
    base = f"{http_server.url}/v1"
    assert requests.get(f"{base}/nowhere", timeout=5).status_code == 404
    assert requests.get(f"{base}/map", params={"min_x": 1}, timeout=5).status_code == 400
    not_finite = {"min_x": "nan", "min_y": 0, "max_x": 1, "max_y": 1}
    assert requests.get(f"{base}/map", params=not_finite, timeout=5).status_code == 400

    missing_session = requests.post(
        f"{base}/upload", data=encode_upload(lane_block()), timeout=5
    )
    assert missing_session.status_code == 400
    assert "X-Session-Id" in missing_session.json()["error"]

    response = requests.get(f"{base}/map", timeout=5)
    assert response.headers["X-Map-Version"] == "0"
