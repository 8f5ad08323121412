import errno
import itertools
import os
import threading

import numpy as np
import pytest

from semmap.client import SessionID
from semmap.codec import compress_map, encode
from semmap.exceptions import StoreWriteError, UploadParseError
from semmap.grid import SemanticGridMap, encode_upload
from semmap.server import MapService, SessionRecord, TileStore
from semmap.server import store as store_module


def lane_grid(ix0: int = 0, votes: int = 2) -> SemanticGridMap:
    """A 5 m by 0.2 m lane-line patch starting at cell ``ix0``."""
    indices = np.array([(ix, iy, 0) for ix in range(ix0, ix0 + 50) for iy in (10, 11)])
    counts = np.zeros((len(indices), 5), dtype=np.int64)
    counts[:, 1] = votes
    return SemanticGridMap.from_arrays(indices, counts)


@pytest.fixture
def service():
    with MapService() as service:
        yield service


def test_upload_merges_and_bumps_version(service, small_grid):
    ack = service.handle_upload(encode_upload(small_grid), SessionID("drive-1"))

    assert ack.version == 1
    assert not ack.duplicate
    assert ack.cells == 4
    assert service.global_map() == small_grid
    status = service.status()
    assert (status.version, status.merged_sessions, status.tiles, status.cells) == (1, 1, 3, 4)


def test_duplicate_session_is_idempotent(service, small_grid):
    payload = encode_upload(small_grid)
    service.handle_upload(payload, SessionID("drive-1"))
    service.handle_upload(encode_upload(lane_grid()), SessionID("drive-2"))
    again = service.handle_upload(payload, SessionID("drive-1"))

    assert again.duplicate
    assert again.version == 1
    assert service.version == 2
    assert service.global_map().scores((0, 0, 0)) == small_grid.scores((0, 0, 0))


def test_malformed_upload_changes_nothing(service):
    with pytest.raises(UploadParseError):
        service.handle_upload(b"SGUP\x01\x00", SessionID("broken"))

    assert service.version == 0
    assert len(service.global_map()) == 0


def test_merge_order_does_not_matter(small_grid):
    uploads = [("a", small_grid), ("b", lane_grid()), ("c", lane_grid(votes=5))]
    forward, backward = MapService(), MapService()
    for session, grid in uploads:
        forward.handle_upload(encode_upload(grid), SessionID(session))
    for session, grid in reversed(uploads):
        backward.handle_upload(encode_upload(grid), SessionID(session))

    assert forward.global_map() == backward.global_map()
    assert forward.fetch_map().data == backward.fetch_map().data


def test_concurrent_uploads_serialize(service):
    grid = lane_grid()
    payload = encode_upload(grid)
    acks = []

    def upload(k: int):
        acks.append(service.handle_upload(payload, SessionID(f"vehicle-{k}")))

    threads = [threading.Thread(target=upload, args=(k,)) for k in range(8)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    assert sorted(ack.version for ack in acks) == list(range(1, 9))
    _, counts = service.global_map().cells_array()
    assert (counts[:, 1] == 16).all()


def test_fetch_matches_offline_compression(service, small_grid):
    service.handle_upload(encode_upload(small_grid), SessionID("a"))
    service.handle_upload(encode_upload(lane_grid(4090)), SessionID("b"))

    fetched = service.fetch_map()
    assert fetched.version == 2
    assert fetched.data == encode(compress_map(service.global_map()))


def test_fetch_bbox(service):
    service.handle_upload(encode_upload(lane_grid()), SessionID("a"))
    service.handle_upload(encode_upload(lane_grid(2000)), SessionID("b"))

    near = service.fetch_map((0.0, 0.0, 10.0, 10.0))
    assert near.data == encode(compress_map(lane_grid()))
    assert service.fetch_map((-900.0, -900.0, -800.0, -800.0)).data == encode(
        compress_map(SemanticGridMap())
    )


def test_compaction_reuses_cached_blocks(service):
    service.handle_upload(encode_upload(lane_grid()), SessionID("a"))

    first = service.compact()
    assert (first.tiles, first.regenerated, first.raster_tiles) == (1, 1, 1)
    assert first.bytes > 0

    assert service.compact().tiles == 0

    again = service.compact([(0, 0)])
    assert (again.tiles, again.regenerated) == (1, 0)


def test_fetch_follows_a_repainted_road(service):
    service.handle_upload(encode_upload(lane_grid()), SessionID("a"))
    assert service.fetch_map().data != encode(compress_map(SemanticGridMap()))

    # the same cells, now seen as plain ground more often than they were seen painted
    indices, counts = lane_grid(votes=3).cells_array()
    repainted = SemanticGridMap.from_arrays(indices, counts[:, [1, 0, 2, 3, 4]])
    service.handle_upload(encode_upload(repainted), SessionID("b"))
    service.compact()

    assert service.fetch_map().data == encode(compress_map(SemanticGridMap()))


def test_failed_persist_is_invisible(tmp_path, monkeypatch, small_grid):
    with MapService(tmp_path) as service:

        def broken(*args, **kwargs):
            raise StoreWriteError(str(tmp_path), "disk full")

        monkeypatch.setattr(service.store, "commit", broken)
        with pytest.raises(StoreWriteError):
            service.handle_upload(encode_upload(small_grid), SessionID("a"))

        assert service.version == 0
        assert len(service.global_map()) == 0

    # The tile records were never committed, so they do not come back either.
    with MapService(tmp_path) as reopened:
        assert reopened.version == 0
        assert len(reopened.global_map()) == 0


def test_store_survives_restart(tmp_path, small_grid):
    with MapService(tmp_path) as service:
        service.handle_upload(encode_upload(small_grid), SessionID("a"))
        service.handle_upload(encode_upload(lane_grid()), SessionID("b"), "car-7")
        expected = service.global_map()
        data = service.fetch_map().data

    with MapService(tmp_path) as reopened:
        assert reopened.version == 2
        assert reopened.global_map() == expected
        assert reopened.fetch_map().data == data
        assert reopened.handle_upload(encode_upload(small_grid), SessionID("a")).duplicate
        assert reopened.handle_upload(encode_upload(small_grid), SessionID("c")).version == 3


def test_torn_tails_are_dropped(tmp_path, small_grid):
    with MapService(tmp_path) as service:
        service.handle_upload(encode_upload(small_grid), SessionID("a"))
        expected = service.global_map()

    store = TileStore(tmp_path)
    for path in [store.sessions_path, *store.tiles_dir.glob("*.log")]:
        with open(path, "ab") as file:
            file.write(b"\x40\x00\x00\x00torn")

    with MapService(tmp_path) as reopened:
        assert reopened.global_map() == expected
        reopened.handle_upload(encode_upload(small_grid), SessionID("b"))
        doubled = reopened.global_map()

    with MapService(tmp_path) as again:
        assert again.version == 2
        assert again.global_map() == doubled


def test_uncommitted_records_are_ignored(tmp_path):
    store = TileStore(tmp_path)
    tile = next(lane_grid().tiles())
    store.append(tile.tile_id, "ghost", tile.keys, tile.counts)
    store.append(tile.tile_id, "real", tile.keys, tile.counts)
    store.commit(
        SessionRecord(
            session_id="real", vehicle_id="", version=1, updated_at=0.0, tiles=[tile.tile_id]
        )
    )

    state = TileStore(tmp_path).recover()
    assert state.version == 1
    assert set(state.sessions) == {"real"}
    assert np.array_equal(state.tiles[tile.tile_id].counts, tile.counts)


def test_checkpoints_fold_the_log(tmp_path, monkeypatch):
    monkeypatch.setattr(store_module, "CHECKPOINT_EVERY", 2)
    with MapService(tmp_path) as service:
        for k in range(5):
            service.handle_upload(encode_upload(lane_grid()), SessionID(f"s{k}"))
        expected = service.global_map()

    tiles_dir = tmp_path / "tiles"
    assert sorted(path.name for path in tiles_dir.glob("*.ckpt")) == ["0_0.2.ckpt"]
    assert [path.name for path in tiles_dir.glob("*.log")] == ["0_0.2.log"]

    with MapService(tmp_path) as reopened:
        assert reopened.version == 5
        assert reopened.global_map() == expected
        _, counts = reopened.global_map().cells_array()
        assert (counts[:, 1] == 10).all()


def test_corrupt_checkpoint_is_reported(tmp_path, monkeypatch):
    monkeypatch.setattr(store_module, "CHECKPOINT_EVERY", 1)
    with MapService(tmp_path) as service:
        service.handle_upload(encode_upload(lane_grid()), SessionID("a"))

    (checkpoint,) = (tmp_path / "tiles").glob("*.ckpt")
    data = bytearray(checkpoint.read_bytes())
    data[20] ^= 0xFF
    checkpoint.write_bytes(bytes(data))

    with pytest.raises(store_module.StoreError):
        TileStore(tmp_path).recover()


def test_failed_commit_write_is_cut_before_the_next_one(tmp_path, monkeypatch, small_grid):
    real_fsync = os.fsync
    synced = []

    def tearing_fsync(fd: int):
        synced.append(fd)
        if len(synced) == 2:
            # the commit line of "b" reaches the disk only halfway
            os.ftruncate(fd, os.fstat(fd).st_size - 5)
            raise OSError(errno.EIO, "Input/output error")

        real_fsync(fd)

    def failing_truncate(*args):
        raise OSError(errno.EIO, "Input/output error")

    with MapService(tmp_path) as service:
        service.handle_upload(encode_upload(small_grid), SessionID("a"))
        with monkeypatch.context() as patched:
            patched.setattr(store_module.os, "fsync", tearing_fsync)
            patched.setattr(store_module.os, "truncate", failing_truncate)
            with pytest.raises(StoreWriteError):
                service.handle_upload(encode_upload(lane_grid()), SessionID("b"))

        assert service.version == 1
        assert service.handle_upload(encode_upload(lane_grid(votes=3)), SessionID("c")).version == 2
        expected = service.global_map()

    with MapService(tmp_path) as reopened:
        assert reopened.version == 2
        assert reopened.global_map() == expected
        assert reopened.handle_upload(encode_upload(lane_grid(votes=3)), SessionID("c")).duplicate


def test_commit_after_foreign_torn_bytes_survives(tmp_path):
    store = TileStore(tmp_path)
    tile = next(lane_grid().tiles())
    for version, session_id in enumerate(("a", "c"), start=1):
        store.append(tile.tile_id, session_id, tile.keys, tile.counts)
        store.commit(
            SessionRecord(
                session_id=session_id,
                vehicle_id="",
                version=version,
                updated_at=0.0,
                tiles=[tile.tile_id],
            )
        )
        if session_id == "a":
            with open(store.sessions_path, "ab") as file:
                file.write(b'\x40\x00\x00\x00\x00\x00\x00\x00{"sess')

    state = TileStore(tmp_path).recover()
    assert set(state.sessions) == {"a", "c"}
    assert state.version == 2
    assert np.array_equal(state.tiles[tile.tile_id].counts, 2 * tile.counts)


def test_failed_checkpoint_keeps_the_upload(tmp_path, monkeypatch):
    monkeypatch.setattr(store_module, "CHECKPOINT_EVERY", 1)
    with MapService(tmp_path) as service:

        def broken(*args, **kwargs):
            raise StoreWriteError(str(tmp_path), "disk full")

        monkeypatch.setattr(service.store, "checkpoint", broken)
        ack = service.handle_upload(encode_upload(lane_grid()), SessionID("a"))
        assert ack.version == 1
        assert service.version == 1
        assert service.store.needs_checkpoint((0, 0))
        expected = service.global_map()

    assert not list((tmp_path / "tiles").glob("*.ckpt"))
    with MapService(tmp_path) as reopened:
        assert reopened.version == 1
        assert reopened.global_map() == expected


@pytest.mark.parametrize(
    "order", list(itertools.permutations(range(4))), ids=lambda order: "".join(map(str, order))
)
def test_restarts_between_uploads_keep_every_merge(tmp_path, small_grid, order):
    grids = [small_grid, lane_grid(), lane_grid(votes=5), lane_grid(4090, votes=3)]
    expected = SemanticGridMap()
    for k in order:
        with MapService(tmp_path) as service:
            ack = service.handle_upload(encode_upload(grids[k]), SessionID(f"drive-{k}"))
            assert not ack.duplicate

        expected.merge_map(grids[k])

    with MapService(tmp_path) as reopened:
        assert reopened.version == len(grids)
        assert reopened.global_map() == expected
        assert reopened.fetch_map().data == encode(compress_map(expected))
        assert reopened.handle_upload(encode_upload(small_grid), SessionID("drive-0")).duplicate
