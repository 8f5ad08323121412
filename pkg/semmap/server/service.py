"""
In-process core of the map server: merges uploads, keeps versioned snapshots and serves
compressed map regions.

Writers take the locks of the tiles they touch in ascending tile order and publish the
merged tiles together with the new version under one short commit lock. Readers grab
the published ``(version, tiles)`` pair and never see half of a merge.
"""

import threading
import time
from collections.abc import Iterable, Iterator
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np

from semmap.client.types import (
    BBox,
    CompactStats,
    FetchedMap,
    MapStatus,
    MapVersion,
    SessionID,
    UploadAck,
    VehicleID,
)
from semmap.codec import (
    RASTER_SIZE,
    CompressedMap,
    CompressedTile,
    compress_tile,
    encode,
    encode_tile,
    raster_tile_range,
    rasterize,
)
from semmap.exceptions import StoreWriteError
from semmap.grid import GridTile, SemanticGridMap, decode_upload
from semmap.grid.map import TileId
from semmap.grid.types import TILE_CELLS
from semmap.logging import logger
from semmap.server.store import RecoveredState, SessionRecord, TileStore

RASTERS_PER_TILE = TILE_CELLS // RASTER_SIZE


@dataclass(frozen=True)
class MapSnapshot:
    version: int = 0
    tiles: dict[TileId, GridTile] = field(default_factory=dict)
    tile_versions: dict[TileId, int] = field(default_factory=dict)
    merged_sessions: int = 0
    updated_at: Optional[datetime] = None

    def to_map(self, tile_ids: Optional[Iterable[TileId]] = None) -> SemanticGridMap:
        ids = self.tiles if tile_ids is None else [t for t in tile_ids if t in self.tiles]
        return SemanticGridMap({tile_id: self.tiles[tile_id] for tile_id in ids})


@dataclass(frozen=True)
class _CachedTile:
    version: int
    blocks: dict[tuple[int, int], CompressedTile]
    size: int


def _compress_merge_tile(tile: GridTile) -> dict[tuple[int, int], CompressedTile]:
    blocks = {}
    for raster in rasterize(SemanticGridMap({tile.tile_id: tile})):
        compressed = compress_tile(raster)
        if compressed is not None:
            blocks[raster.tile] = compressed

    return blocks


def _rasters_of(tile_id: TileId) -> tuple[np.ndarray, np.ndarray]:
    low = np.array(tile_id, dtype=np.int64) * RASTERS_PER_TILE
    return low, low + RASTERS_PER_TILE - 1


class MapService:
    """
    Aggregates session uploads into the global semantic map.

    Args:
        data_dir: Where the tile store lives. ``None`` keeps everything in memory.
        compact_interval: Seconds between background compactions; ``None`` disables the
          compactor thread.
    """

    def __init__(
        self,
        data_dir: Optional[Union[str, Path]] = None,
        compact_interval: Optional[float] = None,
    ):
        self.store = TileStore(data_dir) if data_dir is not None else None
        state = self.store.recover() if self.store else RecoveredState()
        self._sessions: dict[str, SessionRecord] = dict(state.sessions)
        last = max(self._sessions.values(), key=lambda r: r.version, default=None)
        self._snapshot = MapSnapshot(
            version=state.version,
            tiles=dict(state.tiles),
            tile_versions={tile_id: state.version for tile_id in state.tiles},
            merged_sessions=len(self._sessions),
            updated_at=datetime.fromtimestamp(last.updated_at, timezone.utc) if last else None,
        )
        self._commit_lock = threading.Lock()
        self._guard = threading.Lock()
        self._tile_locks: dict[TileId, threading.Lock] = {}
        self._session_locks: dict[str, threading.Lock] = {}
        self._cache: dict[TileId, _CachedTile] = {}
        self._dirty: set[TileId] = set(state.tiles)
        self._stop = threading.Event()
        self._compactor: Optional[threading.Thread] = None
        if compact_interval is not None:
            self.start_compactor(compact_interval)

        if state.sessions:
            logger.info(
                f"Map store at version {state.version}: "
                f"{len(state.tiles)} tiles, {len(state.sessions)} sessions."
            )

    def __enter__(self) -> "MapService":
        return self

    def __exit__(self, *exc):
        self.close()

    def _lock_for(self, registry: dict, key) -> threading.Lock:
        with self._guard:
            return registry.setdefault(key, threading.Lock())

    @contextmanager
    def _tiles_locked(self, tile_ids: Iterable[TileId]) -> Iterator[None]:
        with ExitStack() as stack:
            for tile_id in sorted(tile_ids):
                stack.enter_context(self._lock_for(self._tile_locks, tile_id))

            yield

    """Reads"""

    def snapshot(self) -> MapSnapshot:
        with self._commit_lock:
            return self._snapshot

    @property
    def version(self) -> int:
        return self.snapshot().version

    def map_version(self) -> MapVersion:
        snapshot = self.snapshot()
        return MapVersion(
            version=snapshot.version,
            merged_sessions=snapshot.merged_sessions,
            updated_at=snapshot.updated_at,
        )

    def status(self) -> MapStatus:
        snapshot = self.snapshot()
        return MapStatus(
            version=snapshot.version,
            merged_sessions=snapshot.merged_sessions,
            updated_at=snapshot.updated_at,
            tiles=len(snapshot.tiles),
            cells=sum(len(tile) for tile in snapshot.tiles.values()),
        )

    def global_map(self) -> SemanticGridMap:
        return self.snapshot().to_map()

    """Uploads"""

    def handle_upload(
        self, payload: bytes, session_id: SessionID, vehicle_id: VehicleID = VehicleID("")
    ) -> UploadAck:
        """
        Validate and merge one session upload. A session that was merged before is
        acknowledged with its original version and not merged again.

        Raises:
            :class:`~semmap.exceptions.UploadParseError`: When the payload is malformed.
            :class:`~semmap.exceptions.StoreWriteError`: When it cannot be persisted;
              nothing of the upload becomes visible.
        """
        upload = decode_upload(payload)
        deltas = list(upload.to_map().tiles())
        with self._lock_for(self._session_locks, session_id):
            if (previous := self._sessions.get(session_id)) is not None:
                logger.debug(f"Session '{session_id}' was merged as version {previous.version}.")
                return UploadAck(
                    session_id=session_id,
                    version=previous.version,
                    duplicate=True,
                    cells=previous.cells,
                )

            with self._tiles_locked(delta.tile_id for delta in deltas):
                merged = self._merge_locked(session_id, vehicle_id, deltas, upload.cell_count)

        logger.info(
            f"Merged session '{session_id}' ({upload.cell_count} cells, {len(deltas)} tiles) "
            f"as version {merged.version}."
        )
        return UploadAck(session_id=session_id, version=merged.version, cells=upload.cell_count)

    def _merge_locked(
        self, session_id: str, vehicle_id: str, deltas: list[GridTile], cells: int
    ) -> SessionRecord:
        current = self._snapshot.tiles
        merged: dict[TileId, GridTile] = {}
        for delta in deltas:
            if self.store:
                self.store.append(delta.tile_id, session_id, delta.keys, delta.counts)

            base = current.get(delta.tile_id) or GridTile.empty(delta.tile_id)
            merged[delta.tile_id] = base.merged([delta.keys], [delta.counts])

        with self._commit_lock:
            snapshot = self._snapshot
            record = SessionRecord(
                session_id=session_id,
                vehicle_id=vehicle_id,
                version=snapshot.version + 1,
                updated_at=time.time(),
                tiles=sorted(merged),
                cells=cells,
            )
            if self.store:
                self.store.commit(record)

            self._sessions[session_id] = record
            self._dirty.update(merged)
            self._snapshot = MapSnapshot(
                version=record.version,
                tiles={**snapshot.tiles, **merged},
                tile_versions={**snapshot.tile_versions, **dict.fromkeys(merged, record.version)},
                merged_sessions=snapshot.merged_sessions + 1,
                updated_at=datetime.fromtimestamp(record.updated_at, timezone.utc),
            )

        if self.store:
            for tile_id, tile in merged.items():
                if not self.store.needs_checkpoint(tile_id):
                    continue

                # The session is committed; a checkpoint is retried on the next append.
                try:
                    self.store.checkpoint(tile)
                except StoreWriteError as err:
                    logger.warning(f"Checkpoint of tile {tile_id} failed: {err}")

        return record

    """Compressed map"""

    def _cached(self, snapshot: MapSnapshot, tile_id: TileId) -> tuple[_CachedTile, bool]:
        """Compressed blocks of one merge tile at the snapshot's version, and whether rebuilt."""
        version = snapshot.tile_versions[tile_id]
        with self._guard:
            cached = self._cache.get(tile_id)

        if cached is not None and cached.version == version:
            return cached, False

        blocks = _compress_merge_tile(snapshot.tiles[tile_id])
        entry = _CachedTile(version, blocks, sum(len(encode_tile(b)) for b in blocks.values()))
        with self._guard:
            latest = self._cache.get(tile_id)
            if latest is None or latest.version < version:
                self._cache[tile_id] = entry

        return entry, True

    def fetch_map(self, bbox: Optional[BBox] = None) -> FetchedMap:
        """
        SMAP bytes of every raster tile that intersects ``bbox`` (everything when
        ``None``), taken from one consistent snapshot.
        """
        snapshot = self.snapshot()
        low = high = None
        if bbox is not None:
            low, high = raster_tile_range(bbox)

        blocks: list[CompressedTile] = []
        for tile_id in sorted(snapshot.tiles):
            first, last = _rasters_of(tile_id)
            if low is not None and ((last < low).any() or (first > high).any()):
                continue

            cached, _ = self._cached(snapshot, tile_id)
            for raster_tile, block in cached.blocks.items():
                position = np.array(raster_tile)
                if low is None or ((position >= low).all() and (position <= high).all()):
                    blocks.append(block)

        blocks.sort(key=lambda block: block.tile)
        return FetchedMap(data=encode(CompressedMap(blocks)), version=snapshot.version)

    def compact(self, tile_ids: Optional[Iterable[TileId]] = None) -> CompactStats:
        """
        Regenerate the cached compressed blocks of ``tile_ids`` (default: tiles changed
        since the last compaction) from the current scores.
        """
        snapshot = self.snapshot()
        with self._guard:
            if tile_ids is None:
                tile_ids, self._dirty = sorted(self._dirty), set()
            else:
                tile_ids = sorted(tile_ids)
                self._dirty.difference_update(tile_ids)

        stats = CompactStats()
        for tile_id in tile_ids:
            if tile_id not in snapshot.tiles:
                continue

            cached, rebuilt = self._cached(snapshot, tile_id)
            stats.tiles += 1
            stats.regenerated += int(rebuilt)
            stats.raster_tiles += len(cached.blocks)
            stats.bytes += cached.size

        if stats.regenerated:
            logger.debug(
                f"Compacted {stats.regenerated}/{stats.tiles} tiles into "
                f"{stats.raster_tiles} blocks ({stats.bytes} bytes)."
            )

        return stats

    """Background compaction"""

    def start_compactor(self, interval: float):
        if self._compactor is not None:
            return

        def run():
            while not self._stop.wait(interval):
                try:
                    self.compact()
                except Exception as err:  # noqa: B902
                    logger.error(f"Background compaction failed: {err}")

        self._compactor = threading.Thread(target=run, name="semmap-compactor", daemon=True)
        self._compactor.start()

    def close(self):
        self._stop.set()
        if self._compactor is not None:
            self._compactor.join()
            self._compactor = None
