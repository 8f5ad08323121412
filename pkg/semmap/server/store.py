"""
Durable tile store of the map server.

Every accepted upload is written in two phases. First each touched tile gets a record
with the session's cell block appended to its log. Then one line in ``sessions.log``
commits the session. On replay only records of committed sessions count, and a torn
or corrupt tail of any log is dropped.

Tile logs are periodically folded into a checkpoint. Checkpoint ``g`` holds everything
from logs older than ``g``; afterwards appends go to log ``g``.

Files under ``<root>/tiles``::

    <tx>_<ty>.<g>.log    record*   record = u32 length | u32 crc32(body) | body
                                   body   = u16 len | session id | u32 n | n x i64 key
                                            | n x 5 x u16 counts
    <tx>_<ty>.<g>.ckpt   "STCK" | u16 version | i32 tx | i32 ty | u32 n | keys | counts
                         | u32 crc32 of everything before
"""

import os
import re
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from semmap.exceptions import StoreError, StoreWriteError
from semmap.grid import NUM_LABELS, GridTile
from semmap.grid.map import TileId
from semmap.logging import logger

RECORD_FRAME = struct.Struct("<II")
SESSION_LENGTH = struct.Struct("<H")
CELL_COUNT = struct.Struct("<I")
CHECKPOINT_MAGIC = b"STCK"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct("<4sHiiI")
CRC = struct.Struct("<I")
CHECKPOINT_EVERY = 64
"""Records appended to a tile log before the tile is checkpointed."""

_TILE_FILE = re.compile(r"^(-?\d+)_(-?\d+)\.(\d+)\.(log|ckpt)$")
_COUNTS_DTYPE = np.dtype("<u2")
_KEYS_DTYPE = np.dtype("<i8")


class SessionRecord(BaseModel):
    """A committed upload, one JSON line in ``sessions.log``."""

    model_config = ConfigDict(frozen=True)

    session_id: str
    vehicle_id: str
    version: int
    updated_at: float
    tiles: list[TileId]
    cells: int = 0


@dataclass
class RecoveredState:
    tiles: dict[TileId, GridTile] = field(default_factory=dict)
    sessions: dict[str, SessionRecord] = field(default_factory=dict)

    @property
    def version(self) -> int:
        return max((record.version for record in self.sessions.values()), default=0)


def _frame(body: bytes) -> bytes:
    return RECORD_FRAME.pack(len(body), zlib.crc32(body)) + body


def _read_frames(path: Path) -> list[bytes]:
    """
    Intact record bodies of a log. A torn or corrupt tail is cut off the file so that
    later appends stay readable.
    """
    data = path.read_bytes()
    bodies, offset = [], 0
    while offset + RECORD_FRAME.size <= len(data):
        length, crc = RECORD_FRAME.unpack_from(data, offset)
        body = data[offset + RECORD_FRAME.size : offset + RECORD_FRAME.size + length]
        if len(body) != length or zlib.crc32(body) != crc:
            break

        bodies.append(body)
        offset += RECORD_FRAME.size + length

    if offset < len(data):
        logger.warning(f"Dropping {len(data) - offset} torn bytes at the end of '{path}'.")
        try:
            os.truncate(path, offset)
        except OSError as err:
            raise StoreWriteError(str(path), err.strerror or str(err)) from err

    return bodies


def _encode_block(session_id: str, keys: np.ndarray, counts: np.ndarray) -> bytes:
    name = session_id.encode()
    return b"".join(
        (
            SESSION_LENGTH.pack(len(name)),
            name,
            CELL_COUNT.pack(len(keys)),
            np.ascontiguousarray(keys, dtype=_KEYS_DTYPE).tobytes(),
            np.ascontiguousarray(counts, dtype=_COUNTS_DTYPE).tobytes(),
        )
    )


def _decode_block(body: bytes) -> tuple[str, np.ndarray, np.ndarray]:
    (name_length,) = SESSION_LENGTH.unpack_from(body, 0)
    offset = SESSION_LENGTH.size
    session_id = body[offset : offset + name_length].decode()
    offset += name_length
    (count,) = CELL_COUNT.unpack_from(body, offset)
    offset += CELL_COUNT.size
    keys = np.frombuffer(body, dtype=_KEYS_DTYPE, count=count, offset=offset)
    offset += keys.nbytes
    counts = np.frombuffer(body, dtype=_COUNTS_DTYPE, count=count * NUM_LABELS, offset=offset)
    return session_id, keys.astype(np.int64), counts.reshape(count, NUM_LABELS).astype(np.int64)


def _write_synced(path: Path, data: bytes):
    try:
        with open(path, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())

    except OSError as err:
        path.unlink(missing_ok=True)
        raise StoreWriteError(str(path), err.strerror or str(err)) from err


class TileStore:
    """
    Append-only persistence for merge tiles and session commits. Callers serialize
    writes to one tile; distinct tiles and the commit log may be written concurrently.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.tiles_dir = self.root / "tiles"
        try:
            self.tiles_dir.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise StoreWriteError(str(self.tiles_dir), err.strerror or str(err)) from err

        self.sessions_path = self.root / "sessions.log"
        self._generations: dict[TileId, int] = {}
        self._appended: dict[TileId, int] = {}
        # End of the last intact record of every log this store has appended to.
        self._ends: dict[Path, int] = {}
        self._commit_lock = threading.Lock()

    def _path(self, tile_id: TileId, generation: int, kind: str) -> Path:
        return self.tiles_dir / f"{tile_id[0]}_{tile_id[1]}.{generation}.{kind}"

    def _tile_files(self) -> dict[TileId, dict[str, list[int]]]:
        found: dict[TileId, dict[str, list[int]]] = {}
        for path in self.tiles_dir.iterdir():
            match = _TILE_FILE.match(path.name)
            if match is None:
                continue

            tile_id = (int(match[1]), int(match[2]))
            kinds = found.setdefault(tile_id, {"log": [], "ckpt": []})
            kinds[match[4]].append(int(match[3]))

        return found

    """Writes"""

    def _append_synced(self, path: Path, record: bytes):
        """
        Append one framed record. Bytes left behind by an earlier failed write are cut
        off first, so a record never lands behind a torn one.
        """
        end = self._ends.get(path)
        if end is None and path.is_file():
            _read_frames(path)

        try:
            with open(path, "ab") as handle:
                if end is None:
                    end = handle.tell()

                elif handle.tell() != end:
                    logger.warning(
                        f"Cutting {handle.tell() - end} bytes of a failed write off '{path}'."
                    )
                    handle.truncate(end)

                handle.write(record)
                handle.flush()
                os.fsync(handle.fileno())

        except OSError as err:
            if end is not None:
                self._ends[path] = end
                try:
                    os.truncate(path, end)
                except OSError:
                    # Retried before the next append to this log.
                    pass

            raise StoreWriteError(str(path), err.strerror or str(err)) from err

        self._ends[path] = end + len(record)

    def append(self, tile_id: TileId, session_id: str, keys: np.ndarray, counts: np.ndarray):
        """Durably append one session's cell block to a tile log (not yet committed)."""
        generation = self._generations.setdefault(tile_id, 0)
        record = _frame(_encode_block(session_id, keys, counts))
        self._append_synced(self._path(tile_id, generation, "log"), record)
        self._appended[tile_id] = self._appended.get(tile_id, 0) + 1

    def commit(self, record: SessionRecord):
        """Durably commit a session; from here on its tile records survive replay."""
        with self._commit_lock:
            self._append_synced(self.sessions_path, _frame(record.model_dump_json().encode()))

    def needs_checkpoint(self, tile_id: TileId) -> bool:
        return self._appended.get(tile_id, 0) >= CHECKPOINT_EVERY

    def checkpoint(self, tile: GridTile):
        """
        Fold the tile's committed state into a new checkpoint and retire older files.
        ``tile`` must include every committed session of the tile.
        """
        tile_id = tile.tile_id
        previous = self._generations.get(tile_id, 0)
        generation = previous + 1
        header = CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *tile_id, len(tile))
        body = (
            header
            + np.ascontiguousarray(tile.keys, dtype=_KEYS_DTYPE).tobytes()
            + np.ascontiguousarray(tile.counts, dtype=_COUNTS_DTYPE).tobytes()
        )
        final = self._path(tile_id, generation, "ckpt")
        staging = final.with_suffix(".tmp")
        _write_synced(staging, body + CRC.pack(zlib.crc32(body)))
        try:
            os.replace(staging, final)
        except OSError as err:
            raise StoreWriteError(str(final), err.strerror or str(err)) from err

        self._generations[tile_id] = generation
        self._appended[tile_id] = 0
        for old in range(previous + 1):
            for kind in ("log", "ckpt"):
                path = self._path(tile_id, old, kind)
                self._ends.pop(path, None)
                try:
                    path.unlink(missing_ok=True)
                except OSError as err:
                    # Replay skips files older than the newest checkpoint.
                    logger.warning(f"Could not remove retired '{path}': {err}")

        logger.debug(f"Checkpointed tile {tile_id} at generation {generation} ({len(tile)} cells).")

    """Replay"""

    def _read_sessions(self) -> dict[str, SessionRecord]:
        sessions: dict[str, SessionRecord] = {}
        if not self.sessions_path.is_file():
            return sessions

        for body in _read_frames(self.sessions_path):
            try:
                record = SessionRecord.model_validate_json(body)
            except ValidationError:
                break

            sessions.setdefault(record.session_id, record)

        return sessions

    def _read_checkpoint(self, tile_id: TileId, generation: int) -> GridTile:
        path = self._path(tile_id, generation, "ckpt")
        data = path.read_bytes()
        if len(data) < CHECKPOINT_HEADER.size + CRC.size:
            raise StoreError(f"Checkpoint '{path}' is truncated.")

        body, (crc,) = data[: -CRC.size], CRC.unpack(data[-CRC.size :])
        magic, version, tx, ty, count = CHECKPOINT_HEADER.unpack_from(body, 0)
        expected = CHECKPOINT_HEADER.size + count * (_KEYS_DTYPE.itemsize + NUM_LABELS * 2)
        if (
            zlib.crc32(body) != crc
            or magic != CHECKPOINT_MAGIC
            or version != CHECKPOINT_VERSION
            or (tx, ty) != tile_id
            or len(body) != expected
        ):
            raise StoreError(f"Checkpoint '{path}' is corrupt.")

        offset = CHECKPOINT_HEADER.size
        keys = np.frombuffer(body, dtype=_KEYS_DTYPE, count=count, offset=offset)
        counts = np.frombuffer(
            body, dtype=_COUNTS_DTYPE, count=count * NUM_LABELS, offset=offset + keys.nbytes
        )
        return GridTile(tile_id, keys.astype(np.int64), counts.reshape(count, NUM_LABELS).copy())

    def recover(self) -> RecoveredState:
        """
        Rebuild the last committed state.

        Raises:
            :class:`~semmap.exceptions.StoreError`: When a checkpoint is unreadable.
        """
        state = RecoveredState(sessions=self._read_sessions())
        for tile_id, files in sorted(self._tile_files().items()):
            generation = max(files["ckpt"], default=0)
            tile = self._read_checkpoint(tile_id, generation) if files["ckpt"] else None
            tile = tile or GridTile.empty(tile_id)
            replayed: set[str] = set()
            keys, counts = [], []
            for log_generation in sorted(g for g in files["log"] if g >= generation):
                for body in _read_frames(self._path(tile_id, log_generation, "log")):
                    session_id, block_keys, block_counts = _decode_block(body)
                    if session_id not in state.sessions or session_id in replayed:
                        continue

                    replayed.add(session_id)
                    keys.append(block_keys)
                    counts.append(block_counts)

            self._generations[tile_id] = max([generation, *files["log"]])
            self._appended[tile_id] = len(replayed)
            tile = tile.merged(keys, counts)
            if len(tile):
                state.tiles[tile_id] = tile

        logger.debug(
            f"Recovered {len(state.tiles)} tiles and {len(state.sessions)} sessions "
            f"from '{self.root}'."
        )
        return state

    def size_on_disk(self) -> int:
        paths = [self.sessions_path, *self.tiles_dir.iterdir()]
        return sum(path.stat().st_size for path in paths if path.is_file())

