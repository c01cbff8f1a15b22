"""Simulated mass-storage endpoint: volumes, filesets, mounts, access rights.

Files land on tape-like volumes grouped by fileset number; a single
drive means one mounted volume at a time, and switching volumes charges
a configurable mount latency before the first byte.  Every request is
checked against a per-client access matrix.  The backing is a directory
of volume subdirectories plus an inventory journal replayed at startup,
the same crash discipline as the catalog.

Control plane: line-delimited JSON (list_volumes, status).  Data plane:
one request line then framed bytes —

    PUT <client> <file_name> <fileset_number> <size_bytes> <crc32-hex>\\n  + bytes
        -> OK <volume_id>\\n | ERR <code> <msg>\\n
    FETCH <client> <file_name>\\n
        -> SEND <file_name> <size_bytes> <crc32-hex>\\n + bytes | ERR <code> <msg>\\n
"""

from __future__ import annotations

import logging
import os
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AccessDenied,
    DuplicateName,
    FileTooLarge,
    NotFound,
    SamError,
    StoreFull,
)
from .journal import Journal
from .sync import FairLock
from .transfer import crc32_bytes, read_exact
from .wire import Dispatcher, parse_addr

log = logging.getLogger(__name__)

ACCESS_NONE = "none"
ACCESS_READ_ONLY = "read_only"
ACCESS_READ_WRITE = "read_write"
ACCESS_LEVELS = (ACCESS_NONE, ACCESS_READ_ONLY, ACCESS_READ_WRITE)

DEFAULT_MOUNT_LATENCY_MS = 2000


@dataclass
class StoreConfig:
    name: str
    capacity_bytes: int
    volume_capacity_bytes: int
    access_matrix: dict[str, str] = field(default_factory=dict)
    mount_latency_ms: int = DEFAULT_MOUNT_LATENCY_MS


@dataclass
class Volume:
    volume_id: str
    fileset_number: int
    files: list[tuple[str, int, int]] = field(default_factory=list)  # (name, offset, size)
    bytes_used: int = 0
    mounted: bool = False

    def to_wire(self) -> dict:
        return {
            "volume_id": self.volume_id,
            "fileset_number": self.fileset_number,
            "files": [list(f) for f in self.files],
            "bytes_used": self.bytes_used,
            "mounted": self.mounted,
        }


class StoreService(Dispatcher):
    """One simulated store; all requests serialize through the drive lock."""

    ops = {
        "list_volumes": "list_volumes",
        "status": "status",
    }

    def __init__(self, config: StoreConfig, root_dir):
        self.config = config
        self.root = Path(root_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._drive = FairLock()
        self._state_lock = threading.RLock()
        self.volumes: dict[str, Volume] = {}
        self.file_index: dict[str, tuple[str, int]] = {}  # name -> (volume_id, size)
        self._open_volume: dict[int, str] = {}  # fileset -> volume with room
        self._next_volume = 1
        self.mounted_volume: str | None = None
        self.counters = {"puts": 0, "gets": 0, "mount_switches": 0, "bytes_used": 0}
        self.journal = Journal(self.root / "inventory.journal")
        for entry in self.journal.entries():
            self._apply(entry["payload"])

    def _apply(self, payload: dict) -> None:
        volume_id = payload["volume_id"]
        volume = self.volumes.get(volume_id)
        if volume is None:
            volume = Volume(volume_id, payload["fileset_number"])
            self.volumes[volume_id] = volume
            seq = int(volume_id.rsplit("-", 1)[1])
            self._next_volume = max(self._next_volume, seq + 1)
        name, size = payload["file_name"], payload["size_bytes"]
        volume.files.append((name, volume.bytes_used, size))
        volume.bytes_used += size
        self.file_index[name] = (volume_id, size)
        self.counters["bytes_used"] += size
        if volume.bytes_used < self.config.volume_capacity_bytes:
            self._open_volume[volume.fileset_number] = volume_id
        elif self._open_volume.get(volume.fileset_number) == volume_id:
            del self._open_volume[volume.fileset_number]

    # -- access ------------------------------------------------------------

    def _access(self, client: str) -> str:
        return self.config.access_matrix.get(client, ACCESS_NONE)

    def _require_read(self, client: str) -> None:
        if self._access(client) not in (ACCESS_READ_ONLY, ACCESS_READ_WRITE):
            raise AccessDenied(f"client {client!r} may not read from {self.config.name}")

    def _require_write(self, client: str) -> None:
        if self._access(client) != ACCESS_READ_WRITE:
            raise AccessDenied(f"client {client!r} may not write to {self.config.name}")

    # -- operations --------------------------------------------------------

    def put_file(self, client: str, file_name: str, data: bytes, fileset_number: int) -> str:
        self._require_write(client)
        size = len(data)
        if size > self.config.volume_capacity_bytes:
            raise FileTooLarge(
                f"{file_name}: {size} bytes exceeds volume capacity "
                f"{self.config.volume_capacity_bytes}")
        with self._drive:
            with self._state_lock:
                if file_name in self.file_index:
                    raise DuplicateName(f"{file_name} already stored")  # names are catalog-unique
                if self.counters["bytes_used"] + size > self.config.capacity_bytes:
                    raise StoreFull(f"{self.config.name} is full")
                volume_id = self._volume_for(fileset_number, size)
            path = self.root / volume_id / file_name
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            payload = {
                "volume_id": volume_id,
                "fileset_number": fileset_number,
                "file_name": file_name,
                "size_bytes": size,
                "crc32": crc32_bytes(data),
            }
            with self._state_lock:
                self.journal.append("PutFile", payload)
                self._apply(payload)
                self.counters["puts"] += 1
            return volume_id

    def _volume_for(self, fileset_number: int, size: int) -> str:
        open_id = self._open_volume.get(fileset_number)
        if open_id is not None:
            volume = self.volumes[open_id]
            if volume.bytes_used + size <= self.config.volume_capacity_bytes:
                return open_id
        return f"{self.config.name}-{self._next_alloc()}"

    def _next_alloc(self) -> str:
        allocated = f"vol-{self._next_volume:04d}"
        self._next_volume += 1
        return allocated

    def get_file(self, client: str, file_name: str) -> bytes:
        self._require_read(client)
        with self._drive:
            with self._state_lock:
                entry = self.file_index.get(file_name)
                if entry is None:
                    raise NotFound(f"{file_name} not on {self.config.name}")
                volume_id, _size = entry
            self._mount(volume_id)
            data = (self.root / volume_id / file_name).read_bytes()
            with self._state_lock:
                self.counters["gets"] += 1
            return data

    def _mount(self, volume_id: str) -> None:
        """Single-drive model: switching volumes costs mount_latency_ms."""
        if self.mounted_volume == volume_id:
            return
        if self.config.mount_latency_ms:
            time.sleep(self.config.mount_latency_ms / 1000.0)
        with self._state_lock:
            if self.mounted_volume is not None:
                self.volumes[self.mounted_volume].mounted = False
            self.mounted_volume = volume_id
            self.volumes[volume_id].mounted = True
            self.counters["mount_switches"] += 1

    def list_volumes(self) -> list[dict]:
        with self._state_lock:
            return [self.volumes[vid].to_wire() for vid in sorted(self.volumes)]

    def status(self) -> dict:
        with self._state_lock:
            return {
                "name": self.config.name,
                "volumes": len(self.volumes),
                "files": len(self.file_index),
                "capacity_bytes": self.config.capacity_bytes,
                **self.counters,
            }

    def close(self) -> None:
        self.journal.close()


# -- data plane ------------------------------------------------------------

class _StoreDataHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: StoreService = self.server.service
        line = self.rfile.readline(64 * 1024)
        if not line:
            return
        parts = line.decode(errors="replace").split()
        try:
            if parts and parts[0] == "FETCH" and len(parts) == 3:
                self._fetch(service, client=parts[1], file_name=parts[2])
            elif parts and parts[0] == "PUT" and len(parts) == 6:
                self._put(service, client=parts[1], file_name=parts[2],
                          fileset_number=int(parts[3]), size=int(parts[4]),
                          declared_crc=int(parts[5], 16))
            else:
                self._err("BAD_REQUEST", f"unparseable request {line!r}")
        except SamError as e:
            self._err(e.code, e.msg)
        except Exception as e:  # noqa: BLE001 - the store must survive bad clients
            log.exception("store data-plane failure")
            self._err("INTERNAL", str(e))

    def _fetch(self, service: StoreService, client: str, file_name: str) -> None:
        data = service.get_file(client, file_name)
        header = f"SEND {file_name} {len(data)} {crc32_bytes(data):08x}\n"
        self.wfile.write(header.encode())
        self.wfile.write(data)
        self.wfile.flush()
        try:  # consume the courtesy ack so the peer's close is clean
            self.connection.settimeout(5)
            self.rfile.readline(1024)
        except OSError:
            pass

    def _put(self, service: StoreService, client: str, file_name: str,
             fileset_number: int, size: int, declared_crc: int) -> None:
        data = read_exact(self.rfile, size)
        if crc32_bytes(data) != declared_crc:
            self._err("CRC_MISMATCH", f"{file_name} arrived corrupt")
            return
        volume_id = service.put_file(client, file_name, data, fileset_number)
        self.wfile.write(f"OK {volume_id}\n".encode())

    def _err(self, code: str, msg: str) -> None:
        try:
            self.wfile.write(f"ERR {code} {msg}\n".encode())
        except OSError:
            pass


class StoreDataServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, service: StoreService):
        super().__init__(parse_addr(addr), _StoreDataHandler)
        self.service = service

    @property
    def bound_addr(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]


def start_store_data_server(service: StoreService, addr) -> StoreDataServer:
    server = StoreDataServer(addr, service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
