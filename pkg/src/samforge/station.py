"""Station daemon: disk cache, verified transfers, store routing, rate limits.

A station fronts analysis work with a bounded disk cache (LRU eviction,
pin exemption), fetches files from replicas with CRC verification and
bounded retry, and routes newly produced files toward the permanent
store.  Router stations buffer stores on a permanent area and forward to
their route target; analysis stations hand stores to the router over the
framed data plane.

Replica selection prefers another station's cache (stn) over tape, with
lexicographic endpoint-name tie-breaks.  A retry re-runs selection but
sets aside endpoints that already failed this fetch, so a corrupt source
is not blindly retried while an alternative exists; when every candidate
has failed once the slate is wiped and selection starts over.

Per-endpoint transfer slots are granted FIFO; a slot is held only while
bytes move, never while waiting on cache locks.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import socket
import socketserver
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import CatalogClient
from .errors import (
    AccessDenied,
    CacheFull,
    NoReplica,
    NotFound,
    NotPinned,
    NotResident,
    RemoteError,
    SamError,
    TransferExhausted,
    ValidationError,
)
from .naming import parse_legacy_name
from .records import FileRecord
from .sync import FairSemaphore
from .transfer import (
    Locator,
    PluginRegistry,
    SCHEME_LOCAL,
    SCHEME_STATION,
    SCHEME_TAPE,
    LocalPlugin,
    StationPlugin,
    TapePlugin,
    crc32_bytes,
    parse_send_header,
    put_to_store,
    read_exact,
    read_line,
    transfer_with,
    with_fault_injection,
)
from .wire import Dispatcher, parse_addr

log = logging.getLogger(__name__)

ROLE_ANALYSIS = "analysis"
ROLE_ROUTER = "router"

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_MAX_CONCURRENT = 4


@dataclass
class EndpointSpec:
    """A peer the station may move bytes to or from."""

    name: str
    scheme: str  # stn | tape
    access: str  # read_only | read_write
    data_addr: str  # host:port of the peer's data plane
    max_concurrent_transfers: int = DEFAULT_MAX_CONCURRENT


@dataclass
class StationConfig:
    name: str
    cache_dir: str
    cache_capacity_bytes: int
    role: str = ROLE_ANALYSIS
    known_endpoints: list[EndpointSpec] = field(default_factory=list)
    max_transfer_attempts: int = DEFAULT_MAX_ATTEMPTS
    route_target: str | None = None

    def __post_init__(self):
        if self.cache_capacity_bytes <= 0:
            raise ValueError("cache_capacity_bytes must be positive")
        if self.role not in (ROLE_ANALYSIS, ROLE_ROUTER):
            raise ValueError(f"unknown role {self.role!r}")
        names = [e.name for e in self.known_endpoints]
        if len(names) != len(set(names)):
            raise ValueError("duplicate endpoint names")
        if self.role == ROLE_ROUTER and self.route_target not in names:
            raise ValueError("router stations need a route_target among known endpoints")


@dataclass
class CacheEntry:
    file_id: int
    file_name: str
    local_path: Path
    size_bytes: int
    pins: dict[str, int] = field(default_factory=dict)
    last_access: int = 0

    @property
    def pin_count(self) -> int:
        return sum(self.pins.values())


class StationService(Dispatcher):
    ops = {
        "fetch": "fetch_file",
        "store": "store_file",
        "pin": "pin_file",
        "unpin": "unpin_file",
        "status": "station_status",
    }

    def __init__(self, config: StationConfig, catalog_addr):
        self.config = config
        self.catalog = CatalogClient(catalog_addr)
        self.cache_dir = Path(config.cache_dir)
        self.files_dir = self.cache_dir / "files"
        self.incoming_dir = self.cache_dir / "incoming"
        self.buffer_dir = self.cache_dir / "permanent"
        for d in (self.files_dir, self.incoming_dir, self.buffer_dir):
            d.mkdir(parents=True, exist_ok=True)

        self._lock = threading.RLock()
        self._entries: dict[int, CacheEntry] = {}
        self._by_name: dict[str, int] = {}
        self._reserved = 0
        self._tick = 0
        self._name_locks: dict[str, threading.Lock] = {}
        self._endpoints = {e.name: e for e in config.known_endpoints}
        self._limits = {
            e.name: FairSemaphore(e.max_concurrent_transfers)
            for e in config.known_endpoints
        }
        self._overrides: dict[str, object] = {}  # endpoint name -> plugin
        self.registry = PluginRegistry()
        self.registry.register(SCHEME_LOCAL, LocalPlugin())
        self.registry.register(SCHEME_STATION, StationPlugin(self))
        self.registry.register(SCHEME_TAPE, TapePlugin(config.name, self))
        self.counters = {
            "transfers_ok": 0,
            "crc_mismatches": 0,
            "retries": 0,
            "evictions": 0,
            "cache_hits": 0,
            "stores_ok": 0,
        }
        self.events: deque[dict] = deque(maxlen=10000)
        self._jobs = 0

    # -- topology lookups --------------------------------------------------

    def data_addr(self, endpoint_name: str) -> str:
        spec = self._endpoints.get(endpoint_name)
        if spec is None:
            raise NoReplica(f"endpoint {endpoint_name!r} unknown to station {self.config.name}")
        return spec.data_addr

    def endpoint_plugin(self, endpoint_name: str, scheme: str):
        override = self._overrides.get(endpoint_name)
        return override if override is not None else self.registry.get(scheme)

    def inject_faults(self, endpoint_name: str, seed: int, corrupt_every_nth: int):
        """Wrap one endpoint's effective plugin with deterministic corruption."""
        spec = self._endpoints[endpoint_name]
        base = self.endpoint_plugin(endpoint_name, spec.scheme)
        wrapper = with_fault_injection(base, seed=seed, corrupt_every_nth=corrupt_every_nth)
        self._overrides[endpoint_name] = wrapper
        return wrapper

    def clear_faults(self, endpoint_name: str) -> None:
        self._overrides.pop(endpoint_name, None)

    # -- fetch path --------------------------------------------------------

    def fetch_file(self, file_name: str, requesting_project: str | None = None) -> str:
        record = self.catalog.get_file(file_name)
        lock = self._admission_lock(file_name)
        with lock:
            with self._lock:
                entry = self._entries.get(record.file_id)
                if entry is not None:
                    entry.last_access = self._bump()
                    if requesting_project:
                        # idempotent: redelivery of a held file must not stack pins
                        entry.pins.setdefault(requesting_project, 1)
                    self.counters["cache_hits"] += 1
                    return str(entry.local_path)
            return str(self._fetch_miss(record, requesting_project))

    def _admission_lock(self, file_name: str) -> threading.Lock:
        with self._lock:
            lock = self._name_locks.get(file_name)
            if lock is None:
                lock = self._name_locks[file_name] = threading.Lock()
            return lock

    def _bump(self) -> int:
        self._tick += 1
        return self._tick

    def _fetch_miss(self, record: FileRecord, requesting_project: str | None) -> Path:
        candidates = self._candidates(record.file_id)
        if not candidates:
            raise NoReplica(f"no reachable replica for {record.file_name}")
        self._reserve(record.size_bytes)
        with self._lock:
            self._jobs += 1
        try:
            return self._attempt_loop(record, candidates, requesting_project)
        finally:
            with self._lock:
                self._jobs -= 1

    def _candidates(self, file_id: int) -> list[EndpointSpec]:
        specs = []
        for location in self.catalog.get_locations(file_id):
            spec = self._endpoints.get(location.endpoint_name)
            if spec is not None and spec.name != self.config.name:
                specs.append(spec)
        # another station's cache beats a tape mount; names break ties
        specs.sort(key=lambda s: (0 if s.scheme == SCHEME_STATION else 1, s.name))
        return specs

    def _attempt_loop(self, record: FileRecord, candidates: list[EndpointSpec],
                      requesting_project: str | None) -> Path:
        excluded: set[str] = set()
        last_error: SamError | None = None
        for attempt in range(1, self.config.max_transfer_attempts + 1):
            pool = [c for c in candidates if c.name not in excluded]
            if not pool:
                excluded.clear()
                pool = candidates
            choice = pool[0]
            if attempt > 1:
                with self._lock:
                    self.counters["retries"] += 1
            staging = self.incoming_dir / f"{record.file_name}.{uuid.uuid4().hex}"
            plugin = self.endpoint_plugin(choice.name, choice.scheme)
            source = Locator(choice.scheme, choice.name, record.file_name)
            limiter = self._limits[choice.name]
            limiter.acquire()
            try:
                outcome = transfer_with(plugin, source, staging)
            except SamError as e:
                last_error = e
                excluded.add(choice.name)
                self._event("transfer_error", record.file_name, choice.name, attempt, str(e))
                continue
            finally:
                limiter.release()
            if outcome.computed_crc32 == record.crc32 and outcome.bytes_moved == record.size_bytes:
                return self._admit(record, staging, requesting_project)
            with self._lock:
                self.counters["crc_mismatches"] += 1
            self._event("crc_mismatch", record.file_name, choice.name, attempt,
                        f"got {outcome.computed_crc32:08x} want {record.crc32:08x}")
            log.warning("crc mismatch on %s from %s (attempt %d)",
                        record.file_name, choice.name, attempt)
            staging.unlink(missing_ok=True)
            excluded.add(choice.name)
            last_error = TransferExhausted(
                f"{record.file_name}: checksum mismatch from {choice.name}")
        self._release_reservation(record.size_bytes)
        raise TransferExhausted(
            f"{record.file_name}: gave up after {self.config.max_transfer_attempts} attempts "
            f"({last_error.msg if last_error else 'no attempt ran'})")

    def _reserve(self, size: int) -> None:
        """Make room for an incoming file or fail fast with CacheFull."""
        victims = []
        with self._lock:
            while self._free_bytes() < size:
                victim = self._lru_unpinned()
                if victim is None:
                    raise CacheFull(
                        f"cannot free {size} bytes on {self.config.name}: all entries pinned")
                self._drop_entry(victim)
                victims.append(victim)
            self._reserved += size
        self._forget_locations(victims)

    def _free_bytes(self) -> int:
        resident = sum(e.size_bytes for e in self._entries.values())
        return self.config.cache_capacity_bytes - resident - self._reserved

    def _lru_unpinned(self) -> CacheEntry | None:
        unpinned = [e for e in self._entries.values() if e.pin_count == 0]
        if not unpinned:
            return None
        return min(unpinned, key=lambda e: e.last_access)

    def _drop_entry(self, entry: CacheEntry) -> None:
        del self._entries[entry.file_id]
        self._by_name.pop(entry.file_name, None)
        entry.local_path.unlink(missing_ok=True)
        self.counters["evictions"] += 1

    def _forget_locations(self, victims: list[CacheEntry]) -> None:
        for victim in victims:
            self._event("evict", victim.file_name, self.config.name, 0, "")
            try:
                self.catalog.remove_location(victim.file_id, self.config.name)
            except RemoteError as e:
                if e.code != "NOT_FOUND":
                    raise

    def _release_reservation(self, size: int) -> None:
        with self._lock:
            self._reserved -= size

    def _admit(self, record: FileRecord, staging: Path,
               requesting_project: str | None) -> Path:
        final = self.files_dir / record.file_name
        os.replace(staging, final)
        with self._lock:
            self._reserved -= record.size_bytes
            entry = CacheEntry(
                file_id=record.file_id,
                file_name=record.file_name,
                local_path=final,
                size_bytes=record.size_bytes,
                last_access=self._bump(),
            )
            if requesting_project:
                entry.pins[requesting_project] = 1
            self._entries[record.file_id] = entry
            self._by_name[record.file_name] = record.file_id
            self.counters["transfers_ok"] += 1
        try:
            self.catalog.add_location(record.file_id, self.config.name, str(final))
        except RemoteError as e:
            if e.code != "DUPLICATE_LOCATION":  # stale location from a prior life
                raise
        return final

    # -- eviction / pinning ------------------------------------------------

    def evict_until(self, bytes_needed: int) -> int:
        """Free unpinned LRU entries until bytes_needed are free; best effort."""
        victims = []
        with self._lock:
            while self._free_bytes() < bytes_needed:
                victim = self._lru_unpinned()
                if victim is None:
                    break
                self._drop_entry(victim)
                victims.append(victim)
        self._forget_locations(victims)
        return sum(v.size_bytes for v in victims)

    def pin_file(self, file_id: int, project: str) -> bool:
        with self._lock:
            entry = self._entries.get(file_id)
            if entry is None:
                raise NotResident(f"file {file_id} not in cache on {self.config.name}")
            entry.pins[project] = entry.pins.get(project, 0) + 1
        return True

    def unpin_file(self, file_id: int, project: str) -> bool:
        with self._lock:
            entry = self._entries.get(file_id)
            if entry is None:
                raise NotResident(f"file {file_id} not in cache on {self.config.name}")
            held = entry.pins.get(project, 0)
            if held == 0:
                raise NotPinned(f"project {project!r} holds no pin on file {file_id}")
            if held == 1:
                del entry.pins[project]
            else:
                entry.pins[project] = held - 1
        return True

    # -- store path --------------------------------------------------------

    def store_file(self, record: dict, local_path: str | None = None,
                   data_b64: str | None = None) -> int:
        if (local_path is None) == (data_b64 is None):
            raise ValidationError("store needs exactly one of local_path or data_b64")
        if local_path is not None:
            path = Path(local_path)
            if not path.is_file():
                raise ValidationError(f"no such file: {path}")
            data = path.read_bytes()
        else:
            data = base64.b64decode(data_b64)
        rec = FileRecord.from_wire({**record, "file_id": None})
        rec.size_bytes = len(data)
        rec.crc32 = crc32_bytes(data)
        if self.config.role == ROLE_ROUTER:
            return self.store_local(rec, data)
        return self._forward_store(rec, data)

    def store_local(self, rec: FileRecord, data: bytes) -> int:
        """Router path: declare, buffer, forward to the route target."""
        route = self._writable_route()
        file_id = self.catalog.declare_file(rec)  # DuplicateName/Validation stop us here
        buffered = self.buffer_dir / rec.file_name
        buffered.write_bytes(data)
        self.catalog.add_location(file_id, self.config.name, str(buffered))
        fileset = _fileset_of(rec)
        volume_id = self._put_with_retry(route, rec, data, fileset)
        self.catalog.add_location(file_id, route.name, volume_id)
        # tape has it; release the buffer copy and its catalog location
        buffered.unlink(missing_ok=True)
        self.catalog.remove_location(file_id, self.config.name)
        with self._lock:
            self.counters["stores_ok"] += 1
        return file_id

    def _writable_route(self) -> EndpointSpec:
        target = self.config.route_target
        spec = self._endpoints.get(target) if target else None
        if spec is None:
            raise AccessDenied(f"station {self.config.name} has no route to a store")
        if spec.access != "read_write":
            raise AccessDenied(f"route target {spec.name} is {spec.access}")
        return spec

    def _put_with_retry(self, route: EndpointSpec, rec: FileRecord,
                        data: bytes, fileset: int) -> str:
        last = None
        limiter = self._limits[route.name]
        for attempt in range(1, self.config.max_transfer_attempts + 1):
            limiter.acquire()
            try:
                return put_to_store(route.data_addr, self.config.name,
                                    rec.file_name, fileset, data, rec.crc32)
            except SamError as e:
                if isinstance(e, RemoteError) and e.code in ("ACCESS_DENIED", "STORE_FULL",
                                                             "FILE_TOO_LARGE", "DUPLICATE_NAME"):
                    raise  # retrying cannot help these
                last = e
            finally:
                limiter.release()
        raise TransferExhausted(
            f"{rec.file_name}: store to {route.name} failed after "
            f"{self.config.max_transfer_attempts} attempts ({last})")

    def _forward_store(self, rec: FileRecord, data: bytes) -> int:
        """Analysis path: hand the bytes to the router over the data plane."""
        route = self._analysis_route()
        reply = _send_store_frame(route.data_addr, rec, data)
        with self._lock:
            self.counters["stores_ok"] += 1
        return int(reply)

    def _analysis_route(self) -> EndpointSpec:
        target = self.config.route_target
        spec = self._endpoints.get(target) if target else None
        if spec is None:
            raise AccessDenied(f"station {self.config.name} has no route toward a router")
        return spec

    # -- serving the data plane -------------------------------------------

    def open_for_read(self, file_name: str) -> Path:
        with self._lock:
            file_id = self._by_name.get(file_name)
            if file_id is not None:
                entry = self._entries[file_id]
                entry.last_access = self._bump()
                return entry.local_path
        buffered = self.buffer_dir / file_name
        if buffered.is_file():
            return buffered
        raise NotFound(f"{file_name} not resident on {self.config.name}")

    # -- monitoring --------------------------------------------------------

    def station_status(self) -> dict:
        with self._lock:
            entries = [
                {
                    "file_id": e.file_id,
                    "file_name": e.file_name,
                    "size_bytes": e.size_bytes,
                    "pin_count": e.pin_count,
                    "last_access": e.last_access,
                }
                for e in sorted(self._entries.values(), key=lambda e: e.last_access)
            ]
            resident = sum(e.size_bytes for e in self._entries.values())
            return {
                "name": self.config.name,
                "role": self.config.role,
                "cache": {
                    "capacity_bytes": self.config.cache_capacity_bytes,
                    "resident_bytes": resident,
                    "entries": entries,
                },
                "rate_limits": {
                    name: {
                        "slots": sem.slots,
                        "in_flight": sem.in_flight,
                        "high_water": sem.high_water,
                    }
                    for name, sem in sorted(self._limits.items())
                },
                "in_flight_jobs": self._jobs,
                "counters": dict(self.counters),
            }

    def _event(self, kind: str, file_name: str, endpoint: str, attempt: int, detail: str):
        self.events.append({
            "kind": kind,
            "file_name": file_name,
            "endpoint": endpoint,
            "attempt": attempt,
            "detail": detail,
        })

    def close(self) -> None:
        self.catalog.close()


def _fileset_of(rec: FileRecord) -> int:
    raw = rec.parameters.get("legacy.fileset")
    if raw is not None and raw.isdigit():
        return int(raw)
    parts = parse_legacy_name(rec.file_name)
    if hasattr(parts, "fileset_number"):
        return parts.fileset_number
    return 0


def _send_store_frame(addr: str, rec: FileRecord, data: bytes) -> str:
    """STORE handshake with a router: metadata line, SEND frame, OK/ERR reply."""
    wire = rec.to_wire()
    wire.pop("file_id", None)
    try:
        sock = socket.create_connection(parse_addr(addr), timeout=30)
    except OSError as e:
        raise TransferExhausted(f"router at {addr} unreachable: {e}") from e
    with sock, sock.makefile("rb") as rfile:
        try:
            sock.sendall(b"STORE " + json.dumps(wire).encode() + b"\n")
            sock.sendall(f"SEND {rec.file_name} {len(data)} {rec.crc32:08x}\n".encode())
            sock.sendall(data)
            reply = read_line(rfile)
        except OSError as e:
            raise TransferExhausted(f"store via {addr} failed: {e}") from e
    parts = reply.split(None, 2)
    if parts and parts[0] == "OK" and len(parts) > 1:
        return parts[1]
    if parts and parts[0] == "ERR":
        code = parts[1] if len(parts) > 1 else "ERROR"
        raise RemoteError(code, parts[2] if len(parts) > 2 else "")
    raise TransferExhausted(f"unparseable router reply {reply!r}")


class _StationDataHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: StationService = self.server.service
        try:
            line = read_line(self.rfile)
        except SamError:
            return
        verb, _, rest = line.partition(" ")
        try:
            if verb == "FETCH" and rest:
                self._fetch(service, rest.strip())
            elif verb == "STORE" and rest:
                self._store(service, rest)
            else:
                self._err("BAD_REQUEST", f"unparseable request {line!r}")
        except SamError as e:
            self._err(e.code, e.msg)
        except Exception as e:  # noqa: BLE001 - keep serving other clients
            log.exception("station data-plane failure")
            self._err("INTERNAL", str(e))

    def _fetch(self, service: StationService, file_name: str) -> None:
        path = service.open_for_read(file_name)
        data = path.read_bytes()
        self.wfile.write(f"SEND {file_name} {len(data)} {crc32_bytes(data):08x}\n".encode())
        self.wfile.write(data)
        self.wfile.flush()
        try:
            self.connection.settimeout(5)
            self.rfile.readline(1024)  # courtesy ack
        except OSError:
            pass

    def _store(self, service: StationService, payload: str) -> None:
        record = json.loads(payload)
        header = read_line(self.rfile)
        name, size, declared_crc = parse_send_header(header)
        data = read_exact(self.rfile, size)
        if crc32_bytes(data) != declared_crc:
            self._err("CRC_MISMATCH", f"{name} arrived corrupt")
            return
        rec = FileRecord.from_wire({**record, "file_id": None})
        rec.size_bytes = len(data)
        rec.crc32 = crc32_bytes(data)
        file_id = service.store_local(rec, data)
        self.wfile.write(f"OK {file_id}\n".encode())

    def _err(self, code: str, msg: str) -> None:
        try:
            self.wfile.write(f"ERR {code} {msg}\n".encode())
        except OSError:
            pass


class StationDataServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, service: StationService):
        super().__init__(parse_addr(addr), _StationDataHandler)
        self.service = service

    @property
    def bound_addr(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]


def start_station_data_server(service: StationService, addr) -> StationDataServer:
    server = StationDataServer(addr, service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
