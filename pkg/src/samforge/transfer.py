"""Pluggable file transfers with CRC-32 checksumming and fault injection.

Transfers are dispatched by locator scheme through a registry; plugins
move bytes, and :func:`transfer_file` reports the CRC of what actually
landed at the destination.  Deliberately, nothing here compares against
the catalog checksum: verification and retry belong to the station, which
lets the fault-injection wrapper corrupt data below the verification
layer the way a failing disk would.

The station-to-station data plane is a length-prefixed byte stream: a
``SEND <file_name> <size_bytes> <crc32-hex>`` header line followed by
exactly size_bytes raw bytes, answered with ``OK`` or ``ERR <code>``.
Pulls prefix the exchange with a one-line request.
"""

from __future__ import annotations

import random
import shutil
import socket
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    DuplicateScheme,
    NoPlugin,
    RemoteError,
    SourceUnavailable,
)
from .wire import parse_addr

CHUNK = 64 * 1024

SCHEME_LOCAL = "local"
SCHEME_STATION = "stn"
SCHEME_TAPE = "tape"


# -- checksums -------------------------------------------------------------

def crc32_stream(stream) -> int:
    """CRC-32 (reflected 0x04C11DB7 polynomial) of a byte stream, constant memory."""
    crc = 0
    while True:
        chunk = stream.read(CHUNK)
        if not chunk:
            return crc & 0xFFFFFFFF
        crc = zlib.crc32(chunk, crc)


def crc32_bytes(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def crc32_file(path: str | Path) -> int:
    with open(path, "rb") as fh:
        return crc32_stream(fh)


# -- locators and outcomes -------------------------------------------------

@dataclass(frozen=True)
class Locator:
    scheme: str
    endpoint: str
    ref: str  # file name at the endpoint, or a filesystem path for `local`

    def __str__(self) -> str:
        return f"{self.scheme}://{self.endpoint}/{self.ref}"


@dataclass
class TransferOutcome:
    bytes_moved: int
    computed_crc32: int
    duration_ms: int


class PluginRegistry:
    """Scheme -> plugin table; pure routing, one plugin per scheme."""

    def __init__(self):
        self._plugins = {}

    def register(self, scheme: str, plugin) -> None:
        if scheme in self._plugins:
            raise DuplicateScheme(f"scheme {scheme!r} already registered")
        self._plugins[scheme] = plugin

    def replace(self, scheme: str, plugin) -> None:
        """Swap the handler for a scheme (test harnesses wrap plugins this way)."""
        self._plugins[scheme] = plugin

    def get(self, scheme: str):
        try:
            return self._plugins[scheme]
        except KeyError:
            raise NoPlugin(f"no plugin registered for scheme {scheme!r}") from None


def transfer_file(registry: PluginRegistry, source: Locator, dest: str | Path) -> TransferOutcome:
    """Move source to the local path dest and report the CRC of dest afterwards."""
    return transfer_with(registry.get(source.scheme), source, dest)


def transfer_with(plugin, source: Locator, dest: str | Path) -> TransferOutcome:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    plugin.fetch(source, dest)
    duration_ms = int((time.monotonic() - start) * 1000)
    return TransferOutcome(
        bytes_moved=dest.stat().st_size,
        computed_crc32=crc32_file(dest),
        duration_ms=duration_ms,
    )


# -- plugins ---------------------------------------------------------------

class LocalPlugin:
    """Filesystem copy; the locator ref is a source path."""

    def fetch(self, source: Locator, dest: Path) -> None:
        src = Path(source.ref)
        if not src.is_file():
            raise SourceUnavailable(f"no such file: {src}")
        shutil.copyfile(src, dest)


class StationPlugin:
    """Pull a file from another station's cache over the framed data plane."""

    def __init__(self, address_book):
        self.address_book = address_book  # endpoint name -> data-plane address

    def fetch(self, source: Locator, dest: Path) -> None:
        addr = self.address_book.data_addr(source.endpoint)
        _pull_framed(addr, f"FETCH {source.ref}", dest)


class TapePlugin:
    """Pull a file from a simulated mass store; requests carry the client name."""

    def __init__(self, client_name: str, address_book):
        self.client_name = client_name
        self.address_book = address_book

    def fetch(self, source: Locator, dest: Path) -> None:
        addr = self.address_book.data_addr(source.endpoint)
        _pull_framed(addr, f"FETCH {self.client_name} {source.ref}", dest)


class FaultInjectingPlugin:
    """Wrap a plugin so that every n-th transfer lands with one byte flipped.

    The flipped position comes from a generator seeded once at
    construction, so a fixed (seed, call sequence) reproduces identical
    corruption across runs.  All other transfers pass through untouched.
    """

    def __init__(self, inner, seed: int, corrupt_every_nth: int):
        if corrupt_every_nth < 1:
            raise ValueError("corrupt_every_nth must be >= 1")
        self.inner = inner
        self.corrupt_every_nth = corrupt_every_nth
        self._rng = random.Random(seed)
        self.calls = 0
        self.corrupted = 0

    def fetch(self, source: Locator, dest: Path) -> None:
        self.inner.fetch(source, dest)
        self.calls += 1
        if self.calls % self.corrupt_every_nth == 0:
            if self._flip_one_byte(Path(dest)):
                self.corrupted += 1

    def _flip_one_byte(self, dest: Path) -> bool:
        size = dest.stat().st_size
        if size == 0:
            return False  # nothing to corrupt in an empty file
        position = self._rng.randrange(size)
        with open(dest, "r+b") as fh:
            fh.seek(position)
            byte = fh.read(1)
            fh.seek(position)
            fh.write(bytes([byte[0] ^ 0xFF]))
        return True


def with_fault_injection(plugin, seed: int, corrupt_every_nth: int) -> FaultInjectingPlugin:
    return FaultInjectingPlugin(plugin, seed=seed, corrupt_every_nth=corrupt_every_nth)


# -- framed data plane -----------------------------------------------------

def write_frame(wfile, file_name: str, data: bytes, crc: int | None = None) -> None:
    if crc is None:
        crc = crc32_bytes(data)
    wfile.write(f"SEND {file_name} {len(data)} {crc:08x}\n".encode())
    wfile.write(data)
    wfile.flush()


def read_line(rfile) -> str:
    line = rfile.readline(CHUNK)
    if not line:
        raise SourceUnavailable("connection closed before a full line arrived")
    return line.decode(errors="replace").rstrip("\n")


def read_exact(rfile, size: int) -> bytes:
    buf = b""
    while len(buf) < size:
        chunk = rfile.read(size - len(buf))
        if not chunk:
            raise SourceUnavailable(f"stream ended at {len(buf)} of {size} bytes")
        buf += chunk
    return buf


def parse_send_header(line: str) -> tuple[str, int, int]:
    parts = line.split()
    if len(parts) != 4 or parts[0] != "SEND":
        raise SourceUnavailable(f"bad frame header: {line!r}")
    return parts[1], int(parts[2]), int(parts[3], 16)


def _pull_framed(addr, request_line: str, dest: Path) -> None:
    """Send one request line, receive a SEND frame into dest, acknowledge."""
    try:
        sock = socket.create_connection(parse_addr(addr), timeout=30)
    except OSError as e:
        raise SourceUnavailable(f"cannot reach {addr}: {e}") from e
    try:
        with sock, sock.makefile("rb") as rfile:
            sock.sendall(request_line.encode() + b"\n")
            header = read_line(rfile)
            if header.startswith("ERR"):
                raise SourceUnavailable(header)
            name, size, declared_crc = parse_send_header(header)
            data = read_exact(rfile, size)
            received_crc = crc32_bytes(data)
            dest.write_bytes(data)
            # courtesy protocol ack; catalog-level verification is the caller's job
            verdict = b"OK\n" if received_crc == declared_crc else b"ERR CRC_MISMATCH\n"
            try:
                sock.sendall(verdict)
            except OSError:
                pass
    except OSError as e:
        raise SourceUnavailable(f"transfer from {addr} failed: {e}") from e


def push_frame(addr, file_name: str, data: bytes, crc: int | None = None) -> str:
    """Push one framed file (SEND); returns the receiver's OK payload.

    Raises RemoteError with the receiver's code when it answers ERR.
    """
    try:
        sock = socket.create_connection(parse_addr(addr), timeout=30)
    except OSError as e:
        raise SourceUnavailable(f"cannot reach {addr}: {e}") from e
    with sock, sock.makefile("rb") as rfile:
        try:
            wfile = sock.makefile("wb")
            write_frame(wfile, file_name, data, crc)
            reply = read_line(rfile)
        except OSError as e:
            raise SourceUnavailable(f"push to {addr} failed: {e}") from e
    return _parse_reply(reply)


def put_to_store(addr, client_name: str, file_name: str, fileset_number: int,
                 data: bytes, crc: int | None = None) -> str:
    """Write a file into a store volume; returns the assigned volume id."""
    if crc is None:
        crc = crc32_bytes(data)
    try:
        sock = socket.create_connection(parse_addr(addr), timeout=30)
    except OSError as e:
        raise SourceUnavailable(f"cannot reach {addr}: {e}") from e
    with sock, sock.makefile("rb") as rfile:
        try:
            header = f"PUT {client_name} {file_name} {fileset_number} {len(data)} {crc:08x}\n"
            sock.sendall(header.encode())
            sock.sendall(data)
            reply = read_line(rfile)
        except OSError as e:
            raise SourceUnavailable(f"put to {addr} failed: {e}") from e
    return _parse_reply(reply)


def _parse_reply(reply: str) -> str:
    if reply.startswith("OK"):
        return reply[2:].strip()
    parts = reply.split(None, 2)
    if parts and parts[0] == "ERR":
        code = parts[1] if len(parts) > 1 else "ERROR"
        msg = parts[2] if len(parts) > 2 else ""
        raise RemoteError(code, msg)
    raise SourceUnavailable(f"unparseable reply: {reply!r}")
