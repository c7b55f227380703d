"""Emulated one-sided RDMA: rkey-protected regions, ordered puts, flush.

A server owns a table of registered memory regions, each with a random
32-bit rkey, a server-assigned virtual base address, and a permission
set. Clients write with non-blocking puts that are applied in posting
order per endpoint; flush is the completion point. A put that fails
validation (bad rkey, out of bounds, no write permission) modifies
nothing, emits a fault, and poisons the endpoint: every later operation
fails until the client reconnects.

Two transports share these semantics: an in-process loopback that
applies puts synchronously against a local table, and a TCP client/
server pair speaking length-prefixed records:

    u32 record_len, then one of (little-endian):
      HELLO        magic "IFRM", u8 version = 1
      PUT          u8 1, u32 rkey, u64 addr, u32 len, data
      FLUSH        u8 2, u64 id
      FLUSH_ACK    u8 3, u64 id
      FAULT        u8 4, u8 code, u64 detail
      REGION_QUERY u8 5, u8 tag_len, tag
      REGION_INFO  u8 6, u64 base, u64 len, u32 rkey, u8 perms

The loopback endpoint learns of a fault at the faulting put and fails
from then on; the TCP endpoint learns when it next reads the socket
(flush or region query), matching completion-time error reporting.
"""

from __future__ import annotations

import secrets
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from enum import IntEnum, IntFlag

HELLO_MAGIC = b"IFRM"
WIRE_VERSION = 1

REC_PUT = 1
REC_FLUSH = 2
REC_FLUSH_ACK = 3
REC_FAULT = 4
REC_REGION_QUERY = 5
REC_REGION_INFO = 6

_PUT_HEAD = struct.Struct("<BIQI")
_FLUSH = struct.Struct("<BQ")
_FAULT = struct.Struct("<BBQ")
_INFO = struct.Struct("<BQQIB")

BASE_START = 0x0000_1000_0000_0000
_BASE_ALIGN = 4096


class Perm(IntFlag):
    READ = 1
    WRITE = 2


class FaultCode(IntEnum):
    BAD_RKEY = 1
    OUT_OF_BOUNDS = 2
    NO_PERM = 3
    UNKNOWN_REGION = 4


class RmemError(Exception):
    pass


class DuplicateTag(RmemError):
    pass


class ZeroLength(RmemError):
    pass


class BindFailure(RmemError):
    pass


class ProtocolError(RmemError):
    pass


class UnknownRegionError(RmemError):
    def __init__(self, tag: str):
        super().__init__(f"no region tagged {tag!r}")
        self.tag = tag


class WaitTimeout(RmemError):
    pass


class EndpointPoisoned(RmemError):
    def __init__(self, code: FaultCode, detail: int = 0):
        super().__init__(f"endpoint poisoned: {code.name} (detail {detail:#x})")
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class RegionInfo:
    tag: str
    base: int
    length: int
    rkey: int
    perms: Perm


class MemoryRegion:
    """Server-side registered region with its backing bytes."""

    def __init__(self, tag: str, base: int, length: int, perms: Perm, rkey: int):
        self.tag = tag
        self.base = base
        self.length = length
        self.perms = perms
        self.rkey = rkey
        self.backing = bytearray(length)
        self.lock = threading.Lock()

    @property
    def info(self) -> RegionInfo:
        return RegionInfo(self.tag, self.base, self.length, self.rkey, self.perms)


class RegionTable:
    """Registry of live regions plus put validation and application."""

    def __init__(self):
        self._by_tag: dict[str, MemoryRegion] = {}
        self._by_rkey: dict[int, MemoryRegion] = {}
        self._next_base = BASE_START
        self._lock = threading.Lock()

    def register(self, tag: str, length: int, perms: Perm) -> MemoryRegion:
        if length <= 0:
            raise ZeroLength(f"region {tag!r} would have length {length}")
        with self._lock:
            if tag in self._by_tag:
                raise DuplicateTag(tag)
            while True:
                rkey = secrets.randbits(32)
                if rkey not in self._by_rkey:
                    break
            region = MemoryRegion(tag, self._next_base, length, perms, rkey)
            span = -(-length // _BASE_ALIGN) * _BASE_ALIGN
            self._next_base += span
            self._by_tag[tag] = region
            self._by_rkey[rkey] = region
        return region

    def deregister(self, tag: str) -> None:
        with self._lock:
            region = self._by_tag.pop(tag, None)
            if region is None:
                raise UnknownRegionError(tag)
            del self._by_rkey[region.rkey]

    def by_tag(self, tag: str) -> MemoryRegion | None:
        with self._lock:
            return self._by_tag.get(tag)

    def apply_put(self, rkey: int, addr: int, data: bytes) -> FaultCode | None:
        """Validate and apply one put; returns the fault code on failure.

        A failed put writes nothing.
        """
        with self._lock:
            region = self._by_rkey.get(rkey)
        if region is None:
            return FaultCode.BAD_RKEY
        if not region.perms & Perm.WRITE:
            return FaultCode.NO_PERM
        offset = addr - region.base
        if offset < 0 or offset + len(data) > region.length:
            return FaultCode.OUT_OF_BOUNDS
        with region.lock:
            region.backing[offset : offset + len(data)] = data
        return None


def parse_address(spec: str) -> tuple[str, int]:
    host, sep, port = spec.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must be host:port, got {spec!r}")
    return host, int(port)


# --- wire helpers ---


def _send_record(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def _recv_record(sock: socket.socket) -> bytes | None:
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack("<I", head)
    if length == 0 or length > (1 << 28):
        raise ProtocolError(f"unreasonable record length {length}")
    return _recv_exact(sock, length)


# --- endpoints ---


class LoopbackEndpoint:
    """Endpoint applying puts synchronously against an in-process table."""

    def __init__(self, table: RegionTable):
        self._table = table
        self._state_fault: tuple[FaultCode, int] | None = None
        self._token = 0
        self.pending_puts = 0

    def _check_ok(self):
        if self._state_fault is not None:
            raise EndpointPoisoned(*self._state_fault)

    def put_nbi(self, data, remote_addr: int, rkey: int) -> int:
        self._check_ok()
        fault = self._table.apply_put(rkey, remote_addr, bytes(data))
        if fault is not None:
            self._state_fault = (fault, remote_addr)
        self.pending_puts += 1
        self._token += 1
        return self._token

    def flush(self) -> None:
        if self._state_fault is not None:
            self.pending_puts = 0
            raise EndpointPoisoned(*self._state_fault)
        self.pending_puts = 0

    def query_region(self, tag: str) -> RegionInfo:
        self._check_ok()
        region = self._table.by_tag(tag)
        if region is None:
            raise UnknownRegionError(tag)
        return region.info

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TcpEndpoint:
    """Endpoint speaking the record protocol to a region server."""

    def __init__(self, addr: str | tuple[str, int], timeout: float = 30.0):
        if isinstance(addr, str):
            addr = parse_address(addr)
        self._sock = socket.create_connection(addr, timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._state_fault: tuple[FaultCode, int] | None = None
        self._flush_id = 0
        self._token = 0
        self.pending_puts = 0
        _send_record(self._sock, HELLO_MAGIC + bytes((WIRE_VERSION,)))

    def _check_ok(self):
        if self._state_fault is not None:
            raise EndpointPoisoned(*self._state_fault)

    def _poison(self, code: FaultCode, detail: int):
        self._state_fault = (code, detail)
        raise EndpointPoisoned(code, detail)

    def put_nbi(self, data, remote_addr: int, rkey: int) -> int:
        self._check_ok()
        data = bytes(data)
        _send_record(self._sock, _PUT_HEAD.pack(REC_PUT, rkey, remote_addr, len(data)) + data)
        self.pending_puts += 1
        self._token += 1
        return self._token

    def flush(self) -> None:
        self._check_ok()
        if self.pending_puts == 0:
            return
        self._flush_id += 1
        _send_record(self._sock, _FLUSH.pack(REC_FLUSH, self._flush_id))
        self.pending_puts = 0
        while True:
            rec = _recv_record(self._sock)
            if rec is None:
                raise ProtocolError("server closed connection during flush")
            if rec[0] == REC_FLUSH_ACK:
                _, ack_id = _FLUSH.unpack(rec)
                if ack_id == self._flush_id:
                    return
            elif rec[0] == REC_FAULT:
                _, code, detail = _FAULT.unpack(rec)
                self._poison(FaultCode(code), detail)
            else:
                raise ProtocolError(f"unexpected record type {rec[0]} during flush")

    def query_region(self, tag: str) -> RegionInfo:
        self._check_ok()
        raw = tag.encode("ascii")
        _send_record(self._sock, bytes((REC_REGION_QUERY, len(raw))) + raw)
        while True:
            rec = _recv_record(self._sock)
            if rec is None:
                raise ProtocolError("server closed connection during query")
            if rec[0] == REC_REGION_INFO:
                _, base, length, rkey, perms = _INFO.unpack(rec)
                return RegionInfo(tag, base, length, rkey, Perm(perms))
            if rec[0] == REC_FAULT:
                _, code, detail = _FAULT.unpack(rec)
                if FaultCode(code) is FaultCode.UNKNOWN_REGION:
                    # A failed lookup answers the question without
                    # damaging the endpoint.
                    raise UnknownRegionError(tag)
                self._poison(FaultCode(code), detail)
            else:
                raise ProtocolError(f"unexpected record type {rec[0]} during query")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --- server ---


class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        table: RegionTable = self.server.table  # type: ignore[attr-defined]
        poisoned: tuple[FaultCode, int] | None = None
        try:
            hello = _recv_record(sock)
            if hello is None or hello[:4] != HELLO_MAGIC or hello[4] != WIRE_VERSION:
                return
            while True:
                rec = _recv_record(sock)
                if rec is None:
                    return
                kind = rec[0]
                if kind == REC_PUT:
                    if poisoned is not None:
                        continue  # drain but never apply after a fault
                    _, rkey, addr, length = _PUT_HEAD.unpack_from(rec)
                    data = rec[_PUT_HEAD.size :]
                    if len(data) != length:
                        raise ProtocolError("put length mismatch")
                    fault = table.apply_put(rkey, addr, data)
                    if fault is not None:
                        poisoned = (fault, addr)
                        _send_record(sock, _FAULT.pack(REC_FAULT, fault, addr))
                elif kind == REC_FLUSH:
                    _, flush_id = _FLUSH.unpack(rec)
                    if poisoned is not None:
                        _send_record(sock, _FAULT.pack(REC_FAULT, *poisoned))
                    else:
                        _send_record(sock, _FLUSH.pack(REC_FLUSH_ACK, flush_id))
                elif kind == REC_REGION_QUERY:
                    tag = rec[2 : 2 + rec[1]].decode("ascii")
                    region = table.by_tag(tag)
                    if region is None:
                        _send_record(
                            sock, _FAULT.pack(REC_FAULT, FaultCode.UNKNOWN_REGION, 0)
                        )
                    else:
                        info = region.info
                        _send_record(
                            sock,
                            _INFO.pack(
                                REC_REGION_INFO,
                                info.base,
                                info.length,
                                info.rkey,
                                int(info.perms),
                            ),
                        )
                else:
                    raise ProtocolError(f"unexpected record type {kind}")
        except (ProtocolError, OSError, ValueError):
            return


class RegionServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], table: RegionTable):
        self.table = table
        super().__init__(addr, _ConnectionHandler)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.socket.getsockname()[:2]
        return host, port

    def close(self) -> None:
        self.shutdown()
        self.server_close()


def serve_regions(listen_spec: str | tuple[str, int], table: RegionTable | None = None) -> RegionServer:
    """Start serving `table` (a fresh one if omitted) on `listen_spec`.

    The returned server is already accepting in a background thread;
    register regions through `server.table` at any time.
    """
    if isinstance(listen_spec, str):
        listen_spec = parse_address(listen_spec)
    try:
        server = RegionServer(listen_spec, table if table is not None else RegionTable())
    except OSError as err:
        raise BindFailure(f"cannot bind {listen_spec}: {err}") from err
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def wait_mem(
    buffer,
    offset: int,
    snapshot: int,
    deadline: float | None = None,
) -> None:
    """Return once buffer[offset] is observed different from `snapshot`.

    Bounded spinning first, then progressively longer sleeps capped at
    1 ms; `deadline` is seconds from now, WaitTimeout when exceeded.
    """
    if offset >= len(buffer):
        raise IndexError("wait offset beyond buffer")
    limit = None if deadline is None else time.monotonic() + deadline
    for _ in range(2000):
        if buffer[offset] != snapshot:
            return
    delay = 1e-6
    while True:
        if buffer[offset] != snapshot:
            return
        if limit is not None and time.monotonic() > limit:
            if buffer[offset] != snapshot:
                return
            raise WaitTimeout(f"byte at offset {offset} still {snapshot:#x}")
        time.sleep(delay)
        delay = min(delay * 2, 1e-3)
