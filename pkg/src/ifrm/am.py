"""Active-message baseline: ID-registered handlers over the same transport.

An active message names a pre-registered handler by a 16-bit ID and
carries only data, so its frame overhead is a constant 17 bytes. The
injected-function runtime is compared against this baseline: same
transport, same polling discipline, different message content.

Frame layout: 16-byte header {u8 signal 0xA6, u8 version, u16
handler_id LE, u32 payload_size LE, u32 hdr_crc, u32 reserved 0} +
payload + trailer byte 0x6A. The CRC is CRC-32C over the header with
the crc field zeroed. Handler IDs are fixed before serving begins: the
first poll seals the table.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from enum import Enum

from .frame import crc32c
from .rmem import WaitTimeout, wait_mem

AM_SIGNAL = 0xA6
AM_VERSION = 0x01
AM_TRAILER = 0x6A
AM_HEADER_LEN = 16
AM_OVERHEAD = 17  # header + trailer

_HEADER = struct.Struct("<BBHIII")
_CRC_OFFSET = 8


class AmError(Exception):
    pass


class DuplicateId(AmError):
    pass


class TableSealed(AmError):
    pass


class AmRejectReason(Enum):
    BAD_CRC = "bad_crc"
    BAD_VERSION = "bad_version"
    BAD_RESERVED = "bad_reserved"
    TOO_LONG = "too_long"


class AmPollKind(Enum):
    EXECUTED = "executed"
    NO_MESSAGE = "no_message"
    REJECTED = "rejected"
    UNKNOWN_HANDLER = "unknown_handler"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class AmPollStatus:
    kind: AmPollKind
    reason: AmRejectReason | None = None
    handler_id: int | None = None

    @property
    def executed(self) -> bool:
        return self.kind is AmPollKind.EXECUTED


_NO_MESSAGE = AmPollStatus(AmPollKind.NO_MESSAGE)


class AmHandlerTable:
    """Map of handler ID to target-side function(payload, target_args)."""

    def __init__(self, poll_timeout: float = 5.0):
        self.poll_timeout = poll_timeout
        self._handlers: dict[int, object] = {}
        self._sealed = False

    def register(self, handler_id: int, fn) -> None:
        if self._sealed:
            raise TableSealed("handler table is already serving")
        if not 0 <= handler_id <= 0xFFFF:
            raise ValueError(f"handler id {handler_id} out of u16 range")
        if handler_id in self._handlers:
            raise DuplicateId(f"handler id {handler_id} already registered")
        self._handlers[handler_id] = fn

    def seal(self) -> None:
        self._sealed = True

    def lookup(self, handler_id: int):
        return self._handlers.get(handler_id)


def encode_am_frame(handler_id: int, payload) -> bytes:
    if not 0 <= handler_id <= 0xFFFF:
        raise ValueError(f"handler id {handler_id} out of u16 range")
    if len(payload) >= 1 << 32:
        raise ValueError("payload size exceeds the u32 header field")
    header = bytearray(_HEADER.pack(AM_SIGNAL, AM_VERSION, handler_id, len(payload), 0, 0))
    struct.pack_into("<I", header, _CRC_OFFSET, crc32c(header))
    return bytes(header) + bytes(payload) + bytes((AM_TRAILER,))


def am_msg_send(ep, handler_id: int, payload, remote_addr: int, rkey: int) -> int:
    """Post one active message as a single put; flush to complete."""
    return ep.put_nbi(encode_am_frame(handler_id, payload), remote_addr, rkey)


def _decode_header(view):
    """Return (handler_id, payload_size) or an AmPollStatus rejection."""
    signal, version, handler_id, payload_size, got_crc, reserved = _HEADER.unpack_from(view)
    if signal != AM_SIGNAL:
        return _NO_MESSAGE
    scratch = bytearray(view[:AM_HEADER_LEN])
    scratch[_CRC_OFFSET : _CRC_OFFSET + 4] = b"\x00\x00\x00\x00"
    if crc32c(scratch) != got_crc:
        return AmPollStatus(AmPollKind.REJECTED, AmRejectReason.BAD_CRC)
    if version != AM_VERSION:
        return AmPollStatus(AmPollKind.REJECTED, AmRejectReason.BAD_VERSION)
    if reserved != 0:
        return AmPollStatus(AmPollKind.REJECTED, AmRejectReason.BAD_RESERVED)
    if AM_OVERHEAD + payload_size > len(view):
        return AmPollStatus(AmPollKind.REJECTED, AmRejectReason.TOO_LONG)
    return handler_id, payload_size


def am_poll(table: AmHandlerTable, buffer, buffer_size: int | None = None, target_args=b"") -> AmPollStatus:
    """Try to consume and dispatch one active message from the buffer."""
    table.seal()
    view = memoryview(buffer)
    if buffer_size is not None:
        view = view[:buffer_size]
    if len(view) < AM_HEADER_LEN:
        raise ValueError(f"buffer must expose at least {AM_HEADER_LEN} readable bytes")
    decoded = _decode_header(view)
    if isinstance(decoded, AmPollStatus):
        if decoded.kind is AmPollKind.REJECTED:
            view[0] = 0  # drop the frame so the slot recovers
        return decoded
    handler_id, payload_size = decoded
    trailer_at = AM_HEADER_LEN + payload_size
    deadline = time.monotonic() + table.poll_timeout
    while view[trailer_at] != AM_TRAILER:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            if view[trailer_at] == AM_TRAILER:
                break
            return AmPollStatus(AmPollKind.TIMEOUT, None, handler_id)
        try:
            wait_mem(view, trailer_at, view[trailer_at], deadline=remaining)
        except WaitTimeout:
            if view[trailer_at] == AM_TRAILER:
                break
            return AmPollStatus(AmPollKind.TIMEOUT, None, handler_id)

    def clear():
        view[0] = 0
        view[trailer_at] = 0

    fn = table.lookup(handler_id)
    if fn is None:
        clear()
        return AmPollStatus(AmPollKind.UNKNOWN_HANDLER, None, handler_id)
    payload = view[AM_HEADER_LEN:trailer_at]
    fn(payload, target_args)
    clear()
    return AmPollStatus(AmPollKind.EXECUTED, None, handler_id)
