"""Message frame encoding, validation, and consumption.

Frame layout (all multi-byte fields little-endian):

    offset  size  field
    ------  ----  -----------------------------------------------
    0       1     hdr_signal   0xA5 = frame present, 0x00 = empty
    1       1     version      0x01
    2       1     flags        bit0: 1 = inline code unit, 0 = digest
    3       1     name_len     1..40
    4       40    name         [A-Za-z0-9_], zero padded
    44      4     code_size    bytes in code section
    48      4     payload_size bytes in payload section
    52      4     hdr_crc      CRC-32C over the 64 header bytes, field zeroed
    56      8     seq          sender-assigned sequence number
    ------  ----  -----------------------------------------------
    64      code_size      code section
    ...     payload_size   payload section
    last    1              trailer signal 0x5A

The header signal tells the poller a frame has started to arrive; the
trailer signal tells it the last byte has landed. Both are cleared once
the frame is consumed so the slot can be reused.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import Enum

HDR_SIGNAL = 0xA5
TRAILER_SIGNAL = 0x5A
FRAME_VERSION = 0x01
HEADER_LEN = 64
FRAME_OVERHEAD = HEADER_LEN + 1  # header plus trailer byte
NAME_MAX = 40
DIGEST_CODE_SIZE = 32

FLAG_INLINE_CODE = 0x01

_HEADER_STRUCT = struct.Struct("<BBBB40sIII Q".replace(" ", ""))
_CRC_OFFSET = 52

_NAME_RE = re.compile(r"[A-Za-z0-9_]{1,40}\Z")

# CRC-32C (Castagnoli), reflected, init/xorout 0xFFFFFFFF.
_CRC_POLY = 0x82F63B78
_CRC_TABLE = []
for _i in range(256):
    _c = _i
    for _ in range(8):
        _c = (_c >> 1) ^ _CRC_POLY if _c & 1 else _c >> 1
    _CRC_TABLE.append(_c)


def crc32c(data, value: int = 0) -> int:
    """CRC-32C of `data`; pass a previous result as `value` to continue."""
    crc = value ^ 0xFFFFFFFF
    table = _CRC_TABLE
    for byte in bytes(data):
        crc = (crc >> 8) ^ table[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFFFFFF


class FrameError(ValueError):
    pass


class InvalidName(FrameError):
    pass


class RejectReason(Enum):
    BAD_VERSION = "bad_version"
    BAD_CRC = "bad_crc"
    BAD_NAME = "bad_name"
    BAD_CODE_SIZE = "bad_code_size"  # digest frame whose code section is not 32 bytes
    TOO_LONG = "too_long"
    BAD_CODE_UNIT = "bad_code_unit"  # inline code section failed to parse/validate
    DIGEST_MISMATCH = "digest_mismatch"


@dataclass(frozen=True)
class FrameHeader:
    name: str
    flags: int
    code_size: int
    payload_size: int
    seq: int
    version: int = FRAME_VERSION

    @property
    def inline_code(self) -> bool:
        return bool(self.flags & FLAG_INLINE_CODE)

    @property
    def frame_size(self) -> int:
        return FRAME_OVERHEAD + self.code_size + self.payload_size

    def pack(self) -> bytes:
        """Serialize to 64 bytes with a freshly computed hdr_crc."""
        raw = bytearray(
            _HEADER_STRUCT.pack(
                HDR_SIGNAL,
                self.version,
                self.flags,
                len(self.name),
                self.name.encode("ascii"),
                self.code_size,
                self.payload_size,
                0,
                self.seq,
            )
        )
        struct.pack_into("<I", raw, _CRC_OFFSET, crc32c(raw))
        return bytes(raw)


def frame_size(header: FrameHeader) -> int:
    return header.frame_size


class DecodeKind(Enum):
    NO_MESSAGE = "no_message"
    HEADER = "header"
    REJECTED = "rejected"


@dataclass(frozen=True)
class DecodeResult:
    kind: DecodeKind
    header: FrameHeader | None = None
    reason: RejectReason | None = None

    @property
    def is_header(self) -> bool:
        return self.kind is DecodeKind.HEADER


_NO_MESSAGE = DecodeResult(DecodeKind.NO_MESSAGE)


def _valid_name_bytes(name_len: int, raw: bytes) -> str | None:
    if not 1 <= name_len <= NAME_MAX:
        return None
    name = raw[:name_len]
    if any(b == 0 for b in name) or any(b != 0 for b in raw[name_len:]):
        return None
    try:
        text = name.decode("ascii")
    except UnicodeDecodeError:
        return None
    return text if _NAME_RE.fullmatch(text) else None


def encode_frame(name: str, flags: int, code: bytes, payload: bytes, seq: int) -> bytes:
    """Build a complete frame: header, code, payload, trailer."""
    if not isinstance(name, str) or not _NAME_RE.fullmatch(name):
        raise InvalidName(f"bad ifunc name: {name!r}")
    if not flags & FLAG_INLINE_CODE and len(code) != DIGEST_CODE_SIZE:
        raise FrameError(
            f"digest frames carry a {DIGEST_CODE_SIZE}-byte code section, got {len(code)}"
        )
    if len(code) >= 1 << 32 or len(payload) >= 1 << 32:
        raise FrameError("code/payload section exceeds 32-bit size field")
    header = FrameHeader(
        name=name,
        flags=flags,
        code_size=len(code),
        payload_size=len(payload),
        seq=seq & (1 << 64) - 1,
    )
    return b"".join((header.pack(), bytes(code), bytes(payload), bytes((TRAILER_SIGNAL,))))


def try_decode_header(buffer) -> DecodeResult:
    """Inspect the first 64 bytes of `buffer` for a frame header.

    NO_MESSAGE when the signal byte is absent; HEADER with the decoded
    fields when everything checks out; REJECTED otherwise. The CRC is
    verified before any field is interpreted, so corruption anywhere in
    the header surfaces as BAD_CRC. TOO_LONG means the full frame would
    not fit in `buffer`.
    """
    view = memoryview(buffer)
    if len(view) < HEADER_LEN:
        raise ValueError("need at least 64 readable bytes to decode a header")
    if view[0] != HDR_SIGNAL:
        return _NO_MESSAGE
    raw = bytes(view[:HEADER_LEN])
    (_, version, flags, name_len, name_raw, code_size, payload_size, hdr_crc, seq) = (
        _HEADER_STRUCT.unpack(raw)
    )
    zeroed = raw[:_CRC_OFFSET] + b"\x00\x00\x00\x00" + raw[_CRC_OFFSET + 4 :]
    if crc32c(zeroed) != hdr_crc:
        return DecodeResult(DecodeKind.REJECTED, reason=RejectReason.BAD_CRC)
    if version != FRAME_VERSION:
        return DecodeResult(DecodeKind.REJECTED, reason=RejectReason.BAD_VERSION)
    name = _valid_name_bytes(name_len, name_raw)
    if name is None:
        return DecodeResult(DecodeKind.REJECTED, reason=RejectReason.BAD_NAME)
    if not flags & FLAG_INLINE_CODE and code_size != DIGEST_CODE_SIZE:
        return DecodeResult(DecodeKind.REJECTED, reason=RejectReason.BAD_CODE_SIZE)
    header = FrameHeader(
        name=name,
        flags=flags,
        code_size=code_size,
        payload_size=payload_size,
        seq=seq,
        version=version,
    )
    if header.frame_size > len(view):
        return DecodeResult(DecodeKind.REJECTED, reason=RejectReason.TOO_LONG)
    return DecodeResult(DecodeKind.HEADER, header=header)


def clear_consumed(buffer, header: FrameHeader) -> None:
    """Zero the header and trailer of a consumed frame so the slot rearms.

    Code and payload bytes are left in place; without both signals the
    poller treats the slot as empty.
    """
    view = memoryview(buffer)
    view[:HEADER_LEN] = bytes(HEADER_LEN)
    view[header.frame_size - 1] = 0
