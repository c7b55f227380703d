"""Frame encode/decode round trips and header validation."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ifrm.frame import (
    DIGEST_CODE_SIZE,
    FLAG_INLINE_CODE,
    FRAME_VERSION,
    HDR_SIGNAL,
    HEADER_LEN,
    TRAILER_SIGNAL,
    DecodeKind,
    FrameError,
    FrameHeader,
    InvalidName,
    RejectReason,
    clear_consumed,
    crc32c,
    encode_frame,
    try_decode_header,
)

NAMES = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_",
    min_size=1,
    max_size=40,
)


def test_frame_size_inline():
    frame = encode_frame("paq8px", FLAG_INLINE_CODE, b"\x00" * 100, b"\x01" * 16, seq=1)
    assert len(frame) == 65 + 100 + 16 == 181


def test_frame_size_digest():
    frame = encode_frame("paq8px", 0, b"\x00" * 32, b"", seq=1)
    assert len(frame) == 65 + 32 == 97


def test_layout():
    frame = encode_frame("demo", FLAG_INLINE_CODE, b"CODE", b"PAYLOAD", seq=7)
    assert frame[0] == HDR_SIGNAL
    assert frame[1] == FRAME_VERSION
    assert frame[2] == FLAG_INLINE_CODE
    assert frame[3] == 4
    assert frame[4:44] == b"demo" + bytes(36)
    assert frame[44:48] == (4).to_bytes(4, "little")
    assert frame[48:52] == (7).to_bytes(4, "little")
    assert frame[56:64] == (7).to_bytes(8, "little")
    assert frame[64:68] == b"CODE"
    assert frame[68:75] == b"PAYLOAD"
    assert frame[-1] == TRAILER_SIGNAL


def test_header_crc_computed_over_zeroed_field():
    frame = encode_frame("demo", FLAG_INLINE_CODE, b"", b"", seq=0)
    zeroed = frame[:52] + bytes(4) + frame[56:HEADER_LEN]
    stored = int.from_bytes(frame[52:56], "little")
    assert crc32c(zeroed) == stored


def test_decode_round_trip():
    frame = bytearray(encode_frame("xorcodec", FLAG_INLINE_CODE, b"abc", b"defgh", seq=42))
    result = try_decode_header(frame)
    assert result.kind is DecodeKind.HEADER
    hdr = result.header
    assert hdr.name == "xorcodec"
    assert hdr.inline_code
    assert hdr.code_size == 3
    assert hdr.payload_size == 5
    assert hdr.seq == 42
    assert hdr.frame_size == len(frame)


def test_zeroed_buffer_is_no_message():
    assert try_decode_header(bytes(256)).kind is DecodeKind.NO_MESSAGE


def test_short_buffer_raises():
    with pytest.raises(ValueError):
        try_decode_header(bytes(63))


def test_bad_version_rejected():
    frame = bytearray(encode_frame("demo", FLAG_INLINE_CODE, b"", b"", seq=0))
    frame[1] = 2
    # Re-seal the CRC so only the version is wrong.
    frame[52:56] = bytes(4)
    frame[52:56] = crc32c(frame[:HEADER_LEN]).to_bytes(4, "little")
    result = try_decode_header(frame)
    assert result.kind is DecodeKind.REJECTED
    assert result.reason is RejectReason.BAD_VERSION


def test_bad_name_rejected():
    for bad in (b"sp ace", b"uni\xc3\xa9", b"\x00lead"):
        frame = bytearray(encode_frame("demo", FLAG_INLINE_CODE, b"", b"", seq=0))
        frame[4 : 4 + len(bad)] = bad
        frame[3] = len(bad)
        frame[52:56] = bytes(4)
        frame[52:56] = crc32c(frame[:HEADER_LEN]).to_bytes(4, "little")
        result = try_decode_header(frame)
        assert result.reason is RejectReason.BAD_NAME


def test_name_len_zero_rejected():
    frame = bytearray(encode_frame("demo", FLAG_INLINE_CODE, b"", b"", seq=0))
    frame[3] = 0
    frame[4:44] = bytes(40)
    frame[52:56] = bytes(4)
    frame[52:56] = crc32c(frame[:HEADER_LEN]).to_bytes(4, "little")
    assert try_decode_header(frame).reason is RejectReason.BAD_NAME


def test_digest_frame_code_size_must_be_32():
    frame = bytearray(encode_frame("demo", 0, b"\x00" * 32, b"", seq=0))
    frame[44:48] = (16).to_bytes(4, "little")
    frame[52:56] = bytes(4)
    frame[52:56] = crc32c(frame[:HEADER_LEN]).to_bytes(4, "little")
    assert try_decode_header(frame).reason is RejectReason.BAD_CODE_SIZE


def test_frame_larger_than_buffer_rejected():
    frame = bytearray(encode_frame("demo", FLAG_INLINE_CODE, b"x" * 64, b"", seq=0))
    assert try_decode_header(frame[: HEADER_LEN + 8]).reason is RejectReason.TOO_LONG


def test_every_corrupted_header_byte_rejects():
    # Any single-byte corruption must never decode as a valid header.
    frame = bytearray(encode_frame("paq8px", FLAG_INLINE_CODE, b"c" * 8, b"p" * 8, seq=3))
    for off in range(HEADER_LEN):
        for bit in range(8):
            mutated = bytearray(frame)
            mutated[off] ^= 1 << bit
            result = try_decode_header(mutated)
            assert result.kind is not DecodeKind.HEADER, (off, bit)
            if off == 0:
                assert result.kind is DecodeKind.NO_MESSAGE
            else:
                assert result.reason is RejectReason.BAD_CRC


def test_encode_rejects_bad_names():
    for name in ("", "has space", "x" * 41, "tab\t", "dash-ed"):
        with pytest.raises(InvalidName):
            encode_frame(name, FLAG_INLINE_CODE, b"", b"", seq=0)


def test_encode_rejects_bad_digest_size():
    with pytest.raises(FrameError):
        encode_frame("demo", 0, b"\x00" * 31, b"", seq=0)


def test_clear_consumed_rearms_slot():
    buf = bytearray(encode_frame("demo", FLAG_INLINE_CODE, b"abc", b"de", seq=1) + bytes(32))
    result = try_decode_header(buf)
    clear_consumed(buf, result.header)
    assert buf[: HEADER_LEN] == bytes(HEADER_LEN)
    assert buf[result.header.frame_size - 1] == 0
    assert try_decode_header(buf).kind is DecodeKind.NO_MESSAGE
    # Code and payload bytes are left behind; only the signals matter.
    assert buf[HEADER_LEN : HEADER_LEN + 3] == b"abc"


@given(NAMES, st.binary(max_size=200), st.binary(max_size=200), st.integers(0, 2**64 - 1))
def test_round_trip_property(name, code, payload, seq):
    frame = encode_frame(name, FLAG_INLINE_CODE, code, payload, seq=seq)
    assert len(frame) == 65 + len(code) + len(payload)
    result = try_decode_header(bytearray(frame))
    assert result.kind is DecodeKind.HEADER
    hdr = result.header
    assert (hdr.name, hdr.code_size, hdr.payload_size, hdr.seq) == (
        name,
        len(code),
        len(payload),
        seq,
    )
    start = HEADER_LEN
    assert frame[start : start + hdr.code_size] == code
    assert frame[start + hdr.code_size : start + hdr.code_size + hdr.payload_size] == payload


def test_digest_mode_reason_exists():
    # The decode layer never produces these two; the runtime does after
    # inspecting the code section. They still need distinct identities.
    assert RejectReason.DIGEST_MISMATCH is not RejectReason.BAD_CODE_UNIT


def test_pack_is_stable():
    hdr = FrameHeader(name="demo", flags=1, code_size=3, payload_size=2, seq=9)
    assert hdr.pack() == hdr.pack()
    assert len(hdr.pack()) == HEADER_LEN
    assert try_decode_header(hdr.pack() + bytes(16)).kind is DecodeKind.HEADER
