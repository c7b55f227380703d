"""Active-message baseline: registration, framing, dispatch, equivalence."""

import struct

import pytest

from ifrm import programs
from ifrm.am import (
    AM_HEADER_LEN,
    AM_OVERHEAD,
    AM_SIGNAL,
    AM_TRAILER,
    AmHandlerTable,
    AmPollKind,
    AmRejectReason,
    DuplicateId,
    TableSealed,
    am_msg_send,
    am_poll,
    encode_am_frame,
)
from ifrm.frame import crc32c
from ifrm.rmem import LoopbackEndpoint, Perm, RegionTable
from ifrm.runtime import Mode, RuntimeContext, msg_send_nbix
from ifrm.vm import standard_host_table


def test_register_and_duplicate():
    table = AmHandlerTable()
    table.register(7, lambda p, a: None)
    with pytest.raises(DuplicateId):
        table.register(7, lambda p, a: None)
    table.register(8, lambda p, a: None)


def test_register_after_seal():
    table = AmHandlerTable()
    table.seal()
    with pytest.raises(TableSealed):
        table.register(1, lambda p, a: None)


def test_first_poll_seals_table():
    table = AmHandlerTable()
    am_poll(table, bytearray(64))
    with pytest.raises(TableSealed):
        table.register(1, lambda p, a: None)


def test_handler_id_range():
    table = AmHandlerTable()
    with pytest.raises(ValueError):
        table.register(1 << 16, lambda p, a: None)
    with pytest.raises(ValueError):
        encode_am_frame(-1, b"")


def test_frame_layout():
    payload = bytes(range(64))
    frame = encode_am_frame(7, payload)
    assert len(frame) == AM_OVERHEAD + 64 == 81
    signal, version, handler_id, size, got_crc, reserved = struct.unpack_from("<BBHIII", frame)
    assert (signal, version, handler_id, size, reserved) == (AM_SIGNAL, 1, 7, 64, 0)
    zeroed = bytearray(frame[:AM_HEADER_LEN])
    zeroed[8:12] = b"\x00\x00\x00\x00"
    assert got_crc == crc32c(zeroed)
    assert frame[AM_HEADER_LEN : AM_HEADER_LEN + 64] == payload
    assert frame[-1] == AM_TRAILER


def test_poll_empty_buffer():
    assert am_poll(AmHandlerTable(), bytearray(256)).kind is AmPollKind.NO_MESSAGE


def test_loopback_dispatch_and_clear():
    hits = []
    table = AmHandlerTable()
    table.register(3, lambda payload, args: hits.append(bytes(payload)))
    regions = RegionTable()
    region = regions.register("rx", 1024, Perm.READ | Perm.WRITE)
    ep = LoopbackEndpoint(regions)

    am_msg_send(ep, 3, b"hello!", region.info.base, region.info.rkey)
    ep.flush()
    status = am_poll(table, region.backing)
    assert status.kind is AmPollKind.EXECUTED
    assert status.handler_id == 3
    assert hits == [b"hello!"]
    assert region.backing[0] == 0 and region.backing[AM_HEADER_LEN + 6] == 0
    assert am_poll(table, region.backing).kind is AmPollKind.NO_MESSAGE


def test_target_args_passthrough():
    table = AmHandlerTable()

    def copy_out(payload, args):
        args[: len(payload)] = payload

    table.register(1, copy_out)
    buf = bytearray(256)
    frame = encode_am_frame(1, b"abc")
    buf[: len(frame)] = frame
    out = bytearray(8)
    assert am_poll(table, buf, target_args=out).executed
    assert bytes(out[:3]) == b"abc"


def test_unknown_handler_clears_frame():
    table = AmHandlerTable()
    buf = bytearray(256)
    frame = encode_am_frame(99, b"xy")
    buf[: len(frame)] = frame
    status = am_poll(table, buf)
    assert status.kind is AmPollKind.UNKNOWN_HANDLER
    assert status.handler_id == 99
    assert buf[0] == 0
    assert am_poll(table, buf).kind is AmPollKind.NO_MESSAGE


def test_corrupted_header_rejected():
    table = AmHandlerTable()
    buf = bytearray(256)
    frame = encode_am_frame(4, b"data")
    buf[: len(frame)] = frame
    buf[2] ^= 0x01  # id corrupted in flight
    status = am_poll(table, buf)
    assert status.kind is AmPollKind.REJECTED
    assert status.reason is AmRejectReason.BAD_CRC
    assert buf[0] == 0


def _sealed_header(version=1, handler_id=1, size=0, reserved=0) -> bytearray:
    head = bytearray(struct.pack("<BBHIII", AM_SIGNAL, version, handler_id, size, 0, reserved))
    struct.pack_into("<I", head, 8, crc32c(head))
    return head


def test_bad_version_with_valid_crc():
    buf = bytearray(256)
    buf[:AM_HEADER_LEN] = _sealed_header(version=2)
    buf[AM_HEADER_LEN] = AM_TRAILER
    status = am_poll(AmHandlerTable(), buf)
    assert status.reason is AmRejectReason.BAD_VERSION


def test_nonzero_reserved_with_valid_crc():
    buf = bytearray(256)
    buf[:AM_HEADER_LEN] = _sealed_header(reserved=5)
    buf[AM_HEADER_LEN] = AM_TRAILER
    status = am_poll(AmHandlerTable(), buf)
    assert status.reason is AmRejectReason.BAD_RESERVED


def test_frame_longer_than_buffer_rejected():
    buf = bytearray(64)
    buf[:AM_HEADER_LEN] = _sealed_header(size=1000)
    status = am_poll(AmHandlerTable(), buf)
    assert status.reason is AmRejectReason.TOO_LONG


def test_torn_write_timeout_then_executed():
    hits = []
    table = AmHandlerTable(poll_timeout=0.05)
    table.register(2, lambda p, a: hits.append(bytes(p)))
    frame = encode_am_frame(2, b"late")
    buf = bytearray(256)

    buf[:AM_HEADER_LEN] = frame[:AM_HEADER_LEN]
    status = am_poll(table, buf)
    assert status.kind is AmPollKind.TIMEOUT
    assert buf[0] == AM_SIGNAL and hits == []

    buf[AM_HEADER_LEN : len(frame)] = frame[AM_HEADER_LEN:]
    assert am_poll(table, buf).executed
    assert hits == [b"late"]


def test_counter_equivalence_with_ifunc(tmp_path):
    # N sends through each runtime leave the same counter value.
    lib = tmp_path / "lib"
    lib.mkdir()
    programs.install(str(lib))
    n = 25

    am_count = [0]
    table = AmHandlerTable()
    table.register(1, lambda p, a: am_count.__setitem__(0, am_count[0] + 1))
    regions = RegionTable()
    region = regions.register("rx", 4096, Perm.READ | Perm.WRITE)
    ep = LoopbackEndpoint(regions)
    for _ in range(n):
        am_msg_send(ep, 1, b"", region.info.base, region.info.rkey)
        ep.flush()
        assert am_poll(table, region.backing).executed

    if_count = [0]
    host = standard_host_table()
    host.register("ctr_inc", lambda: if_count.__setitem__(0, if_count[0] + 1), 0, False)
    source = RuntimeContext(lib_dir=str(lib))
    target = RuntimeContext(lib_dir=str(lib), host=host, poll_timeout=0.5)
    handle = source.register_ifunc("counter")
    for _ in range(n):
        msg = source.msg_create(handle)
        msg_send_nbix(ep, msg, region.info.base, region.info.rkey)
        ep.flush()
        assert target.poll_ifunc(region.backing).executed

    assert am_count[0] == if_count[0] == n


def test_size_identity_against_ifunc(tmp_path):
    from ifrm.vm import inline_code_unit, serialize_code_unit

    lib = tmp_path / "lib"
    lib.mkdir()
    programs.install(str(lib))
    source = RuntimeContext(lib_dir=str(lib), mode=Mode.TRUST_INLINE_CODE)
    handle = source.register_ifunc("xorcodec")
    unit_len = len(serialize_code_unit(inline_code_unit(handle.entry.package)))

    for size in (0, 1, 8, 64, 1024):
        msg = source.msg_create(handle, bytearray(size))
        am_frame = encode_am_frame(1, bytes(size))
        assert msg.frame_size - len(am_frame) == 48 + unit_len
