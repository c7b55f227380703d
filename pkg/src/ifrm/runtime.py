"""Injected-function runtime: register, create messages, send, poll.

The source side registers a package, asks its get_max_size entry for
the payload size, builds the frame in place (payload_init writes
directly into the frame's payload section), and ships the whole frame
as one put. The code section carries either the package file's SHA-256
(RequireLocalPackage mode) or the serialized code unit itself
(TrustInlineCode mode).

The target side polls a receive buffer: decode the header, wait for
the trailer signal, resolve the name (auto-registering from the
package directory on first sight), bind imports once and cache the
result, execute main against the payload bytes inside the buffer, and
clear the consumed frame. A frame is executed at most once; NoMessage
and Timeout leave it untouched so delivery can complete, every other
outcome consumes it.

Package files are searched in the directory named by the IFUNC_LIB_DIR
environment variable unless a library path is given explicitly.
"""

from __future__ import annotations

import hashlib
import itertools
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum

from .frame import (
    HEADER_LEN,
    FLAG_INLINE_CODE,
    TRAILER_SIGNAL,
    DecodeKind,
    FrameHeader,
    RejectReason,
    clear_consumed,
    try_decode_header,
)
from .rmem import WaitTimeout, wait_mem
from .vm import (
    FUNCTION_ORDER,
    BoundFunction,
    HostTable,
    IfuncPackage,
    LinkError,
    VmLimits,
    bind_imports,
    exec_function,
    inline_code_unit,
    package_digest,
    parse_code_unit,
    parse_package,
    serialize_code_unit,
    standard_host_table,
    validate_code_unit,
)

MAX_PAYLOAD = (1 << 32) - 66  # largest payload whose frame size stays in 32 bits


class Mode(Enum):
    REQUIRE_LOCAL_PACKAGE = "require_local_package"
    TRUST_INLINE_CODE = "trust_inline_code"


class IfuncError(Exception):
    pass


class PackageNotFound(IfuncError):
    pass


class NameMismatch(IfuncError):
    pass


class ValidationFailed(IfuncError):
    pass


class UnknownHandle(IfuncError):
    pass


class UnknownMessage(IfuncError):
    pass


class GetSizeTrap(IfuncError):
    pass


class InitTrap(IfuncError):
    pass


class InitRejected(IfuncError):
    def __init__(self, status: int):
        super().__init__(f"payload_init returned status {status}")
        self.status = status


class FrameTooLarge(IfuncError):
    pass


class PollKind(Enum):
    EXECUTED = "executed"
    NO_MESSAGE = "no_message"
    REJECTED = "rejected"
    TIMEOUT = "timeout"
    EXEC_TRAP = "exec_trap"
    LINK_FAILED = "link_failed"
    AUTO_REG_FAILED = "auto_reg_failed"


@dataclass(frozen=True)
class PollStatus:
    kind: PollKind
    reason: object = None  # RejectReason, TrapKind, or message string
    name: str | None = None
    seq: int | None = None

    @property
    def executed(self) -> bool:
        return self.kind is PollKind.EXECUTED


_NO_MESSAGE = PollStatus(PollKind.NO_MESSAGE)


class _Entry:
    def __init__(self, package: IfuncPackage, digest: bytes):
        self.package = package
        self.digest = digest
        self.bound: dict[str, BoundFunction] = {}
        self.inline_bytes: bytes | None = None
        self.lock = threading.Lock()


@dataclass(frozen=True)
class IfuncHandle:
    name: str
    entry: _Entry


class IfuncMessage:
    """A ready-to-send frame built by msg_create."""

    def __init__(self, name: str, seq: int, frame: bytearray, payload_size: int):
        self.name = name
        self.seq = seq
        self.frame = frame
        self.payload_size = payload_size
        self.freed = False

    @property
    def frame_size(self) -> int:
        return len(self.frame)


def _signed64(value: int) -> int:
    return value - (1 << 64) if value & (1 << 63) else value


class RuntimeContext:
    def __init__(
        self,
        lib_dir: str | None = None,
        mode: Mode = Mode.REQUIRE_LOCAL_PACKAGE,
        host: HostTable | None = None,
        poll_timeout: float = 5.0,
        limits: VmLimits = VmLimits(),
    ):
        self.lib_dir = lib_dir if lib_dir is not None else os.environ.get("IFUNC_LIB_DIR")
        self.mode = mode
        self.host = host if host is not None else standard_host_table()
        self.poll_timeout = poll_timeout
        self.limits = limits
        self.load_counter: dict[str, int] = {}
        self._registry: dict[str, _Entry] = {}
        self._inline_cache: dict[tuple[str, bytes], BoundFunction] = {}
        self._seq = itertools.count(1)
        self._lock = threading.Lock()

    # -- registration --

    def _package_path(self, name: str) -> str:
        if self.lib_dir is None:
            raise PackageNotFound(
                f"no package directory: set IFUNC_LIB_DIR to locate {name!r}"
            )
        return os.path.join(self.lib_dir, f"{name}.ifn")

    def _load_entry(self, name: str) -> _Entry:
        path = self._package_path(name)
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            raise PackageNotFound(path) from None
        pkg = parse_package(data)  # MalformedPackage propagates
        if pkg.name != name:
            raise NameMismatch(f"{path} embeds name {pkg.name!r}, expected {name!r}")
        for which in FUNCTION_ORDER:
            verdict = validate_code_unit(pkg.unit(which))
            if not verdict:
                raise ValidationFailed(
                    f"{name}.{which}: {verdict.reason.value} at offset {verdict.offset}"
                )
        entry = _Entry(pkg, package_digest(data))
        self.load_counter[name] = self.load_counter.get(name, 0) + 1
        return entry

    def register_ifunc(self, name: str) -> IfuncHandle:
        """Load `<lib_dir>/<name>.ifn`; re-registration reuses the entry."""
        with self._lock:
            entry = self._registry.get(name)
            if entry is None:
                entry = self._load_entry(name)
                self._registry[name] = entry
        return IfuncHandle(name, entry)

    def deregister_ifunc(self, handle: IfuncHandle) -> None:
        with self._lock:
            if self._registry.get(handle.name) is not handle.entry:
                raise UnknownHandle(handle.name)
            del self._registry[handle.name]

    # -- source side --

    def _bind(self, entry: _Entry, which: str) -> BoundFunction:
        with entry.lock:
            bound = entry.bound.get(which)
            if bound is None:
                bound = bind_imports(entry.package.unit(which), self.host, require_all=False)
                entry.bound[which] = bound
        return bound

    def msg_create(self, handle: IfuncHandle, source_args=b"") -> IfuncMessage:
        """Build a frame: size it, fill the payload in place, seal it."""
        entry = handle.entry
        limits = self.limits
        result = exec_function(
            self._bind(entry, "get_max_size"),
            b"",
            source_args,
            limits,
            has_result=True,
            args_writable=False,
        )
        if result.trap is not None or result.value is None:
            raise GetSizeTrap(f"{handle.name}.get_max_size: {result.trap or 'no value returned'}")
        size = result.value
        if size > MAX_PAYLOAD:
            raise FrameTooLarge(f"payload of {size} bytes cannot fit a frame")

        if self.mode is Mode.TRUST_INLINE_CODE:
            with entry.lock:
                if entry.inline_bytes is None:
                    entry.inline_bytes = serialize_code_unit(inline_code_unit(entry.package))
                code = entry.inline_bytes
            flags = FLAG_INLINE_CODE
        else:
            code = entry.digest
            flags = 0

        seq = next(self._seq)
        frame = bytearray(len(code) + size + HEADER_LEN + 1)
        header = FrameHeader(
            name=handle.name, flags=flags, code_size=len(code), payload_size=size, seq=seq
        )
        frame[:HEADER_LEN] = header.pack()
        frame[HEADER_LEN : HEADER_LEN + len(code)] = code
        frame[-1] = TRAILER_SIGNAL
        payload = memoryview(frame)[HEADER_LEN + len(code) : HEADER_LEN + len(code) + size]

        result = exec_function(
            self._bind(entry, "payload_init"),
            payload,
            source_args,
            limits,
            has_result=True,
            args_writable=False,
        )
        if result.trap is not None or result.value is None:
            raise InitTrap(f"{handle.name}.payload_init: {result.trap or 'no value returned'}")
        status = _signed64(result.value)
        if status != 0:
            raise InitRejected(status)
        return IfuncMessage(handle.name, seq, frame, size)

    def msg_free(self, msg: IfuncMessage) -> None:
        if msg.freed:
            raise UnknownMessage(f"message seq {msg.seq} already freed")
        msg.freed = True
        msg.frame = bytearray()

    # -- target side --

    def _wait_trailer(self, view, offset: int) -> bool:
        """True once the trailer signal appears; False on timeout."""
        deadline = time.monotonic() + self.poll_timeout
        while True:
            current = view[offset]
            if current == TRAILER_SIGNAL:
                return True
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return view[offset] == TRAILER_SIGNAL
            try:
                wait_mem(view, offset, current, deadline=remaining)
            except WaitTimeout:
                return view[offset] == TRAILER_SIGNAL

    def _resolve_target(self, header: FrameHeader, code: bytes) -> PollStatus | BoundFunction:
        """Find the executable for a delivered frame, loading or caching."""
        name = header.name
        if header.inline_code and self.mode is Mode.TRUST_INLINE_CODE:
            key = (name, hashlib.sha256(code).digest())
            bound = self._inline_cache.get(key)
            if bound is None:
                try:
                    unit = parse_code_unit(code)
                except Exception:
                    return PollStatus(
                        PollKind.REJECTED, RejectReason.BAD_CODE_UNIT, name, header.seq
                    )
                if not validate_code_unit(unit):
                    return PollStatus(
                        PollKind.REJECTED, RejectReason.BAD_CODE_UNIT, name, header.seq
                    )
                try:
                    bound = bind_imports(unit, self.host, require_all=False)
                except LinkError as err:
                    return PollStatus(PollKind.LINK_FAILED, err.name, name, header.seq)
                self._inline_cache[key] = bound
            return bound

        with self._lock:
            entry = self._registry.get(name)
            if entry is None:
                try:
                    entry = self._load_entry(name)
                except IfuncError as err:
                    return PollStatus(PollKind.AUTO_REG_FAILED, str(err), name, header.seq)
                self._registry[name] = entry
        if not header.inline_code and code != entry.digest:
            return PollStatus(PollKind.REJECTED, RejectReason.DIGEST_MISMATCH, name, header.seq)
        try:
            return self._bind(entry, "main")
        except LinkError as err:
            return PollStatus(PollKind.LINK_FAILED, err.name, name, header.seq)

    def poll_ifunc(self, buffer, buffer_size: int | None = None, target_args=b"") -> PollStatus:
        """Try to consume and execute one frame from the receive buffer."""
        view = memoryview(buffer)
        if buffer_size is not None:
            view = view[:buffer_size]
        decoded = try_decode_header(view)
        if decoded.kind is DecodeKind.NO_MESSAGE:
            return _NO_MESSAGE
        if decoded.kind is DecodeKind.REJECTED:
            view[0] = 0  # drop the frame so the slot recovers
            return PollStatus(PollKind.REJECTED, decoded.reason)
        header = decoded.header
        if not self._wait_trailer(view, header.frame_size - 1):
            return PollStatus(PollKind.TIMEOUT, None, header.name, header.seq)

        code = bytes(view[HEADER_LEN : HEADER_LEN + header.code_size])
        resolved = self._resolve_target(header, code)
        if isinstance(resolved, PollStatus):
            clear_consumed(view, header)
            return resolved

        payload_start = HEADER_LEN + header.code_size
        payload = view[payload_start : payload_start + header.payload_size]
        result = exec_function(
            resolved, payload, target_args, self.limits, has_result=False, args_writable=True
        )
        clear_consumed(view, header)
        if result.trap is not None:
            return PollStatus(PollKind.EXEC_TRAP, result.trap, header.name, header.seq)
        return PollStatus(PollKind.EXECUTED, None, header.name, header.seq)


def msg_send_nbix(ep, msg: IfuncMessage, remote_addr: int, rkey: int) -> int:
    """Post the whole frame as one non-blocking put; flush to complete."""
    if msg.freed:
        raise UnknownMessage(f"message seq {msg.seq} already freed")
    return ep.put_nbi(msg.frame, remote_addr, rkey)
