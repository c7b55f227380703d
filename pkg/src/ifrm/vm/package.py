"""Package and code-unit container formats.

Package file layout (`<name>.ifn`, little-endian):

    magic "IFNC", u8 version = 1
    u8 name_len, name bytes            [A-Za-z0-9_], 1..40
    u8 import_count (max 32), each: u8 name_len, name, u8 n_args, u8 has_result
    three functions in fixed order (get_max_size, payload_init, main),
    each: u8 n_locals, u32 code_len, code bytes

A code unit is the carrier for inline frames: the shared import table
plus the main body only.

    u8 import_count + entries as above
    u8 n_locals, u32 code_len, code bytes
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass

PACKAGE_MAGIC = b"IFNC"
PACKAGE_VERSION = 1
MAX_IMPORTS = 32
IMPORT_NAME_MAX = 32
MAX_LOCALS = 255  # the count is stored in one byte

_NAME_RE = re.compile(r"[A-Za-z0-9_]{1,40}\Z")
_IMPORT_NAME_RE = re.compile(r"[A-Za-z0-9_]{1,32}\Z")

FUNCTION_ORDER = ("get_max_size", "payload_init", "main")


class MalformedPackage(ValueError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


@dataclass(frozen=True)
class ImportSig:
    name: str
    n_args: int
    has_result: bool

    def __post_init__(self):
        if not _IMPORT_NAME_RE.fullmatch(self.name):
            raise ValueError(f"bad import name: {self.name!r}")
        if not 0 <= self.n_args <= 4:
            raise ValueError(f"import arity out of range: {self.n_args}")


@dataclass(frozen=True)
class FuncBody:
    n_locals: int
    code: bytes

    def __post_init__(self):
        if not 0 <= self.n_locals <= MAX_LOCALS:
            raise ValueError(f"n_locals out of range: {self.n_locals}")


@dataclass(frozen=True)
class CodeUnit:
    """One executable body plus the import table it links against."""

    imports: tuple[ImportSig, ...]
    n_locals: int
    code: bytes

    def __post_init__(self):
        if len(self.imports) > MAX_IMPORTS:
            raise ValueError("too many imports")
        if not 0 <= self.n_locals <= MAX_LOCALS:
            raise ValueError(f"n_locals out of range: {self.n_locals}")


@dataclass(frozen=True)
class IfuncPackage:
    name: str
    imports: tuple[ImportSig, ...]
    get_max_size: FuncBody
    payload_init: FuncBody
    main: FuncBody

    def __post_init__(self):
        if not _NAME_RE.fullmatch(self.name):
            raise ValueError(f"bad package name: {self.name!r}")
        if len(self.imports) > MAX_IMPORTS:
            raise ValueError("too many imports")

    def function(self, which: str) -> FuncBody:
        if which not in FUNCTION_ORDER:
            raise KeyError(which)
        return getattr(self, which)

    def unit(self, which: str) -> CodeUnit:
        body = self.function(which)
        return CodeUnit(self.imports, body.n_locals, body.code)


def inline_code_unit(pkg: IfuncPackage) -> CodeUnit:
    """The unit an inline-mode frame ships: import table plus main."""
    return pkg.unit("main")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def fail(self, reason: str):
        raise MalformedPackage(self.pos, reason)

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            self.fail(f"truncated {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _read_imports(r: _Reader) -> tuple[ImportSig, ...]:
    count = r.u8("import count")
    if count > MAX_IMPORTS:
        r.fail(f"import count {count} exceeds {MAX_IMPORTS}")
    sigs = []
    for _ in range(count):
        name_len = r.u8("import name length")
        raw = r.take(name_len, "import name")
        try:
            name = raw.decode("ascii")
        except UnicodeDecodeError:
            r.fail("import name is not ASCII")
        if not _IMPORT_NAME_RE.fullmatch(name):
            r.fail(f"bad import name {name!r}")
        n_args = r.u8("import arity")
        if n_args > 4:
            r.fail(f"import arity {n_args} out of range")
        has_result = r.u8("import result flag")
        if has_result > 1:
            r.fail("import result flag must be 0 or 1")
        sigs.append(ImportSig(name, n_args, bool(has_result)))
    return tuple(sigs)


def _read_body(r: _Reader, which: str) -> FuncBody:
    n_locals = r.u8(f"{which} local count")
    code_len = r.u32(f"{which} code length")
    code = r.take(code_len, f"{which} code")
    return FuncBody(n_locals, bytes(code))


def _write_imports(out: bytearray, imports: tuple[ImportSig, ...]) -> None:
    out.append(len(imports))
    for sig in imports:
        raw = sig.name.encode("ascii")
        out.append(len(raw))
        out += raw
        out.append(sig.n_args)
        out.append(1 if sig.has_result else 0)


def _write_body(out: bytearray, body: FuncBody) -> None:
    out.append(body.n_locals)
    out += struct.pack("<I", len(body.code))
    out += body.code


def parse_package(data: bytes) -> IfuncPackage:
    r = _Reader(bytes(data))
    if r.take(4, "magic") != PACKAGE_MAGIC:
        raise MalformedPackage(0, "bad magic")
    version = r.u8("version")
    if version != PACKAGE_VERSION:
        raise MalformedPackage(4, f"unsupported version {version}")
    name_len = r.u8("name length")
    raw = r.take(name_len, "name")
    try:
        name = raw.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedPackage(6, "package name is not ASCII") from None
    if not _NAME_RE.fullmatch(name):
        raise MalformedPackage(6, f"bad package name {name!r}")
    imports = _read_imports(r)
    bodies = [_read_body(r, which) for which in FUNCTION_ORDER]
    if r.pos != len(r.data):
        r.fail("trailing bytes after last function")
    return IfuncPackage(name, imports, *bodies)


def serialize_package(pkg: IfuncPackage) -> bytes:
    out = bytearray(PACKAGE_MAGIC)
    out.append(PACKAGE_VERSION)
    raw = pkg.name.encode("ascii")
    out.append(len(raw))
    out += raw
    _write_imports(out, pkg.imports)
    for which in FUNCTION_ORDER:
        _write_body(out, pkg.function(which))
    return bytes(out)


def parse_code_unit(data: bytes) -> CodeUnit:
    r = _Reader(bytes(data))
    imports = _read_imports(r)
    body = _read_body(r, "unit")
    if r.pos != len(r.data):
        r.fail("trailing bytes after code")
    return CodeUnit(imports, body.n_locals, body.code)


def serialize_code_unit(unit: CodeUnit) -> bytes:
    out = bytearray()
    _write_imports(out, unit.imports)
    _write_body(out, FuncBody(unit.n_locals, unit.code))
    return bytes(out)


def package_digest(data: bytes) -> bytes:
    """SHA-256 over the exact package file bytes."""
    return hashlib.sha256(bytes(data)).digest()
