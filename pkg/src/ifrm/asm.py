"""Assembler and disassembler for ifunc packages.

Text format, one instruction per line, `;` starts a comment:

    .ifunc counter
    .import ctr_inc 0 0
    .func get_max_size locals=0
        push 0
        ret
    .func payload_init locals=0
        push 0
        ret
    .func main locals=0
        call ctr_inc
        ret

Immediates are decimal or 0x-hex (push also accepts negatives, encoded
two's-complement). Jump operands are labels (`name:` lines) or literal
relative offsets; `call` takes an import name or index. The disassembler
synthesizes `L<offset>` labels, and its output assembles back to the
exact same package bytes.
"""

from __future__ import annotations

import re
import struct

from .vm.isa import IMMEDIATE, MNEMONIC, OP_FOR_MNEMONIC, Imm, Op
from .vm.package import (
    FUNCTION_ORDER,
    MAX_LOCALS,
    FuncBody,
    IfuncPackage,
    ImportSig,
    parse_package,
    serialize_package,
)
from .vm.validate import validate_function

MASK64 = (1 << 64) - 1

_LABEL_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class AsmError(ValueError):
    pass


class AsmSyntaxError(AsmError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownMnemonic(AsmError):
    def __init__(self, line: int, mnemonic: str):
        super().__init__(f"line {line}: unknown mnemonic {mnemonic!r}")
        self.line = line
        self.mnemonic = mnemonic


class UndefinedLabel(AsmError):
    def __init__(self, name: str, line: int):
        super().__init__(f"line {line}: undefined label {name!r}")
        self.name = name
        self.line = line


class DuplicateLabel(AsmError):
    def __init__(self, name: str, line: int):
        super().__init__(f"line {line}: duplicate label {name!r}")
        self.name = name
        self.line = line


class MissingFunction(AsmError):
    def __init__(self, which: str):
        super().__init__(f"missing .func {which}")
        self.which = which


class AsmValidationError(AsmError):
    def __init__(self, which: str, detail: str):
        super().__init__(f"function {which} failed validation: {detail}")
        self.which = which


def _parse_int(token: str, line: int) -> int:
    try:
        return int(token, 0)
    except ValueError:
        raise AsmSyntaxError(line, f"bad integer {token!r}") from None


class _Instr:
    __slots__ = ("line", "op", "operand", "offset")

    def __init__(self, line: int, op: Op, operand):
        self.line = line
        self.op = op
        self.operand = operand  # int, or (label-name, line) for jumps
        self.offset = 0


class _Func:
    def __init__(self, which: str, n_locals: int):
        self.which = which
        self.n_locals = n_locals
        self.instrs: list[_Instr] = []
        self.labels: dict[str, int] = {}
        self.size = 0


def _encode_function(func: _Func) -> bytes:
    # First pass fixed instruction sizes already; resolve and emit.
    out = bytearray()
    for ins in func.instrs:
        out.append(ins.op)
        imm = IMMEDIATE[ins.op]
        if imm is Imm.NONE:
            continue
        if imm is Imm.U8:
            out.append(ins.operand)
        elif imm is Imm.U64:
            out += struct.pack("<Q", ins.operand & MASK64)
        else:  # I32 jump
            if isinstance(ins.operand, tuple):
                name, line = ins.operand
                if name not in func.labels:
                    raise UndefinedLabel(name, line)
                rel = func.labels[name] - (ins.offset + 5)
            else:
                rel = ins.operand
            out += struct.pack("<i", rel)
    return bytes(out)


def assemble(text: str) -> bytes:
    """Translate assembly text into validated package bytes."""
    name: str | None = None
    imports: list[ImportSig] = []
    funcs: dict[str, _Func] = {}
    current: _Func | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]

        if head == ".ifunc":
            if name is not None:
                raise AsmSyntaxError(lineno, "duplicate .ifunc directive")
            if len(tokens) != 2:
                raise AsmSyntaxError(lineno, ".ifunc takes exactly one name")
            name = tokens[1]
            continue
        if head == ".import":
            if current is not None:
                raise AsmSyntaxError(lineno, ".import must precede .func sections")
            if len(tokens) != 4:
                raise AsmSyntaxError(lineno, ".import takes: name n_args has_result")
            n_args = _parse_int(tokens[2], lineno)
            has_result = _parse_int(tokens[3], lineno)
            if has_result not in (0, 1):
                raise AsmSyntaxError(lineno, "has_result must be 0 or 1")
            try:
                imports.append(ImportSig(tokens[1], n_args, bool(has_result)))
            except ValueError as err:
                raise AsmSyntaxError(lineno, str(err)) from None
            continue
        if head == ".func":
            if len(tokens) != 3 or not tokens[2].startswith("locals="):
                raise AsmSyntaxError(lineno, ".func takes: name locals=N")
            which = tokens[1]
            if which not in FUNCTION_ORDER:
                raise AsmSyntaxError(lineno, f"unknown function {which!r}")
            if which in funcs:
                raise AsmSyntaxError(lineno, f"duplicate .func {which}")
            n_locals = _parse_int(tokens[2][len("locals=") :], lineno)
            if not 0 <= n_locals <= MAX_LOCALS:
                raise AsmSyntaxError(lineno, f"locals count out of range: {n_locals}")
            current = _Func(which, n_locals)
            funcs[which] = current
            continue
        if head.startswith("."):
            raise AsmSyntaxError(lineno, f"unknown directive {head!r}")

        if current is None:
            raise AsmSyntaxError(lineno, "instruction outside any .func section")

        if head.endswith(":"):
            label = head[:-1]
            if not _LABEL_RE.fullmatch(label):
                raise AsmSyntaxError(lineno, f"bad label {label!r}")
            if label in current.labels:
                raise DuplicateLabel(label, lineno)
            current.labels[label] = current.size
            tokens = tokens[1:]
            if not tokens:
                continue
            head = tokens[0]

        op = OP_FOR_MNEMONIC.get(head)
        if op is None:
            raise UnknownMnemonic(lineno, head)
        imm = IMMEDIATE[op]
        if imm is Imm.NONE:
            if len(tokens) != 1:
                raise AsmSyntaxError(lineno, f"{head} takes no operand")
            operand = None
        else:
            if len(tokens) != 2:
                raise AsmSyntaxError(lineno, f"{head} takes exactly one operand")
            token = tokens[1]
            if op is Op.CALL_IMPORT:
                index = next((i for i, s in enumerate(imports) if s.name == token), None)
                if index is None:
                    index = _parse_int(token, lineno)
                if not 0 <= index < len(imports):
                    raise AsmSyntaxError(lineno, f"unknown import {token!r}")
                operand = index
            elif imm is Imm.U8:
                operand = _parse_int(token, lineno)
                if not 0 <= operand <= 0xFF:
                    raise AsmSyntaxError(lineno, f"operand out of byte range: {token}")
            elif imm is Imm.U64:
                operand = _parse_int(token, lineno)
                if not -(1 << 63) <= operand < 1 << 64:
                    raise AsmSyntaxError(lineno, f"operand out of 64-bit range: {token}")
            else:  # jump: label or literal relative offset
                if _LABEL_RE.fullmatch(token):
                    operand = (token, lineno)
                else:
                    operand = _parse_int(token, lineno)
                    if not -(1 << 31) <= operand < 1 << 31:
                        raise AsmSyntaxError(lineno, f"offset out of 32-bit range: {token}")
        ins = _Instr(lineno, op, operand)
        ins.offset = current.size
        current.instrs.append(ins)
        current.size += 1 + imm.value

    if name is None:
        raise AsmSyntaxError(0, "missing .ifunc directive")
    for which in FUNCTION_ORDER:
        if which not in funcs:
            raise MissingFunction(which)

    bodies = {}
    for which in FUNCTION_ORDER:
        func = funcs[which]
        code = _encode_function(func)
        verdict = validate_function(code, func.n_locals, len(imports))
        if not verdict:
            raise AsmValidationError(which, f"{verdict.reason.value} at offset {verdict.offset}")
        bodies[which] = FuncBody(func.n_locals, code)

    try:
        pkg = IfuncPackage(name, tuple(imports), **bodies)
    except ValueError as err:
        raise AsmSyntaxError(0, str(err)) from None
    return serialize_package(pkg)


def _format_imm(value: int) -> str:
    return str(value) if value < 1 << 16 else hex(value)


def _disassemble_body(body: FuncBody, imports) -> list[str]:
    code = body.code
    targets = set()
    pc = 0
    while pc < len(code):
        op = Op(code[pc])
        imm = IMMEDIATE[op]
        if imm is Imm.I32:
            rel = struct.unpack_from("<i", code, pc + 1)[0]
            targets.add(pc + 5 + rel)
        pc += 1 + imm.value
    lines = []
    pc = 0
    while pc < len(code):
        if pc in targets:
            lines.append(f"L{pc}:")
        op = Op(code[pc])
        imm = IMMEDIATE[op]
        mnemonic = MNEMONIC[op]
        if imm is Imm.NONE:
            lines.append(f"    {mnemonic}")
        elif imm is Imm.U8:
            operand = code[pc + 1]
            if op is Op.CALL_IMPORT:
                lines.append(f"    {mnemonic} {imports[operand].name}")
            else:
                lines.append(f"    {mnemonic} {operand}")
        elif imm is Imm.U64:
            value = struct.unpack_from("<Q", code, pc + 1)[0]
            lines.append(f"    {mnemonic} {_format_imm(value)}")
        else:
            rel = struct.unpack_from("<i", code, pc + 1)[0]
            lines.append(f"    {mnemonic} L{pc + 5 + rel}")
        pc += 1 + imm.value
    if len(code) in targets:
        lines.append(f"L{len(code)}:")
    return lines


def disassemble(data: bytes) -> str:
    """Render a package as re-assemblable text."""
    pkg = parse_package(data)
    for which in FUNCTION_ORDER:
        body = pkg.function(which)
        verdict = validate_function(body.code, body.n_locals, len(pkg.imports))
        if not verdict:
            raise AsmValidationError(which, f"{verdict.reason.value} at offset {verdict.offset}")
    lines = [f".ifunc {pkg.name}"]
    for sig in pkg.imports:
        lines.append(f".import {sig.name} {sig.n_args} {1 if sig.has_result else 0}")
    for which in FUNCTION_ORDER:
        body = pkg.function(which)
        lines.append(f".func {which} locals={body.n_locals}")
        lines.extend(_disassemble_body(body, pkg.imports))
    return "\n".join(lines) + "\n"
