"""Static validation: a pure pre-scan that makes execution decode-safe.

A body that validates can be executed without ever hitting an unknown
opcode, a truncated immediate, a misaligned jump, an out-of-range local
slot, or a dangling import index. Runtime traps are then limited to the
dynamic conditions (stack, fuel, region bounds).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

from .isa import IMMEDIATE, VALID_OPCODES, Imm, Op
from .package import CodeUnit


class InvalidReason(Enum):
    UNKNOWN_OPCODE = "unknown_opcode"
    IMMEDIATE_OVERRUN = "immediate_overrun"
    BAD_JUMP_TARGET = "bad_jump_target"
    BAD_LOCAL_INDEX = "bad_local_index"
    BAD_IMPORT_INDEX = "bad_import_index"


@dataclass(frozen=True)
class Valid:
    boundaries: frozenset[int]  # instruction start offsets plus end-of-code

    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Invalid:
    reason: InvalidReason
    offset: int

    def __bool__(self) -> bool:
        return False


def validate_function(code: bytes, n_locals: int, n_imports: int) -> Valid | Invalid:
    """Scan one body; jumping to end-of-code is legal (implicit halt)."""
    end = len(code)
    boundaries = set()
    jumps = []  # (instruction offset, target offset)
    pc = 0
    while pc < end:
        boundaries.add(pc)
        op = code[pc]
        if op not in VALID_OPCODES:
            return Invalid(InvalidReason.UNKNOWN_OPCODE, pc)
        imm = IMMEDIATE[Op(op)]
        after = pc + 1 + imm.value
        if after > end:
            return Invalid(InvalidReason.IMMEDIATE_OVERRUN, pc)
        if op in (Op.LOCAL_GET, Op.LOCAL_SET):
            if code[pc + 1] >= n_locals:
                return Invalid(InvalidReason.BAD_LOCAL_INDEX, pc)
        elif op == Op.CALL_IMPORT:
            if code[pc + 1] >= n_imports:
                return Invalid(InvalidReason.BAD_IMPORT_INDEX, pc)
        elif imm is Imm.I32:
            rel = struct.unpack_from("<i", code, pc + 1)[0]
            jumps.append((pc, after + rel))
        pc = after
    boundaries.add(end)
    for at, target in jumps:
        if target not in boundaries:
            return Invalid(InvalidReason.BAD_JUMP_TARGET, at)
    return Valid(frozenset(boundaries))


def validate_code_unit(unit: CodeUnit) -> Valid | Invalid:
    return validate_function(unit.code, unit.n_locals, len(unit.imports))
