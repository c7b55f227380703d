"""Instruction set tables shared by the validator, interpreter, and tools.

One-byte opcodes, little-endian immediates. The operand stack holds
64-bit values; signedness is an interpretation applied by the signed
ops (DIVS, MODS, LTS), not a storage property.
"""

from __future__ import annotations

from enum import Enum, IntEnum


class Op(IntEnum):
    HALT = 0x00
    PUSH = 0x01  # imm64
    POP = 0x02
    DUP = 0x03
    SWAP = 0x04
    ADD = 0x10
    SUB = 0x11
    MUL = 0x12
    DIVS = 0x13
    MODS = 0x14
    AND = 0x15
    OR = 0x16
    XOR = 0x17
    SHL = 0x18
    SHR = 0x19
    EQ = 0x1A
    LTS = 0x1B
    LOCAL_GET = 0x20  # imm8 local index
    LOCAL_SET = 0x21  # imm8 local index
    LD1_P = 0x30
    LD8_P = 0x31
    ST1_P = 0x32
    ST8_P = 0x33
    LD1_A = 0x34
    LD8_A = 0x35
    ST1_A = 0x36
    ST8_A = 0x37
    JMP = 0x40  # imm32 signed, relative to end of instruction
    JZ = 0x41  # imm32 signed, relative to end of instruction
    CALL_IMPORT = 0x50  # imm8 import index
    RET = 0x51


class Imm(Enum):
    NONE = 0
    U8 = 1
    I32 = 4
    U64 = 8


IMMEDIATE: dict[int, Imm] = {op: Imm.NONE for op in Op}
IMMEDIATE[Op.PUSH] = Imm.U64
IMMEDIATE[Op.LOCAL_GET] = Imm.U8
IMMEDIATE[Op.LOCAL_SET] = Imm.U8
IMMEDIATE[Op.JMP] = Imm.I32
IMMEDIATE[Op.JZ] = Imm.I32
IMMEDIATE[Op.CALL_IMPORT] = Imm.U8

VALID_OPCODES = frozenset(int(op) for op in Op)

# Assembly mnemonics; CALL_IMPORT reads as plain `call` since the
# operand is an import name in text form.
MNEMONIC: dict[int, str] = {op: op.name.lower() for op in Op}
MNEMONIC[Op.CALL_IMPORT] = "call"
OP_FOR_MNEMONIC: dict[str, Op] = {name: Op(op) for op, name in MNEMONIC.items()}

BINARY_OPS = frozenset(range(Op.ADD, Op.LTS + 1))


def instr_len(op: int) -> int:
    """Full encoded length of the instruction starting with `op`."""
    return 1 + IMMEDIATE[Op(op)].value
