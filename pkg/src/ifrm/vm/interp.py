"""Bytecode interpreter: bind a validated code unit, then execute it.

Execution is deterministic and sandboxed. The only reachable memory is
the payload region, the args region, and the declared locals; every
access is bounds-checked and every run ends within the fuel budget.
Entry convention: locals[0] = payload size, locals[1] = args size (when
that many locals are declared). RET returns the stack top for entry
points declared value-returning; HALT and falling off the end of the
code return no value.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

from .isa import IMMEDIATE, Imm, Op
from .package import CodeUnit, ImportSig
from .validate import validate_code_unit

MASK64 = (1 << 64) - 1
_SIGN64 = 1 << 63

_UNPACK_I32 = struct.Struct("<i").unpack_from
_UNPACK_U64 = struct.Struct("<Q").unpack_from
_Q = struct.Struct("<Q")


class TrapKind(Enum):
    FUEL_EXHAUSTED = "fuel_exhausted"
    STACK_OVERFLOW = "stack_overflow"
    STACK_UNDERFLOW = "stack_underflow"
    DIV_BY_ZERO = "div_by_zero"
    OOB_PAYLOAD = "oob_payload"
    OOB_ARGS = "oob_args"
    ARGS_READ_ONLY = "args_read_only"
    USER_ABORT = "user_abort"


@dataclass(frozen=True)
class ExecResult:
    value: int | None
    fuel_used: int
    trap: TrapKind | None = None

    @property
    def ok(self) -> bool:
        return self.trap is None


@dataclass(frozen=True)
class VmLimits:
    fuel: int = 10_000_000
    max_stack: int = 1024


DEFAULT_LIMITS = VmLimits()


class VmAbort(Exception):
    """Raised by a host function to stop the program with a user code."""

    def __init__(self, code: int):
        super().__init__(code)
        self.code = int(code) & MASK64


class LinkError(Exception):
    def __init__(self, name: str, detail: str):
        super().__init__(f"{name}: {detail}")
        self.name = name


class HostTable:
    """Named host functions an import table can bind against."""

    def __init__(self):
        self._fns: dict[str, tuple] = {}

    def register(self, name: str, fn, n_args: int, has_result: bool) -> None:
        if name in self._fns:
            raise ValueError(f"host function {name!r} already registered")
        self._fns[name] = (fn, int(n_args), bool(has_result))

    def lookup(self, name: str):
        return self._fns.get(name)


def standard_host_table(log_sink: list | None = None) -> HostTable:
    """Imports every runtime provides: log_i64/1 and abort/1."""

    def log_i64(value):
        if log_sink is not None:
            log_sink.append(value)

    def abort(code):
        raise VmAbort(code)

    table = HostTable()
    table.register("log_i64", log_i64, 1, False)
    table.register("abort", abort, 1, False)
    return table


@dataclass(frozen=True)
class BoundFunction:
    n_locals: int
    program: tuple  # decoded (op, arg) pairs; jump args are instruction indices
    imports: tuple  # resolved (fn, n_args, has_result) per import slot


def _compile(code: bytes) -> tuple:
    """Decode once into (op, arg) pairs with jumps retargeted to indices."""
    index_of = {}
    prog = []
    pc = 0
    end = len(code)
    while pc < end:
        index_of[pc] = len(prog)
        op = code[pc]
        imm = IMMEDIATE[Op(op)]
        if imm is Imm.NONE:
            arg = None
            after = pc + 1
        elif imm is Imm.U8:
            arg = code[pc + 1]
            after = pc + 2
        elif imm is Imm.I32:
            after = pc + 5
            arg = after + _UNPACK_I32(code, pc + 1)[0]  # byte target, fixed below
        else:
            arg = _UNPACK_U64(code, pc + 1)[0]
            after = pc + 9
        prog.append((op, arg))
        pc = after
    index_of[end] = len(prog)
    for i, (op, arg) in enumerate(prog):
        if op == Op.JMP or op == Op.JZ:
            prog[i] = (op, index_of[arg])
    return tuple(prog)


def _unresolved_stub(name: str):
    def stub(*_args):
        raise LinkError(name, "called an import that was never resolved")

    return stub


def bind_imports(unit: CodeUnit, host: HostTable, *, require_all: bool = True) -> BoundFunction:
    """Resolve the unit's import table against `host` and precompile.

    With require_all=False only imports the code actually calls must
    resolve; call targets are immediates, so that set is static. Unused
    slots get an inert stub. The result is immutable and reusable
    across executions.
    """
    verdict = validate_code_unit(unit)
    if not verdict:
        raise ValueError(f"code unit failed validation: {verdict.reason.value} at {verdict.offset}")
    prog = _compile(unit.code)
    called = {arg for op, arg in prog if op == Op.CALL_IMPORT}
    resolved = []
    for index, sig in enumerate(unit.imports):
        entry = host.lookup(sig.name)
        if entry is None:
            if require_all or index in called:
                raise LinkError(sig.name, "no such host function")
            resolved.append((_unresolved_stub(sig.name), sig.n_args, sig.has_result))
            continue
        fn, n_args, has_result = entry
        if n_args != sig.n_args or has_result != sig.has_result:
            if require_all or index in called:
                raise LinkError(
                    sig.name,
                    f"signature mismatch: import wants {sig.n_args} args"
                    f"/{'result' if sig.has_result else 'no result'}, host has {n_args}"
                    f"/{'result' if has_result else 'no result'}",
                )
            resolved.append((_unresolved_stub(sig.name), sig.n_args, sig.has_result))
            continue
        resolved.append((fn, n_args, has_result))
    return BoundFunction(unit.n_locals, prog, tuple(resolved))


def bind_body(n_locals: int, code: bytes, imports: tuple[ImportSig, ...], host: HostTable) -> BoundFunction:
    return bind_imports(CodeUnit(imports, n_locals, code), host)


def exec_function(
    bound: BoundFunction,
    payload=b"",
    args=b"",
    limits: VmLimits = DEFAULT_LIMITS,
    *,
    has_result: bool = False,
    args_writable: bool = True,
) -> ExecResult:
    """Run `bound` to completion against the two memory regions.

    `payload` must be writable (bytearray or writable memoryview) if the
    program stores to it; `args` may be read-only, in which case ST*_A
    traps with ArgsReadOnly before touching memory.
    """
    prog = bound.program
    imports = bound.imports
    n_instr = len(prog)
    fuel = limits.fuel
    max_stack = limits.max_stack
    plen = len(payload)
    alen = len(args)
    unpack_q = _Q.unpack_from
    pack_q = _Q.pack_into

    stack: list[int] = []
    push = stack.append
    pop = stack.pop
    locs = [0] * bound.n_locals
    if bound.n_locals >= 1:
        locs[0] = plen
    if bound.n_locals >= 2:
        locs[1] = alen

    ip = 0
    used = 0
    while True:
        if ip >= n_instr:
            return ExecResult(None, used)
        if used >= fuel:
            return ExecResult(None, used, TrapKind.FUEL_EXHAUSTED)
        used += 1
        op, arg = prog[ip]
        ip += 1
        if op == 0x20:  # LOCAL_GET
            push(locs[arg])
            if len(stack) > max_stack:
                return ExecResult(None, used, TrapKind.STACK_OVERFLOW)
        elif op == 0x01:  # PUSH
            push(arg)
            if len(stack) > max_stack:
                return ExecResult(None, used, TrapKind.STACK_OVERFLOW)
        elif 0x10 <= op <= 0x1B:  # two-operand ops
            if len(stack) < 2:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            b = pop()
            a = pop()
            if op == 0x10:
                r = (a + b) & MASK64
            elif op == 0x17:
                r = a ^ b
            elif op == 0x11:
                r = (a - b) & MASK64
            elif op == 0x1B:
                sa = a - (1 << 64) if a & _SIGN64 else a
                sb = b - (1 << 64) if b & _SIGN64 else b
                r = 1 if sa < sb else 0
            elif op == 0x1A:
                r = 1 if a == b else 0
            elif op == 0x12:
                r = (a * b) & MASK64
            elif op == 0x15:
                r = a & b
            elif op == 0x16:
                r = a | b
            elif op == 0x18:
                r = (a << (b & 63)) & MASK64
            elif op == 0x19:
                r = a >> (b & 63)
            else:  # DIVS / MODS, truncation toward zero
                if b == 0:
                    return ExecResult(None, used, TrapKind.DIV_BY_ZERO)
                sa = a - (1 << 64) if a & _SIGN64 else a
                sb = b - (1 << 64) if b & _SIGN64 else b
                q = abs(sa) // abs(sb)
                if (sa < 0) != (sb < 0):
                    q = -q
                r = q & MASK64 if op == 0x13 else (sa - q * sb) & MASK64
            push(r)
        elif op == 0x31:  # LD8_P
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            if off + 8 > plen:
                return ExecResult(None, used, TrapKind.OOB_PAYLOAD)
            push(unpack_q(payload, off)[0])
        elif op == 0x33:  # ST8_P
            if len(stack) < 2:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            val = pop()
            if off + 8 > plen:
                return ExecResult(None, used, TrapKind.OOB_PAYLOAD)
            pack_q(payload, off, val)
        elif op == 0x41:  # JZ
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            if pop() == 0:
                ip = arg
        elif op == 0x21:  # LOCAL_SET
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            locs[arg] = pop()
        elif op == 0x40:  # JMP
            ip = arg
        elif op == 0x35:  # LD8_A
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            if off + 8 > alen:
                return ExecResult(None, used, TrapKind.OOB_ARGS)
            push(unpack_q(args, off)[0])
        elif op == 0x37:  # ST8_A
            if len(stack) < 2:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            val = pop()
            if not args_writable:
                return ExecResult(None, used, TrapKind.ARGS_READ_ONLY)
            if off + 8 > alen:
                return ExecResult(None, used, TrapKind.OOB_ARGS)
            pack_q(args, off, val)
        elif op == 0x30:  # LD1_P
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            if off >= plen:
                return ExecResult(None, used, TrapKind.OOB_PAYLOAD)
            push(payload[off])
        elif op == 0x32:  # ST1_P
            if len(stack) < 2:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            val = pop()
            if off >= plen:
                return ExecResult(None, used, TrapKind.OOB_PAYLOAD)
            payload[off] = val & 0xFF
        elif op == 0x34:  # LD1_A
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            if off >= alen:
                return ExecResult(None, used, TrapKind.OOB_ARGS)
            push(args[off])
        elif op == 0x36:  # ST1_A
            if len(stack) < 2:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            off = pop()
            val = pop()
            if not args_writable:
                return ExecResult(None, used, TrapKind.ARGS_READ_ONLY)
            if off >= alen:
                return ExecResult(None, used, TrapKind.OOB_ARGS)
            args[off] = val & 0xFF
        elif op == 0x03:  # DUP
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            push(stack[-1])
            if len(stack) > max_stack:
                return ExecResult(None, used, TrapKind.STACK_OVERFLOW)
        elif op == 0x04:  # SWAP
            if len(stack) < 2:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            stack[-1], stack[-2] = stack[-2], stack[-1]
        elif op == 0x02:  # POP
            if not stack:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            pop()
        elif op == 0x50:  # CALL_IMPORT
            fn, n_args, imp_result = imports[arg]
            if len(stack) < n_args:
                return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
            if n_args:
                vals = stack[-n_args:]
                del stack[-n_args:]
                try:
                    rv = fn(*vals)
                except VmAbort as abort:
                    return ExecResult(abort.code, used, TrapKind.USER_ABORT)
            else:
                try:
                    rv = fn()
                except VmAbort as abort:
                    return ExecResult(abort.code, used, TrapKind.USER_ABORT)
            if imp_result:
                push(int(rv) & MASK64)
                if len(stack) > max_stack:
                    return ExecResult(None, used, TrapKind.STACK_OVERFLOW)
        elif op == 0x51:  # RET
            if has_result:
                if not stack:
                    return ExecResult(None, used, TrapKind.STACK_UNDERFLOW)
                return ExecResult(pop(), used)
            return ExecResult(None, used)
        else:  # 0x00 HALT (validation admits nothing else)
            return ExecResult(None, used)
