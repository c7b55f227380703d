"""Independent reference evaluator for the injected-code instruction set.

Decodes straight from the code bytes on every step (no precompilation, no
shared code with ifrm.vm). Returns plain tuples so comparisons against the
real interpreter stay honest.

Result shape: (kind, value, fuel_used)
  kind  "done" or one of the trap names below
  value stack-top for value-returning entries on "done", else None
"""

MASK64 = (1 << 64) - 1
SIGN64 = 1 << 63

FUEL_EXHAUSTED = "fuel_exhausted"
STACK_OVERFLOW = "stack_overflow"
STACK_UNDERFLOW = "stack_underflow"
DIV_BY_ZERO = "div_by_zero"
OOB_PAYLOAD = "oob_payload"
OOB_ARGS = "oob_args"
ARGS_READ_ONLY = "args_read_only"
USER_ABORT = "user_abort"
DONE = "done"


def _signed(v):
    return v - (1 << 64) if v & SIGN64 else v


class RefAbort(Exception):
    def __init__(self, code):
        self.code = code


def ref_exec(
    code,
    n_locals=0,
    payload=b"",
    args=b"",
    fuel=10_000_000,
    max_stack=1024,
    has_result=False,
    args_writable=True,
    imports=(),
):
    """Run `code` to completion; `imports` is a sequence of
    (n_args, has_result, callable) triples indexed by CALL_IMPORT."""
    stack = []
    locs = [0] * n_locals
    if n_locals >= 1:
        locs[0] = len(payload)
    if n_locals >= 2:
        locs[1] = len(args)
    pc = 0
    used = 0
    end = len(code)

    def pop():
        if not stack:
            raise IndexError
        return stack.pop()

    while True:
        if pc >= end:
            return (DONE, None, used)
        if used >= fuel:
            return (FUEL_EXHAUSTED, None, used)
        used += 1
        op = code[pc]
        pc += 1
        try:
            if op == 0x00:  # HALT
                return (DONE, None, used)
            elif op == 0x01:  # PUSH
                v = int.from_bytes(code[pc : pc + 8], "little")
                pc += 8
                stack.append(v)
                if len(stack) > max_stack:
                    return (STACK_OVERFLOW, None, used)
            elif op == 0x02:  # POP
                pop()
            elif op == 0x03:  # DUP
                v = pop()
                stack.append(v)
                stack.append(v)
                if len(stack) > max_stack:
                    return (STACK_OVERFLOW, None, used)
            elif op == 0x04:  # SWAP
                b = pop()
                a = pop()
                stack.append(b)
                stack.append(a)
            elif 0x10 <= op <= 0x1B:
                b = pop()
                a = pop()
                if op == 0x10:
                    r = (a + b) & MASK64
                elif op == 0x11:
                    r = (a - b) & MASK64
                elif op == 0x12:
                    r = (a * b) & MASK64
                elif op == 0x13:  # DIVS, trunc toward zero
                    if b == 0:
                        return (DIV_BY_ZERO, None, used)
                    sa, sb = _signed(a), _signed(b)
                    q = abs(sa) // abs(sb)
                    if (sa < 0) != (sb < 0):
                        q = -q
                    r = q & MASK64
                elif op == 0x14:  # MODS, sign of dividend
                    if b == 0:
                        return (DIV_BY_ZERO, None, used)
                    sa, sb = _signed(a), _signed(b)
                    q = abs(sa) // abs(sb)
                    if (sa < 0) != (sb < 0):
                        q = -q
                    r = (sa - q * sb) & MASK64
                elif op == 0x15:
                    r = a & b
                elif op == 0x16:
                    r = a | b
                elif op == 0x17:
                    r = a ^ b
                elif op == 0x18:
                    r = (a << (b & 63)) & MASK64
                elif op == 0x19:
                    r = a >> (b & 63)
                elif op == 0x1A:
                    r = 1 if a == b else 0
                else:  # 0x1B LTS
                    r = 1 if _signed(a) < _signed(b) else 0
                stack.append(r)
            elif op == 0x20:  # LOCAL_GET
                stack.append(locs[code[pc]])
                pc += 1
                if len(stack) > max_stack:
                    return (STACK_OVERFLOW, None, used)
            elif op == 0x21:  # LOCAL_SET
                locs[code[pc]] = pop()
                pc += 1
            elif op in (0x30, 0x31):  # LD1_P / LD8_P
                off = pop()
                width = 1 if op == 0x30 else 8
                if off + width > len(payload):
                    return (OOB_PAYLOAD, None, used)
                stack.append(int.from_bytes(payload[off : off + width], "little"))
            elif op in (0x32, 0x33):  # ST1_P / ST8_P
                off = pop()
                val = pop()
                width = 1 if op == 0x32 else 8
                if off + width > len(payload):
                    return (OOB_PAYLOAD, None, used)
                payload[off : off + width] = (val & ((1 << (8 * width)) - 1)).to_bytes(
                    width, "little"
                )
            elif op in (0x34, 0x35):  # LD1_A / LD8_A
                off = pop()
                width = 1 if op == 0x34 else 8
                if off + width > len(args):
                    return (OOB_ARGS, None, used)
                stack.append(int.from_bytes(args[off : off + width], "little"))
            elif op in (0x36, 0x37):  # ST1_A / ST8_A
                off = pop()
                val = pop()
                if not args_writable:
                    return (ARGS_READ_ONLY, None, used)
                width = 1 if op == 0x36 else 8
                if off + width > len(args):
                    return (OOB_ARGS, None, used)
                args[off : off + width] = (val & ((1 << (8 * width)) - 1)).to_bytes(
                    width, "little"
                )
            elif op == 0x40:  # JMP
                rel = int.from_bytes(code[pc : pc + 4], "little", signed=True)
                pc = pc + 4 + rel
            elif op == 0x41:  # JZ
                rel = int.from_bytes(code[pc : pc + 4], "little", signed=True)
                pc += 4
                if pop() == 0:
                    pc += rel
            elif op == 0x50:  # CALL_IMPORT
                n_args, imp_res, fn = imports[code[pc]]
                pc += 1
                vals = [0] * n_args
                for i in range(n_args - 1, -1, -1):
                    vals[i] = pop()
                try:
                    rv = fn(*vals)
                except RefAbort as e:
                    return (USER_ABORT, e.code, used)
                if imp_res:
                    stack.append(int(rv) & MASK64)
                    if len(stack) > max_stack:
                        return (STACK_OVERFLOW, None, used)
            elif op == 0x51:  # RET
                if has_result:
                    return (DONE, pop(), used)
                return (DONE, None, used)
            else:
                raise AssertionError(f"reference hit unknown opcode {op:#x}")
        except IndexError:
            return (STACK_UNDERFLOW, None, used)
