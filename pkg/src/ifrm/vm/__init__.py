"""Portable code carrier: packages, static validation, and execution."""

from .interp import (
    DEFAULT_LIMITS,
    BoundFunction,
    ExecResult,
    HostTable,
    LinkError,
    TrapKind,
    VmAbort,
    VmLimits,
    bind_body,
    bind_imports,
    exec_function,
    standard_host_table,
)
from .isa import MNEMONIC, OP_FOR_MNEMONIC, Imm, Op, instr_len
from .package import (
    FUNCTION_ORDER,
    CodeUnit,
    FuncBody,
    IfuncPackage,
    ImportSig,
    MalformedPackage,
    inline_code_unit,
    package_digest,
    parse_code_unit,
    parse_package,
    serialize_code_unit,
    serialize_package,
)
from .validate import Invalid, InvalidReason, Valid, validate_code_unit, validate_function

__all__ = [
    "DEFAULT_LIMITS",
    "FUNCTION_ORDER",
    "MNEMONIC",
    "OP_FOR_MNEMONIC",
    "BoundFunction",
    "CodeUnit",
    "ExecResult",
    "FuncBody",
    "HostTable",
    "IfuncPackage",
    "Imm",
    "ImportSig",
    "Invalid",
    "InvalidReason",
    "LinkError",
    "MalformedPackage",
    "Op",
    "TrapKind",
    "Valid",
    "VmAbort",
    "VmLimits",
    "bind_body",
    "bind_imports",
    "exec_function",
    "inline_code_unit",
    "instr_len",
    "package_digest",
    "parse_code_unit",
    "parse_package",
    "serialize_code_unit",
    "serialize_package",
    "standard_host_table",
    "validate_code_unit",
    "validate_function",
]
