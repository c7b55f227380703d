"""Remote function injection over one-sided puts, with an active-message baseline.

A source process packages portable bytecode and a payload into a
self-describing frame and writes it straight into a target's exposed
memory region. The target polls the region, verifies the frame, links
the code against its host functions, and executes it. No receive call,
no pre-registered handler: the message itself says what to run.

Layers, bottom up: `frame` (wire format), `vm` (portable code:
packages, validation, interpreter), `asm` (assembler/disassembler),
`rmem` (emulated RDMA transport), `runtime` (the injected-function
runtime), `am` (classical active messages for comparison), `bench`
(microbenchmarks), `cli` (the `iftool` and `ifrm-bench` commands).
"""

from .am import AmHandlerTable, AmPollKind, AmPollStatus, am_msg_send, am_poll, encode_am_frame
from .asm import assemble, disassemble
from .frame import (
    FrameHeader,
    RejectReason,
    clear_consumed,
    crc32c,
    encode_frame,
    try_decode_header,
)
from .rmem import (
    LoopbackEndpoint,
    Perm,
    RegionTable,
    TcpEndpoint,
    serve_regions,
    wait_mem,
)
from .runtime import (
    IfuncHandle,
    IfuncMessage,
    Mode,
    PollKind,
    PollStatus,
    RuntimeContext,
    msg_send_nbix,
)
from .vm import (
    HostTable,
    IfuncPackage,
    VmLimits,
    bind_imports,
    exec_function,
    package_digest,
    parse_package,
    serialize_package,
    standard_host_table,
    validate_code_unit,
)

__version__ = "0.1.0"

__all__ = [
    "AmHandlerTable",
    "AmPollKind",
    "AmPollStatus",
    "FrameHeader",
    "HostTable",
    "IfuncHandle",
    "IfuncMessage",
    "IfuncPackage",
    "LoopbackEndpoint",
    "Mode",
    "Perm",
    "PollKind",
    "PollStatus",
    "RegionTable",
    "RejectReason",
    "RuntimeContext",
    "TcpEndpoint",
    "VmLimits",
    "am_msg_send",
    "am_poll",
    "assemble",
    "bind_imports",
    "clear_consumed",
    "crc32c",
    "disassemble",
    "encode_am_frame",
    "encode_frame",
    "exec_function",
    "msg_send_nbix",
    "package_digest",
    "parse_package",
    "serialize_package",
    "serve_regions",
    "standard_host_table",
    "try_decode_header",
    "validate_code_unit",
    "wait_mem",
    "__version__",
]
