"""Microbenchmarks comparing the two runtimes on the same transport.

Two workloads, each runnable for both message kinds (injected function
and active message) over loopback or TCP:

  ping-pong   one message each way per iteration; one-way latency is
              half the measured round trip, execution time included.
  throughput  the source packs k frames back-to-back into the target's
              ring region, flushes, and waits for the target to put the
              incremented round counter into an 8-byte notification
              word after consuming all k.

TCP runs split the roles across processes. The put plane listens on
the given port; a control channel of JSON lines listens on port + 1
and carries only lifecycle messages (what to run, readiness, final
counts). Region discovery goes through the put plane's query records,
and the target sends replies and notifications through its own reverse
endpoint into regions the source registers locally.

Results are BenchRecord rows written as CSV, sorted by
(mode, payload_size). Timings on the emulated transport say nothing
about RDMA hardware; the harness exists to compare the two message
kinds under identical conditions.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import socket
import struct
import tempfile
import time
from dataclasses import dataclass

from . import programs
from .am import AmHandlerTable, am_poll, encode_am_frame
from .frame import FRAME_OVERHEAD
from .rmem import (
    LoopbackEndpoint,
    Perm,
    RegionTable,
    TcpEndpoint,
    parse_address,
    serve_regions,
    wait_mem,
)
from .runtime import Mode, RuntimeContext, msg_send_nbix
from .vm import standard_host_table

log = logging.getLogger("ifrm.bench")

DEFAULT_SWEEP = tuple(1 << i for i in range(21))  # 1 B .. 1 MiB
AM_COUNTER_ID = 1
BENCH_IFUNC = "bencher"
_RW = Perm.READ | Perm.WRITE
_ROUND_WAIT = 30.0  # seconds a round may take before the run aborts


class BenchError(Exception):
    pass


@dataclass(frozen=True)
class BenchConfig:
    mode: str = "ifunc"  # ifunc | am
    transport: str = "loopback"  # "loopback" or "host:port"
    sizes: tuple[int, ...] = DEFAULT_SWEEP
    iters: int = 1000  # ping-pong: round trips; throughput: messages
    warmup: int = 100
    batch: int = 64
    trust_inline: bool = False
    lib_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("ifunc", "am"):
            raise ValueError(f"mode must be ifunc or am, got {self.mode!r}")
        if self.iters <= 0 or self.warmup < 0 or self.batch <= 0:
            raise ValueError("iterations and batch must be positive, warmup non-negative")
        if not self.sizes or any(s < 0 for s in self.sizes):
            raise ValueError("payload sizes must be non-negative")


@dataclass(frozen=True)
class BenchRecord:
    mode: str
    payload_size: int
    frame_size: int
    iterations: int
    min_ns: int
    median_ns: int
    p99_ns: int
    msgs_per_sec: float

    FIELDS = ("mode", "payload_size", "frame_size", "iterations",
              "min_ns", "median_ns", "p99_ns", "msgs_per_sec")

    def __post_init__(self):
        if not self.min_ns <= self.median_ns <= self.p99_ns:
            raise ValueError("percentiles out of order: min <= median <= p99 required")

    def row(self) -> list:
        return [self.mode, self.payload_size, self.frame_size, self.iterations,
                self.min_ns, self.median_ns, self.p99_ns, f"{self.msgs_per_sec:.2f}"]


def _stats(samples: list[int]) -> tuple[int, int, int]:
    if not samples:
        return 0, 0, 0
    ordered = sorted(samples)
    n = len(ordered)
    median = ordered[n // 2] if n % 2 else (ordered[n // 2 - 1] + ordered[n // 2]) // 2
    p99 = ordered[min(n - 1, max(0, -(-99 * n // 100) - 1))]
    return ordered[0], median, p99


def _make_record(mode, size, frame_size, samples, total_msgs, elapsed_ns) -> BenchRecord:
    lo, med, p99 = _stats(samples)
    rate = total_msgs * 1e9 / elapsed_ns if elapsed_ns > 0 and total_msgs else 0.0
    return BenchRecord(mode, size, frame_size, total_msgs, lo, med, p99, rate)


def _diagnostic_record(mode, size, frame_size, samples, err) -> BenchRecord:
    log.warning("size point %d aborted: %s", size, err)
    lo, med, p99 = _stats(samples)
    return BenchRecord(mode, size, frame_size, len(samples), lo, med, p99, 0.0)


def write_csv(records, path: str) -> None:
    """Header plus one row per record, sorted by (mode, payload_size)."""
    ordered = sorted(records, key=lambda r: (r.mode, r.payload_size))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BenchRecord.FIELDS)
        for record in ordered:
            writer.writerow(record.row())


def ensure_lib_dir(lib_dir: str | None = None) -> str:
    """Resolve the package directory, installing the shipped programs.

    Preference order: explicit argument, IFUNC_LIB_DIR, a fresh
    temporary directory. The shipped programs are (re)assembled into
    the directory if any are missing.
    """
    target = lib_dir or os.environ.get("IFUNC_LIB_DIR")
    if target is None:
        target = tempfile.mkdtemp(prefix="ifrm-lib-")
        log.info("IFUNC_LIB_DIR unset; using %s", target)
    os.makedirs(target, exist_ok=True)
    missing = [n for n in programs.names() if not os.path.exists(os.path.join(target, f"{n}.ifn"))]
    if missing:
        programs.install(target, only=missing)
    return target


class _Counter:
    __slots__ = ("value",)

    def __init__(self):
        self.value = 0

    def bump(self):
        self.value += 1


class _IfuncSide:
    """One role's injected-function machinery: create, poll, count."""

    kind = "ifunc"

    def __init__(self, lib_dir: str, trust_inline: bool, poll_timeout: float = 5.0):
        self.counter = _Counter()
        host = standard_host_table()
        host.register("ctr_inc", self.counter.bump, 0, False)
        mode = Mode.TRUST_INLINE_CODE if trust_inline else Mode.REQUIRE_LOCAL_PACKAGE
        self.ctx = RuntimeContext(
            lib_dir=lib_dir, mode=mode, host=host, poll_timeout=poll_timeout
        )
        self.handle = self.ctx.register_ifunc(BENCH_IFUNC)

    def make_frame(self, size: int) -> bytes:
        msg = self.ctx.msg_create(self.handle, bytearray(size))
        return bytes(msg.frame)

    def poll(self, buf):
        return self.ctx.poll_ifunc(buf)


class _AmSide:
    """One role's active-message machinery, mirroring _IfuncSide."""

    kind = "am"

    def __init__(self, poll_timeout: float = 5.0):
        self.counter = _Counter()
        self.table = AmHandlerTable(poll_timeout)
        self.table.register(AM_COUNTER_ID, lambda payload, args: self.counter.bump())

    def make_frame(self, size: int) -> bytes:
        return encode_am_frame(AM_COUNTER_ID, bytes(size))

    def poll(self, buf):
        return am_poll(self.table, buf)


def _make_side(cfg: BenchConfig, lib_dir: str, poll_timeout: float = 5.0):
    if cfg.mode == "ifunc":
        return _IfuncSide(lib_dir, cfg.trust_inline, poll_timeout)
    return _AmSide(poll_timeout)


def _poll_until_executed(side, buf, deadline_s: float = _ROUND_WAIT):
    """Poll one slot until a frame executed; raises on stall or error."""
    end = time.monotonic() + deadline_s
    while True:
        status = side.poll(buf)
        if status.executed:
            return status
        kind = status.kind.value
        if kind in ("no_message", "timeout"):
            if time.monotonic() > end:
                raise BenchError(f"no frame executed within {deadline_s:.0f}s ({kind})")
            continue
        raise BenchError(f"poll failed: {kind} ({status.reason})")


# -- loopback engines (both roles in one process) --


def _pingpong_loopback(cfg: BenchConfig, lib_dir: str) -> list[BenchRecord]:
    records = []
    for size in cfg.sizes:
        side = _make_side(cfg, lib_dir)
        samples: list[int] = []
        try:
            frame = side.make_frame(size)
            table = RegionTable()
            a = table.register("pp_a", len(frame), _RW)
            b = table.register("pp_b", len(frame), _RW)
            ep = LoopbackEndpoint(table)
            total = cfg.warmup + cfg.iters
            measured_ns = 0
            for i in range(total):
                t0 = time.perf_counter_ns()
                ep.put_nbi(frame, b.info.base, b.info.rkey)
                ep.flush()
                _poll_until_executed(side, b.backing)
                ep.put_nbi(frame, a.info.base, a.info.rkey)
                ep.flush()
                _poll_until_executed(side, a.backing)
                rtt = time.perf_counter_ns() - t0
                if i >= cfg.warmup:
                    samples.append(rtt // 2)
                    measured_ns += rtt
            if side.counter.value != 2 * total:
                raise BenchError(
                    f"conservation: executed {side.counter.value}, sent {2 * total}"
                )
            records.append(
                _make_record(cfg.mode, size, len(frame), samples, 2 * cfg.iters, measured_ns)
            )
        except Exception as err:
            records.append(_diagnostic_record(cfg.mode, size, FRAME_OVERHEAD + size, samples, err))
    return records


def _throughput_loopback(cfg: BenchConfig, lib_dir: str) -> list[BenchRecord]:
    records = []
    k = cfg.batch
    rounds = max(1, cfg.iters // k)
    for size in cfg.sizes:
        side = _make_side(cfg, lib_dir)
        samples: list[int] = []
        try:
            frame = side.make_frame(size)
            fs = len(frame)
            table = RegionTable()
            ring = table.register("tp_ring", fs * k, _RW)
            notify = table.register("tp_notify", 8, _RW)
            ep = LoopbackEndpoint(table)
            ring_view = memoryview(ring.backing)
            t_start = time.perf_counter_ns()
            for r in range(1, rounds + 1):
                r0 = time.perf_counter_ns()
                snapshot = notify.backing[0]
                for i in range(k):
                    ep.put_nbi(frame, ring.info.base + i * fs, ring.info.rkey)
                ep.flush()
                for i in range(k):  # target consumes the whole batch
                    _poll_until_executed(side, ring_view[i * fs : (i + 1) * fs])
                ep.put_nbi(struct.pack("<Q", r), notify.info.base, notify.info.rkey)
                ep.flush()
                wait_mem(notify.backing, 0, snapshot, deadline=_ROUND_WAIT)
                got = struct.unpack_from("<Q", notify.backing)[0]
                if got != r:
                    raise BenchError(f"round counter {got}, expected {r}")
                samples.append((time.perf_counter_ns() - r0) // k)
            elapsed = time.perf_counter_ns() - t_start
            if side.counter.value != rounds * k:
                raise BenchError(
                    f"conservation: executed {side.counter.value}, sent {rounds * k}"
                )
            records.append(_make_record(cfg.mode, size, fs, samples, rounds * k, elapsed))
        except Exception as err:
            records.append(_diagnostic_record(cfg.mode, size, FRAME_OVERHEAD + size, samples, err))
    return records


def _demo_loopback(cfg: BenchConfig, lib_dir: str, secret: bytes) -> str:
    host = standard_host_table()
    ctx = RuntimeContext(
        lib_dir=lib_dir,
        mode=Mode.TRUST_INLINE_CODE if cfg.trust_inline else Mode.REQUIRE_LOCAL_PACKAGE,
        host=host,
    )
    handle = ctx.register_ifunc("xorcodec")
    msg = ctx.msg_create(handle, bytearray(secret))
    if bytes(msg.frame[-1 - len(secret) : -1]) == secret:
        raise BenchError("payload left the source unmasked")
    table = RegionTable()
    rx = table.register("demo_rx", msg.frame_size, _RW)
    ep = LoopbackEndpoint(table)
    msg_send_nbix(ep, msg, rx.info.base, rx.info.rkey)
    ep.flush()
    out = bytearray(len(secret))
    status = ctx.poll_ifunc(rx.backing, target_args=out)
    if not status.executed:
        raise BenchError(f"demo poll failed: {status.kind.value} ({status.reason})")
    if bytes(out) != secret:
        raise BenchError("decoded bytes differ from the source args")
    return (
        f"xor demo: {len(secret)}-byte secret masked on the source, "
        f"decoded intact by the target (loopback)"
    )


# -- control channel --


def _send_json(fh, obj) -> None:
    fh.write((json.dumps(obj) + "\n").encode())
    fh.flush()


def _recv_json(fh):
    line = fh.readline()
    if not line:
        raise BenchError("control channel closed unexpectedly")
    msg = json.loads(line)
    if "error" in msg:
        raise BenchError(f"peer reported: {msg['error']}")
    return msg


def control_address(transport: str) -> tuple[str, int]:
    host, port = parse_address(transport)
    return host, port + 1


# -- TCP client engines (source role) --


class _ClientPlane:
    """The source's own put plane: reply/notify regions for the target."""

    def __init__(self, server_host: str, server_port: int):
        self.table = RegionTable()
        self.server = serve_regions(("0.0.0.0", 0), self.table)
        self.ctl_sock = socket.create_connection((server_host, server_port + 1), timeout=30.0)
        self.ctl = self.ctl_sock.makefile("rwb")
        local_ip = self.ctl_sock.getsockname()[0]
        self.advertised = f"{local_ip}:{self.server.address[1]}"

    def close(self):
        for closer in (self.ctl.close, self.ctl_sock.close, self.server.close):
            try:
                closer()
            except OSError:
                pass


def _pingpong_client(cfg: BenchConfig, lib_dir: str) -> list[BenchRecord]:
    host, port = parse_address(cfg.transport)
    side = _make_side(cfg, lib_dir)
    frames = {size: side.make_frame(size) for size in cfg.sizes}
    max_frame = max(len(f) for f in frames.values())

    plane = _ClientPlane(host, port)
    records = []
    try:
        rx = plane.table.register("pp_rx", max_frame, _RW)
        _send_json(
            plane.ctl,
            {
                "cmd": "pingpong",
                "mode": cfg.mode,
                "sizes": list(cfg.sizes),
                "iters": cfg.iters,
                "warmup": cfg.warmup,
                "inline": cfg.trust_inline,
                "max_frame": max_frame,
                "client_addr": plane.advertised,
            },
        )
        _recv_json(plane.ctl)  # ready
        with TcpEndpoint((host, port)) as ep:
            remote = ep.query_region("pp_rx")
            total = cfg.warmup + cfg.iters
            for size in cfg.sizes:
                frame = frames[size]
                samples: list[int] = []
                try:
                    measured_ns = 0
                    for i in range(total):
                        t0 = time.perf_counter_ns()
                        ep.put_nbi(frame, remote.base, remote.rkey)
                        ep.flush()
                        _poll_until_executed(side, rx.backing)
                        rtt = time.perf_counter_ns() - t0
                        if i >= cfg.warmup:
                            samples.append(rtt // 2)
                            measured_ns += rtt
                    records.append(
                        _make_record(
                            cfg.mode, size, len(frame), samples, 2 * cfg.iters, measured_ns
                        )
                    )
                except Exception as err:
                    records.append(
                        _diagnostic_record(cfg.mode, size, len(frame), samples, err)
                    )
                    raise  # lockstep with the server is broken; stop here
        done = _recv_json(plane.ctl)
        sent_total = (cfg.warmup + cfg.iters) * len(cfg.sizes)
        if done.get("executed") != sent_total:
            raise BenchError(
                f"conservation: target executed {done.get('executed')}, sent {sent_total}"
            )
        if side.counter.value != sent_total:
            raise BenchError(
                f"conservation: replies executed {side.counter.value}, expected {sent_total}"
            )
    except Exception as err:
        log.warning("ping-pong run ended early: %s", err)
    finally:
        plane.close()
    return records


def _throughput_client(cfg: BenchConfig, lib_dir: str) -> list[BenchRecord]:
    host, port = parse_address(cfg.transport)
    side = _make_side(cfg, lib_dir)
    frames = {size: side.make_frame(size) for size in cfg.sizes}
    k = cfg.batch
    rounds = max(1, cfg.iters // k)

    plane = _ClientPlane(host, port)
    records = []
    try:
        notify = plane.table.register("tp_notify", 8, _RW)
        _send_json(
            plane.ctl,
            {
                "cmd": "throughput",
                "mode": cfg.mode,
                "sizes": list(cfg.sizes),
                "frame_sizes": [len(frames[s]) for s in cfg.sizes],
                "rounds": rounds,
                "batch": k,
                "inline": cfg.trust_inline,
                "client_addr": plane.advertised,
            },
        )
        with TcpEndpoint((host, port)) as ep:
            for size in cfg.sizes:
                frame = frames[size]
                fs = len(frame)
                samples: list[int] = []
                try:
                    ready = _recv_json(plane.ctl)
                    if ready.get("size") != size:
                        raise BenchError(f"size skew: server at {ready.get('size')}, client at {size}")
                    ring = ep.query_region("tp_ring")
                    notify.backing[:] = bytes(8)
                    t_start = time.perf_counter_ns()
                    for r in range(1, rounds + 1):
                        r0 = time.perf_counter_ns()
                        snapshot = notify.backing[0]
                        for i in range(k):
                            ep.put_nbi(frame, ring.base + i * fs, ring.rkey)
                        ep.flush()
                        wait_mem(notify.backing, 0, snapshot, deadline=_ROUND_WAIT)
                        got = struct.unpack_from("<Q", notify.backing)[0]
                        if got != r:
                            raise BenchError(f"round counter {got}, expected {r}")
                        samples.append((time.perf_counter_ns() - r0) // k)
                    elapsed = time.perf_counter_ns() - t_start
                    records.append(
                        _make_record(cfg.mode, size, fs, samples, rounds * k, elapsed)
                    )
                except Exception as err:
                    records.append(_diagnostic_record(cfg.mode, size, fs, samples, err))
                    raise
        done = _recv_json(plane.ctl)
        sent_total = rounds * k * len(cfg.sizes)
        if done.get("executed") != sent_total:
            raise BenchError(
                f"conservation: target executed {done.get('executed')}, sent {sent_total}"
            )
    except Exception as err:
        log.warning("throughput run ended early: %s", err)
    finally:
        plane.close()
    return records


def _demo_client(cfg: BenchConfig, lib_dir: str, secret: bytes) -> str:
    host, port = parse_address(cfg.transport)
    ctx = RuntimeContext(
        lib_dir=lib_dir,
        mode=Mode.TRUST_INLINE_CODE if cfg.trust_inline else Mode.REQUIRE_LOCAL_PACKAGE,
        host=standard_host_table(),
    )
    handle = ctx.register_ifunc("xorcodec")
    msg = ctx.msg_create(handle, bytearray(secret))

    plane = _ClientPlane(host, port)
    try:
        out = plane.table.register("demo_out", len(secret), _RW)
        _send_json(
            plane.ctl,
            {
                "cmd": "demo",
                "n": len(secret),
                "frame_size": msg.frame_size,
                "inline": cfg.trust_inline,
                "client_addr": plane.advertised,
            },
        )
        _recv_json(plane.ctl)  # ready
        with TcpEndpoint((host, port)) as ep:
            info = ep.query_region("demo_rx")
            msg_send_nbix(ep, msg, info.base, info.rkey)
            ep.flush()
        _recv_json(plane.ctl)  # target decoded and pushed the bytes back
        if bytes(out.backing) != secret:
            raise BenchError("decoded bytes that came back differ from the secret")
        return (
            f"xor demo: {len(secret)}-byte secret masked on the source, decoded by the "
            f"target at {cfg.transport}, and pushed back intact"
        )
    finally:
        plane.close()


# -- server role --


def _serve_pingpong(cmd, table, lib_dir, trust_inline, ctl):
    cfg = BenchConfig(
        mode=cmd["mode"],
        sizes=tuple(cmd["sizes"]),
        iters=cmd["iters"],
        warmup=cmd["warmup"],
        trust_inline=bool(cmd.get("inline")) or trust_inline,
    )
    side = _make_side(cfg, lib_dir)
    rx = table.register("pp_rx", cmd["max_frame"], _RW)
    try:
        with TcpEndpoint(parse_address(cmd["client_addr"])) as back:
            _send_json(ctl, {"ready": True})
            client_rx = back.query_region("pp_rx")
            executed = 0
            total = cfg.warmup + cfg.iters
            for size in cfg.sizes:
                frame = side.make_frame(size)
                for _ in range(total):
                    _poll_until_executed(side, rx.backing)
                    executed += 1
                    back.put_nbi(frame, client_rx.base, client_rx.rkey)
                    back.flush()
            _send_json(ctl, {"ok": True, "executed": executed})
    finally:
        table.deregister("pp_rx")


def _serve_throughput(cmd, table, lib_dir, trust_inline, ctl):
    cfg = BenchConfig(
        mode=cmd["mode"],
        sizes=tuple(cmd["sizes"]),
        iters=max(1, cmd["rounds"] * cmd["batch"]),
        batch=cmd["batch"],
        trust_inline=bool(cmd.get("inline")) or trust_inline,
    )
    side = _make_side(cfg, lib_dir)
    rounds, k = cmd["rounds"], cmd["batch"]
    executed = 0
    with TcpEndpoint(parse_address(cmd["client_addr"])) as back:
        notify = back.query_region("tp_notify")
        for size, fs in zip(cfg.sizes, cmd["frame_sizes"]):
            ring = table.register("tp_ring", fs * k, _RW)
            try:
                _send_json(ctl, {"ready": True, "size": size})
                ring_view = memoryview(ring.backing)
                for r in range(1, rounds + 1):
                    for i in range(k):
                        _poll_until_executed(side, ring_view[i * fs : (i + 1) * fs])
                        executed += 1
                    back.put_nbi(struct.pack("<Q", r), notify.base, notify.rkey)
                    back.flush()
            finally:
                table.deregister("tp_ring")
        _send_json(ctl, {"ok": True, "executed": executed})


def _serve_demo(cmd, table, lib_dir, trust_inline, ctl):
    n = cmd["n"]
    host = standard_host_table()
    ctx = RuntimeContext(
        lib_dir=lib_dir,
        mode=Mode.TRUST_INLINE_CODE if (cmd.get("inline") or trust_inline) else Mode.REQUIRE_LOCAL_PACKAGE,
        host=host,
    )
    rx = table.register("demo_rx", cmd["frame_size"], _RW)
    try:
        with TcpEndpoint(parse_address(cmd["client_addr"])) as back:
            _send_json(ctl, {"ready": True})
            out_region = back.query_region("demo_out")
            out = bytearray(n)
            deadline = time.monotonic() + _ROUND_WAIT
            while True:
                status = ctx.poll_ifunc(rx.backing, target_args=out)
                if status.executed:
                    break
                if status.kind.value not in ("no_message", "timeout"):
                    raise BenchError(f"demo poll failed: {status.kind.value} ({status.reason})")
                if time.monotonic() > deadline:
                    raise BenchError("demo frame never arrived")
            back.put_nbi(out, out_region.base, out_region.rkey)
            back.flush()
            _send_json(ctl, {"ok": True})
    finally:
        table.deregister("demo_rx")


_COMMANDS = {
    "pingpong": _serve_pingpong,
    "throughput": _serve_throughput,
    "demo": _serve_demo,
}


def serve_bench(
    listen: str,
    *,
    lib_dir: str | None = None,
    trust_inline: bool = False,
    once: bool = False,
    allowed_mode: str = "both",
    ready_event=None,
) -> None:
    """Run the target role: put plane on `listen`, control on port + 1.

    Serves one client session at a time until interrupted (or exactly
    one when `once`). `allowed_mode` restricts which benchmark modes
    this target accepts. `ready_event.set()` fires when both listeners
    are accepting, for callers that start this in a thread.
    """
    lib = ensure_lib_dir(lib_dir)
    host, port = parse_address(listen)
    table = RegionTable()
    plane = serve_regions((host, port), table)
    ctl_listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        ctl_listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        ctl_listener.bind((host, plane.address[1] + 1))
        ctl_listener.listen(4)
        if ready_event is not None:
            ready_event.set()
        log.info("serving puts on %s:%d, control on %d", host, plane.address[1], plane.address[1] + 1)
        while True:
            conn, peer = ctl_listener.accept()
            log.info("control session from %s:%d", *peer[:2])
            ctl = conn.makefile("rwb")
            try:
                while True:
                    line = ctl.readline()
                    if not line:
                        break
                    cmd = json.loads(line)
                    handler = _COMMANDS.get(cmd.get("cmd"))
                    if handler is None:
                        _send_json(ctl, {"error": f"unknown command {cmd.get('cmd')!r}"})
                        continue
                    mode = cmd.get("mode", "ifunc")
                    if allowed_mode != "both" and mode != allowed_mode:
                        _send_json(ctl, {"error": f"this target only serves {allowed_mode} runs"})
                        continue
                    try:
                        handler(cmd, table, lib, trust_inline, ctl)
                    except Exception as err:  # report, keep serving
                        log.warning("command %s failed: %s", cmd.get("cmd"), err)
                        try:
                            _send_json(ctl, {"error": str(err)})
                        except (OSError, ValueError):
                            break
            finally:
                for closer in (ctl.close, conn.close):
                    try:
                        closer()
                    except OSError:
                        pass
            if once:
                break
    finally:
        ctl_listener.close()
        plane.close()


# -- public entry points --


def run_pingpong(cfg: BenchConfig) -> list[BenchRecord]:
    """One BenchRecord per size; one-way latency is half the round trip."""
    lib = ensure_lib_dir(cfg.lib_dir)
    if cfg.transport == "loopback":
        return _pingpong_loopback(cfg, lib)
    return _pingpong_client(cfg, lib)


def run_throughput(cfg: BenchConfig) -> list[BenchRecord]:
    """One BenchRecord per size; batched ring delivery with round counters."""
    lib = ensure_lib_dir(cfg.lib_dir)
    if cfg.transport == "loopback":
        return _throughput_loopback(cfg, lib)
    return _throughput_client(cfg, lib)


def run_demo_xor(cfg: BenchConfig, secret: bytes | None = None) -> str:
    """Round-trip a secret through the XOR codec; returns a summary line."""
    lib = ensure_lib_dir(cfg.lib_dir)
    if secret is None:
        secret = os.urandom(64)
    if cfg.transport == "loopback":
        return _demo_loopback(cfg, lib, secret)
    return _demo_client(cfg, lib, secret)
