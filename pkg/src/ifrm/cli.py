"""Command-line entry points: the package tool and the benchmark harness.

`iftool` assembles, disassembles, and fingerprints package files.
`ifrm-bench` runs the microbenchmarks (ping-pong latency, batched
throughput), serves the target role, runs the XOR round-trip demo, and
renders report figures from a results CSV.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .asm import AsmError, assemble, disassemble
from .bench import (
    DEFAULT_SWEEP,
    BenchConfig,
    BenchError,
    run_demo_xor,
    run_pingpong,
    run_throughput,
    serve_bench,
    write_csv,
)
from .vm import MalformedPackage, package_digest


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


# -- iftool --


def iftool_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="iftool", description="Assemble, disassemble, and fingerprint packages."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_asm = sub.add_parser("asm", help="assemble a .ifasm source into a package file")
    p_asm.add_argument("input")
    p_asm.add_argument("-o", "--output", help="output path (default: source with .ifn suffix)")

    p_dis = sub.add_parser("dis", help="disassemble a package file")
    p_dis.add_argument("input")
    p_dis.add_argument("-o", "--output", help="output path (default: stdout)")

    p_digest = sub.add_parser("digest", help="print the SHA-256 of a package file")
    p_digest.add_argument("input")

    args = parser.parse_args(argv)
    try:
        data = open(args.input, "rb").read()
    except OSError as err:
        return _fail(str(err))

    if args.command == "asm":
        try:
            package = assemble(data.decode("utf-8"))
        except (AsmError, UnicodeDecodeError) as err:
            return _fail(str(err))
        out = args.output or os.path.splitext(args.input)[0] + ".ifn"
        try:
            with open(out, "wb") as fh:
                fh.write(package)
        except OSError as err:
            return _fail(str(err))
        print(f"{out}: {len(package)} bytes")
        return 0

    if args.command == "dis":
        try:
            text = disassemble(data)
        except (MalformedPackage, ValueError) as err:
            return _fail(str(err))
        if args.output:
            try:
                with open(args.output, "w") as fh:
                    fh.write(text)
            except OSError as err:
                return _fail(str(err))
        else:
            sys.stdout.write(text)
        return 0

    try:  # digest: refuse to fingerprint bytes that do not parse
        from .vm import parse_package

        parse_package(data)
    except MalformedPackage as err:
        return _fail(str(err))
    print(package_digest(data).hex())
    return 0


# -- ifrm-bench --


def parse_sizes(spec: str) -> tuple[int, ...]:
    """Parse a size sweep: 'A..B' (powers of two), 'a,b,c', or one int."""
    if ".." in spec:
        lo_text, hi_text = spec.split("..", 1)
        lo, hi = int(lo_text), int(hi_text)
        sizes = tuple(1 << i for i in range(31) if lo <= 1 << i <= hi)
        if not sizes:
            raise ValueError(f"no powers of two in [{lo}, {hi}]")
        return sizes
    if "," in spec:
        return tuple(int(part) for part in spec.split(",") if part.strip())
    return (int(spec),)


def _add_common(parser, with_batch: bool) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--connect", metavar="HOST:PORT", help="target's put-plane address")
    group.add_argument("--loopback", action="store_true", help="run both roles in-process")
    parser.add_argument("--mode", choices=("ifunc", "am", "both"), default="both")
    parser.add_argument("--sizes", default=None, help="payload sizes: A..B, a,b,c, or one int")
    parser.add_argument("--iters", type=int, default=None)
    parser.add_argument("--warmup", type=int, default=None)
    if with_batch:
        parser.add_argument("--batch", type=int, default=64, help="frames per round")
    parser.add_argument("--out", default="results.csv", help="CSV output path")
    parser.add_argument("--no-figures", action="store_true", help="skip rendering figures")
    parser.add_argument("--trust-inline", action="store_true",
                        help="carry code inline and accept inline code")
    parser.add_argument("--lib-dir", default=None, help="package directory (default: IFUNC_LIB_DIR)")


def _run_benchmark(args, runner, default_iters: int, with_batch: bool) -> int:
    sizes = parse_sizes(args.sizes) if args.sizes else DEFAULT_SWEEP
    iters = args.iters if args.iters is not None else default_iters
    warmup = args.warmup if args.warmup is not None else max(1, iters // 10)
    modes = ("ifunc", "am") if args.mode == "both" else (args.mode,)
    transport = "loopback" if args.loopback else args.connect

    records = []
    for mode in modes:
        cfg = BenchConfig(
            mode=mode,
            transport=transport,
            sizes=sizes,
            iters=iters,
            warmup=warmup,
            batch=args.batch if with_batch else 64,
            trust_inline=args.trust_inline,
            lib_dir=args.lib_dir,
        )
        records.extend(runner(cfg))
    write_csv(records, args.out)
    print(f"{args.out}: {len(records)} rows")
    if not args.no_figures:
        from .plotting import render_report

        for path in render_report(args.out):
            print(path)
    bad = [r for r in records if r.msgs_per_sec == 0.0]
    if bad:
        print(f"warning: {len(bad)} size points aborted early (see log)", file=sys.stderr)
        return 1
    return 0


def bench_main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="ifrm-bench", description="Latency and throughput microbenchmarks."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the target role")
    p_serve.add_argument("--listen", required=True, metavar="HOST:PORT")
    p_serve.add_argument("--mode", choices=("ifunc", "am", "both"), default="both",
                         help="restrict which benchmark modes this target accepts")
    p_serve.add_argument("--trust-inline", action="store_true")
    p_serve.add_argument("--lib-dir", default=None)
    p_serve.add_argument("--once", action="store_true", help="exit after one client session")

    p_lat = sub.add_parser("latency", help="ping-pong one-way latency")
    _add_common(p_lat, with_batch=False)

    p_tp = sub.add_parser("throughput", help="batched ring-buffer message rate")
    _add_common(p_tp, with_batch=True)

    p_demo = sub.add_parser("demo-xor", help="round-trip a secret through the XOR codec")
    demo_group = p_demo.add_mutually_exclusive_group(required=True)
    demo_group.add_argument("--connect", metavar="HOST:PORT")
    demo_group.add_argument("--loopback", action="store_true")
    p_demo.add_argument("--trust-inline", action="store_true")
    p_demo.add_argument("--lib-dir", default=None)

    p_report = sub.add_parser("report", help="render figures from a results CSV")
    p_report.add_argument("--csv", required=True)
    p_report.add_argument("--out-dir", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            serve_bench(
                args.listen,
                lib_dir=args.lib_dir,
                trust_inline=args.trust_inline,
                once=args.once,
                allowed_mode=args.mode,
            )
            return 0
        if args.command == "latency":
            return _run_benchmark(args, run_pingpong, default_iters=1000, with_batch=False)
        if args.command == "throughput":
            return _run_benchmark(args, run_throughput, default_iters=10240, with_batch=True)
        if args.command == "demo-xor":
            cfg = BenchConfig(
                transport="loopback" if args.loopback else args.connect,
                sizes=(64,),
                trust_inline=args.trust_inline,
                lib_dir=args.lib_dir,
            )
            print(run_demo_xor(cfg))
            return 0
        from .plotting import render_report

        for path in render_report(args.csv, args.out_dir):
            print(path)
        return 0
    except KeyboardInterrupt:
        return 130
    except (BenchError, ValueError, OSError) as err:
        return _fail(str(err))
