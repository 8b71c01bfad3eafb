"""``lmc`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 requested
codec not available.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import signal
import statistics
import sys
import threading
import time
from pathlib import Path

from . import container
from .codecs import CodecSettings, list_codecs, parse_codec
from .errors import CapabilityError, LmcError, ParameterError
from .ingest import PacketSource, PcapWriter
from .mask import apply_mask_batch, build_mask, check_bits
from .metrics import cells_to_csv, cells_to_json, error_stats, sweep
from .packet import NOMINAL_PACKET_INTERVAL_S, reference_layout
from .pipeline import BLOCK, DROP_OLDEST, PipelineConfig, compress_capture, decompress_capture
from .relay import RelayReceiver, RelaySender, parse_endpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CAPABILITY = 0, 1, 2, 3
BENCH_REPEATS = 3
BENCH_MIN_SECONDS = 1.0

log = logging.getLogger("lmc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _default_workers():
    env = os.environ.get("LMC_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"LMC_WORKERS must be an integer, got {env!r}")
    return 1


def _add_codec_opts(p, frame=True):
    p.add_argument("-n", "--bits", type=int, default=4, help="least-significant bits to zero")
    p.add_argument("--codec", default="lz4", help="store, deflate, bzip2, lzma or lz4")
    p.add_argument("--level", type=int, default=None, help="codec level (default: codec default)")
    if frame:
        p.add_argument("--frame-size", type=int, default=container.DEFAULT_FRAME_SIZE,
                       help="packets per frame")
        p.add_argument("--workers", type=int, default=None,
                       help="codec worker threads (default: $LMC_WORKERS or 1)")


def _add_input_opts(p):
    p.add_argument("--format", choices=("auto", "pcap", "raw"), default="auto",
                   help="input format (default: sniff magic bytes)")
    p.add_argument("--port", type=int, default=2368, help="UDP port filter for pcap input")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lmc", description="LiDAR packet LSB masking and compression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="mask and compress a capture into .lmc")
    p.add_argument("input")
    p.add_argument("output")
    _add_codec_opts(p)
    _add_input_opts(p)
    p.add_argument("--report", help="write a JSON compression report here")

    p = sub.add_parser("decompress", help="expand .lmc back into pcap or raw packets")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--format", choices=("pcap", "raw"), default=None,
                   help="output format (default: from extension, else pcap)")
    p.add_argument("--port", type=int, default=2368)
    p.add_argument("--report")

    p = sub.add_parser("analyze", help="error statistics of masking a capture")
    p.add_argument("input")
    p.add_argument("-n", "--bits", type=int, default=None)
    p.add_argument("--against", help=".lmc container holding the masked stream")
    _add_input_opts(p)
    p.add_argument("--report")

    p = sub.add_parser("sweep", help="error/size/time matrix over bits and codecs")
    p.add_argument("input")
    p.add_argument("--bits", type=_int_list, default=[0, 2, 4, 6, 8])
    p.add_argument("--codecs", default="store,deflate,bzip2,lzma,lz4")
    p.add_argument("--frame-size", type=int, default=container.DEFAULT_FRAME_SIZE)
    _add_input_opts(p)
    p.add_argument("--report", help="CSV (.csv) or JSON (anything else) output path")

    p = sub.add_parser("bench", help="timing runs, single worker and all workers")
    p.add_argument("input")
    p.add_argument("--bits", type=_int_list, default=[4])
    p.add_argument("--codecs", default="store,deflate,bzip2,lzma,lz4")
    p.add_argument("--frame-size", type=int, default=container.DEFAULT_FRAME_SIZE)
    p.add_argument("--workers", type=int, default=None,
                   help="size of the all-workers series (default: CPU count)")
    _add_input_opts(p)
    p.add_argument("--report")

    p = sub.add_parser("relay-send", help="relay sensor UDP packets as compressed frames")
    p.add_argument("--listen", default="0.0.0.0:2368")
    p.add_argument("--dest", required=True)
    _add_codec_opts(p)
    p.add_argument("--flush-ms", type=float, default=100.0)
    p.add_argument("--queue", type=int, default=8, help="queue capacity in frames")
    p.add_argument("--overflow", choices=(BLOCK, DROP_OLDEST), default=BLOCK)
    p.add_argument("--mtu", type=int, default=60_000, help="datagram size budget")
    p.add_argument("--duration", type=float, default=None, help="stop after seconds")
    p.add_argument("--report")

    p = sub.add_parser("relay-recv", help="receive relayed frames and write packets")
    p.add_argument("--listen", required=True)
    p.add_argument("output")
    p.add_argument("--format", choices=("pcap", "raw"), default=None)
    p.add_argument("--port", type=int, default=2368)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--report")
    return parser


def _settings(args) -> CodecSettings:
    codec = parse_codec(args.codec)
    if codec not in list_codecs():
        raise CapabilityError(f"codec {codec.name} is not available in this build")
    return CodecSettings(codec, args.level)


def _config(args, **extra) -> PipelineConfig:
    layout = reference_layout()
    check_bits(args.bits, layout)
    workers = args.workers if args.workers is not None else _default_workers()
    return PipelineConfig(layout=layout, n=args.bits, codec=_settings(args),
                          frame_size=args.frame_size, workers=workers, **extra)


def _write_report(path, payload) -> None:
    if path:
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _load(args):
    with open(args.input, "rb") as f:
        source = PacketSource(f, args.format, reference_layout().packet_size, args.port)
        packets = [p.payload for p in source]
    return packets, source


def _out_format(args):
    if args.format:
        return args.format
    return "raw" if Path(args.output).suffix.lower() in (".raw", ".bin") else "pcap"


def cmd_compress(args) -> int:
    config = _config(args)
    report = compress_capture(args.input, args.output, config, args.format, args.port)
    print(f"{report.packets} packets, {report.original_bytes} -> {report.compressed_bytes} "
          f"bytes (RFS {report.rfs:.1%}), RPT {report.rpt:.3f}", file=sys.stderr)
    _write_report(args.report, report.to_dict())
    return EXIT_OK


def cmd_decompress(args) -> int:
    report = decompress_capture(args.input, args.output, _out_format(args), args.port)
    print(f"{report.packets} packets from {report.frames} frames", file=sys.stderr)
    for err in report.errors:
        print(f"error: {err}", file=sys.stderr)
    _write_report(args.report, {
        "packets": report.packets, "frames": report.frames,
        "lost_frames": report.lost_frames, "truncated": report.truncated,
        "errors": report.errors, "masked_bits": report.header.masked_bits,
        "codec": report.header.codec.name.lower(),
    })
    return EXIT_OK if report.ok else EXIT_DATA


def cmd_analyze(args) -> int:
    layout = reference_layout()
    original, _ = _load(args)
    if args.against:
        with open(args.against, "rb") as f:
            header, it = container.read_stream(f)
            masked = list(it)
        n = header.masked_bits
    else:
        if args.bits is None:
            raise UsageError("analyze needs --bits or --against")
        check_bits(args.bits, layout)
        n = args.bits
        masked_buf = apply_mask_batch(b"".join(original), build_mask(layout, n))
        size = layout.packet_size
        masked = [masked_buf[i:i + size] for i in range(0, len(masked_buf), size)]
    stats = error_stats(original, masked, layout, n)
    print(f"n={n}: mean {stats.mean_mm:.3f} mm, std {stats.std_mm:.3f} mm, "
          f"max {stats.max_mm:.1f} mm (bound {stats.theoretical_max_mm:.1f} mm), "
          f"{stats.count} measurements, {stats.nulls_excluded} nulls excluded",
          file=sys.stderr)
    _write_report(args.report, {"n": n, **stats.__dict__})
    return EXIT_OK


def cmd_sweep(args) -> int:
    layout = reference_layout()
    for n in args.bits:
        check_bits(n, layout)
    codecs = [c for c in args.codecs.split(",") if c.strip()]
    for c in codecs:
        parse_codec(c)
    packets, source = _load(args)
    duration = source.duration_s
    if duration <= 0:
        duration = max(len(packets), 1) * NOMINAL_PACKET_INTERVAL_S
    cells = sweep(packets, layout, args.bits, codecs, duration, args.frame_size)
    for cell in cells:
        if cell.error:
            print(f"n={cell.n} {cell.codec}: {cell.error}", file=sys.stderr)
        else:
            print(f"n={cell.n:2d} {cell.codec:8s} RFS {cell.report.rfs:7.2%} "
                  f"RPT {cell.report.rpt:.3f} mean err {cell.errors.mean_mm:.2f} mm",
                  file=sys.stderr)
    if args.report:
        text = cells_to_csv(cells) if args.report.lower().endswith(".csv") \
            else cells_to_json(cells)
        Path(args.report).write_text(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    layout = reference_layout()
    for n in args.bits:
        check_bits(n, layout)
    codecs = [parse_codec(c) for c in args.codecs.split(",") if c.strip()]
    packets, source = _load(args)
    duration = source.duration_s
    if duration < BENCH_MIN_SECONDS:
        print(f"input covers {duration:.3f} s of sensor time; bench needs at least "
              f"{BENCH_MIN_SECONDS} s", file=sys.stderr)
        return EXIT_DATA
    all_workers = args.workers or os.cpu_count() or 1
    series = sorted({1, all_workers})
    rows = []
    raw = b"".join(packets)
    for n in args.bits:
        mask = build_mask(layout, n)
        times = []
        for _ in range(BENCH_REPEATS):
            t0 = time.perf_counter()
            apply_mask_batch(raw, mask)
            times.append(time.perf_counter() - t0)
        mean = statistics.fmean(times)
        rows.append({"n": n, "codec": "mask-only", "workers": 1, "wall_s": mean,
                     "mask_s": mean, "codec_s": 0.0,
                     "mask_us_per_packet": mean / len(packets) * 1e6,
                     "rpt": mean / duration, "rfs": 1.0})
        for workers in series:
            for codec in codecs:
                if codec not in list_codecs():
                    raise CapabilityError(f"codec {codec.name} is not available")
                config = PipelineConfig(layout=layout, n=n, codec=CodecSettings(codec),
                                        frame_size=args.frame_size, workers=workers)
                runs = [compress_capture(io.BytesIO(raw), io.BytesIO(), config, "raw",
                                         dataset_duration_s=duration)
                        for _ in range(BENCH_REPEATS)]
                rows.append({
                    "n": n, "codec": codec.name.lower(), "workers": workers,
                    "wall_s": statistics.fmean(r.processing_time_s for r in runs),
                    "mask_s": statistics.fmean(r.mask_time_s for r in runs),
                    "codec_s": statistics.fmean(r.codec_time_s for r in runs),
                    "mask_us_per_packet": statistics.fmean(
                        r.mask_time_s for r in runs) / len(packets) * 1e6,
                    "rpt": statistics.fmean(r.rpt for r in runs),
                    "rfs": runs[0].rfs,
                })
    for r in rows:
        print(f"n={r['n']} {r['codec']:9s} workers={r['workers']:<3d} "
              f"RPT {r['rpt']:.4f} mask {r['mask_us_per_packet']:.2f} us/packet",
              file=sys.stderr)
    _write_report(args.report, {"packets": len(packets), "duration_s": duration,
                                "repeats": BENCH_REPEATS, "rows": rows})
    return EXIT_OK


def _stop_event(duration):
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGINT, handler)
        signal.signal(signal.SIGTERM, handler)
    if duration is not None:
        timer = threading.Timer(duration, stop.set)
        timer.daemon = True
        timer.start()
    return stop


def cmd_relay_send(args) -> int:
    config = _config(args, queue_capacity=args.queue, overflow=args.overflow)
    sender = RelaySender(parse_endpoint(args.listen), parse_endpoint(args.dest, "127.0.0.1"),
                         config, flush_interval=args.flush_ms / 1000.0,
                         mtu_budget=args.mtu)
    stop = _stop_event(args.duration)
    sender.start()
    try:
        stop.wait()
    finally:
        stats = sender.stop()
        sender.close()
    print(f"in {stats.packets_in} out {stats.packets_out} frames {stats.frames_sent} "
          f"dropped {stats.frames_dropped}", file=sys.stderr)
    _write_report(args.report, stats.to_dict())
    return EXIT_OK if sender.error is None else EXIT_DATA


def cmd_relay_recv(args) -> int:
    fmt = _out_format(args)
    with open(args.output, "wb") as out:
        if fmt == "pcap":
            writer = PcapWriter(out, args.port)
            t0 = time.time_ns()
            sink = lambda p: writer.write(time.time_ns() - t0, p)  # noqa: E731
        else:
            sink = out.write
        receiver = RelayReceiver(parse_endpoint(args.listen), sink)
        stop = _stop_event(args.duration)
        receiver.start()
        try:
            stop.wait()
        finally:
            stats = receiver.stop()
            receiver.close()
    print(f"frames {stats.frames_received} corrupt {stats.frames_corrupt} "
          f"packets {stats.packets_out}", file=sys.stderr)
    _write_report(args.report, stats.to_dict())
    return EXIT_OK


COMMANDS = {
    "compress": cmd_compress, "decompress": cmd_decompress, "analyze": cmd_analyze,
    "sweep": cmd_sweep, "bench": cmd_bench, "relay-send": cmd_relay_send,
    "relay-recv": cmd_relay_recv,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"lmc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"lmc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapabilityError as exc:
        print(f"lmc: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (LmcError, OSError) as exc:
        print(f"lmc: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
