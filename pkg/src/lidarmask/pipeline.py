"""Mask -> frame -> codec pipelines over files.

Masking is cheap and stays on the ingest thread. Frame compression fans out
to a pool of worker threads (the stdlib codecs and lz4 release the GIL) and
results are written strictly in submission order.
"""
from __future__ import annotations

import collections
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Callable

from . import container
from .codecs import CodecSettings
from .container import StreamHeader, StreamWriter
from .errors import LmcError, ParameterError, StructuralError
from .ingest import NOMINAL_INTERVAL_NS, PacketSource, PcapWriter, write_raw
from .mask import apply_mask_batch, build_mask, check_bits
from .metrics import CompressionReport, compression_report
from .packet import NOMINAL_PACKET_INTERVAL_S, PacketLayout, reference_layout

BLOCK = "block"
DROP_OLDEST = "drop-oldest"


@dataclass
class PipelineConfig:
    layout: PacketLayout = field(default_factory=reference_layout)
    n: int = 4
    codec: CodecSettings = field(default_factory=CodecSettings)
    frame_size: int = container.DEFAULT_FRAME_SIZE
    workers: int = 1
    queue_capacity: int = 8
    overflow: str = BLOCK

    def __post_init__(self):
        if not isinstance(self.codec, CodecSettings):
            self.codec = CodecSettings(self.codec)
        check_bits(self.n, self.layout)
        if self.frame_size < 1:
            raise ParameterError("frame_size must be at least 1")
        if self.workers < 1:
            raise ParameterError("worker count must be at least 1")
        if self.queue_capacity < 1:
            raise ParameterError("queue capacity must be at least 1")
        if self.overflow not in (BLOCK, DROP_OLDEST):
            raise ParameterError(f"unknown overflow policy {self.overflow!r}")

    @property
    def header(self) -> StreamHeader:
        return StreamHeader.for_layout(self.layout, self.n, self.codec.codec)


class FramePipeline:
    """Bounded work queue, ``workers`` encoder threads, one ordered emitter.

    ``encode(item)`` runs on a worker; ``emit(result)`` runs on the emitter
    thread in submission order. At most ``capacity`` items wait for a
    worker and at most ``workers`` finished results wait for emission, so
    memory stays bounded when ``emit`` stalls. With the drop-oldest policy a
    full queue discards its oldest waiting item and hands it to ``on_drop``.
    """

    def __init__(self, encode: Callable[[Any], Any], emit: Callable[[Any], None],
                 workers: int = 1, capacity: int = 8, overflow: str = BLOCK,
                 on_drop: Callable[[Any], None] | None = None):
        self._encode = encode
        self._emit = emit
        self._on_drop = on_drop
        self._capacity = capacity
        self._window = workers
        self._overflow = overflow
        self._cond = threading.Condition()
        self._waiting = collections.deque()
        self._done = {}
        self._dropped = set()
        self._next_seq = 0
        self._next_emit = 0
        self._closing = False
        self._error = None
        self._threads = [threading.Thread(target=self._work, daemon=True,
                                          name=f"lmc-worker-{i}") for i in range(workers)]
        self._threads.append(threading.Thread(target=self._emit_loop, daemon=True,
                                              name="lmc-emitter"))
        for t in self._threads:
            t.start()

    def _fail(self, exc):
        with self._cond:
            if self._error is None:
                self._error = exc
            self._cond.notify_all()

    def _raise_if_failed(self):
        if self._error is not None:
            raise self._error

    def submit(self, item) -> None:
        dropped = None
        with self._cond:
            self._raise_if_failed()
            if len(self._waiting) >= self._capacity:
                if self._overflow == DROP_OLDEST:
                    seq, dropped = self._waiting.popleft()
                    self._dropped.add(seq)
                else:
                    self._cond.wait_for(lambda: len(self._waiting) < self._capacity
                                        or self._error is not None)
                    self._raise_if_failed()
            self._waiting.append((self._next_seq, item))
            self._next_seq += 1
            self._cond.notify_all()
        if dropped is not None and self._on_drop is not None:
            self._on_drop(dropped)

    def _work(self):
        while True:
            with self._cond:
                self._cond.wait_for(lambda: self._waiting or self._closing
                                    or self._error is not None)
                if self._error is not None or not self._waiting:
                    return
                seq, item = self._waiting.popleft()
                self._cond.notify_all()
            try:
                result = self._encode(item)
            except BaseException as exc:  # surfaced to the submitter
                self._fail(exc)
                return
            with self._cond:
                self._cond.wait_for(lambda: seq < self._next_emit + self._window
                                    or self._error is not None)
                self._done[seq] = result
                self._cond.notify_all()

    def _emit_loop(self):
        while True:
            with self._cond:
                self._cond.wait_for(
                    lambda: self._next_emit in self._done
                    or self._next_emit in self._dropped
                    or (self._closing and self._next_emit == self._next_seq)
                    or self._error is not None)
                if self._error is not None:
                    return
                if self._next_emit in self._dropped:
                    self._dropped.discard(self._next_emit)
                    self._next_emit += 1
                    self._cond.notify_all()
                    continue
                if self._next_emit not in self._done:
                    return
                result = self._done.pop(self._next_emit)
            try:
                self._emit(result)
            except BaseException as exc:
                self._fail(exc)
                return
            with self._cond:
                self._next_emit += 1
                self._cond.notify_all()

    def close(self) -> None:
        """Drain everything submitted, stop the threads, re-raise failures."""
        with self._cond:
            self._closing = True
            self._cond.notify_all()
        for t in self._threads:
            t.join()
        self._raise_if_failed()

    def abort(self, exc: BaseException | None = None) -> None:
        self._fail(exc or LmcError("pipeline aborted"))
        for t in self._threads:
            t.join()

    @property
    def pending(self) -> int:
        with self._cond:
            return len(self._waiting)


class _Timer:
    """Thread-safe accumulator for codec time spent across workers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0.0

    def add(self, dt):
        with self._lock:
            self.total += dt


def _open(path_or_file, mode):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, mode), True


def compress_packets(packets, sink: BinaryIO, config: PipelineConfig):
    """Mask and frame an iterable of packet byte strings into ``sink``.

    Returns ``(packet_count, mask_time_s, codec_time_s, bytes_written)``.
    """
    mask = build_mask(config.layout, config.n)
    size = config.layout.packet_size
    writer = StreamWriter(sink, config.header)
    codec_timer = _Timer()
    settings = config.codec

    def encode(job):
        raw, count = job
        t0 = time.perf_counter()
        frame = container.encode_frame(raw, count, settings)
        codec_timer.add(time.perf_counter() - t0)
        return frame, count

    pipe = FramePipeline(encode, lambda r: writer.write_encoded(*r),
                         config.workers, config.queue_capacity, BLOCK)
    mask_time = 0.0
    count = 0
    batch = bytearray()
    in_batch = 0
    try:
        for packet in packets:
            if len(packet) != size:
                raise StructuralError(
                    f"packet {count} is {len(packet)} bytes, expected {size}")
            batch += packet
            in_batch += 1
            count += 1
            if in_batch == config.frame_size:
                t0 = time.perf_counter()
                raw = apply_mask_batch(batch, mask)
                mask_time += time.perf_counter() - t0
                pipe.submit((raw, in_batch))
                batch = bytearray()
                in_batch = 0
        if in_batch:
            t0 = time.perf_counter()
            raw = apply_mask_batch(batch, mask)
            mask_time += time.perf_counter() - t0
            pipe.submit((raw, in_batch))
    except BaseException as exc:
        pipe.abort(exc)
        raise
    pipe.close()
    writer.close()
    return count, mask_time, codec_timer.total, writer.bytes_written


def compress_capture(source, output, config: PipelineConfig | None = None,
                     input_format: str = "auto", port: int | None = 2368,
                     dataset_duration_s: float | None = None) -> CompressionReport:
    """Compress a pcap or raw capture into an ``.lmc`` container.

    ``output`` is a path (written atomically; removed on failure) or a
    writable binary file. Sensor time is the pcap capture span, or the
    nominal packet interval times the packet count for raw input and for
    captures too short to have a span.
    """
    config = config or PipelineConfig()
    src, close_src = _open(source, "rb")
    tmp_path = None
    try:
        packets = PacketSource(src, input_format, config.layout.packet_size, port)
        if isinstance(output, (str, os.PathLike)):
            out_dir = Path(output).resolve().parent
            fd, tmp_path = tempfile.mkstemp(prefix=".lmc-", dir=out_dir)
            sink = os.fdopen(fd, "wb")
        else:
            sink = output
        t0 = time.perf_counter()
        try:
            count, mask_time, codec_time, written = compress_packets(
                (p.payload for p in packets), sink, config)
        finally:
            if tmp_path is not None:
                sink.close()
        wall = time.perf_counter() - t0
        if tmp_path is not None:
            os.replace(tmp_path, output)
            tmp_path = None
    finally:
        if tmp_path is not None and os.path.exists(tmp_path):
            os.unlink(tmp_path)
        if close_src:
            src.close()
    duration = dataset_duration_s
    if duration is None:
        duration = packets.duration_s
        if duration <= 0:
            duration = max(count, 1) * NOMINAL_PACKET_INTERVAL_S
    return compression_report(
        max(count * config.layout.packet_size, 1), written, duration, wall,
        mask_time, codec_time, config.codec.codec, config.n, count)


@dataclass
class DecompressReport:
    header: StreamHeader
    packets: int
    frames: int
    lost_frames: list[int]
    truncated: bool
    errors: list[str]

    @property
    def ok(self) -> bool:
        return not self.errors


def decompress_capture(source, output, output_format: str = "pcap",
                       port: int = 2368, start_ns: int = 0) -> DecompressReport:
    """Expand a container back into a pcap or raw packet file.

    Intact frames are always written, even when others fail; failures are
    listed in the report. pcap timestamps are synthesised at the nominal
    packet interval from ``start_ns`` since the container carries none.
    """
    if output_format not in ("pcap", "raw"):
        raise ParameterError(f"unknown output format {output_format!r}")
    src, close_src = _open(source, "rb")
    try:
        rec = container.recover_stream(src)
    finally:
        if close_src:
            src.close()
    sink, close_sink = _open(output, "wb")
    try:
        packets = rec.packets
        if output_format == "pcap":
            writer = PcapWriter(sink, port)
            for i, p in enumerate(packets):
                writer.write(start_ns + i * NOMINAL_INTERVAL_NS, p)
        else:
            write_raw(packets, sink)
    finally:
        if close_sink:
            sink.close()
    return DecompressReport(rec.header, len(packets), len(rec.frames),
                            rec.lost_frames, rec.truncated, [str(e) for e in rec.errors])
