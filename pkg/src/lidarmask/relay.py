"""Real-time UDP relay for masked, compressed sensor streams.

Wire protocol, one container unit per datagram::

    0x00 + stream header (21 bytes)
    0x01 + frame header (12 bytes) + compressed payload

There is no fragmentation, sequencing or retransmission: a lost datagram
costs exactly the packets of the frame it carried. Frames whose encoding
would exceed the MTU budget are split in half until they fit, and the
sender lowers its frame size for subsequent frames.
"""
from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable

from . import container
from .container import FrameHeader, StreamHeader
from .errors import FormatError, IntegrityError, LmcError, TruncationError
from .mask import apply_mask_batch, build_mask
from .pipeline import FramePipeline, PipelineConfig

log = logging.getLogger(__name__)

DGRAM_HEADER = 0
DGRAM_FRAME = 1
DEFAULT_FLUSH_INTERVAL = 0.1
DEFAULT_MTU_BUDGET = 60_000
MAX_DATAGRAM = 65535
_POLL = 0.02


def parse_endpoint(text: str, default_host: str = "0.0.0.0") -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = default_host, text
    return (host or default_host), int(port)


@dataclass
class RelayStats:
    packets_in: int = 0
    packets_out: int = 0
    packets_dropped: int = 0
    skipped: int = 0
    frames_sent: int = 0
    frames_dropped: int = 0
    frames_received: int = 0
    frames_corrupt: int = 0
    frames_before_header: int = 0
    headers: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    masking_time: float = 0.0
    codec_time: float = 0.0
    wall_time: float = 0.0

    @property
    def balanced(self) -> bool:
        """Sender ledger: every datagram in is sent, dropped or skipped."""
        return self.packets_in == self.packets_out + self.packets_dropped + self.skipped

    def to_dict(self) -> dict:
        return asdict(self)


def frame_datagram(frame: bytes) -> bytes:
    return bytes([DGRAM_FRAME]) + frame


def header_datagram(header: StreamHeader) -> bytes:
    return bytes([DGRAM_HEADER]) + header.to_bytes()


class RelaySender:
    """Receive raw sensor datagrams, mask, compress and forward frames.

    ``send`` replaces the outgoing socket write; tests use it to inject
    stalls and loss.
    """

    def __init__(self, listen: tuple[str, int], dest: tuple[str, int],
                 config: PipelineConfig | None = None,
                 flush_interval: float = DEFAULT_FLUSH_INTERVAL,
                 mtu_budget: int = DEFAULT_MTU_BUDGET,
                 send: Callable[[bytes], None] | None = None):
        self.config = config or PipelineConfig()
        self.dest = dest
        self.flush_interval = flush_interval
        self.mtu_budget = mtu_budget
        self.frame_size = self.config.frame_size
        self.stats = RelayStats()
        self.error: BaseException | None = None
        self._lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = None
        self.rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        self.rx.bind(listen)
        self.tx = None
        if send is None:
            self.tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.tx.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 1 << 22)
            send = lambda data: self.tx.sendto(data, self.dest)  # noqa: E731
        self._send_raw = send

    @property
    def address(self) -> tuple[str, int]:
        return self.rx.getsockname()

    def _send(self, data: bytes) -> None:
        with self._send_lock:
            self._send_raw(data)

    def request_header(self) -> None:
        self._send(header_datagram(self.config.header))
        with self._lock:
            self.stats.headers += 1

    def _encode(self, job):
        raw, count = job
        size = self.config.layout.packet_size
        t0 = time.perf_counter()
        out = []
        pending = [(raw, count)]
        while pending:
            chunk, n = pending.pop(0)
            frame = container.encode_frame(chunk, n, self.config.codec)
            if len(frame) + 1 > self.mtu_budget and n > 1:
                half = n // 2
                pending[:0] = [(chunk[:half * size], half), (chunk[half * size:], n - half)]
                with self._lock:
                    self.frame_size = max(1, min(self.frame_size, half))
                continue
            out.append((frame_datagram(frame), n))
        with self._lock:
            self.stats.codec_time += time.perf_counter() - t0
        return out

    def _emit(self, datagrams):
        for dgram, n in datagrams:
            self._send(dgram)
            with self._lock:
                self.stats.frames_sent += 1
                self.stats.packets_out += n
                self.stats.bytes_out += len(dgram)

    def _drop(self, job):
        with self._lock:
            self.stats.frames_dropped += 1
            self.stats.packets_dropped += job[1]

    def run(self) -> RelayStats:
        """Relay until :meth:`stop`; returns final statistics."""
        cfg = self.config
        mask = build_mask(cfg.layout, cfg.n)
        size = cfg.layout.packet_size
        start = time.perf_counter()
        pipe = FramePipeline(self._encode, self._emit, cfg.workers,
                             cfg.queue_capacity, cfg.overflow, self._drop)
        batch = bytearray()
        in_batch = 0
        deadline = None

        def flush():
            nonlocal batch, in_batch, deadline
            t0 = time.perf_counter()
            raw = apply_mask_batch(batch, mask)
            with self._lock:
                self.stats.masking_time += time.perf_counter() - t0
            pipe.submit((raw, in_batch))
            batch, in_batch, deadline = bytearray(), 0, None

        try:
            self.request_header()
            while not self._stop.is_set():
                wait = _POLL if deadline is None else \
                    min(_POLL, max(0.0, deadline - time.monotonic()))
                self.rx.settimeout(wait or 1e-4)
                try:
                    data = self.rx.recv(MAX_DATAGRAM)
                except socket.timeout:
                    data = None
                if data is not None:
                    with self._lock:
                        self.stats.packets_in += 1
                        self.stats.bytes_in += len(data)
                    if len(data) != size:
                        with self._lock:
                            self.stats.skipped += 1
                    else:
                        if not in_batch:
                            deadline = time.monotonic() + self.flush_interval
                        batch += data
                        in_batch += 1
                if in_batch and (in_batch >= self.frame_size
                                 or time.monotonic() >= deadline):
                    flush()
            if in_batch:
                flush()
            pipe.close()
        except (OSError, LmcError) as exc:
            log.error("relay sender stopped: %s", exc)
            self.error = exc
            pipe.abort(exc)
        finally:
            self.stats.wall_time = time.perf_counter() - start
        return self.stats

    def start(self) -> "RelaySender":
        self._thread = threading.Thread(target=self.run, name="lmc-relay-send", daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: float | None = None) -> RelayStats:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
        return self.stats

    def close(self) -> None:
        self.rx.close()
        if self.tx is not None:
            self.tx.close()


class RelayReceiver:
    """Decode relayed frames independently and hand packets to ``sink``."""

    def __init__(self, listen: tuple[str, int], sink: Callable[[bytes], None]):
        self.sink = sink
        self.header: StreamHeader | None = None
        self.stats = RelayStats()
        self._stop = threading.Event()
        self._thread = None
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        self.sock.bind(listen)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def handle_datagram(self, data: bytes) -> None:
        st = self.stats
        st.bytes_in += len(data)
        if not data:
            st.skipped += 1
            return
        kind, body = data[0], data[1:]
        if kind == DGRAM_HEADER:
            try:
                self.header = StreamHeader.from_bytes(body)
            except (FormatError, TruncationError):
                st.skipped += 1
                return
            st.headers += 1
            return
        if kind != DGRAM_FRAME or len(body) < container.FRAME_HEADER.size:
            st.skipped += 1
            return
        if self.header is None:
            st.frames_before_header += 1
            return
        fh = FrameHeader.from_bytes(body)
        payload = body[container.FRAME_HEADER.size:]
        index = st.frames_received + st.frames_corrupt
        try:
            if fh.packet_count == 0:
                raise IntegrityError("empty data frame", index)
            raw = container.decode_frame(fh, payload, self.header, index)
        except (IntegrityError, TruncationError) as exc:
            log.warning("dropping frame: %s", exc)
            st.frames_corrupt += 1
            return
        st.frames_received += 1
        size = self.header.packet_size
        for i in range(0, len(raw), size):
            self.sink(raw[i:i + size])
        st.packets_out += fh.packet_count
        st.bytes_out += len(raw)

    def run(self) -> RelayStats:
        start = time.perf_counter()
        self.sock.settimeout(_POLL)
        try:
            while not self._stop.is_set():
                try:
                    data = self.sock.recv(MAX_DATAGRAM)
                except socket.timeout:
                    continue
                self.stats.packets_in += 1
                self.handle_datagram(data)
        except OSError as exc:
            log.error("relay receiver stopped: %s", exc)
        finally:
            self.stats.wall_time = time.perf_counter() - start
        return self.stats

    def start(self) -> "RelayReceiver":
        self._thread = threading.Thread(target=self.run, name="lmc-relay-recv", daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: float | None = None) -> RelayStats:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
        return self.stats

    def close(self) -> None:
        self.sock.close()


def run_relay_sender(listen, dest, config: PipelineConfig | None = None,
                     stop: threading.Event | None = None, **kwargs) -> RelayStats:
    """Blocking sender; returns when ``stop`` is set."""
    sender = RelaySender(listen, dest, config, **kwargs)
    if stop is not None:
        sender._stop = stop
    try:
        return sender.run()
    finally:
        sender.close()


def run_relay_receiver(listen, sink: Callable[[bytes], None],
                       stop: threading.Event | None = None) -> RelayStats:
    receiver = RelayReceiver(listen, sink)
    if stop is not None:
        receiver._stop = stop
    try:
        return receiver.run()
    finally:
        receiver.close()
