"""The ``.lmc`` container: a stream header followed by independent frames.

Layout, all integers little-endian::

    stream header (21 bytes)
        magic        4  b"LMC1"
        version      1  1
        codec        1  CodecId
        masked_bits  1  n
        packet_size  2
        step_size_um 4  step size in micrometres
        layout_hash  8
    frame header (12 bytes), then compressed_len payload bytes
        packet_count   4
        compressed_len 4
        checksum       4  CRC-32 of the compressed payload
    terminal frame: packet_count = 0, compressed_len = 0, checksum = 0

Each frame's payload is the codec output for ``packet_count`` concatenated
packets, so any frame can be decoded from the stream header alone.
"""
from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

import numpy as np

from . import codecs
from .codecs import CodecId, CodecSettings
from .errors import (FormatError, IntegrityError, LmcError, StructuralError,
                     TruncationError)
from .packet import PacketLayout

MAGIC = b"LMC1"
VERSION = 1
STREAM_HEADER = struct.Struct("<4sBBBHI8s")
FRAME_HEADER = struct.Struct("<III")
TERMINAL_FRAME = FRAME_HEADER.pack(0, 0, 0)
DEFAULT_FRAME_SIZE = 100


@dataclass(frozen=True)
class StreamHeader:
    codec: CodecId
    masked_bits: int
    packet_size: int
    step_size_um: int
    layout_hash: bytes
    version: int = VERSION

    @classmethod
    def for_layout(cls, layout: PacketLayout, n: int, codec) -> "StreamHeader":
        return cls(codecs.parse_codec(codec), n, layout.packet_size,
                   layout.step_size_um, layout.layout_hash)

    @property
    def step_size_mm(self) -> float:
        return self.step_size_um / 1000.0

    @property
    def settings(self) -> CodecSettings:
        return CodecSettings(self.codec)

    def to_bytes(self) -> bytes:
        return STREAM_HEADER.pack(MAGIC, self.version, int(self.codec),
                                  self.masked_bits, self.packet_size,
                                  self.step_size_um, self.layout_hash)

    @classmethod
    def from_bytes(cls, data) -> "StreamHeader":
        if len(data) < STREAM_HEADER.size:
            if bytes(data[:len(MAGIC)]) != MAGIC[:len(data)]:
                raise FormatError("not an LMC stream (bad magic)")
            raise TruncationError("stream header is incomplete")
        magic, version, codec, n, size, step_um, lhash = STREAM_HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError("not an LMC stream (bad magic)")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        try:
            codec = CodecId(codec)
        except ValueError:
            raise FormatError(f"unknown codec id {codec}") from None
        if size == 0:
            raise FormatError("packet_size is zero")
        return cls(codec, n, size, step_um, lhash, version)


@dataclass(frozen=True)
class FrameHeader:
    packet_count: int
    compressed_len: int
    checksum: int

    @property
    def is_terminal(self) -> bool:
        return self.packet_count == 0 and self.compressed_len == 0

    def to_bytes(self) -> bytes:
        return FRAME_HEADER.pack(self.packet_count, self.compressed_len, self.checksum)

    @classmethod
    def from_bytes(cls, data, offset=0) -> "FrameHeader":
        return cls(*FRAME_HEADER.unpack_from(data, offset))


def encode_frame(raw: bytes, packet_count: int, settings: CodecSettings) -> bytes:
    """Compress one frame's worth of concatenated packets, header included."""
    payload = codecs.compress(raw, settings)
    return FrameHeader(packet_count, len(payload), zlib.crc32(payload)).to_bytes() + payload


def decode_frame(header: FrameHeader, payload, stream: StreamHeader,
                 index: int | None = None) -> bytes:
    """Check and decompress one frame payload; returns the packet bytes."""
    if len(payload) != header.compressed_len:
        raise TruncationError(f"frame {index}: payload cut short")
    if zlib.crc32(payload) != header.checksum:
        raise IntegrityError("checksum mismatch", index)
    expected = header.packet_count * stream.packet_size
    try:
        return codecs.decompress(payload, stream.settings, expected)
    except IntegrityError as exc:
        raise IntegrityError(str(exc), index) from exc
    except TruncationError as exc:
        # the frame is complete on the wire, so an early codec EOF is corruption
        raise IntegrityError(str(exc), index) from exc


def split_packets(raw: bytes, packet_size: int) -> list[bytes]:
    return [raw[i:i + packet_size] for i in range(0, len(raw), packet_size)]


class StreamWriter:
    """Incrementally write a container to a binary sink."""

    def __init__(self, sink: BinaryIO, header: StreamHeader):
        self.sink = sink
        self.header = header
        self.frames = 0
        self.packets = 0
        self.bytes_written = 0
        self.closed = False
        self._write(header.to_bytes())

    def _write(self, data):
        self.sink.write(data)
        self.bytes_written += len(data)

    def write_encoded(self, frame: bytes, packet_count: int) -> None:
        """Append a frame already produced by :func:`encode_frame`."""
        if packet_count < 1:
            raise StructuralError("a data frame carries at least one packet")
        self._write(frame)
        self.frames += 1
        self.packets += packet_count

    def write_frame(self, raw: bytes, packet_count: int | None = None) -> None:
        size = self.header.packet_size
        if len(raw) % size:
            raise StructuralError(f"frame of {len(raw)} bytes is not whole packets")
        count = len(raw) // size if packet_count is None else packet_count
        self.write_encoded(encode_frame(raw, count, self.header.settings), count)

    def close(self) -> None:
        if not self.closed:
            self._write(TERMINAL_FRAME)
            self.closed = True


def write_stream(packets, layout: PacketLayout, n: int, settings: CodecSettings,
                 frame_size: int = DEFAULT_FRAME_SIZE, sink: BinaryIO | None = None):
    """Frame and compress already-masked packets.

    Returns the container bytes, or the number of bytes written when a
    ``sink`` is given.
    """
    if frame_size < 1:
        raise StructuralError("frame_size must be at least 1")
    out = io.BytesIO() if sink is None else sink
    header = StreamHeader.for_layout(layout, n, settings.codec)
    writer = StreamWriter(out, header)
    batch = []
    for p in packets:
        if len(p) != layout.packet_size:
            raise StructuralError(
                f"packet is {len(p)} bytes, layout expects {layout.packet_size}")
        batch.append(p)
        if len(batch) == frame_size:
            writer.write_frame(b"".join(batch), len(batch))
            batch = []
    if batch:
        writer.write_frame(b"".join(batch), len(batch))
    writer.close()
    return out.getvalue() if sink is None else writer.bytes_written


# -- reading ------------------------------------------------------------------

def _read_exact(src: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = src.read(n)
        if not chunk:
            break
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def _as_stream(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(source)
    return source


def read_header(src: BinaryIO) -> StreamHeader:
    return StreamHeader.from_bytes(_read_exact(src, STREAM_HEADER.size))


def iter_frames(src: BinaryIO, header: StreamHeader) -> Iterator[bytes]:
    """Yield the decoded bytes of each frame, streaming from ``src``.

    Stops cleanly at the terminal frame; raises on the first bad frame.
    """
    index = 0
    while True:
        raw_header = _read_exact(src, FRAME_HEADER.size)
        if len(raw_header) < FRAME_HEADER.size:
            raise TruncationError(
                f"stream ends before frame {index} (no terminal frame)")
        fh = FrameHeader.from_bytes(raw_header)
        if fh.is_terminal:
            if fh.checksum != 0:
                raise IntegrityError("damaged terminal frame", index)
            return
        payload = _read_exact(src, fh.compressed_len)
        if len(payload) < fh.compressed_len and _crc_prefix(payload, fh.checksum):
            # the real payload is all here; the length field was damaged
            raise IntegrityError("compressed length field damaged", index)
        yield decode_frame(fh, payload, header, index)
        index += 1


def _crc_prefix(data: bytes, checksum: int) -> bool:
    """True if some prefix of ``data`` has CRC-32 ``checksum``."""
    crc = 0
    if crc == checksum:
        return True
    view = memoryview(data)
    for i in range(len(view)):
        crc = zlib.crc32(view[i:i + 1], crc)
        if crc == checksum:
            return True
    return False


def read_stream(source) -> tuple[StreamHeader, Iterator[bytes]]:
    """Parse the header eagerly and return a lazy packet iterator.

    Errors in frames surface from the iterator after every earlier packet
    has been yielded.
    """
    src = _as_stream(source)
    header = read_header(src)

    def packets():
        for raw in iter_frames(src, header):
            yield from split_packets(raw, header.packet_size)

    return header, packets()


@dataclass
class Recovery:
    header: StreamHeader
    frames: list[tuple[int, list[bytes]]] = field(default_factory=list)
    errors: list[LmcError] = field(default_factory=list)
    truncated: bool = False

    @property
    def packets(self) -> list[bytes]:
        return [p for _, frame in self.frames for p in frame]

    @property
    def lost_frames(self) -> list[int]:
        return [e.frame_index for e in self.errors
                if isinstance(e, IntegrityError) and e.frame_index is not None]

    @property
    def ok(self) -> bool:
        return not self.errors


def _valid_frame_at(buf, pos: int, header: StreamHeader) -> bool:
    if pos + FRAME_HEADER.size > len(buf):
        return False
    fh = FrameHeader.from_bytes(buf, pos)
    end = pos + FRAME_HEADER.size + fh.compressed_len
    if fh.is_terminal:
        return fh.checksum == 0 and end == len(buf)
    if fh.packet_count == 0 or fh.compressed_len == 0 or end > len(buf):
        return False
    return zlib.crc32(buf[pos + FRAME_HEADER.size:end]) == fh.checksum


def _near_terminal(fh: FrameHeader) -> bool:
    """A terminal frame hit by a single-byte error keeps two zero fields.

    Data frame headers have a nonzero count and length.
    """
    return sum(1 for v in (fh.packet_count, fh.compressed_len, fh.checksum) if v) <= 1


def _resync(buf, start: int, header: StreamHeader) -> int | None:
    """First offset at or after ``start`` holding a verifiable frame."""
    tail = np.frombuffer(buf, np.uint8)[start:].astype(np.uint64)
    if tail.size < FRAME_HEADER.size:
        return None
    # little-endian u32 at every offset, for the count and length fields
    words = tail[:-3] | tail[1:-2] << 8 | tail[2:-1] << 16 | tail[3:] << 24
    offsets = np.arange(tail.size - FRAME_HEADER.size + 1)
    count, clen = words[offsets], words[offsets + 4]
    fits = offsets + FRAME_HEADER.size + clen <= tail.size
    terminal = (count == 0) & (clen == 0) & (offsets + FRAME_HEADER.size == tail.size)
    for off in np.flatnonzero(((count > 0) & (clen > 0) & fits) | terminal):
        if _valid_frame_at(buf, start + int(off), header):
            return start + int(off)
    return None


def recover_stream(source) -> Recovery:
    """Decode every intact frame, recording (not raising) per-frame errors.

    A frame that fails its checksum or decode is reported with its index and
    skipped. If its length field is damaged, reading resumes at the next
    offset holding a frame whose CRC verifies. A missing terminal frame
    marks the result as truncated.
    """
    buf = source if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    buf = memoryview(buf)
    header = StreamHeader.from_bytes(buf)
    rec = Recovery(header)
    pos = STREAM_HEADER.size
    index = 0
    while True:
        if pos + FRAME_HEADER.size > len(buf):
            rec.truncated = True
            rec.errors.append(TruncationError(
                f"stream ends before frame {index} (no terminal frame)"))
            return rec
        fh = FrameHeader.from_bytes(buf, pos)
        if fh.is_terminal and fh.checksum == 0:
            return rec
        end = pos + FRAME_HEADER.size + fh.compressed_len
        try:
            if fh.packet_count == 0:
                raise IntegrityError("empty data frame", index)
            if end > len(buf):
                raise TruncationError(f"stream ends inside frame {index}")
            raw = decode_frame(fh, buf[pos + FRAME_HEADER.size:end], header, index)
        except (IntegrityError, TruncationError) as exc:
            nxt = end if end <= len(buf) and _valid_frame_at(buf, end, header) \
                else _resync(buf, pos + 1, header)
            if nxt is None:
                if pos + FRAME_HEADER.size == len(buf) and _near_terminal(fh):
                    rec.errors.append(IntegrityError("damaged terminal frame", index))
                elif isinstance(exc, TruncationError):
                    rec.truncated = True
                    rec.errors.append(exc)
                else:
                    rec.errors.append(exc)
                    rec.truncated = True
                    rec.errors.append(TruncationError(
                        f"no intact frame or terminal marker after frame {index}"))
                return rec
            if not isinstance(exc, IntegrityError):
                # an intact frame follows, so the length field was wrong
                exc = IntegrityError("compressed length field damaged", index)
            rec.errors.append(exc)
            pos = nxt
        else:
            rec.frames.append((index, split_packets(raw, header.packet_size)))
            pos = end
        index += 1
