"""Lossless codec backends behind one compress/decompress interface.

Wire format per codec, so frames can be decoded with stock tools:

=========  ==============================================================
STORE      the bytes themselves
DEFLATE    gzip member (RFC 1952: deflate, CRC-32, ISIZE), mtime 0
BZIP2      standard ``.bz2`` stream
LZMA       ``.xz`` container with CRC-64 check
LZ4        LZ4 frame format with content checksum and content size
=========  ==============================================================
"""
from __future__ import annotations

import bz2
import enum
import gzip
import lzma
import zlib
from dataclasses import dataclass

from .errors import CapabilityError, IntegrityError, ParameterError, TruncationError

try:
    import lz4.frame as lz4frame
except ImportError:  # pragma: no cover
    lz4frame = None


class CodecId(enum.IntEnum):
    STORE = 0
    DEFLATE = 1
    BZIP2 = 2
    LZMA = 3
    LZ4 = 4


_ALIASES = {
    "store": CodecId.STORE, "none": CodecId.STORE, "null": CodecId.STORE,
    "deflate": CodecId.DEFLATE, "zlib": CodecId.DEFLATE, "gzip": CodecId.DEFLATE,
    "bzip2": CodecId.BZIP2, "bz2": CodecId.BZIP2,
    "lzma": CodecId.LZMA, "xz": CodecId.LZMA,
    "lz4": CodecId.LZ4,
}


def parse_codec(name) -> CodecId:
    if isinstance(name, CodecId):
        return name
    try:
        return _ALIASES[str(name).strip().lower()]
    except KeyError:
        raise ParameterError(f"unknown codec {name!r}") from None


@dataclass(frozen=True)
class CodecInfo:
    codec: CodecId
    streaming: bool
    min_level: int | None
    max_level: int | None
    default_level: int | None


# levels follow each library's own default
_INFO = {
    CodecId.STORE: CodecInfo(CodecId.STORE, True, None, None, None),
    CodecId.DEFLATE: CodecInfo(CodecId.DEFLATE, True, 0, 9, 6),
    CodecId.BZIP2: CodecInfo(CodecId.BZIP2, True, 1, 9, 9),
    CodecId.LZMA: CodecInfo(CodecId.LZMA, True, 0, 9, 6),
    CodecId.LZ4: CodecInfo(CodecId.LZ4, True, 0, 16, 0),
}


def is_available(codec: CodecId) -> bool:
    return codec != CodecId.LZ4 or lz4frame is not None


def list_codecs() -> dict[CodecId, CodecInfo]:
    return {c: info for c, info in _INFO.items() if is_available(c)}


@dataclass(frozen=True)
class CodecSettings:
    codec: CodecId = CodecId.LZ4
    level: int | None = None  # None means the codec's default

    def __post_init__(self):
        object.__setattr__(self, "codec", parse_codec(self.codec))
        info = _INFO[self.codec]
        if self.level is not None:
            if info.min_level is None:
                raise ParameterError(f"{self.codec.name} takes no level")
            if not info.min_level <= self.level <= info.max_level:
                raise ParameterError(
                    f"{self.codec.name} level {self.level} outside "
                    f"[{info.min_level}, {info.max_level}]")

    @property
    def effective_level(self):
        return _INFO[self.codec].default_level if self.level is None else self.level


def _require(codec: CodecId) -> None:
    if not is_available(codec):
        raise CapabilityError(f"codec {codec.name} is not available in this build")


def compress(data, settings: CodecSettings) -> bytes:
    codec = settings.codec
    _require(codec)
    level = settings.effective_level
    if codec == CodecId.STORE:
        return bytes(data)
    if codec == CodecId.DEFLATE:
        return gzip.compress(data, level, mtime=0)
    if codec == CodecId.BZIP2:
        return bz2.compress(data, level)
    if codec == CodecId.LZMA:
        return lzma.compress(data, format=lzma.FORMAT_XZ, check=lzma.CHECK_CRC64,
                             preset=level)
    return lz4frame.compress(data, compression_level=level,
                             content_checksum=True, store_size=True)


def _decompressor(codec: CodecId):
    if codec == CodecId.DEFLATE:
        return zlib.decompressobj(wbits=31), zlib.error
    if codec == CodecId.BZIP2:
        return bz2.BZ2Decompressor(), OSError
    if codec == CodecId.LZMA:
        return lzma.LZMADecompressor(format=lzma.FORMAT_XZ), lzma.LZMAError
    return lz4frame.LZ4FrameDecompressor(), RuntimeError


def decompress(data, settings: CodecSettings, expected_size: int | None = None) -> bytes:
    """Invert :func:`compress`.

    Corrupt input raises :class:`IntegrityError`; input that stops before
    the codec's end-of-stream marker raises :class:`TruncationError`. When
    ``expected_size`` is given the output length is checked against it.
    """
    codec = settings.codec
    _require(codec)
    if codec == CodecId.STORE:
        out = bytes(data)
    else:
        dec, codec_error = _decompressor(codec)
        try:
            out = dec.decompress(bytes(data))
        except (codec_error, ValueError, EOFError) as exc:
            raise IntegrityError(f"{codec.name} stream corrupt: {exc}") from exc
        if not dec.eof:
            raise TruncationError(f"{codec.name} stream ended early")
        if dec.unused_data:
            raise IntegrityError(
                f"{codec.name} stream has {len(dec.unused_data)} trailing bytes")
    if expected_size is not None and len(out) != expected_size:
        raise IntegrityError(
            f"{codec.name} decoded {len(out)} bytes, expected {expected_size}")
    return out
