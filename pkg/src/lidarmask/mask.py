"""Whole-packet LSB masks and their application.

The mask for a ``(layout, n)`` pair is one byte string as long as a packet:
``0xFF`` everywhere except the low ``n`` bits of each range field. Masking a
packet is then a single bytewise AND, which truncates every range value
towards zero and leaves every other byte untouched.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, StructuralError
from .packet import PacketLayout


@dataclass(frozen=True)
class PacketMask:
    bytes: bytes
    n: int
    layout_id: bytes

    def __len__(self):
        return len(self.bytes)

    @functools.cached_property
    def as_int(self) -> int:
        return int.from_bytes(self.bytes, "little")

    @functools.cached_property
    def as_array(self) -> np.ndarray:
        arr = np.frombuffer(self.bytes, dtype=np.uint8)
        arr.flags.writeable = False
        return arr


def check_bits(n: int, layout: PacketLayout) -> None:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ParameterError(f"masked-bit count must be an integer, got {n!r}")
    if not 0 <= n <= layout.max_masked_bits:
        raise ParameterError(
            f"masked-bit count {n} outside [0, {layout.max_masked_bits}]")


@functools.lru_cache(maxsize=64)
def build_mask(layout: PacketLayout, n: int) -> PacketMask:
    """Precompute the full-packet mask; cached per ``(layout, n)``."""
    check_bits(n, layout)
    n = int(n)
    buf = bytearray(b"\xff" * layout.packet_size)
    for spec in layout.range_fields:
        keep = ((1 << spec.width_bits) - 1) & ~((1 << n) - 1)
        buf[spec.offset:spec.end] = keep.to_bytes(spec.width_bytes, spec.byte_order)
    return PacketMask(bytes(buf), n, layout.layout_hash)


def apply_mask(packet, mask: PacketMask) -> bytes:
    """AND one packet with the mask.

    Uses one arbitrary-precision integer AND over the whole packet; this is
    the reference path the batch path is tested against.
    """
    if len(packet) != len(mask):
        raise StructuralError(
            f"packet is {len(packet)} bytes, mask is {len(mask)}")
    if mask.n == 0:
        return bytes(packet)
    value = int.from_bytes(packet, "little") & mask.as_int
    return value.to_bytes(len(mask), "little")


def apply_mask_batch(packets, mask: PacketMask, out=None) -> bytes:
    """AND a contiguous run of packets with the mask in one vectorised pass.

    ``packets`` may be any buffer. If ``out`` is a writable buffer of the
    same length the result is written there and returned as-is.
    """
    size = len(mask)
    src = np.frombuffer(packets, dtype=np.uint8)
    if src.size % size:
        raise StructuralError(
            f"buffer of {src.size} bytes is not a multiple of {size}")
    if src.size == 0:
        return b"" if out is None else out
    rows = src.reshape(-1, size)
    if out is None:
        return np.bitwise_and(rows, mask.as_array).tobytes()
    dst = np.frombuffer(out, dtype=np.uint8).reshape(-1, size)
    np.bitwise_and(rows, mask.as_array, out=dst)
    return out


def mask_packets(packets, mask: PacketMask) -> list[bytes]:
    """Mask a sequence of individual packets, returning new packets."""
    packets = list(packets)
    if not packets:
        return []
    joined = apply_mask_batch(b"".join(packets), mask)
    size = len(mask)
    return [joined[i:i + size] for i in range(0, len(joined), size)]


class ErrorBound(NamedTuple):
    attainable_max_mm: float
    strict_bound_mm: float


def error_bound(n: int, step_size_mm: float) -> ErrorBound:
    """Largest masking error for ``n`` zeroed bits.

    Truncation removes at most ``2**n - 1`` raw units, so the error is
    always strictly below ``2**n * step``.
    """
    if n < 0:
        raise ParameterError("masked-bit count must be non-negative")
    return ErrorBound(((1 << n) - 1) * step_size_mm, (1 << n) * step_size_mm)
