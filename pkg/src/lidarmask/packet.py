"""Packet layouts, range-field decoding and the VLP-16 reference format.

A :class:`PacketLayout` is plain data: it says where the range fields of a
fixed-size sensor payload live. Everything downstream (mask construction,
error statistics, validation) is driven by it, so supporting another sensor
means writing another layout, not another code path.

Reference payload (1206 bytes, single-return mode)::

    12 x data block (100 bytes)
        flag        2 bytes   0xFF 0xEE
        azimuth     2 bytes   LE, hundredths of a degree
        32 x (range 2 bytes LE, 2 mm units; reflectivity 1 byte)
    timestamp       4 bytes   LE, microseconds past the hour
    factory         2 bytes   return mode, product id
"""
from __future__ import annotations

import functools
import hashlib
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, StructuralError

LSB_FIRST = "little"
MSB_FIRST = "big"

VLP16_PACKET_SIZE = 1206
VLP16_BLOCKS = 12
VLP16_BLOCK_SIZE = 100
VLP16_CHANNELS_PER_BLOCK = 32
VLP16_BLOCK_FLAG = b"\xff\xee"
VLP16_STEP_MM = 2.0
VLP16_ACCURACY_MM = 30.0
VLP16_PORT = 2368
# one packet every 1.33 ms at 10 Hz
NOMINAL_PACKET_INTERVAL_S = 1.33e-3


@dataclass(frozen=True)
class RangeFieldSpec:
    offset: int
    width_bits: int = 16
    byte_order: str = LSB_FIRST

    def __post_init__(self):
        if self.width_bits not in (8, 16, 32):
            raise ParameterError(f"unsupported field width {self.width_bits}")
        if self.byte_order not in (LSB_FIRST, MSB_FIRST):
            raise ParameterError(f"unknown byte order {self.byte_order!r}")
        if self.offset < 0:
            raise ParameterError("field offset must be non-negative")

    @property
    def width_bytes(self) -> int:
        return self.width_bits // 8

    @property
    def end(self) -> int:
        return self.offset + self.width_bytes


@dataclass(frozen=True)
class PacketLayout:
    """Where the range measurements sit inside a fixed-size packet.

    ``sync_markers`` are ``(offset, expected_bytes)`` pairs checked by
    :func:`validate_packet`; they are never masked.
    """

    packet_size: int
    range_fields: tuple[RangeFieldSpec, ...]
    step_size_mm: float
    max_masked_bits: int
    vendor_accuracy_mm: float
    sync_markers: tuple[tuple[int, bytes], ...] = ()
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "range_fields", tuple(self.range_fields))
        object.__setattr__(self, "sync_markers", tuple(
            (int(off), bytes(val)) for off, val in self.sync_markers))
        if self.packet_size <= 0:
            raise ParameterError("packet_size must be positive")
        if not self.step_size_mm > 0:
            raise ParameterError("step_size_mm must be positive")
        prev_end = 0
        for spec in self.range_fields:
            if spec.offset < prev_end:
                raise ParameterError(
                    f"range fields overlap or are unsorted at offset {spec.offset}")
            if spec.end > self.packet_size:
                raise ParameterError(
                    f"range field at {spec.offset} runs past packet end")
            prev_end = spec.end
        if self.range_fields:
            narrowest = min(s.width_bits for s in self.range_fields)
            if not 0 <= self.max_masked_bits < narrowest:
                raise ParameterError(
                    f"max_masked_bits must be in [0, {narrowest - 1}]")
        for off, val in self.sync_markers:
            if off < 0 or off + len(val) > self.packet_size:
                raise ParameterError(f"sync marker at {off} runs past packet end")

    @functools.cached_property
    def layout_hash(self) -> bytes:
        """Stable 8-byte digest of the structural content of the layout."""
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<IdI", self.packet_size, self.step_size_mm,
                             self.max_masked_bits))
        for spec in self.range_fields:
            h.update(struct.pack("<IBB", spec.offset, spec.width_bits,
                                 spec.byte_order == MSB_FIRST))
        for off, val in self.sync_markers:
            h.update(struct.pack("<IH", off, len(val)) + val)
        return h.digest()

    @property
    def step_size_um(self) -> int:
        return round(self.step_size_mm * 1000)


class Measurement(NamedTuple):
    raw: int
    distance_mm: float
    field_index: int


@functools.lru_cache(maxsize=None)
def reference_layout() -> PacketLayout:
    """The built-in VLP-16 single-return layout (384 16-bit range fields)."""
    fields = []
    markers = []
    for block in range(VLP16_BLOCKS):
        base = block * VLP16_BLOCK_SIZE
        markers.append((base, VLP16_BLOCK_FLAG))
        for ch in range(VLP16_CHANNELS_PER_BLOCK):
            fields.append(RangeFieldSpec(base + 4 + 3 * ch, 16, LSB_FIRST))
    return PacketLayout(
        packet_size=VLP16_PACKET_SIZE,
        range_fields=tuple(fields),
        step_size_mm=VLP16_STEP_MM,
        max_masked_bits=15,
        vendor_accuracy_mm=VLP16_ACCURACY_MM,
        sync_markers=tuple(markers),
        name="vlp16",
    )


def check_length(packet, layout: PacketLayout) -> None:
    if len(packet) != layout.packet_size:
        raise StructuralError(
            f"packet is {len(packet)} bytes, layout expects {layout.packet_size}")


def extract_measurements(packet, layout: PacketLayout) -> list[Measurement]:
    check_length(packet, layout)
    view = memoryview(packet)
    out = []
    for i, spec in enumerate(layout.range_fields):
        raw = int.from_bytes(view[spec.offset:spec.end], spec.byte_order)
        out.append(Measurement(raw, raw * layout.step_size_mm, i))
    return out


@functools.lru_cache(maxsize=32)
def _gather_plan(layout: PacketLayout):
    # group fields by (width, order) so each group decodes with one gather
    groups = {}
    for i, spec in enumerate(layout.range_fields):
        groups.setdefault((spec.width_bytes, spec.byte_order), []).append(i)
    plan = []
    for (width, order), idx in groups.items():
        offsets = np.array([layout.range_fields[i].offset for i in idx], dtype=np.intp)
        shifts = [8 * k if order == LSB_FIRST else 8 * (width - 1 - k)
                  for k in range(width)]
        plan.append((np.array(idx, dtype=np.intp), offsets, shifts))
    return plan


def range_values(packets, layout: PacketLayout) -> np.ndarray:
    """Decode every range field of a packet batch.

    ``packets`` is a contiguous buffer of whole packets (or a 2-D uint8
    array). Returns an ``(n_packets, n_fields)`` uint64 array of raw values.
    """
    arr = np.asarray(packets, dtype=np.uint8) if isinstance(packets, np.ndarray) \
        else np.frombuffer(packets, dtype=np.uint8)
    if arr.ndim == 1:
        if arr.size % layout.packet_size:
            raise StructuralError(
                f"buffer of {arr.size} bytes is not a whole number of packets")
        arr = arr.reshape(-1, layout.packet_size)
    elif arr.shape[1] != layout.packet_size:
        raise StructuralError("packet array width does not match layout")
    out = np.zeros((arr.shape[0], len(layout.range_fields)), dtype=np.uint64)
    for idx, offsets, shifts in _gather_plan(layout):
        acc = np.zeros((arr.shape[0], len(idx)), dtype=np.uint64)
        for k, shift in enumerate(shifts):
            acc |= arr[:, offsets + k].astype(np.uint64) << np.uint64(shift)
        out[:, idx] = acc
    return out


@dataclass(frozen=True)
class ValidityReport:
    ok: bool
    offset: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def validate_packet(packet, layout: PacketLayout) -> ValidityReport:
    """Check length and sync markers; report the first offending offset."""
    if len(packet) != layout.packet_size:
        return ValidityReport(False, min(len(packet), layout.packet_size),
                              f"length {len(packet)} != {layout.packet_size}")
    view = memoryview(packet)
    for off, expected in layout.sync_markers:
        if view[off:off + len(expected)] != expected:
            return ValidityReport(False, off, "bad sync marker")
    return ValidityReport(True)


# -- structured view of the reference packet ---------------------------------

_BLOCK_HEAD = struct.Struct("<2sH")
_CHANNEL = struct.Struct("<HB")
_TAIL = struct.Struct("<I2s")


@dataclass(frozen=True)
class DataBlock:
    flag: bytes
    azimuth: int
    ranges: tuple[int, ...]
    reflectivity: tuple[int, ...]


@dataclass(frozen=True)
class VLP16Packet:
    blocks: tuple[DataBlock, ...]
    timestamp_us: int
    factory: bytes

    def to_bytes(self) -> bytes:
        out = bytearray()
        for b in self.blocks:
            out += _BLOCK_HEAD.pack(b.flag, b.azimuth)
            for r, refl in zip(b.ranges, b.reflectivity):
                out += _CHANNEL.pack(r, refl)
        out += _TAIL.pack(self.timestamp_us, self.factory)
        return bytes(out)


def parse_packet(packet) -> VLP16Packet:
    if len(packet) != VLP16_PACKET_SIZE:
        raise StructuralError(
            f"packet is {len(packet)} bytes, expected {VLP16_PACKET_SIZE}")
    blocks = []
    for b in range(VLP16_BLOCKS):
        base = b * VLP16_BLOCK_SIZE
        flag, azimuth = _BLOCK_HEAD.unpack_from(packet, base)
        chans = [_CHANNEL.unpack_from(packet, base + 4 + 3 * c)
                 for c in range(VLP16_CHANNELS_PER_BLOCK)]
        blocks.append(DataBlock(flag, azimuth,
                                tuple(c[0] for c in chans),
                                tuple(c[1] for c in chans)))
    ts, factory = _TAIL.unpack_from(packet, VLP16_BLOCKS * VLP16_BLOCK_SIZE)
    return VLP16Packet(tuple(blocks), ts, factory)


def serialize_packet(parsed: VLP16Packet) -> bytes:
    return parsed.to_bytes()
