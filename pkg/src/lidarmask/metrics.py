"""Accuracy and efficiency figures for masked, compressed streams.

Error is the absolute difference between original and masked range, in
millimetres. Null returns (raw value 0) are left out of the statistics and
counted separately. Sizes are reported as RFS (compressed / original bytes)
and times as RPT (processing time / sensor time covered by the data).
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import container
from .codecs import CodecSettings, parse_codec
from .errors import LmcError, ParameterError, StructuralError
from .mask import apply_mask_batch, build_mask, error_bound
from .packet import PacketLayout, range_values

CSV_COLUMNS = (
    "n", "codec", "original_bytes", "compressed_bytes", "rfs", "mask_time_s",
    "codec_time_s", "processing_time_s", "duration_s", "rpt", "err_count",
    "err_mean_mm", "err_std_mm", "err_max_mm", "err_theoretical_max_mm",
    "nulls_excluded",
)


@dataclass(frozen=True)
class ErrorStats:
    count: int
    mean_mm: float
    std_mm: float
    max_mm: float
    theoretical_max_mm: float
    nulls_excluded: int


class ErrorAccumulator:
    """Single-pass error statistics in O(1) memory.

    Sums are kept as exact integers in raw units, so the mean is exact and
    the variance has no cancellation error regardless of stream length.
    """

    def __init__(self, step_size_mm: float, n: int | None = None,
                 exclude_nulls: bool = True):
        self.step = step_size_mm
        self.n = n
        self.exclude_nulls = exclude_nulls
        self.count = 0
        self.total = 0
        self.total_sq = 0
        self.max_raw = 0
        self.nulls = 0

    def update(self, original, masked) -> None:
        original = np.asarray(original, dtype=np.uint64).ravel()
        masked = np.asarray(masked, dtype=np.uint64).ravel()
        if original.shape != masked.shape:
            raise StructuralError("original and masked value counts differ")
        if self.exclude_nulls:
            keep = original != 0
            self.nulls += int(original.size - np.count_nonzero(keep))
            original, masked = original[keep], masked[keep]
        if original.size == 0:
            return
        diff = np.abs(original.astype(np.int64) - masked.astype(np.int64))
        peak = int(diff.max())
        if peak < 1 << 16:
            self.total += int(diff.sum())
            self.total_sq += int(np.dot(diff, diff))
        else:
            vals = [int(v) for v in diff]
            self.total += sum(vals)
            self.total_sq += sum(v * v for v in vals)
        self.count += int(diff.size)
        self.max_raw = max(self.max_raw, peak)

    def result(self) -> ErrorStats:
        theo = error_bound(self.n, self.step).attainable_max_mm if self.n is not None \
            else math.nan
        if self.count == 0:
            return ErrorStats(0, 0.0, 0.0, 0.0, theo, self.nulls)
        step = Fraction(self.step)
        mean = Fraction(self.total, self.count)
        var = Fraction(self.total_sq, self.count) - mean * mean
        return ErrorStats(
            count=self.count,
            mean_mm=float(mean * step),
            std_mm=math.sqrt(var) * self.step,
            max_mm=self.max_raw * self.step,
            theoretical_max_mm=theo,
            nulls_excluded=self.nulls,
        )


def _chunks(packets: Iterable[bytes], size: int = 1024):
    batch = []
    for p in packets:
        batch.append(p)
        if len(batch) == size:
            yield b"".join(batch)
            batch = []
    if batch:
        yield b"".join(batch)


def error_stats(original: Iterable[bytes], masked: Iterable[bytes],
                layout: PacketLayout, n: int | None = None,
                exclude_nulls: bool = True) -> ErrorStats:
    """Streaming error statistics over two aligned packet sequences."""
    acc = ErrorAccumulator(layout.step_size_mm, n, exclude_nulls)
    a_iter, b_iter = _chunks(original), _chunks(masked)
    sentinel = object()
    while True:
        a, b = next(a_iter, sentinel), next(b_iter, sentinel)
        if a is sentinel and b is sentinel:
            break
        if a is sentinel or b is sentinel or len(a) != len(b):
            raise StructuralError("original and masked streams differ in packet count")
        acc.update(range_values(a, layout), range_values(b, layout))
    return acc.result()


@dataclass(frozen=True)
class CompressionReport:
    original_bytes: int
    compressed_bytes: int
    rfs: float
    dataset_duration_s: float
    processing_time_s: float
    rpt: float
    mask_time_s: float
    codec_time_s: float
    codec: str
    n: int
    packets: int = 0

    @property
    def real_time(self) -> bool:
        return self.rpt < 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["real_time"] = self.real_time
        return d


def compression_report(original_bytes: int, compressed_bytes: int,
                       dataset_duration_s: float, processing_time_s: float,
                       mask_time_s: float = 0.0, codec_time_s: float = 0.0,
                       codec="store", n: int = 0, packets: int = 0) -> CompressionReport:
    if not dataset_duration_s > 0:
        raise ParameterError("dataset duration must be positive")
    if original_bytes <= 0:
        raise ParameterError("original size must be positive")
    name = parse_codec(codec).name.lower()
    return CompressionReport(
        original_bytes, compressed_bytes, compressed_bytes / original_bytes,
        dataset_duration_s, processing_time_s, processing_time_s / dataset_duration_s,
        mask_time_s, codec_time_s, name, n, packets)


@dataclass
class SweepCell:
    n: int
    codec: str
    errors: ErrorStats
    report: CompressionReport | None = None
    error: str | None = None

    def row(self) -> dict:
        r = self.report
        e = self.errors
        return {
            "n": self.n, "codec": self.codec,
            "original_bytes": r.original_bytes if r else "",
            "compressed_bytes": r.compressed_bytes if r else "",
            "rfs": r.rfs if r else "",
            "mask_time_s": r.mask_time_s if r else "",
            "codec_time_s": r.codec_time_s if r else "",
            "processing_time_s": r.processing_time_s if r else "",
            "duration_s": r.dataset_duration_s if r else "",
            "rpt": r.rpt if r else "",
            "err_count": e.count, "err_mean_mm": e.mean_mm, "err_std_mm": e.std_mm,
            "err_max_mm": e.max_mm, "err_theoretical_max_mm": e.theoretical_max_mm,
            "nulls_excluded": e.nulls_excluded,
        }


def sweep(packets: Sequence[bytes], layout: PacketLayout, n_values: Sequence[int],
          codecs: Sequence, duration_s: float,
          frame_size: int = container.DEFAULT_FRAME_SIZE) -> list[SweepCell]:
    """Mask at every ``n`` and compress with every codec.

    Cells come out ordered by ``n`` then by the order ``codecs`` was given.
    A codec failure is stored in its cell and the sweep carries on.
    """
    raw = b"".join(packets)
    original = range_values(raw, layout) if raw else np.zeros((0, 0), np.uint64)
    codec_ids = [parse_codec(c) for c in codecs]
    cells = []
    for n in n_values:
        mask = build_mask(layout, n)
        t0 = time.perf_counter()
        masked = apply_mask_batch(raw, mask)
        mask_time = time.perf_counter() - t0
        acc = ErrorAccumulator(layout.step_size_mm, n)
        if raw:
            acc.update(original, range_values(masked, layout))
        errs = acc.result()
        size = layout.packet_size
        masked_packets = [masked[i:i + size] for i in range(0, len(masked), size)]
        for codec in codec_ids:
            name = codec.name.lower()
            try:
                t0 = time.perf_counter()
                out = container.write_stream(masked_packets, layout, n,
                                             CodecSettings(codec), frame_size)
                codec_time = time.perf_counter() - t0
                report = compression_report(
                    len(raw), len(out), duration_s, mask_time + codec_time,
                    mask_time, codec_time, codec, n, len(masked_packets))
                cells.append(SweepCell(n, name, errs, report))
            except LmcError as exc:
                cells.append(SweepCell(n, name, errs, error=str(exc)))
    return cells


def cells_to_csv(cells: Iterable[SweepCell]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for cell in cells:
        writer.writerow(cell.row())
    return buf.getvalue()


def cells_to_json(cells: Iterable[SweepCell]) -> str:
    rows = []
    for cell in cells:
        row = cell.row()
        row["error"] = cell.error
        rows.append(row)
    return json.dumps(rows, indent=2)
