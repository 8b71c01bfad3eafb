"""Bounded-loss compression of raw LiDAR packet streams.

Range fields are truncated by zeroing their ``n`` least-significant bits
with a precomputed whole-packet AND mask, then the stream is compressed in
frames with an ordinary lossless codec. Packet structure is untouched, so
decompressed output parses with the sensor's usual tooling.
"""
from .codecs import CodecId, CodecSettings, compress, decompress, list_codecs
from .container import read_stream, recover_stream, write_stream
from .errors import (CapabilityError, FormatError, IntegrityError, LmcError,
                     ParameterError, StructuralError, TruncationError)
from .mask import PacketMask, apply_mask, apply_mask_batch, build_mask, error_bound
from .metrics import CompressionReport, ErrorStats, compression_report, error_stats, sweep
from .packet import (Measurement, PacketLayout, RangeFieldSpec, extract_measurements,
                     reference_layout, validate_packet)
from .pipeline import PipelineConfig, compress_capture, decompress_capture

__all__ = [
    "CapabilityError", "CodecId", "CodecSettings", "CompressionReport", "ErrorStats",
    "FormatError", "IntegrityError", "LmcError", "Measurement", "PacketLayout",
    "PacketMask", "ParameterError", "PipelineConfig", "RangeFieldSpec",
    "StructuralError", "TruncationError", "apply_mask", "apply_mask_batch",
    "build_mask", "compress", "compress_capture", "compression_report", "decompress",
    "decompress_capture", "error_bound", "error_stats", "extract_measurements",
    "list_codecs", "read_stream", "recover_stream", "reference_layout", "sweep",
    "validate_packet", "write_stream",
]
