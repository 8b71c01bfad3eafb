"""Synthetic reference-layout packet streams.

The scene is a rectangular room seen by a 16-laser spinning sensor: lasers
pointing down hit a flat floor, the rest hit the walls. Ranges get Gaussian
noise and a sprinkling of null returns, which is enough structure for the
codecs to behave as they do on real captures.
"""
from __future__ import annotations

import numpy as np

from .packet import (VLP16_BLOCK_FLAG, VLP16_BLOCK_SIZE, VLP16_BLOCKS,
                     VLP16_CHANNELS_PER_BLOCK, VLP16_PACKET_SIZE, VLP16_STEP_MM)

ELEVATIONS_DEG = np.array([-15, 1, -13, 3, -11, 5, -9, 7, -7, 9, -5, 11, -3, 13, -1, 15],
                          dtype=float)
AZIMUTH_STEP_PER_BLOCK = 40  # hundredths of a degree at 10 Hz
PACKET_INTERVAL_US = 1330
FACTORY_BYTES = b"\x37\x22"


def _wall_distance(az_rad, half_x=10.0, half_y=6.0, cx=1.5, cy=-0.8):
    dx, dy = np.cos(az_rad), np.sin(az_rad)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (half_x - cx) / dx, (-half_x - cx) / dx)
        ty = np.where(dy > 0, (half_y - cy) / dy, (-half_y - cy) / dy)
    tx = np.where(np.isfinite(tx) & (tx > 0), tx, np.inf)
    ty = np.where(np.isfinite(ty) & (ty > 0), ty, np.inf)
    return np.minimum(tx, ty)


def synthetic_ranges(n_packets: int, seed: int = 0, noise_mm: float = 10.0,
                     null_fraction: float = 0.03):
    """Raw range values and azimuths for ``n_packets`` packets.

    Returns ``(ranges, azimuths)`` with shapes ``(n, 12, 32)`` uint16 and
    ``(n, 12)`` uint16.
    """
    rng = np.random.default_rng(seed)
    blocks = np.arange(n_packets * VLP16_BLOCKS)
    azimuth = (blocks * AZIMUTH_STEP_PER_BLOCK) % 36000
    az_rad = np.deg2rad(azimuth / 100.0)[:, None]
    elev = np.deg2rad(np.tile(ELEVATIONS_DEG, 2))[None, :]
    wall = _wall_distance(az_rad) / np.cos(elev)
    # a few pillars break up the walls
    wall = wall * (1.0 - 0.15 * (np.sin(7 * az_rad) > 0.95))
    floor = 1.8 / np.sin(np.abs(elev))
    dist_m = np.where((elev < 0) & (floor < wall), floor, wall)
    dist_m = dist_m + 0.05 * np.sin(3 * az_rad + elev)
    dist_mm = dist_m * 1000.0 + rng.normal(0.0, noise_mm, dist_m.shape)
    raw = np.clip(np.rint(dist_mm / VLP16_STEP_MM), 1, 0xFFFF).astype(np.uint16)
    raw[rng.random(raw.shape) < null_fraction] = 0
    return (raw.reshape(n_packets, VLP16_BLOCKS, VLP16_CHANNELS_PER_BLOCK),
            azimuth.astype(np.uint16).reshape(n_packets, VLP16_BLOCKS))


def assemble_packets(ranges, azimuths, reflectivity=None, start_us: int = 0) -> bytes:
    """Pack range/azimuth arrays into contiguous reference-layout packets."""
    n = ranges.shape[0]
    if reflectivity is None:
        reflectivity = ((ranges.astype(np.uint32) >> 5) & 0x7F).astype(np.uint8) + 20
    buf = np.zeros((n, VLP16_PACKET_SIZE), dtype=np.uint8)
    blk = buf[:, :VLP16_BLOCKS * VLP16_BLOCK_SIZE].reshape(n, VLP16_BLOCKS, VLP16_BLOCK_SIZE)
    blk[:, :, 0] = VLP16_BLOCK_FLAG[0]
    blk[:, :, 1] = VLP16_BLOCK_FLAG[1]
    blk[:, :, 2] = azimuths & 0xFF
    blk[:, :, 3] = azimuths >> 8
    chans = blk[:, :, 4:].reshape(n, VLP16_BLOCKS, VLP16_CHANNELS_PER_BLOCK, 3)
    chans[..., 0] = ranges & 0xFF
    chans[..., 1] = ranges >> 8
    chans[..., 2] = reflectivity
    ts = (start_us + np.arange(n, dtype=np.uint64) * PACKET_INTERVAL_US) % 3_600_000_000
    tail = buf[:, VLP16_BLOCKS * VLP16_BLOCK_SIZE:]
    tail[:, :4] = ts.astype("<u4").view(np.uint8).reshape(n, 4)
    tail[:, 4:] = np.frombuffer(FACTORY_BYTES, dtype=np.uint8)
    return buf.tobytes()


def synthetic_buffer(n_packets: int, seed: int = 0, **kwargs) -> bytes:
    ranges, azimuths = synthetic_ranges(n_packets, seed, **kwargs)
    return assemble_packets(ranges, azimuths)


def synthetic_packets(n_packets: int, seed: int = 0, **kwargs) -> list[bytes]:
    buf = synthetic_buffer(n_packets, seed, **kwargs)
    size = VLP16_PACKET_SIZE
    return [buf[i:i + size] for i in range(0, len(buf), size)]


def random_packets(n_packets: int, seed: int = 0) -> list[bytes]:
    """Packets with uniformly random range, azimuth and reflectivity bytes."""
    rng = np.random.default_rng(seed)
    ranges = rng.integers(0, 1 << 16, (n_packets, VLP16_BLOCKS, VLP16_CHANNELS_PER_BLOCK),
                          dtype=np.uint16)
    az = rng.integers(0, 36000, (n_packets, VLP16_BLOCKS), dtype=np.uint16)
    refl = rng.integers(0, 256, ranges.shape, dtype=np.uint8)
    buf = assemble_packets(ranges, az, refl, start_us=int(rng.integers(0, 3_600_000_000)))
    size = VLP16_PACKET_SIZE
    return [buf[i:i + size] for i in range(0, len(buf), size)]


def uniform_residue_packets(n_bits: int, n_packets: int = 64) -> list[bytes]:
    """Packets whose non-null ranges cover every residue mod ``2**n_bits`` equally."""
    modulus = 1 << n_bits
    per_packet = VLP16_BLOCKS * VLP16_CHANNELS_PER_BLOCK
    total = n_packets * per_packet
    if total % modulus:
        raise ValueError("field count must be a multiple of the modulus")
    idx = np.arange(total, dtype=np.uint64)
    # quotient >= 1 keeps every value non-null
    spread = max(1, min(97, 0xFFFF // modulus - 1))
    raw = (modulus * (1 + (idx // modulus) % spread) + idx % modulus).astype(np.uint16)
    az = (np.arange(n_packets * VLP16_BLOCKS) * AZIMUTH_STEP_PER_BLOCK % 36000)
    buf = assemble_packets(raw.reshape(n_packets, VLP16_BLOCKS, VLP16_CHANNELS_PER_BLOCK),
                           az.astype(np.uint16).reshape(n_packets, VLP16_BLOCKS))
    size = VLP16_PACKET_SIZE
    return [buf[i:i + size] for i in range(0, len(buf), size)]
