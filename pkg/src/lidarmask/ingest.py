"""Streaming readers and writers for classic pcap and headerless raw files.

Only classic pcap is handled (both byte orders, microsecond and nanosecond
variants). UDP payloads are pulled out of Ethernet, Linux cooked, BSD
loopback and raw-IP captures; IP fragments and anything that is not UDP is
skipped and counted, never reassembled.
"""
from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, NamedTuple

from .errors import FormatError, TruncationError, TruncationWarning
from .packet import NOMINAL_PACKET_INTERVAL_S, VLP16_PACKET_SIZE, VLP16_PORT

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", False), b"\xa1\xb2\xc3\xd4": (">", False),
    b"\x4d\x3c\xb2\xa1": ("<", True), b"\xa1\xb2\x3c\x4d": (">", True),
}

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_LINUX_SLL2 = 276

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
_VLAN_TAGS = (0x8100, 0x88A8, 0x9100)
IPPROTO_UDP = 17

NOMINAL_INTERVAL_NS = round(NOMINAL_PACKET_INTERVAL_S * 1e9)


class TimedPacket(NamedTuple):
    ts_ns: int
    payload: bytes

    @property
    def timestamp(self) -> float:
        return self.ts_ns / 1e9


@dataclass
class PcapRecord:
    ts_ns: int
    captured_len: int
    original_len: int
    payload: bytes


@dataclass
class IngestStats:
    records: int = 0
    packets: int = 0
    skipped_non_udp: int = 0
    skipped_port: int = 0
    skipped_size: int = 0
    skipped_fragment: int = 0
    skipped_snapped: int = 0
    first_ts_ns: int | None = None
    last_ts_ns: int | None = None

    @property
    def skipped(self) -> int:
        return (self.skipped_non_udp + self.skipped_port + self.skipped_size
                + self.skipped_fragment + self.skipped_snapped)

    @property
    def span_s(self) -> float:
        if self.first_ts_ns is None:
            return 0.0
        return (self.last_ts_ns - self.first_ts_ns) / 1e9

    def _seen(self, ts_ns):
        self.packets += 1
        if self.first_ts_ns is None:
            self.first_ts_ns = ts_ns
        self.last_ts_ns = ts_ns


def _read_exact(src: BinaryIO, n: int) -> bytes:
    buf = src.read(n)
    if len(buf) == n or not buf:
        return buf
    parts = [buf]
    n -= len(buf)
    while n:
        chunk = src.read(n)
        if not chunk:
            break
        parts.append(chunk)
        n -= len(chunk)
    return b"".join(parts)


class PcapReader:
    """Iterate the records of a classic pcap stream."""

    def __init__(self, src: BinaryIO):
        self.src = src
        head = _read_exact(src, 24)
        if len(head) < 4 or head[:4] not in _MAGICS:
            raise FormatError("not a classic pcap file (bad magic)")
        if len(head) < 24:
            raise TruncationError("pcap global header is incomplete")
        self.endian, self.nanosecond = _MAGICS[head[:4]]
        (self.version_major, self.version_minor, _, _, self.snaplen,
         self.linktype) = struct.unpack(self.endian + "HHiIII", head[4:])
        self.linktype &= 0x0FFFFFFF
        self._rec = struct.Struct(self.endian + "IIII")

    def __iter__(self) -> Iterator[PcapRecord]:
        frac_ns = 1 if self.nanosecond else 1000
        while True:
            head = _read_exact(self.src, 16)
            if not head:
                return
            if len(head) < 16:
                raise TruncationError("pcap record header is incomplete")
            sec, frac, incl, orig = self._rec.unpack(head)
            data = _read_exact(self.src, incl)
            if len(data) < incl:
                raise TruncationError("pcap record data is incomplete")
            yield PcapRecord(sec * 1_000_000_000 + frac * frac_ns, incl, orig, data)


def _network_payload(frame: bytes, linktype: int):
    """Return (ethertype, l3 bytes) or None if the link layer is not understood."""
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            return None
        pos = 12
        etype = int.from_bytes(frame[pos:pos + 2], "big")
        while etype in _VLAN_TAGS and len(frame) >= pos + 6:
            pos += 4
            etype = int.from_bytes(frame[pos:pos + 2], "big")
        return etype, frame[pos + 2:]
    if linktype == LINKTYPE_RAW:
        if not frame:
            return None
        return (ETH_IPV4 if frame[0] >> 4 == 4 else ETH_IPV6), frame
    if linktype == LINKTYPE_NULL:
        if len(frame) < 4:
            return None
        family = int.from_bytes(frame[:4], "little")
        if family > 0xFFFF:
            family = int.from_bytes(frame[:4], "big")
        return (ETH_IPV4 if family == 2 else ETH_IPV6), frame[4:]
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            return None
        return int.from_bytes(frame[14:16], "big"), frame[16:]
    if linktype == LINKTYPE_LINUX_SLL2:
        if len(frame) < 20:
            return None
        return int.from_bytes(frame[0:2], "big"), frame[20:]
    return None


_FRAGMENT = object()


def udp_datagram(frame: bytes, linktype: int):
    """Extract ``(dst_port, payload)`` from a captured frame.

    Returns None for non-UDP traffic and ``_FRAGMENT`` for IP fragments.
    """
    l3 = _network_payload(frame, linktype)
    if l3 is None:
        return None
    etype, ip = l3
    if etype == ETH_IPV4:
        if len(ip) < 20 or ip[0] >> 4 != 4:
            return None
        ihl = (ip[0] & 0x0F) * 4
        if ip[9] != IPPROTO_UDP:
            return None
        flags_frag = int.from_bytes(ip[6:8], "big")
        if flags_frag & 0x2000 or flags_frag & 0x1FFF:
            return _FRAGMENT
        total = int.from_bytes(ip[2:4], "big")
        udp = ip[ihl:total] if total >= ihl else ip[ihl:]
    elif etype == ETH_IPV6:
        if len(ip) < 40 or ip[6] != IPPROTO_UDP:
            return None
        udp = ip[40:40 + int.from_bytes(ip[4:6], "big")]
    else:
        return None
    if len(udp) < 8:
        return None
    dport, ulen = struct.unpack_from(">2xHH", udp)
    return dport, udp[8:max(ulen, 8)]


def read_pcap(source: BinaryIO, port: int | None = VLP16_PORT,
              payload_size: int | None = VLP16_PACKET_SIZE,
              stats: IngestStats | None = None) -> Iterator[TimedPacket]:
    """Yield UDP payloads to ``port`` of exactly ``payload_size`` bytes.

    Pass ``None`` to disable either filter. Skipped records are tallied in
    ``stats`` when one is supplied.
    """
    stats = IngestStats() if stats is None else stats
    reader = PcapReader(source)
    for rec in reader:
        stats.records += 1
        if rec.captured_len < rec.original_len:
            stats.skipped_snapped += 1
            continue
        dgram = udp_datagram(rec.payload, reader.linktype)
        if dgram is None:
            stats.skipped_non_udp += 1
            continue
        if dgram is _FRAGMENT:
            stats.skipped_fragment += 1
            continue
        dport, payload = dgram
        if port is not None and dport != port:
            stats.skipped_port += 1
            continue
        if payload_size is not None and len(payload) != payload_size:
            stats.skipped_size += 1
            continue
        stats._seen(rec.ts_ns)
        yield TimedPacket(rec.ts_ns, bytes(payload))


def read_raw(source: BinaryIO, packet_size: int = VLP16_PACKET_SIZE,
             interval_ns: int = NOMINAL_INTERVAL_NS,
             stats: IngestStats | None = None) -> Iterator[TimedPacket]:
    """Slice a headerless file into packets with synthetic timestamps."""
    stats = IngestStats() if stats is None else stats
    i = 0
    while True:
        chunk = _read_exact(source, packet_size)
        if len(chunk) < packet_size:
            if chunk:
                warnings.warn(f"ignoring {len(chunk)} trailing bytes (partial packet)",
                              TruncationWarning, stacklevel=2)
            return
        stats.records += 1
        stats._seen(i * interval_ns)
        yield TimedPacket(i * interval_ns, chunk)
        i += 1


# -- writing ------------------------------------------------------------------

_SRC_MAC = bytes.fromhex("607688000000")
_DST_MAC = b"\xff" * 6
_SRC_IP = bytes([192, 168, 1, 201])
_DST_IP = bytes([255, 255, 255, 255])


def _ipv4_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f">{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _ethernet_udp(payload: bytes, port: int, ident: int) -> bytes:
    udp = struct.pack(">HHHH", port, port, 8 + len(payload), 0) + payload
    ip = bytearray(struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), ident & 0xFFFF,
                               0x4000, 64, IPPROTO_UDP, 0, _SRC_IP, _DST_IP))
    ip[10:12] = _ipv4_checksum(bytes(ip)).to_bytes(2, "big")
    return _DST_MAC + _SRC_MAC + ETH_IPV4.to_bytes(2, "big") + bytes(ip) + udp


class PcapWriter:
    """Write UDP payloads as Ethernet/IPv4/UDP records of a classic pcap."""

    def __init__(self, sink: BinaryIO, port: int = VLP16_PORT,
                 nanosecond: bool = False, snaplen: int = 65535):
        self.sink = sink
        self.port = port
        self.nanosecond = nanosecond
        self.count = 0
        magic = PCAP_MAGIC_NS if nanosecond else PCAP_MAGIC_US
        sink.write(struct.pack("<IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))

    def write(self, ts_ns: int, payload: bytes) -> None:
        frame = _ethernet_udp(payload, self.port, self.count)
        sec, rem = divmod(int(ts_ns), 1_000_000_000)
        frac = rem if self.nanosecond else rem // 1000
        self.sink.write(struct.pack("<IIII", sec, frac, len(frame), len(frame)))
        self.sink.write(frame)
        self.count += 1


def write_pcap(packets: Iterable, sink: BinaryIO | None = None,
               port: int = VLP16_PORT, nanosecond: bool = False):
    """Write ``(ts_ns, payload)`` pairs; returns bytes when no sink is given."""
    out = io.BytesIO() if sink is None else sink
    writer = PcapWriter(out, port, nanosecond)
    for ts_ns, payload in packets:
        writer.write(ts_ns, payload)
    return out.getvalue() if sink is None else writer.count


def write_raw(packets: Iterable[bytes], sink: BinaryIO) -> int:
    n = 0
    for p in packets:
        sink.write(p)
        n += 1
    return n


# -- format detection ---------------------------------------------------------

def detect_format(head: bytes) -> str:
    """Classify a file by its first bytes: ``pcap``, ``lmc`` or ``raw``."""
    if head[:4] in _MAGICS:
        return "pcap"
    if head[:4] == b"LMC1":
        return "lmc"
    return "raw"


@dataclass
class PacketSource:
    """Packets from a pcap or raw file, with format sniffed when ``auto``."""

    stream: BinaryIO
    format: str = "auto"
    packet_size: int = VLP16_PACKET_SIZE
    port: int | None = VLP16_PORT
    stats: IngestStats = field(default_factory=IngestStats)

    def __post_init__(self):
        if self.format == "auto":
            if not self.stream.seekable():
                self.stream = io.BufferedReader(self.stream)
                self.format = detect_format(self.stream.peek(4)[:4])
            else:
                pos = self.stream.tell()
                self.format = detect_format(self.stream.read(4))
                self.stream.seek(pos)
        if self.format not in ("pcap", "raw"):
            raise FormatError(f"cannot read packets from a {self.format} file")

    def __iter__(self) -> Iterator[TimedPacket]:
        if self.format == "pcap":
            return read_pcap(self.stream, self.port, self.packet_size, self.stats)
        return read_raw(self.stream, self.packet_size, stats=self.stats)

    @property
    def duration_s(self) -> float:
        """Sensor time covered: capture span for pcap, nominal for raw."""
        if self.format == "pcap":
            return self.stats.span_s
        return self.stats.packets * NOMINAL_PACKET_INTERVAL_S
