import socket
import threading
import time


from lidarmask.codecs import CodecSettings
from lidarmask.container import FrameHeader, StreamHeader
from lidarmask.mask import build_mask, mask_packets
from lidarmask.pipeline import PipelineConfig
from lidarmask.relay import (DGRAM_FRAME, DGRAM_HEADER, RelayReceiver, RelaySender,
                             RelayStats, frame_datagram, header_datagram, parse_endpoint)

LOCAL = ("127.0.0.1", 0)


def _blast(addr, packets, gap=0.0):
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        for p in packets:
            s.sendto(p, addr)
            if gap:
                time.sleep(gap)


def _wait(predicate, timeout=5.0):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


def test_parse_endpoint():
    assert parse_endpoint("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_endpoint("2368") == ("0.0.0.0", 2368)
    assert parse_endpoint(":5") == ("0.0.0.0", 5)


def test_loopback_lossless(layout, structured):
    got = []
    rx = RelayReceiver(LOCAL, got.append).start()
    tx = RelaySender(LOCAL, rx.address, PipelineConfig(n=4, frame_size=20, workers=2)).start()
    try:
        packets = structured[:200]
        _blast(tx.address, packets, gap=0.0002)
        assert _wait(lambda: len(got) == 200)
    finally:
        s_stats = tx.stop(5)
        r_stats = rx.stop(5)
        tx.close()
        rx.close()
    assert got == mask_packets(packets, build_mask(layout, 4))
    assert s_stats.balanced and s_stats.packets_dropped == 0
    assert s_stats.packets_in == s_stats.packets_out == 200
    assert r_stats.headers == 1 and r_stats.frames_corrupt == 0
    assert r_stats.frames_received == s_stats.frames_sent


def test_injected_loss_costs_whole_frames(layout, structured):
    rx = RelayReceiver(LOCAL, lambda p: None)
    got = []
    rx.sink = got.append
    lost_packets = []
    counter = iter(range(10**6))

    def lossy(data):
        if data[0] == DGRAM_FRAME and next(counter) % 10 == 3:
            lost_packets.append(FrameHeader.from_bytes(data, 1).packet_count)
            return
        rx.handle_datagram(data)

    tx = RelaySender(LOCAL, ("127.0.0.1", 9), PipelineConfig(n=6, frame_size=10), send=lossy)
    tx.start()
    try:
        _blast(tx.address, structured[:400], gap=0.0002)
        assert _wait(lambda: tx.stats.packets_out == 400)
    finally:
        stats = tx.stop(5)
        tx.close()
        rx.close()
    assert stats.balanced
    assert 3 <= len(lost_packets) <= 5
    assert len(got) == 400 - sum(lost_packets)
    assert rx.stats.frames_corrupt == 0
    expected = set(mask_packets(structured[:400], build_mask(layout, 6)))
    assert set(got) <= expected


def test_frames_before_header_are_counted(layout, structured):
    rx = RelayReceiver(LOCAL, lambda p: None)
    try:
        cfg = PipelineConfig(n=0, codec=CodecSettings("store"))
        from lidarmask.container import encode_frame
        frame = frame_datagram(encode_frame(b"".join(structured[:3]), 3, cfg.codec))
        rx.handle_datagram(frame)
        assert rx.stats.frames_before_header == 1 and rx.stats.packets_out == 0
        rx.handle_datagram(header_datagram(cfg.header))
        rx.handle_datagram(frame)
        assert rx.stats.packets_out == 3
        rx.handle_datagram(b"")
        rx.handle_datagram(b"\x07junk")
        rx.handle_datagram(bytes([DGRAM_HEADER]) + b"nope")
        assert rx.stats.skipped == 3
        bad = bytearray(frame)
        bad[-1] ^= 1
        rx.handle_datagram(bytes(bad))
        assert rx.stats.frames_corrupt == 1
    finally:
        rx.close()


def test_header_re_request(structured):
    sent = []
    tx = RelaySender(LOCAL, ("127.0.0.1", 9), send=sent.append)
    try:
        tx.request_header()
        tx.request_header()
        assert [d[0] for d in sent] == [DGRAM_HEADER] * 2
        assert StreamHeader.from_bytes(sent[0][1:]) == tx.config.header
        assert tx.stats.headers == 2
    finally:
        tx.close()


def test_flush_interval_emits_short_frame(structured):
    sent = []
    tx = RelaySender(LOCAL, ("127.0.0.1", 9), PipelineConfig(frame_size=100),
                     flush_interval=0.05, send=sent.append).start()
    try:
        _blast(tx.address, structured[:5])
        assert _wait(lambda: tx.stats.frames_sent == 1, timeout=1.0)
    finally:
        tx.stop(5)
        tx.close()
    frames = [d for d in sent if d[0] == DGRAM_FRAME]
    assert FrameHeader.from_bytes(frames[0], 1).packet_count == 5


def test_short_datagrams_skipped(structured):
    tx = RelaySender(LOCAL, ("127.0.0.1", 9), send=lambda d: None).start()
    try:
        _blast(tx.address, [b"x" * 10, structured[0], b"y" * 1300], gap=0.001)
        assert _wait(lambda: tx.stats.packets_in == 3)
    finally:
        stats = tx.stop(5)
        tx.close()
    assert stats.skipped == 2 and stats.packets_out == 1 and stats.balanced


def test_drop_oldest_under_stalled_link(structured):
    gate = threading.Event()
    delivered = []

    def stalled(data):
        if data[0] == DGRAM_FRAME:
            gate.wait()
        delivered.append(data)

    cfg = PipelineConfig(frame_size=1, workers=1, queue_capacity=2, overflow="drop-oldest")
    tx = RelaySender(LOCAL, ("127.0.0.1", 9), cfg, send=stalled).start()
    try:
        _blast(tx.address, structured[:60], gap=0.001)
        assert _wait(lambda: tx.stats.packets_in == 60)
        assert tx.stats.packets_dropped > 0
    finally:
        gate.set()
        stats = tx.stop(5)
        tx.close()
    assert stats.balanced
    assert stats.packets_in == stats.packets_out + stats.packets_dropped == 60
    assert stats.frames_sent == len([d for d in delivered if d[0] == DGRAM_FRAME])


def test_mtu_budget_splits_frames(layout, structured):
    sent = []
    cfg = PipelineConfig(n=0, codec=CodecSettings("store"), frame_size=10)
    tx = RelaySender(LOCAL, ("127.0.0.1", 9), cfg, mtu_budget=5000, send=sent.append).start()
    try:
        _blast(tx.address, structured[:40], gap=0.0005)
        assert _wait(lambda: tx.stats.packets_out == 40)
    finally:
        tx.stop(5)
        tx.close()
    frames = [d for d in sent if d[0] == DGRAM_FRAME]
    assert all(len(d) <= 5000 for d in frames)
    assert sum(FrameHeader.from_bytes(d, 1).packet_count for d in frames) == 40
    assert tx.frame_size <= 4
    rx = RelayReceiver(LOCAL, lambda p: None)
    got = []
    rx.sink = got.append
    try:
        for d in sent:
            rx.handle_datagram(d)
    finally:
        rx.close()
    assert got == structured[:40]


def test_stats_dict():
    d = RelayStats(packets_in=3, packets_out=2, skipped=1).to_dict()
    assert d["packets_in"] == 3
    assert RelayStats(packets_in=3, packets_out=2, skipped=1).balanced
