import csv
import json
import subprocess
import sys

import pytest

from lidarmask import codecs
from lidarmask.cli import main
from lidarmask.container import read_stream
from lidarmask.ingest import TimedPacket, read_pcap, read_raw, write_pcap
from lidarmask.mask import build_mask, mask_packets


@pytest.fixture
def capture(tmp_path, structured):
    path = tmp_path / "in.pcap"
    path.write_bytes(write_pcap([TimedPacket(i * 1_330_000, p)
                                 for i, p in enumerate(structured[:300])]))
    return path


def _payloads(path):
    with open(path, "rb") as f:
        return [p.payload for p in read_pcap(f)]


def test_compress_decompress(tmp_path, capture, layout, structured):
    lmc, back = tmp_path / "out.lmc", tmp_path / "back.pcap"
    assert main(["compress", "--bits", "4", "--codec", "lz4", str(capture), str(lmc),
                 "--report", str(tmp_path / "c.json")]) == 0
    assert main(["decompress", str(lmc), str(back)]) == 0
    assert _payloads(back) == mask_packets(structured[:300], build_mask(layout, 4))
    rep = json.loads((tmp_path / "c.json").read_text())
    assert rep["packets"] == 300 and rep["n"] == 4 and 0 < rep["rfs"] < 1


def test_decompress_raw_by_extension(tmp_path, capture, structured):
    lmc = tmp_path / "o.lmc"
    main(["compress", "-n", "0", "--codec", "store", str(capture), str(lmc)])
    assert main(["decompress", str(lmc), str(tmp_path / "o.bin")]) == 0
    with open(tmp_path / "o.bin", "rb") as f:
        assert [p.payload for p in read_raw(f)] == structured[:300]


def test_bits_out_of_range(tmp_path, capture, capsys):
    assert main(["compress", "--bits", "16", str(capture), str(tmp_path / "x.lmc")]) == 1
    assert "usage" in capsys.readouterr().err
    assert not (tmp_path / "x.lmc").exists()


def test_usage_errors(capture):
    assert main([]) == 1
    assert main(["compress"]) == 1
    assert main(["sweep", str(capture), "--bits", "a,b"]) == 1
    assert main(["compress", str(capture), "o", "--codec", "zstd"]) == 1
    assert main(["analyze", str(capture)]) == 1


def test_data_errors(tmp_path, capture):
    assert main(["decompress", str(capture), str(tmp_path / "x.pcap")]) == 2
    assert main(["compress", str(tmp_path / "missing.pcap"), str(tmp_path / "x.lmc")]) == 2


def test_corrupt_container_exit_2(tmp_path, capture, structured):
    lmc = tmp_path / "o.lmc"
    main(["compress", "--frame-size", "100", str(capture), str(lmc)])
    blob = bytearray(lmc.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    lmc.write_bytes(bytes(blob))
    report = tmp_path / "d.json"
    assert main(["decompress", str(lmc), str(tmp_path / "b.pcap"), "--report", str(report)]) == 2
    rep = json.loads(report.read_text())
    assert rep["lost_frames"] == [1] and rep["packets"] == 200


def test_missing_codec_exit_3(tmp_path, capture, monkeypatch):
    monkeypatch.setattr(codecs, "lz4frame", None)
    assert main(["compress", "--codec", "lz4", str(capture), str(tmp_path / "x.lmc")]) == 3
    assert not (tmp_path / "x.lmc").exists()


def test_sweep_csv_rows(tmp_path, capture):
    out = tmp_path / "r.csv"
    assert main(["sweep", "--bits", "0,2,4,6,8", "--codecs", "store,deflate,lz4",
                 str(capture), "--report", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 15
    assert {(int(r["n"]), r["codec"]) for r in rows} == {
        (n, c) for n in (0, 2, 4, 6, 8) for c in ("store", "deflate", "lz4")}


def test_sweep_json(tmp_path, capture):
    out = tmp_path / "r.json"
    assert main(["sweep", "--bits", "4", "--codecs", "lz4", str(capture),
                 "--report", str(out)]) == 0
    (row,) = json.loads(out.read_text())
    assert row["err_theoretical_max_mm"] == 30.0


def test_analyze_bits_and_against(tmp_path, capture):
    r1, r2 = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["analyze", str(capture), "--bits", "4", "--report", str(r1)]) == 0
    lmc = tmp_path / "o.lmc"
    main(["compress", "-n", "4", str(capture), str(lmc)])
    assert main(["analyze", str(capture), "--against", str(lmc), "--report", str(r2)]) == 0
    a, b = json.loads(r1.read_text()), json.loads(r2.read_text())
    assert a == b
    assert 0 < a["mean_mm"] <= a["max_mm"] <= 30.0


def test_bench_refuses_short_input(capture, capsys):
    assert main(["bench", str(capture)]) == 2
    assert "at least" in capsys.readouterr().err


def test_bench_two_series(tmp_path, structured):
    path = tmp_path / "long.pcap"
    packets = (structured * 2)[:800]
    path.write_bytes(write_pcap([TimedPacket(i * 1_330_000, p) for i, p in enumerate(packets)]))
    report = tmp_path / "bench.json"
    assert main(["bench", str(path), "--codecs", "store,lz4", "--workers", "2",
                 "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["repeats"] == 3
    series = {(r["codec"], r["workers"]) for r in rep["rows"]}
    assert series == {("mask-only", 1), ("store", 1), ("lz4", 1), ("store", 2), ("lz4", 2)}
    assert all(r["mask_us_per_packet"] > 0 for r in rep["rows"])


def test_workers_from_environment(tmp_path, capture, monkeypatch):
    monkeypatch.setenv("LMC_WORKERS", "3")
    assert main(["compress", str(capture), str(tmp_path / "o.lmc")]) == 0
    monkeypatch.setenv("LMC_WORKERS", "many")
    assert main(["compress", str(capture), str(tmp_path / "p.lmc")]) == 1


def test_deterministic_output(tmp_path, capture):
    for name in ("a.lmc", "b.lmc"):
        main(["compress", "--workers", "3", "--codec", "deflate", str(capture),
              str(tmp_path / name)])
    assert (tmp_path / "a.lmc").read_bytes() == (tmp_path / "b.lmc").read_bytes()
    header, _ = read_stream((tmp_path / "a.lmc").read_bytes())
    assert header.masked_bits == 4


def test_module_entry_point(tmp_path, capture):
    res = subprocess.run([sys.executable, "-m", "lidarmask", "compress", "--bits", "99",
                          str(capture), str(tmp_path / "o.lmc")], capture_output=True, text=True)
    assert res.returncode == 1
    res = subprocess.run([sys.executable, "-m", "lidarmask", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "relay-send" in res.stdout


def _free_port():
    import socket
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_relay_subcommands(tmp_path, layout, structured):
    import socket
    import threading
    import time

    send_port, recv_port = _free_port(), _free_port()
    out = tmp_path / "relayed.bin"
    results = {}
    recv = threading.Thread(target=lambda: results.setdefault("recv", main(
        ["relay-recv", "--listen", f"127.0.0.1:{recv_port}", str(out), "--duration", "2.0",
         "--report", str(tmp_path / "r.json")])))
    send = threading.Thread(target=lambda: results.setdefault("send", main(
        ["relay-send", "--listen", f"127.0.0.1:{send_port}", "--dest", f"127.0.0.1:{recv_port}",
         "--bits", "6", "--frame-size", "25", "--duration", "1.2",
         "--report", str(tmp_path / "s.json")])))
    recv.start()
    time.sleep(0.2)
    send.start()
    time.sleep(0.3)
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        for p in structured[:100]:
            s.sendto(p, ("127.0.0.1", send_port))
            time.sleep(0.001)
    send.join(10)
    recv.join(10)
    assert results == {"send": 0, "recv": 0}
    with open(out, "rb") as f:
        got = [p.payload for p in read_raw(f)]
    assert got == mask_packets(structured[:100], build_mask(layout, 6))
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["packets_in"] == s["packets_out"] == 100 and s["frames_sent"] == 4
