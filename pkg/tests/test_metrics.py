import csv
import io
import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarmask.errors import ParameterError, StructuralError
from lidarmask.mask import build_mask, mask_packets
from lidarmask.metrics import (CSV_COLUMNS, ErrorAccumulator, cells_to_csv, cells_to_json,
                               compression_report, error_stats, sweep)
from lidarmask.packet import extract_measurements
from lidarmask.synthetic import uniform_residue_packets


def brute_force(original, masked, layout):
    """Two-pass definition over per-measurement errors, via the scalar parser."""
    errs, nulls = [], 0
    for a, b in zip(original, masked):
        for ma, mb in zip(extract_measurements(a, layout), extract_measurements(b, layout)):
            if ma.raw == 0:
                nulls += 1
                continue
            errs.append(abs(ma.distance_mm - mb.distance_mm))
    return statistics.fmean(errs), statistics.pstdev(errs), max(errs), nulls


def test_n0_zero_error(layout, structured):
    s = error_stats(structured[:50], structured[:50], layout, 0)
    assert (s.mean_mm, s.std_mm, s.max_mm) == (0.0, 0.0, 0.0)


def test_uniform_residue_closed_form(layout):
    packets = uniform_residue_packets(4, 64)
    masked = mask_packets(packets, build_mask(layout, 4))
    s = error_stats(packets, masked, layout, 4)
    mean, std, mx, nulls = brute_force(packets, masked, layout)
    assert nulls == 0 == s.nulls_excluded
    assert s.mean_mm == pytest.approx(15.0, rel=1e-12)
    assert s.std_mm == pytest.approx(math.sqrt(255 / 12) * 2, rel=1e-12)
    assert s.std_mm == pytest.approx(9.2195, abs=5e-5)
    assert s.max_mm == mx == 30.0 == s.theoretical_max_mm
    assert s.mean_mm == pytest.approx(mean, rel=1e-12)
    assert s.std_mm == pytest.approx(std, rel=1e-12)


def test_matches_two_pass_on_scene(layout, structured):
    for n in (2, 5, 9):
        masked = mask_packets(structured[:80], build_mask(layout, n))
        s = error_stats(structured[:80], masked, layout, n)
        mean, std, mx, nulls = brute_force(structured[:80], masked, layout)
        assert s.nulls_excluded == nulls > 0
        assert s.mean_mm == pytest.approx(mean, rel=1e-9)
        assert s.std_mm == pytest.approx(std, rel=1e-9)
        assert s.max_mm == mx <= s.theoretical_max_mm


@pytest.mark.parametrize("n", range(16))
def test_exhaustive_mean_closed_form(n):
    values = np.arange(1 << 16, dtype=np.uint64)
    masked = values - values % (1 << n)
    acc = ErrorAccumulator(2.0, n, exclude_nulls=False)
    acc.update(values, masked)
    s = acc.result()
    assert s.mean_mm == ((2 ** n - 1) / 2) * 2.0
    assert s.max_mm == s.theoretical_max_mm
    # with the null excluded only 65535 values remain
    acc = ErrorAccumulator(2.0, n)
    acc.update(values, masked)
    s = acc.result()
    assert s.nulls_excluded == 1
    assert s.mean_mm == pytest.approx(2 ** 15 * (2 ** n - 1) / 65535 * 2.0, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 0xFFFF), min_size=1, max_size=50), min_size=1,
                max_size=8), st.integers(0, 15))
def test_streaming_equals_two_pass(chunks, n):
    acc = ErrorAccumulator(2.0, n)
    allerr = []
    for chunk in chunks:
        v = np.array(chunk, dtype=np.uint64)
        m = v - v % (1 << n)
        acc.update(v, m)
        allerr += [float(e) * 2.0 for e, orig in zip(v - m, v) if orig != 0]
    s = acc.result()
    if not allerr:
        assert s.count == 0
        return
    assert s.mean_mm == pytest.approx(statistics.fmean(allerr), rel=1e-9, abs=1e-12)
    assert s.std_mm == pytest.approx(statistics.pstdev(allerr), rel=1e-9, abs=1e-9)
    assert 0 <= s.mean_mm <= s.max_mm <= s.theoretical_max_mm


def test_count_mismatch(layout, structured):
    with pytest.raises(StructuralError):
        error_stats(structured[:3], structured[:2], layout)


def test_report_arithmetic():
    r = compression_report(1000, 250, 10.0, 1.5, codec="lz4", n=4)
    assert r.rpt == pytest.approx(0.15)
    assert r.real_time
    assert r.rfs == 0.25
    with pytest.raises(ParameterError):
        compression_report(1000, 250, 0.0, 1.5)


def test_sweep_store_single_cell(layout, structured):
    cells = sweep(structured[:100], layout, [0], ["store"], duration_s=0.133)
    assert len(cells) == 1
    c = cells[0]
    overhead = 21 + 12 + 12
    assert c.report.compressed_bytes == 100 * 1206 + overhead
    assert c.report.rfs == pytest.approx(1.0, abs=overhead / (100 * 1206) + 1e-12)
    assert c.errors.mean_mm == 0.0 and c.errors.max_mm == 0.0


def test_sweep_deflate_non_increasing(layout, structured):
    cells = sweep(structured, layout, [0, 2, 4, 6, 8], ["deflate"], duration_s=2.0)
    rfs = [c.report.rfs for c in cells]
    for a, b in zip(rfs, rfs[1:]):
        assert b <= a * 1.01


def test_sweep_errors_codec_independent(layout, structured):
    cells = sweep(structured[:200], layout, [3, 6], ["store", "deflate", "lz4"], 0.266)
    assert [(c.n, c.codec) for c in cells] == [
        (3, "store"), (3, "deflate"), (3, "lz4"), (6, "store"), (6, "deflate"), (6, "lz4")]
    for n in (3, 6):
        stats = {c.errors for c in cells if c.n == n}
        assert len(stats) == 1
    store = {c.n: c.report.rfs for c in cells if c.codec == "store"}
    for c in cells:
        assert c.report.rfs <= store[c.n]
        assert c.errors.max_mm <= c.errors.theoretical_max_mm


def test_sweep_records_codec_failure(layout, structured, monkeypatch):
    from lidarmask import codecs
    monkeypatch.setattr(codecs, "lz4frame", None)
    cells = sweep(structured[:10], layout, [2], ["deflate", "lz4"], 0.0133)
    assert cells[0].error is None
    assert cells[1].report is None and "LZ4" in cells[1].error
    rows = list(csv.DictReader(io.StringIO(cells_to_csv(cells))))
    assert rows[1]["rfs"] == ""
    assert json.loads(cells_to_json(cells))[1]["error"]


def test_csv_schema(layout, structured):
    cells = sweep(structured[:20], layout, [0, 4], ["store", "lz4"], 0.0266)
    text = cells_to_csv(cells)
    header = text.splitlines()[0].split(",")
    assert tuple(header) == CSV_COLUMNS
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 4
    js = json.loads(cells_to_json(cells))
    assert [set(r) - {"error"} for r in js] == [set(CSV_COLUMNS)] * 4
