import csv
import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamsight.nrlatency import (DEFAULT_EXHAUSTIVE_MS, NrTimingConfig, end_to_end_latency, exhaustive_total,
                                 overhead_report, sweep_time_exhaustive, sweep_time_topk)

CFG = NrTimingConfig()


def _exact_topk(k):
    """Rational-arithmetic evaluation of the top-k sweep time."""
    t_ssb = Fraction(5, 32)
    return 20 * ((k - 1) // 32) + t_ssb * (1 + (k - 1) % 32)


def test_config_defaults():
    assert CFG.t_ssb == 0.15625 and CFG.t_ssb * CFG.blocks_per_burst == CFG.t_bs
    for bad in ({"t_bs": 0.0}, {"T_ssb": -1.0}, {"blocks_per_burst": 0}, {"T_inf": -0.1}):
        with pytest.raises(ValueError):
            NrTimingConfig(**bad)


def test_exhaustive_examples():
    assert sweep_time_exhaustive(32) == 5.0
    assert sweep_time_exhaustive(33) == 25.0
    assert sweep_time_exhaustive(64) == 25.0
    assert sweep_time_exhaustive(1) == 5.0
    with pytest.raises(ValueError):
        sweep_time_exhaustive(0)


def test_topk_examples():
    assert sweep_time_topk(1) == 0.15625
    assert sweep_time_topk(15) == 2.34375
    assert sweep_time_topk(32) == 5.0
    assert sweep_time_topk(33) == 20.15625
    with pytest.raises(ValueError):
        sweep_time_topk(0)
    with pytest.raises(ValueError):
        sweep_time_topk(2.5)


def test_end_to_end_examples():
    assert end_to_end_latency(15) == pytest.approx(3.44375, abs=1e-12)
    assert round(end_to_end_latency(15), 2) == 3.44
    assert end_to_end_latency(1) == pytest.approx(1.25625, abs=1e-12)
    bare = NrTimingConfig(T_inf=0.0, T_prc_plus_fb=0.0)
    assert end_to_end_latency(15, bare) == sweep_time_topk(15)


def test_exhaustive_total_is_default_baseline():
    assert exhaustive_total(64) == pytest.approx(DEFAULT_EXHAUSTIVE_MS, abs=1e-12)


def test_report_figures():
    rep = overhead_report(64, (1, 5, 9, 11, 15), exhaustive_total_ms=26.1)
    r = rep.row(15)
    assert r.latency_reduction_pct == pytest.approx(86.81, abs=0.05)
    assert round(r.latency_reduction_pct, 2) == 86.81
    assert r.search_fraction_pct == 23.4375 and r.search_reduction_pct == 76.5625
    assert rep.row(64, "exhaustive").T_sp_mm_ms == 25.0
    full = overhead_report(64, (64,)).row(64)
    assert full.search_reduction_pct == 0.0
    with pytest.raises(ValueError):
        overhead_report(64, (65,))
    with pytest.raises(ValueError):
        overhead_report(64, (5,), exhaustive_total_ms=0.0)
    with pytest.raises(KeyError):
        rep.row(7)


def test_report_csv_json_agree(tmp_path):
    rep = overhead_report(seed=3)
    rep.write_csv(tmp_path / "l.csv")
    rep.write_json(tmp_path / "l.json")
    rows = list(csv.DictReader(open(tmp_path / "l.csv")))
    doc = json.loads((tmp_path / "l.json").read_text())
    assert len(rows) == len(doc["rows"])
    for a, b in zip(rows, doc["rows"]):
        for key, val in b.items():
            assert (a[key].strip("'") == val) if isinstance(val, str) else float(a[key]) == val
    assert doc["config"]["seed"] == 3


@given(st.integers(1, 300))
def test_sweep_times_match_rational_oracle(k):
    assert abs(sweep_time_topk(k) - float(_exact_topk(k))) <= 1e-9


@given(st.integers(1, 300))
def test_topk_never_exceeds_exhaustive(K):
    gap = sweep_time_exhaustive(K) - sweep_time_topk(K)
    assert gap >= 0
    assert gap == pytest.approx(CFG.t_bs - CFG.t_ssb * (1 + (K - 1) % 32), abs=1e-12)


@given(st.integers(1, 300))
def test_sweep_times_nondecreasing(k):
    assert sweep_time_topk(k) <= sweep_time_topk(k + 1)
    assert sweep_time_exhaustive(k) <= sweep_time_exhaustive(k + 1)
    if k % 32:  # same burst
        assert end_to_end_latency(k + 1) - end_to_end_latency(k) == pytest.approx(CFG.t_ssb, abs=1e-12)


@given(st.lists(st.integers(1, 64), min_size=1, max_size=10))
def test_report_rows_monotone(ks):
    rows = [r for r in overhead_report(64, ks).rows if r.scheme == "top-k"]
    assert all(a.total_ms <= b.total_ms for a, b in zip(rows, rows[1:]))
    assert all(0 < r.search_fraction_pct <= 100 for r in rows)
