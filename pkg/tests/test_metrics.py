import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glucocontract.errors import DomainError
from glucocontract.metrics import (CVGAZone, GlycemicReport, cvga_cell, cvga_zone, glycemic_report,
                                   hba1c_from_mean, risk_indices, summary_stats, time_in_ranges,
                                   write_summary_csv)

bg_lists = st.lists(st.floats(1, 600), min_size=1, max_size=300)


def _f(bg):
    return 1.509 * (math.log(bg) ** 1.084 - 5.381)


def test_time_in_ranges_examples():
    assert time_in_ranges(np.full(100, 120.0)) == (100.0, 0.0, 0.0, 0.0)
    assert time_in_ranges(np.full(100, 200.0)) == (0.0, 100.0, 0.0, 0.0)
    assert time_in_ranges(np.r_[np.full(720, 120.0), np.full(720, 200.0)]) == (50.0, 50.0, 0.0, 0.0)
    assert time_in_ranges([70.0, 180.0, 45.0, 60.0]) == (50.0, 0.0, 50.0, 25.0)
    with pytest.raises(DomainError):
        time_in_ranges([])


@given(bg_lists)
def test_partition(bg):
    eu, hyper, hypo, severe = time_in_ranges(bg)
    assert abs(eu + hyper + hypo - 100.0) <= 1e-9
    assert 0 <= severe <= hypo


def test_risk_examples():
    lo, hi = risk_indices(np.full(10, 112.5))
    assert lo <= 1e-3 and hi <= 1e-3
    lo, hi = risk_indices(np.full(10, 50.0))
    assert lo == pytest.approx(10 * _f(50.0) ** 2)
    assert lo == pytest.approx(22.5, abs=0.1)
    assert hi == 0
    lo, hi = risk_indices(np.full(10, 400.0))
    assert lo == 0 and hi > 0
    with pytest.raises(DomainError):
        risk_indices([100.0, 0.0])


def test_risk_mixed_series():
    bg = [50.0, 400.0, 112.5, 90.0]
    lo, hi = risk_indices(bg)
    fs = [_f(b) for b in bg]
    assert lo == pytest.approx(sum(10 * f * f for f in fs if f < 0) / 4)
    assert hi == pytest.approx(sum(10 * f * f for f in fs if f > 0) / 4)


@given(st.lists(st.floats(1, 600), min_size=1, max_size=50), st.floats(1.01, 3))
def test_risk_scale_monotone(bg, k):
    lifted = np.maximum(np.array(bg), 113.0)
    lo0, hi0 = risk_indices(lifted)
    lo1, hi1 = risk_indices(lifted * k)
    assert lo0 == 0 and lo1 == 0
    assert hi1 > hi0


def test_summary_stats():
    assert hba1c_from_mean(148.69) == pytest.approx(6.8081, abs=5e-3)
    assert hba1c_from_mean(136.48) == pytest.approx(6.3827, abs=5e-3)
    mean, cov, a1c = summary_stats(np.full(50, 130.0))
    assert (mean, cov) == (130.0, 0.0)
    bg = np.array([100.0, 140.0])
    mean, cov, a1c = summary_stats(bg)
    assert mean == 120.0 and cov == pytest.approx(20.0 / 120.0)
    with pytest.raises(DomainError):
        summary_stats([])


PROBES = {
    (95, 160): CVGAZone.A, (75, 160): CVGAZone.LOWER_B, (95, 250): CVGAZone.UPPER_B, (75, 250): CVGAZone.B,
    (45, 160): CVGAZone.LOWER_C, (95, 350): CVGAZone.UPPER_C, (45, 250): CVGAZone.LOWER_D,
    (75, 350): CVGAZone.UPPER_D, (45, 350): CVGAZone.E,
}


@pytest.mark.parametrize("probe", sorted(PROBES))
def test_cvga_probes(probe):
    assert cvga_zone(*probe) is PROBES[probe]


def test_cvga_boundaries():
    assert cvga_zone(90, 100) is CVGAZone.LOWER_B
    assert cvga_zone(70, 100) is CVGAZone.LOWER_B
    assert cvga_zone(69.9, 100) is CVGAZone.LOWER_C
    assert cvga_zone(100, 180) is CVGAZone.UPPER_B
    assert cvga_zone(100, 300) is CVGAZone.UPPER_B
    assert cvga_zone(100, 300.1) is CVGAZone.UPPER_C
    with pytest.raises(DomainError):
        cvga_zone(200, 100)


@given(st.floats(20, 400), st.floats(0, 200), st.floats(0, 100), st.floats(0, 100))
def test_cvga_order_preserving(lo, span, up, down):
    hi = lo + span
    r0, c0 = cvga_cell(cvga_zone(lo, hi))
    r1, c1 = cvga_cell(cvga_zone(min(lo + up, hi), max(hi - down, min(lo + up, hi))))
    assert r1 <= r0 and c1 <= c0


def test_report_invariants_and_roundtrip():
    rng = np.random.default_rng(4)
    bg = rng.uniform(40, 350, 1441)
    r = glycemic_report(bg)
    assert abs(r.pct_eu + r.pct_hyper + r.pct_hypo - 100) <= 1e-9
    assert r.lbgi >= 0 and r.hbgi >= 0
    assert r.min_bg <= r.mean_bg <= r.max_bg
    assert r.cvga is cvga_zone(bg.min(), bg.max())
    assert GlycemicReport.from_dict(r.to_dict()) == r


def test_summary_csv(tmp_path):
    row = {"subject": "1", "scenario": "2C", "pct_eu": 90.0, "pct_hyper": 10.0, "pct_hypo": 0.0,
           "pct_severe_hypo": 0.0, "mean_bg": 140.0, "cov": 0.2, "hba1c": 6.5, "lbgi": 0.1, "hbgi": 2.0}
    path = tmp_path / "s.csv"
    write_summary_csv(path, [row])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["scenario"] == "2C" and float(rows[0]["mean_bg"]) == 140.0
