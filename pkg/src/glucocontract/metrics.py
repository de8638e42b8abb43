"""Glycemic outcome metrics: time in ranges, LBGI/HBGI, summary statistics, CVGA."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .errors import DomainError

HYPO = 70.0
HYPER = 180.0
SEVERE_HYPO = 50.0

# symmetrizing transform of the BG risk function (BG in mg/dl)
RISK_SCALE = 1.509
RISK_EXPONENT = 1.084
RISK_SHIFT = 5.381


class CVGAZone(str, Enum):
    A = "A"
    LOWER_B = "LowerB"
    UPPER_B = "UpperB"
    B = "B"
    LOWER_C = "LowerC"
    UPPER_C = "UpperC"
    LOWER_D = "LowerD"
    UPPER_D = "UpperD"
    E = "E"


# rows: max BG band (<180, 180-300, >300); columns: min BG band (>90, 70-90, <70)
_CVGA_GRID = (
    (CVGAZone.A, CVGAZone.LOWER_B, CVGAZone.LOWER_C),
    (CVGAZone.UPPER_B, CVGAZone.B, CVGAZone.LOWER_D),
    (CVGAZone.UPPER_C, CVGAZone.UPPER_D, CVGAZone.E),
)


def _series(bg):
    bg = np.asarray(bg, dtype=float).ravel()
    if bg.size == 0:
        raise DomainError("empty glucose series")
    if not np.all(np.isfinite(bg)):
        raise DomainError("non-finite glucose value")
    return bg


def time_in_ranges(bg):
    """Percent of samples in [70, 180], above 180, below 70, and below 50."""
    bg = _series(bg)
    n = bg.size
    hyper = np.count_nonzero(bg > HYPER)
    hypo = np.count_nonzero(bg < HYPO)
    eu = n - hyper - hypo
    severe = np.count_nonzero(bg < SEVERE_HYPO)
    return 100.0 * eu / n, 100.0 * hyper / n, 100.0 * hypo / n, 100.0 * severe / n


def risk_transform(bg):
    bg = np.asarray(bg, dtype=float)
    return RISK_SCALE * (np.log(bg) ** RISK_EXPONENT - RISK_SHIFT)


def risk_indices(bg):
    """Low and high blood glucose indices ``(lbgi, hbgi)``."""
    bg = _series(bg)
    if np.any(bg <= 0):
        raise DomainError("glucose must be positive for risk indices")
    f = risk_transform(bg)
    risk = 10.0 * f * f
    lbgi = float(np.mean(np.where(f < 0, risk, 0.0)))
    hbgi = float(np.mean(np.where(f > 0, risk, 0.0)))
    return lbgi, hbgi


def hba1c_from_mean(mean_bg):
    return (mean_bg + 46.7) / 28.7


def summary_stats(bg):
    """``(mean, coefficient of variation as a fraction, HbA1c %)``."""
    bg = _series(bg)
    mean = float(np.mean(bg))
    cov = float(np.std(bg) / mean)
    return mean, cov, hba1c_from_mean(mean)


def cvga_zone(min_bg, max_bg):
    if min_bg > max_bg:
        raise DomainError("min_bg must not exceed max_bg")
    col = 0 if min_bg > 90 else (1 if min_bg >= 70 else 2)
    row = 0 if max_bg < 180 else (1 if max_bg <= 300 else 2)
    return _CVGA_GRID[row][col]


def cvga_cell(zone):
    """``(row, col)`` of a zone; larger indices are further from A."""
    for r, row in enumerate(_CVGA_GRID):
        if zone in row:
            return r, row.index(zone)
    raise DomainError(f"unknown zone {zone!r}")


@dataclass(frozen=True)
class GlycemicReport:
    pct_eu: float
    pct_hyper: float
    pct_hypo: float
    pct_severe_hypo: float
    lbgi: float
    hbgi: float
    mean_bg: float
    cov: float
    hba1c: float
    cvga: CVGAZone
    min_bg: float
    max_bg: float

    def to_dict(self):
        d = asdict(self)
        d["cvga"] = self.cvga.value
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cvga"] = CVGAZone(d["cvga"])
        return cls(**d)


def glycemic_report(bg):
    bg = _series(bg)
    eu, hyper, hypo, severe = time_in_ranges(bg)
    lbgi, hbgi = risk_indices(bg)
    mean, cov, a1c = summary_stats(bg)
    lo, hi = float(bg.min()), float(bg.max())
    return GlycemicReport(eu, hyper, hypo, severe, lbgi, hbgi, mean, cov, a1c, cvga_zone(lo, hi), lo, hi)


SUMMARY_COLUMNS = ("subject", "scenario", "pct_eu", "pct_hyper", "pct_hypo", "pct_severe_hypo",
                   "mean_bg", "cov", "hba1c", "lbgi", "hbgi")


def write_summary_csv(path, rows):
    """Write one line per (subject, scenario) aggregate: time in ranges, then mean, CoV, HbA1c and risk indices."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in SUMMARY_COLUMNS])
