"""Glucose-insulin plant (MVP model), gut absorption, equilibria and Jacobians.

States are plain length-4 float arrays ``(x1, x2, x3, x4)``:

    x1  blood glucose                  mg/dl
    x2  effective insulin              1/min
    x3  plasma insulin                 mU/l
    x4  subcutaneous insulin           mU/l
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, InfeasibleSetpoint

PARAM_NAMES = ("p1", "p2", "p3", "p4", "p5", "p6", "egp")


@dataclass(frozen=True)
class PatientParams:
    """Physiological constants of one virtual patient."""

    p1: float
    p2: float
    p3: float
    p4: float
    p5: float
    p6: float
    egp: float
    label: str = ""

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v!r}")

    @property
    def open_loop_glucose(self):
        """Fasting glucose with no insulin, EGP/p1."""
        return self.egp / self.p1

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return PatientParams(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**{k: d[k] for k in PARAM_NAMES}, label=str(d.get("label", "")))
        except KeyError as exc:
            raise ConfigError(f"patient parameters missing key {exc}") from None


class PlantState(NamedTuple):
    x1: float
    x2: float
    x3: float
    x4: float


@dataclass(frozen=True)
class MealParams:
    """Two-compartment gut model settings.

    ``carb_gain`` converts grams of carbohydrate into the model's meal input
    (mg/dl per g); a meal of D grams enters as a rectangular pulse of height
    ``carb_gain * D / pulse_width`` lasting ``pulse_width`` minutes.
    """

    t_max: float = 43.0
    bio: float = 0.71
    carb_gain: float = 1.0
    pulse_width: float = 1.0

    def __post_init__(self):
        for name in ("t_max", "bio", "carb_gain", "pulse_width"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v!r}")

    @classmethod
    def from_reported_bio(cls, bio, as_percent=True, **kw):
        """Build from a bioavailability figure quoted as e.g. ``71``.

        ``as_percent=True`` reads it as 71 % (0.71); ``False`` keeps it verbatim.
        """
        return cls(bio=bio / 100.0 if as_percent else float(bio), **kw)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "bio_percent" in d:
            d["bio"] = d.pop("bio_percent") / 100.0
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EquilibriumPoint:
    state: np.ndarray
    u_basal: float
    g_sp: float

    def to_dict(self):
        return {"state": [float(v) for v in self.state], "u_basal": self.u_basal, "g_sp": self.g_sp}


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


def load_patients(path=None):
    """Return ``{label: PatientParams}`` from a JSON file (the bundled subjects 1, 3 and 5 by default)."""
    if path is None:
        text = resources.files("glucocontract").joinpath("data/patients.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    return {str(k): PatientParams.from_dict(v) for k, v in raw.items()}


def get_patient(label):
    patients = load_patients()
    try:
        return patients[str(label)]
    except KeyError:
        raise ConfigError(f"unknown subject {label!r}; known: {sorted(patients)}") from None


def plant_deriv(x, p, u, ra=0.0):
    x = np.asarray(x, dtype=float)
    _check_finite(x, u, ra)
    x1, x2, x3, x4 = x
    return np.array([
        -p.p1 * x1 - x1 * x2 + p.egp + ra,
        -p.p2 * x2 + p.p3 * x3,
        -p.p4 * x3 + p.p4 * x4,
        -p.p5 * x4 + p.p6 * u,
    ])


def meal_deriv(m, mp, carb_rate):
    """Gut compartments derivative and rate of appearance ``ra = d2 / t_max``."""
    m = np.asarray(m, dtype=float)
    _check_finite(m, carb_rate)
    d1, d2 = m
    dm = np.array([-d1 / mp.t_max + mp.bio * carb_rate, d1 / mp.t_max - d2 / mp.t_max])
    return dm, d2 / mp.t_max


def equilibrium_for_setpoint(p, g_sp=None):
    """Steady state holding glucose at ``g_sp`` with a constant basal infusion.

    ``g_sp=None`` gives the insulin-free rest point ``(EGP/p1, 0, 0, 0)``.
    """
    g_top = p.open_loop_glucose
    if g_sp is None:
        g_sp = g_top
    if not (math.isfinite(g_sp) and 0 < g_sp <= g_top * (1 + 1e-12)):
        raise InfeasibleSetpoint(f"setpoint {g_sp!r} outside (0, EGP/p1 = {g_top:.6g}]")
    x2 = max((p.egp - p.p1 * g_sp) / g_sp, 0.0)
    x3 = p.p2 / p.p3 * x2
    u_basal = p.p5 / p.p6 * x3
    return EquilibriumPoint(np.array([g_sp, x2, x3, x3]), u_basal, g_sp)


def rest_equilibrium(p):
    return equilibrium_for_setpoint(p, None)


def to_deviation(x, eq):
    return np.asarray(x, dtype=float) - eq.state


def from_deviation(x_d, eq):
    return np.asarray(x_d, dtype=float) + eq.state


def plant_jacobian(x, p):
    x1, x2, _, _ = np.asarray(x, dtype=float)
    return np.array([
        [-p.p1 - x2, -x1, 0.0, 0.0],
        [0.0, -p.p2, p.p3, 0.0],
        [0.0, 0.0, -p.p4, p.p4],
        [0.0, 0.0, 0.0, -p.p5],
    ])
