"""Extended Luenberger observer, proportional state feedback, and their Jacobians."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .model import rest_equilibrium

MODES = ("corrected", "paper_literal")


@dataclass(frozen=True)
class ControlLimits:
    u_min: float = 0.0
    u_max: float = math.inf
    hold_period: float = 1.0

    def __post_init__(self):
        if not (0 <= self.u_min < self.u_max):
            raise DomainError("need 0 <= u_min < u_max")
        if not self.hold_period > 0:
            raise DomainError("hold_period must be positive")

    def to_dict(self):
        d = asdict(self)
        d["u_max"] = None if math.isinf(self.u_max) else self.u_max
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("u_max") is None:
            d["u_max"] = math.inf
        return cls(**d)


def _gain(v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (4,):
        raise DomainError(f"{name} must have 4 entries")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be finite")
    return v


def observer_deriv(xh, y, u, p, L):
    """Observer vector field; the bilinear term uses the measured glucose ``y``."""
    xh = np.asarray(xh, dtype=float)
    L = _gain(L, "L")
    if not (np.all(np.isfinite(xh)) and math.isfinite(y) and math.isfinite(u)):
        raise DomainError("non-finite input")
    e = xh[0] - y
    return np.array([
        -p.p1 * xh[0] - xh[1] * y + p.egp + L[0] * e,
        -p.p2 * xh[1] + p.p3 * xh[2] + L[1] * e,
        -p.p4 * xh[2] + p.p4 * xh[3] + L[2] * e,
        -p.p5 * xh[3] + p.p6 * u + L[3] * e,
    ])


def control_law(xh, eq, K, lim=ControlLimits()):
    """Saturated insulin command ``u_basal + K . (xh - x_eq)``."""
    K = _gain(K, "K")
    xd = np.asarray(xh, dtype=float) - eq.state
    u_raw = eq.u_basal + (K[0] * xd[0] + K[1] * xd[1] + K[2] * xd[2] + K[3] * xd[3])
    return min(max(u_raw, lim.u_min), lim.u_max)


def observer_virtual_jacobian(p, L, x1):
    L = _gain(L, "L")
    return np.array([
        [-p.p1 + L[0], -x1, 0.0, 0.0],
        [L[1], -p.p2, p.p3, 0.0],
        [L[2], 0.0, -p.p4, p.p4],
        [L[3], 0.0, 0.0, -p.p5],
    ])


def closed_loop_field(p, K, x_d, eq=None):
    """Nominal closed-loop deviation dynamics f(x_d) + B K x_d (exact state, no meal)."""
    eq = rest_equilibrium(p) if eq is None else eq
    K = _gain(K, "K")
    x1d, x2d, x3d, x4d = np.asarray(x_d, dtype=float)
    g, x2s = eq.state[0], eq.state[1]
    return np.array([
        -(p.p1 + x2s) * x1d - g * x2d - x1d * x2d,
        -p.p2 * x2d + p.p3 * x3d,
        -p.p4 * x3d + p.p4 * x4d,
        -p.p5 * x4d + p.p6 * (K[0] * x1d + K[1] * x2d + K[2] * x3d + K[3] * x4d),
    ])


def closed_loop_jacobian(p, K, x_d, mode="corrected", eq=None):
    """Jacobian of the closed-loop deviation dynamics.

    ``eq`` defaults to the insulin-free rest point. ``paper_literal`` keeps
    the printed ``+(EGP/p1) - x1d`` entry in position (1, 2).
    """
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    eq = rest_equilibrium(p) if eq is None else eq
    K = _gain(K, "K")
    x1d, x2d = float(x_d[0]), float(x_d[1])
    g, x2s = eq.state[0], eq.state[1]
    a12 = -g - x1d if mode == "corrected" else g - x1d
    p6 = p.p6
    return np.array([
        [-p.p1 - x2s - x2d, a12, 0.0, 0.0],
        [0.0, -p.p2, p.p3, 0.0],
        [0.0, 0.0, -p.p4, p.p4],
        [K[0] * p6, K[1] * p6, K[2] * p6, K[3] * p6 - p.p5],
    ])
