"""Matrix measures, diagonal-metric contraction certificates, and gain synthesis.

A certificate states that ``-mu(Theta J Theta^-1) >= margin`` for every Jacobian
``J`` reachable inside a :class:`StateBox`, with ``Theta = diag(theta)``. Every
Jacobian entry is affine in the box variables and the measures are convex in
the matrix, so checking the box vertices is exact.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .control import MODES, closed_loop_jacobian, observer_virtual_jacobian
from .errors import ConfigError, DomainError, Infeasible
from .model import rest_equilibrium


class MatrixMeasureKind(str, Enum):
    ONE = "one"
    TWO = "two"
    INF = "inf"


def _kind(kind):
    try:
        return MatrixMeasureKind(kind)
    except ValueError:
        raise DomainError(f"unknown matrix measure {kind!r}") from None


def _offdiag_abs(A):
    M = np.abs(A)
    np.fill_diagonal(M, 0.0)
    return M


def matrix_measure(A, kind="one"):
    """Logarithmic norm of ``A`` induced by the 1-, 2- or inf-vector norm."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix must be finite")
    kind = _kind(kind)
    if kind is MatrixMeasureKind.TWO:
        return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
    off = _offdiag_abs(A)
    d = np.diag(A)
    if kind is MatrixMeasureKind.ONE:
        return float(np.max(d + off.sum(axis=0)))
    return float(np.max(d + off.sum(axis=1)))


def _check_theta(theta, n):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n,):
        raise DomainError(f"theta must have {n} entries")
    if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
        raise DomainError("theta entries must be positive and finite")
    return theta


def scaled_measure(A, theta, kind="one"):
    """``matrix_measure(Theta A Theta^-1)`` for ``Theta = diag(theta)``."""
    A = np.asarray(A, dtype=float)
    theta = _check_theta(theta, A.shape[0])
    return matrix_measure(A * (theta[:, None] / theta[None, :]), kind)


def column_terms(A, theta, kind="one"):
    """Per-column (``one``) or per-row (``inf``) terms whose max is the measure."""
    A = np.asarray(A, dtype=float)
    theta = _check_theta(theta, A.shape[0])
    S = A * (theta[:, None] / theta[None, :])
    kind = _kind(kind)
    axis = {MatrixMeasureKind.ONE: 0, MatrixMeasureKind.INF: 1}.get(kind)
    if axis is None:
        raise DomainError("column terms are defined for the 1 and inf measures only")
    return np.diag(S) + _offdiag_abs(S).sum(axis=axis)


@dataclass(frozen=True)
class StateBox:
    """Closed intervals for the free variables of a Jacobian.

    The observer uses ``x1`` (mg/dl); the closed loop uses ``x1`` (absolute
    glucose, converted to a deviation internally) and ``x2d``.
    """

    intervals: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, (lo, hi) in self.intervals.items():
            lo, hi = float(lo), float(hi)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise DomainError(f"bad interval for {name}: [{lo}, {hi}]")
            clean[name] = (lo, hi)
        object.__setattr__(self, "intervals", clean)

    @classmethod
    def observer(cls, x1_lo, x1_hi):
        return cls({"x1": (x1_lo, x1_hi)})

    @classmethod
    def controller(cls, x1=(40.0, 400.0), x2d=(0.0, 0.05)):
        return cls({"x1": tuple(x1), "x2d": tuple(x2d)})

    def get(self, name, default=(0.0, 0.0)):
        return self.intervals.get(name, default)

    def vertices(self):
        names = sorted(self.intervals)
        for combo in itertools.product(*(self.intervals[n] for n in names)):
            yield dict(zip(names, combo))

    def grid(self, n=10):
        names = sorted(self.intervals)
        axes = [np.linspace(*self.intervals[k], n) for k in names]
        for combo in itertools.product(*axes):
            yield dict(zip(names, (float(c) for c in combo)))

    def to_dict(self):
        return {k: list(v) for k, v in self.intervals.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({k: tuple(v) for k, v in d.items()})


def observer_jacobians(p, L, box, points=None):
    pts = box.vertices() if points is None else points
    return [observer_virtual_jacobian(p, L, pt["x1"]) for pt in pts]


def controller_jacobians(p, K, box, mode="corrected", eq=None, points=None):
    eq = rest_equilibrium(p) if eq is None else eq
    pts = box.vertices() if points is None else points
    out = []
    for pt in pts:
        x1 = pt.get("x1", eq.state[0])
        x2d = pt.get("x2d", 0.0)
        out.append(closed_loop_jacobian(p, K, (x1 - eq.state[0], x2d), mode, eq))
    return out


def _margin(jacobians, theta, kind):
    return min(-scaled_measure(J, theta, kind) for J in jacobians)


def observer_feasibility(p, L, box, theta=None, kind="one"):
    """Worst-case contraction margin of the observer's virtual system over ``box``.

    Positive means the estimation error contracts at rate at least the margin
    in the metric ``||diag(theta) e||``.
    """
    lo, _ = box.get("x1")
    if lo < 0:
        raise DomainError("observer box must have x1 >= 0")
    theta = np.ones(4) if theta is None else theta
    return _margin(observer_jacobians(p, L, box), theta, kind)


def controller_feasibility(p, K, box, theta=None, kind="one", mode="corrected", eq=None):
    theta = np.ones(4) if theta is None else theta
    return _margin(controller_jacobians(p, K, box, mode, eq), theta, kind)


@dataclass(frozen=True, eq=False)
class Certificate:
    role: str  # "observer" or "controller"
    gains: np.ndarray
    theta: np.ndarray
    box: StateBox
    margin: float
    kind: str = "one"
    mode: str = "corrected"
    label: str = ""

    def recheck(self, p, theta=None, eq=None):
        theta = self.theta if theta is None else theta
        if self.role == "observer":
            return observer_feasibility(p, self.gains, self.box, theta, self.kind)
        return controller_feasibility(p, self.gains, self.box, theta, self.kind, self.mode, eq)

    def column_slack(self, p, theta=None, eq=None):
        """Worst-case ``-column term`` for each column over the box vertices."""
        theta = self.theta if theta is None else theta
        if self.role == "observer":
            Js = observer_jacobians(p, self.gains, self.box)
        else:
            Js = controller_jacobians(p, self.gains, self.box, self.mode, eq)
        return -np.max([column_terms(J, theta, self.kind) for J in Js], axis=0)

    def to_dict(self):
        return {
            "role": self.role,
            "gains": [float(v) for v in self.gains],
            "theta": [float(v) for v in self.theta],
            "box": self.box.to_dict(),
            "margin": float(self.margin),
            "kind": self.kind,
            "mode": self.mode,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                role=d["role"],
                gains=np.asarray(d["gains"], dtype=float),
                theta=np.asarray(d["theta"], dtype=float),
                box=StateBox.from_dict(d["box"]),
                margin=float(d["margin"]),
                kind=d.get("kind", "one"),
                mode=d.get("mode", "corrected"),
                label=str(d.get("label", "")),
            )
        except KeyError as exc:
            raise ConfigError(f"certificate missing key {exc}") from None


@dataclass(frozen=True, eq=False)
class GainSet:
    """Observer and controller certificates synthesized for one patient."""

    observer: Certificate
    controller: Certificate
    label: str = ""

    @property
    def L(self):
        return self.observer.gains

    @property
    def K(self):
        return self.controller.gains

    def to_dict(self, config=None):
        d = {
            "label": self.label,
            "L": [float(v) for v in self.L],
            "K": [float(v) for v in self.K],
            "observer": self.observer.to_dict(),
            "controller": self.controller.to_dict(),
        }
        if config is not None:
            d["config"] = config
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(Certificate.from_dict(d["observer"]), Certificate.from_dict(d["controller"]),
                       str(d.get("label", "")))
        except KeyError as exc:
            raise ConfigError(f"gain file missing key {exc}") from None

    def save(self, path, config=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(config), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read gain file {path}: {exc}") from None


# --- synthesis ---------------------------------------------------------------

# theta = (1, 1/r2, 1/(r2 r3), 1/(r2 r3 r4)) with r_j = theta_{j-1} / theta_j
_LOG_RATIO_BOUNDS = (math.log(1e-10), math.log(1e10))
_MIN_STEP = 1e-4
_THETA_MAX = 1e10
_BACKOFF = 0.01


def _tol(margin):
    return 1e-9 + 1e-6 * abs(margin)


def theta_from_log_ratios(z):
    return np.exp(-np.concatenate(([0.0], np.cumsum(z))))


def _fast_margin(jacobians, theta, kind):
    ratio = theta[:, None] / theta[None, :]
    worst = -math.inf
    for J in jacobians:
        S = J * ratio
        if kind is MatrixMeasureKind.TWO:
            m = np.linalg.eigvalsh(0.5 * (S + S.T))[-1]
        else:
            off = np.abs(S)
            np.fill_diagonal(off, 0.0)
            m = np.max(np.diag(S) + off.sum(axis=0 if kind is MatrixMeasureKind.ONE else 1))
        worst = max(worst, m)
    return -float(worst)


def _pattern_search(evaluate, z0):
    """Maximize ``evaluate(z)`` over log-ratios by compass search with step halving."""
    z = np.array(z0, dtype=float)
    best = evaluate(z)
    step = math.log(10.0)
    while step >= _MIN_STEP:
        moved = False
        for i in range(len(z)):
            for sign in (-1.0, 1.0):
                trial = z.copy()
                trial[i] = min(max(trial[i] + sign * step, _LOG_RATIO_BOUNDS[0]), _LOG_RATIO_BOUNDS[1])
                val = evaluate(trial)
                if val > best + _tol(best):
                    z, best, moved = trial, val, True
                    break
        if not moved:
            step *= 0.5
    return z, best


def _metzler_rows(jacobians, beta):
    rows = []
    for J in jacobians:
        M = np.abs(J)
        np.fill_diagonal(M, np.diag(J) + beta)
        rows.append(M.T)  # row j holds column j: sum_i theta_i M_ij
    return np.vstack(rows)


def _lp_theta(jacobians, beta, spread=False):
    n = jacobians[0].shape[0]
    A = _metzler_rows(jacobians, beta)
    if spread:
        # minimize t subject to 1 <= theta_i <= t
        c = np.zeros(n + 1)
        c[-1] = 1.0
        A_ub = np.vstack([np.hstack([A, np.zeros((A.shape[0], 1))]),
                          np.hstack([np.eye(n), -np.ones((n, 1))])])
        b_ub = np.zeros(A_ub.shape[0])
        bounds = [(1.0, _THETA_MAX)] * n + [(1.0, _THETA_MAX)]
    else:
        c, A_ub, b_ub = np.zeros(n), A, np.zeros(A.shape[0])
        bounds = [(1.0, _THETA_MAX)] * n
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    return res.x[:n] if res.status == 0 else None


def best_diagonal_metric(jacobians, kind="one"):
    """Diagonal metric (nearly) maximizing the worst-case margin over ``jacobians``.

    For the 1- and inf-measures this is exact: ``mu_1(Theta J Theta^-1) <= -beta``
    is linear in ``theta`` for fixed ``beta``, so ``beta`` is bisected over LP
    feasibility. The returned metric is the least spread one reaching 99 % of
    the optimal positive margin. The 2-measure falls back to compass search.
    Returns ``(theta, margin)``.
    """
    kind = _kind(kind)
    Js = [np.asarray(J, dtype=float) for J in jacobians]
    if kind is MatrixMeasureKind.TWO:
        z, m = _pattern_search(lambda zz: _fast_margin(Js, theta_from_log_ratios(zz), kind), np.zeros(Js[0].shape[0] - 1))
        return theta_from_log_ratios(z), m
    if kind is MatrixMeasureKind.INF:
        theta, m = best_diagonal_metric([J.T for J in Js], "one")
        return 1.0 / theta, m

    n = Js[0].shape[0]
    lo_theta = np.ones(n)
    lo = _fast_margin(Js, lo_theta, kind)
    hi = min(float(-np.max(np.diag(J))) for J in Js)
    while hi - lo > _tol(hi):
        mid = 0.5 * (lo + hi)
        theta = _lp_theta(Js, mid)
        if theta is None:
            hi = mid
        else:
            lo, lo_theta = mid, theta
    if lo > 0:
        theta = _lp_theta(Js, lo * (1 - _BACKOFF), spread=True)
        if theta is not None:
            lo_theta = theta
    lo_theta = lo_theta / lo_theta[0]
    return lo_theta, _fast_margin(Js, lo_theta, kind)


def _tuned(jacobians_for, gains, kind):
    theta, margin = best_diagonal_metric(jacobians_for(gains), kind)
    return gains, theta, margin


def _polish(jacobians_for, best, grids, kind):
    """One pass over the secondary gain grids, keeping strict improvements only."""
    gains, theta, margin = best
    for idx in sorted(grids):
        for v in sorted(grids[idx], key=lambda c: (abs(c), c)):
            if v == gains[idx]:
                continue
            trial = gains.copy()
            trial[idx] = v
            cand = _tuned(jacobians_for, trial, kind)
            if cand[2] > margin + _tol(margin):
                gains, theta, margin = cand
    return gains, theta, margin


def _small_grid(scale):
    mags = [scale * 10.0 ** e for e in range(-3, 1)]
    return [0.0] + mags + [-m for m in mags]


def observer_gain_grid(p):
    """Candidate values per observer gain entry (``l1`` first)."""
    l1 = [0.0] + [-(10.0 ** (e / 4)) for e in range(-16, 1)]
    return l1, {1: _small_grid(1e-5), 2: _small_grid(1e-3), 3: _small_grid(1e-3)}


def controller_gain_grid(p):
    """Glucose gains ``k1`` (most aggressive first), ``k4`` values, grids for k2, k3."""
    k1 = [10.0 ** (e / 4) for e in range(16, -9, -1)] + [0.0]
    k4 = [-f * p.p5 / p.p6 for f in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)]
    secondary = {1: _small_grid(1e-2 / p.p6), 2: _small_grid(1e-6 / p.p6)}
    return k1, k4, secondary


def _make_cert(role, p, gains, theta, box, kind, mode, eq=None):
    if role == "observer":
        margin = observer_feasibility(p, gains, box, theta, kind)
    else:
        margin = controller_feasibility(p, gains, box, theta, kind, mode, eq)
    return Certificate(role, gains, theta, box, margin, kind.value, mode, p.label)


def synthesize_observer_gains(p, box=None, kind="one", required_margin=1e-3):
    """Search ``L`` on a fixed grid, with the best metric for each candidate.

    Maximizes the observer margin; ties go to the smaller ``|l1|``. Raises
    :class:`Infeasible` (carrying the best candidate) when the best margin
    stays below ``required_margin``.
    """
    if required_margin < 0:
        raise DomainError("required_margin must be >= 0")
    box = StateBox.observer(40.0, 400.0) if box is None else box
    kind = _kind(kind)
    Jf = lambda L: observer_jacobians(p, L, box)  # noqa: E731
    l1_grid, secondary = observer_gain_grid(p)
    best = None
    for l1 in sorted(l1_grid, key=abs):
        cand = _tuned(Jf, np.array([l1, 0.0, 0.0, 0.0]), kind)
        if best is None or cand[2] > best[2] + _tol(best[2]):
            best = cand
    L, theta, _ = _polish(Jf, best, secondary, kind)
    cert = _make_cert("observer", p, L, theta, box, kind, "corrected")
    if cert.margin < required_margin:
        raise Infeasible(cert.margin, cert)
    return cert


def synthesize_controller_gains(p, box=None, kind="one", required_margin=1e-3, mode="corrected",
                                eq=None):
    """Most aggressive grid value of ``k1`` whose closed loop is certified.

    For each ``k1`` the subcutaneous gain ``k4`` is enumerated and the metric
    optimized. The best margin can only fall as ``|k1|`` grows (it adds
    off-diagonal mass), so the grid is bisected for the largest ``k1`` with
    margin >= ``required_margin``.
    """
    if required_margin < 0:
        raise DomainError("required_margin must be >= 0")
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    box = StateBox.controller() if box is None else box
    kind = _kind(kind)
    Jf = lambda K: controller_jacobians(p, K, box, mode, eq)  # noqa: E731
    k1_grid, k4_grid, secondary = controller_gain_grid(p)

    cache = {}

    def level(i):
        if i not in cache:
            best = None
            for k4 in k4_grid:
                cand = _tuned(Jf, np.array([k1_grid[i], 0.0, 0.0, k4]), kind)
                if best is None or cand[2] > best[2] + _tol(best[2]):
                    best = cand
            cache[i] = best
        return cache[i]

    # k1_grid runs from most to least aggressive; find the first passing index
    lo, hi = 0, len(k1_grid) - 1
    if level(hi)[2] < required_margin:
        best = max(cache.values(), key=lambda c: c[2])
        cert = _make_cert("controller", p, *_polish(Jf, best, secondary, kind), box, kind, mode, eq)
        raise Infeasible(cert.margin, cert)
    while lo < hi:
        mid = (lo + hi) // 2
        if level(mid)[2] >= required_margin:
            hi = mid
        else:
            lo = mid + 1
    K, theta, _ = _polish(Jf, level(lo), secondary, kind)
    return _make_cert("controller", p, K, theta, box, kind, mode, eq)


def synthesize_gains(p, observer_box=None, controller_box=None, kind="one", required_margin=1e-3,
                     mode="corrected"):
    obs = synthesize_observer_gains(p, observer_box, kind, required_margin)
    ctl = synthesize_controller_gains(p, controller_box, kind, required_margin, mode)
    return GainSet(obs, ctl, p.label)
