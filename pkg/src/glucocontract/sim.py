"""Fixed-step RK4 integration of plant + gut + observer under sample-and-hold control.

The closed loop is a 10-dimensional ODE ``(x1..x4, d1, d2, xh1..xh4)``. The
observer sees the plant glucose at every RK4 stage; only the insulin command is
latched every ``hold_period`` minutes. Trials are integrated as a batch with
purely elementwise arithmetic, so each trial's numbers do not depend on which
other trials share its batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .control import ControlLimits
from .errors import DomainError, IntegrationError
from .model import MealParams, rest_equilibrium

CSV_COLUMNS = ("t", "x1", "x2", "x3", "x4", "xh1", "xh2", "xh3", "xh4", "u", "ra", "d1", "d2")


@dataclass(frozen=True)
class SimOptions:
    duration: float = 1440.0
    step_h: float = 0.1
    record_every: float = 1.0
    hold_period: float | None = None  # None: use ControlLimits.hold_period

    def __post_init__(self):
        if not (self.step_h > 0 and self.duration > 0):
            raise DomainError("step_h and duration must be positive")
        _steps(self.record_every, self.step_h, "record_every")
        _steps(self.duration, self.step_h, "duration")
        if self.hold_period is not None:
            _steps(self.hold_period, self.step_h, "hold_period")

    def to_dict(self):
        return asdict(self)


def _steps(span, h, name):
    n = round(span / h)
    if n < 1 or abs(n * h - span) > 1e-9 * max(1.0, span):
        raise DomainError(f"{name}={span} is not a positive integer multiple of step_h={h}")
    return n


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    xh: np.ndarray
    u: np.ndarray
    ra: np.ndarray
    meal_state: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def glucose(self):
        return self.x[:, 0]

    def deviation(self, eq):
        return self.x - eq.state

    def estimate_deviation(self, eq):
        return self.xh - eq.state

    def estimation_error(self):
        return self.xh - self.x

    def as_array(self):
        return np.column_stack([self.times, self.x, self.xh, self.u, self.ra, self.meal_state])

    def to_csv(self, path):
        np.savetxt(path, self.as_array(), fmt="%.17g", delimiter=",", header=",".join(CSV_COLUMNS),
                   comments="")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if tuple(header) != CSV_COLUMNS:
            raise DomainError(f"unexpected trajectory header {header}")
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(a[:, 0], a[:, 1:5], a[:, 5:9], a[:, 9], a[:, 10], a[:, 11:13], _violations(a[:, 0], a[:, 1:5]))


def rk4_step(f, t, x, h):
    """One classical Runge-Kutta step of ``x' = f(t, x)``."""
    if not h > 0:
        raise DomainError("step must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(t, x), dtype=float)
    k2 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(f(t + h, x + h * k3), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite RK4 stage at t={t}", time=t)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _violations(times, x):
    flags = []
    for j, name in ((0, "x1"), (2, "x3"), (3, "x4")):
        bad = np.flatnonzero(x[:, j] < 0)
        if bad.size:
            flags.append({"state": name, "first_time": float(times[bad[0]]), "count": int(bad.size),
                          "min_value": float(x[bad, j].min())})
    return flags


def carb_schedule(meals, mp, n_steps, h):
    """Meal input per integration step (constant within a step)."""
    carb = np.zeros(n_steps)
    width = _steps(mp.pulse_width, h, "pulse_width")
    for t_m, grams in meals:
        if grams < 0:
            raise DomainError("meal size must be nonnegative")
        start = round(t_m / h)
        if not 0 <= start < n_steps:
            raise DomainError(f"meal at t={t_m} outside the simulated horizon")
        carb[start:start + width] += mp.carb_gain * grams / mp.pulse_width
    return carb


def _param_arrays(plants):
    return {k: np.array([getattr(p, k) for p in plants], dtype=float) for k in ("p1", "p2", "p3", "p4", "p5", "p6", "egp")}


def simulate_batch(plants, model, eq, L, K, lim, meals, mp, x0, xh0, opts, u_const=None):
    """Integrate ``len(plants)`` closed loops sharing gains, meals and model.

    ``plants`` are the true patients; ``model`` is the parameter set the
    observer and controller were built on. ``u_const`` replaces the feedback
    law by a constant infusion. Returns ``(trajectories, fail_times)`` where
    ``fail_times[b]`` is the first recorded time trial ``b`` went non-finite
    (``None`` if never).
    """
    B = len(plants)
    P = _param_arrays(plants)
    h = opts.step_h
    n_steps = _steps(opts.duration, h, "duration")
    rec = _steps(opts.record_every, h, "record_every")
    hold_period = opts.hold_period if opts.hold_period is not None else lim.hold_period
    hold = _steps(hold_period, h, "hold_period")
    carb = carb_schedule(meals, mp, n_steps, h)
    L = np.asarray(L, dtype=float)
    K = np.asarray(K, dtype=float)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (B, 4))
    xh0 = np.broadcast_to(np.asarray(xh0, dtype=float), (B, 4))

    p1, p2, p3, p4, p5, p6, egp = (P[k] for k in ("p1", "p2", "p3", "p4", "p5", "p6", "egp"))
    m = model
    l1, l2, l3, l4 = (float(v) for v in L)
    inv_tmax = 1.0 / mp.t_max
    bio = mp.bio

    def field_(X, u, c):
        x1, x2, x3, x4, d1, d2, z1, z2, z3, z4 = X
        innov = z1 - x1
        out = np.empty_like(X)
        out[0] = -p1 * x1 - x1 * x2 + egp + d2 * inv_tmax
        out[1] = -p2 * x2 + p3 * x3
        out[2] = -p4 * x3 + p4 * x4
        out[3] = -p5 * x4 + p6 * u
        out[4] = -d1 * inv_tmax + bio * c
        out[5] = (d1 - d2) * inv_tmax
        out[6] = -m.p1 * z1 - z2 * x1 + m.egp + l1 * innov
        out[7] = -m.p2 * z2 + m.p3 * z3 + l2 * innov
        out[8] = -m.p4 * z3 + m.p4 * z4 + l3 * innov
        out[9] = -m.p5 * z4 + m.p6 * u + l4 * innov
        return out

    xs = eq.state

    def command(X):
        if u_const is not None:
            return np.full(B, float(u_const))
        u_raw = eq.u_basal + (K[0] * (X[6] - xs[0]) + K[1] * (X[7] - xs[1])
                              + K[2] * (X[8] - xs[2]) + K[3] * (X[9] - xs[3]))
        return np.minimum(np.maximum(u_raw, lim.u_min), lim.u_max)

    X = np.zeros((10, B))
    X[0:4] = x0.T
    X[6:10] = xh0.T
    n_rec = n_steps // rec + 1
    R = np.empty((n_rec, 10, B))
    U = np.empty((n_rec, B))
    half = 0.5 * h
    sixth = h / 6.0
    # divergence is detected from the recorded states, so silence overflow chatter
    with np.errstate(over="ignore", invalid="ignore"):
        u = command(X)
        for i in range(n_steps):
            if i % hold == 0:
                u = command(X)
            if i % rec == 0:
                R[i // rec] = X
                U[i // rec] = u
            c = carb[i]
            k1 = field_(X, u, c)
            k2 = field_(X + half * k1, u, c)
            k3 = field_(X + half * k2, u, c)
            k4 = field_(X + h * k3, u, c)
            X = X + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if n_steps % hold == 0:
            u = command(X)
    R[-1] = X
    U[-1] = u

    times = np.arange(n_rec) * opts.record_every
    trajectories, fail_times = [], []
    for b in range(B):
        Xb = R[:, :, b]
        finite = np.all(np.isfinite(Xb), axis=1) & np.isfinite(U[:, b])
        fail_times.append(None if finite.all() else float(times[np.argmin(finite)]))
        x = Xb[:, 0:4].copy()
        trajectories.append(Trajectory(
            times=times.copy(), x=x, xh=Xb[:, 6:10].copy(), u=U[:, b].copy(),
            ra=Xb[:, 5] * inv_tmax, meal_state=Xb[:, 4:6].copy(), flags=_violations(times, x),
        ))
    return trajectories, fail_times


def _single(*args, **kw):
    (traj,), (fail,) = simulate_batch(*args, **kw)
    if fail is not None:
        raise IntegrationError(f"non-finite state at t={fail}", time=fail)
    return traj


def simulate_closed_loop(p, eq, L, K, lim=ControlLimits(), meals=(), mp=MealParams(), x0=None,
                         xh0=None, opts=SimOptions(), p_model=None):
    """Observer-based feedback run for one patient.

    ``p_model`` (default ``p``) is what the observer and controller believe;
    pass the nominal patient here when ``p`` is a perturbed draw.
    """
    x0 = eq.state if x0 is None else x0
    xh0 = x0 if xh0 is None else xh0
    return _single([p], p if p_model is None else p_model, eq, L, K, lim, meals, mp, x0, xh0, opts)


def simulate_estimation(p, L, meal=None, mp=MealParams(), x0=(120.0, 0.01, 1.0, 1.0), xh0=None,
                        u_const=0.0, opts=SimOptions()):
    """Open-loop run under a constant infusion with the observer running alongside."""
    xh0 = x0 if xh0 is None else xh0
    meals = [] if meal is None else [meal]
    return _single([p], p, rest_equilibrium(p), L, np.zeros(4), ControlLimits(), meals, mp, x0, xh0,
                   opts, u_const=u_const)
