"""Scenario definitions, parametric perturbations, and seeded Monte Carlo batches.

Trial ``i`` of a batch draws from ``SeedSequence(master_seed, spawn_key=(i,))``
so its patient, initial state and trajectory do not depend on how trials are
split across worker processes; aggregates are reduced in trial-index order.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .contraction import GainSet, synthesize_gains
from .control import ControlLimits
from .errors import ConfigError, DomainError
from .metrics import CVGAZone, glycemic_report
from .model import MealParams, PatientParams, equilibrium_for_setpoint, get_patient
from .sim import SimOptions, simulate_batch

PERTURBED = ("p1", "p2", "p3", "p4", "p5")
VARIANTS = ("2A", "2B", "2C", "2D")
SCENARIOS = ("1",) + VARIANTS

MEALS = ((10.0, 75.0), (360.0, 75.0), (720.0, 75.0))
DURATION = 1440.0
SCENARIO1_X0 = (120.0, 0.01, 1.0, 1.0)
DEFAULT_SETPOINT = 120.0


@dataclass(frozen=True)
class PerturbationSpec:
    """Relative half-width of the uniform draw for each of p1..p5."""

    half_widths: dict = field(default_factory=lambda: {k: 0.0 for k in PERTURBED})

    def __post_init__(self):
        hw = {k: float(self.half_widths.get(k, 0.0)) for k in PERTURBED}
        extra = set(self.half_widths) - set(PERTURBED)
        if extra:
            raise ConfigError(f"only p1..p5 can be perturbed, got {sorted(extra)}")
        for k, w in hw.items():
            if not 0.0 <= w < 1.0:
                raise ConfigError(f"half-width for {k} must be in [0, 1), got {w}")
        object.__setattr__(self, "half_widths", hw)

    @classmethod
    def uniform(cls, names, w=0.30):
        return cls({k: w for k in names})

    def to_dict(self):
        return dict(self.half_widths)


@dataclass(frozen=True)
class InitSpec:
    """Initial plant state; ``x1`` and ``x3`` may be ``(lo, hi)`` intervals."""

    x1: float | tuple = 120.0
    x2: float = 0.01
    x3: float | tuple = 1.0
    x4: float = 1.0

    def __post_init__(self):
        for name in ("x1", "x3"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)):
                lo, hi = float(v[0]), float(v[1])
                if lo > hi:
                    raise ConfigError(f"empty interval for {name}")
                object.__setattr__(self, name, (lo, hi))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in
                (("x1", self.x1), ("x2", self.x2), ("x3", self.x3), ("x4", self.x4))}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class ScenarioInputs:
    patient: PatientParams
    meals: tuple
    duration: float
    x0: tuple


def _subject(subject):
    return get_patient(str(subject))


def scenario1(subject):
    """Nominal patient, three 75 g meals, 24 h from ``(120, 0.01, 1, 1)``."""
    return ScenarioInputs(_subject(subject), MEALS, DURATION, SCENARIO1_X0)


def scenario2(variant, subject):
    """``(PerturbationSpec, InitSpec, meals, duration)`` for a variability setting."""
    _subject(subject)
    if variant == "2A":
        pert, init = PerturbationSpec.uniform(["p3"]), InitSpec(120.0, 0.1, 1.0, 1.0)
    elif variant == "2B":
        pert, init = PerturbationSpec.uniform(["p4", "p5"]), InitSpec(120.0, 0.1, 1.0, 1.0)
    elif variant == "2C":
        pert, init = PerturbationSpec.uniform(PERTURBED), InitSpec(120.0, 0.1, 1.0, 1.0)
    elif variant == "2D":
        pert, init = PerturbationSpec.uniform(PERTURBED), InitSpec((80.0, 140.0), 0.01, (0.0, 10.0), 1.0)
    else:
        raise ConfigError(f"unknown scenario variant {variant!r}; expected one of {VARIANTS}")
    return pert, init, MEALS, DURATION


def trial_rng(master_seed, index):
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def sample_patient(nominal, spec, rng):
    """Uniform draw of p1..p5 within ``(1 +/- w)`` of nominal; p6 and EGP kept."""
    u = rng.random(len(PERTURBED))
    changes = {}
    for k, ui in zip(PERTURBED, u):
        w = spec.half_widths[k]
        changes[k] = getattr(nominal, k) * (1.0 + w * (2.0 * ui - 1.0))
    return nominal.replace(**changes)


def sample_initial(init, rng):
    u = rng.random(2)

    def pick(v, ui):
        if isinstance(v, tuple):
            return v[0] + (v[1] - v[0]) * ui
        return float(v)

    return np.array([pick(init.x1, u[0]), float(init.x2), pick(init.x3, u[1]), float(init.x4)])


@dataclass(frozen=True)
class MonteCarloConfig:
    subject: str
    scenario: str
    trial_count: int = 100
    master_seed: int = 0
    meals: tuple = MEALS
    sim: SimOptions = SimOptions()
    gains: str | None = None  # path to a gain file; None synthesizes from nominal
    perturbation: PerturbationSpec = PerturbationSpec()
    init: InitSpec = InitSpec()
    meal_params: MealParams = MealParams()
    limits: ControlLimits = ControlLimits()
    g_sp: float = DEFAULT_SETPOINT

    def __post_init__(self):
        if self.trial_count < 1:
            raise ConfigError("trial_count must be >= 1")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "subject", str(self.subject))
        object.__setattr__(self, "meals", tuple(tuple(map(float, m)) for m in self.meals))

    def to_dict(self):
        return {
            "subject": self.subject,
            "scenario": self.scenario,
            "trial_count": self.trial_count,
            "master_seed": self.master_seed,
            "meals": [list(m) for m in self.meals],
            "sim": self.sim.to_dict(),
            "gains": self.gains,
            "perturbation": self.perturbation.to_dict(),
            "init": self.init.to_dict(),
            "meal_params": self.meal_params.to_dict(),
            "limits": self.limits.to_dict(),
            "g_sp": self.g_sp,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                subject=str(d["subject"]),
                scenario=str(d["scenario"]),
                trial_count=int(d.get("trial_count", 100)),
                master_seed=int(d.get("master_seed", 0)),
                meals=tuple(tuple(m) for m in d.get("meals", MEALS)),
                sim=SimOptions(**d.get("sim", {})),
                gains=d.get("gains"),
                perturbation=PerturbationSpec(d.get("perturbation", {})),
                init=InitSpec.from_dict(d.get("init", {})),
                meal_params=MealParams.from_dict(d.get("meal_params", {})),
                limits=ControlLimits.from_dict(d.get("limits", {})),
                g_sp=float(d.get("g_sp", DEFAULT_SETPOINT)),
            )
        except (KeyError, TypeError, DomainError) as exc:
            raise ConfigError(f"bad Monte Carlo config: {exc}") from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def replace(self, **changes):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return MonteCarloConfig(**d)


def scenario_config(scenario, subject, trial_count=100, master_seed=0, **kw):
    """Monte Carlo config for Scenario 1 (degenerate, nominal) or 2A-2D."""
    scenario = str(scenario).upper()
    if scenario == "1":
        s = scenario1(subject)
        return MonteCarloConfig(str(subject), "1", trial_count, master_seed, s.meals,
                                SimOptions(duration=s.duration), init=InitSpec(*s.x0), **kw)
    pert, init, meals, duration = scenario2(scenario, subject)
    return MonteCarloConfig(str(subject), scenario, trial_count, master_seed, meals,
                            SimOptions(duration=duration), perturbation=pert, init=init, **kw)


def bundled_config(scenario, subject):
    name = f"data/scenarios/scenario{str(scenario).upper()}_subject{subject}.json"
    path = resources.files("glucocontract").joinpath(name)
    if not path.is_file():
        raise ConfigError(f"no bundled config for scenario {scenario}, subject {subject}")
    return MonteCarloConfig.from_dict(json.loads(path.read_text()))


@lru_cache(maxsize=None)
def default_gains(subject):
    """Gains synthesized once per subject on its nominal parameters."""
    return synthesize_gains(get_patient(subject))


def resolve_gains(cfg):
    return default_gains(cfg.subject) if cfg.gains is None else GainSet.load(cfg.gains)


def observer_start(x0, eq):
    """Observer starts from the first glucose reading and the basal insulin state."""
    return np.array([x0[0], eq.state[1], eq.state[2], eq.state[3]])


@dataclass
class TrialResult:
    index: int
    seed: dict
    params: dict
    x0: list
    summary: dict | None
    report: object | None  # GlycemicReport
    error: str | None = None

    def to_dict(self):
        return {
            "index": self.index,
            "seed": self.seed,
            "params": self.params,
            "x0": self.x0,
            "summary": self.summary,
            "report": None if self.report is None else self.report.to_dict(),
            "error": self.error,
        }


@dataclass
class MonteCarloResult:
    config: MonteCarloConfig
    trials: list
    aggregate: dict
    gains: GainSet

    def to_dict(self, include_trials=True):
        d = {"config": self.config.to_dict(), "gains": self.gains.to_dict(), "aggregate": self.aggregate}
        if include_trials:
            d["trials"] = [t.to_dict() for t in self.trials]
        return d

    def aggregate_json(self):
        return json.dumps({"config": self.config.to_dict(), "aggregate": self.aggregate}, indent=2, sort_keys=True)


def trial_inputs(cfg, index, nominal=None):
    """``(plant, x0)`` drawn for trial ``index``: parameters first, then the initial state."""
    nominal = get_patient(cfg.subject) if nominal is None else nominal
    rng = trial_rng(cfg.master_seed, index)
    return sample_patient(nominal, cfg.perturbation, rng), sample_initial(cfg.init, rng)


def _run_chunk(args):
    plants, model, eq, L, K, lim, meals, mp, x0s, xh0s, opts = args
    return simulate_batch(plants, model, eq, L, K, lim, meals, mp, x0s, xh0s, opts)


def _chunks(n, workers):
    bounds = np.linspace(0, n, min(workers, n) + 1).round().astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def aggregate_reports(reports):
    """Index-ordered means of the per-trial report fields plus CVGA zone counts."""
    ok = [r for r in reports if r is not None]
    agg = {"n_trials": len(reports), "n_failed": len(reports) - len(ok)}
    if not ok:
        return agg
    for name in ("pct_eu", "pct_hyper", "pct_hypo", "pct_severe_hypo", "lbgi", "hbgi", "mean_bg",
                 "cov", "hba1c"):
        vals = [getattr(r, name) for r in ok]
        agg[name] = math.fsum(vals) / len(vals)
    agg["min_bg"] = min(r.min_bg for r in ok)
    agg["max_bg"] = max(r.max_bg for r in ok)
    agg["cvga_counts"] = {z.value: sum(r.cvga is z for r in ok) for z in CVGAZone}
    return agg


def run_monte_carlo(cfg, workers=1, gains=None):
    """Run ``cfg.trial_count`` seeded closed-loop trials; results are worker-count invariant."""
    gains = resolve_gains(cfg) if gains is None else gains
    nominal = get_patient(cfg.subject)
    eq = equilibrium_for_setpoint(nominal, cfg.g_sp)
    plants, x0s = zip(*(trial_inputs(cfg, i, nominal) for i in range(cfg.trial_count)))
    xh0s = [observer_start(x0, eq) for x0 in x0s]

    jobs = []
    for idx in _chunks(cfg.trial_count, max(1, int(workers))):
        jobs.append(([plants[i] for i in idx], nominal, eq, gains.L, gains.K, cfg.limits, cfg.meals,
                     cfg.meal_params, np.array([x0s[i] for i in idx]), np.array([xh0s[i] for i in idx]),
                     cfg.sim))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            outputs = list(pool.map(_run_chunk, jobs))
    else:
        outputs = [_run_chunk(j) for j in jobs]

    trials = []
    i = 0
    for trajs, fails in outputs:
        for traj, fail in zip(trajs, fails):
            seed = {"master_seed": cfg.master_seed, "trial": i}
            params = {k: getattr(plants[i], k) for k in PERTURBED}
            x0 = [float(v) for v in x0s[i]]
            if fail is not None:
                trials.append(TrialResult(i, seed, params, x0, None, None, f"IntegrationError at t={fail}"))
            else:
                bg = traj.glucose
                try:
                    report = glycemic_report(bg)
                    error = None
                except DomainError as exc:
                    report, error = None, str(exc)
                summary = {"min_bg": float(bg.min()), "max_bg": float(bg.max()), "final_bg": float(bg[-1]),
                           "mean_u": float(np.mean(traj.u)), "flags": traj.flags}
                trials.append(TrialResult(i, seed, params, x0, summary, report, error))
            i += 1
    return MonteCarloResult(cfg, trials, aggregate_reports([t.report for t in trials]), gains)
