"""Command-line front end.

    glucocontract synth      --subject 1 [--box 40:400] [--margin 1e-3] [--out gains.json]
    glucocontract check      --gains gains.json [--theta identity] [--subject 1]
    glucocontract simulate   --scenario 1 --subject 1 [--gains gains.json] [--out DIR]
    glucocontract montecarlo --scenario 2C --subject 1 [--seed 0] [--workers 4] [--out DIR]
    glucocontract report     --input DIR/trajectory.csv [--out report.json]

Exit codes: 0 success, 1 bad configuration or usage, 2 infeasible certificate
or negative margin, 3 integration failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .contraction import (Certificate, GainSet, StateBox, synthesize_controller_gains,
                          synthesize_observer_gains)
from .errors import ConfigError, DomainError, Infeasible, IntegrationError
from .metrics import glycemic_report, write_summary_csv
from .model import equilibrium_for_setpoint, get_patient
from .scenarios import (MonteCarloConfig, bundled_config, observer_start, resolve_gains,
                        run_monte_carlo, scenario_config, trial_inputs)
from .sim import Trajectory, simulate_closed_loop

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTEGRATION = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _mode(value):
    return value.replace("-", "_")


def _box(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--box expects lo:hi, got {text!r}") from None
    return lo, hi


def _overrides(cfg_dict, pairs):
    """Apply ``key=value`` pairs; dotted keys reach into nested sections."""
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigError(f"override {pair!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg_dict
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} does not name a config section")
        node[leaf] = value
    return cfg_dict


def _config(args, trial_count=None):
    if args.config:
        cfg = MonteCarloConfig.load(args.config)
    else:
        if not (args.scenario and args.subject):
            raise ConfigError("need --config or both --scenario and --subject")
        try:
            cfg = bundled_config(args.scenario, args.subject)
        except ConfigError:
            cfg = scenario_config(args.scenario, args.subject)
    d = cfg.to_dict()
    if args.seed is not None:
        d["master_seed"] = args.seed
    if args.gains is not None:
        d["gains"] = args.gains
    if trial_count is not None:
        d["trial_count"] = trial_count
    return MonteCarloConfig.from_dict(_overrides(d, args.set))


def cmd_synth(args):
    p = get_patient(args.subject)
    obs_box = StateBox.observer(*_box(args.box))
    config = {"subject": args.subject, "box": list(_box(args.box)), "margin": args.margin,
              "norm": args.norm, "mode": _mode(args.mode)}
    try:
        obs = synthesize_observer_gains(p, obs_box, args.norm, args.margin)
        ctl = synthesize_controller_gains(p, None, args.norm, args.margin, _mode(args.mode))
    except Infeasible as exc:
        payload = {"config": config, "infeasible": True, "best_margin": exc.best_margin,
                   "best_certificate": exc.certificate.to_dict() if exc.certificate else None}
        _emit(_dump(payload), args.out)
        print(f"infeasible: best margin {exc.best_margin:.6g} < {args.margin:g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    gains = GainSet(obs, ctl, p.label)
    _emit(_dump(gains.to_dict(config)), args.out)
    return EXIT_OK


def _check_one(cert, p, theta, args):
    if args.box and cert.role == "observer":
        cert = Certificate(cert.role, cert.gains, cert.theta, StateBox.observer(*_box(args.box)),
                           cert.margin, cert.kind, cert.mode, cert.label)
    if args.norm or args.mode:
        cert = Certificate(cert.role, cert.gains, cert.theta, cert.box, cert.margin,
                           args.norm or cert.kind, _mode(args.mode) if args.mode else cert.mode, cert.label)
    th = np.ones(4) if theta == "identity" else cert.theta
    return {
        "role": cert.role,
        "gains": [float(v) for v in cert.gains],
        "theta": [float(v) for v in th],
        "box": cert.box.to_dict(),
        "kind": cert.kind,
        "mode": cert.mode,
        "margin": float(cert.recheck(p, th)),
        "column_slack": [float(v) for v in cert.column_slack(p, th)],
    }


def cmd_check(args):
    gains = GainSet.load(args.gains)
    subject = args.subject or gains.label
    p = get_patient(subject)
    rows = [_check_one(c, p, args.theta, args) for c in (gains.observer, gains.controller)]
    payload = {"config": {"gains": args.gains, "subject": subject, "theta": args.theta, "box": args.box,
                          "norm": args.norm, "mode": args.mode}, "checks": rows}
    _emit(_dump(payload), args.out)
    for r in rows:
        print(f"{r['role']}: margin {r['margin']:.6g}", file=sys.stderr)
    return EXIT_INFEASIBLE if any(r["margin"] < 0 for r in rows) else EXIT_OK


def cmd_simulate(args):
    cfg = _config(args, trial_count=1)
    gains = resolve_gains(cfg)
    nominal = get_patient(cfg.subject)
    eq = equilibrium_for_setpoint(nominal, cfg.g_sp)
    plant, x0 = trial_inputs(cfg, 0, nominal)
    traj = simulate_closed_loop(plant, eq, gains.L, gains.K, cfg.limits, cfg.meals, cfg.meal_params, x0,
                                observer_start(x0, eq), cfg.sim, p_model=nominal)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    report = {"config": cfg.to_dict(), "gains": gains.to_dict(), "equilibrium": eq.to_dict(),
              "patient": plant.to_dict(), "x0": [float(v) for v in x0], "flags": traj.flags,
              "report": glycemic_report(traj.glucose).to_dict()}
    (out / "report.json").write_text(_dump(report))
    return EXIT_OK


def cmd_montecarlo(args):
    cfg = _config(args)
    result = run_monte_carlo(cfg, workers=args.workers)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "montecarlo.json").write_text(_dump(result.to_dict()))
    (out / "aggregate.json").write_text(result.aggregate_json() + "\n")
    row = {"subject": cfg.subject, "scenario": cfg.scenario}
    row.update({k: result.aggregate.get(k, float("nan")) for k in
                ("pct_eu", "pct_hyper", "pct_hypo", "pct_severe_hypo", "mean_bg", "cov", "hba1c", "lbgi", "hbgi")})
    write_summary_csv(out / "summary.csv", [row])
    failed = [t for t in result.trials if t.error]
    for t in failed:
        print(f"trial {t.index}: {t.error}", file=sys.stderr)
    return EXIT_INTEGRATION if any("IntegrationError" in t.error for t in failed) else EXIT_OK


def cmd_report(args):
    traj = Trajectory.from_csv(args.input)
    payload = {"config": {"input": str(args.input)}, "flags": traj.flags,
               "report": glycemic_report(traj.glucose).to_dict()}
    _emit(_dump(payload), args.out)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="glucocontract", description="Contraction-certified glucose control toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *names):
        if "subject" in names:
            sp.add_argument("--subject")
        if "scenario" in names:
            sp.add_argument("--scenario")
        if "gains" in names:
            sp.add_argument("--gains")
        if "config" in names:
            sp.add_argument("--config")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        sp.add_argument("--out")

    sp = sub.add_parser("synth", help="synthesize observer and controller gains")
    common(sp, "subject")
    sp.add_argument("--box", default="40:400", help="observer glucose box lo:hi")
    sp.add_argument("--margin", type=float, default=1e-3)
    sp.add_argument("--norm", choices=("one", "two", "inf"), default="one")
    sp.add_argument("--mode", choices=("corrected", "paper-literal"), default="corrected")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("check", help="recheck a gain file's certificates")
    common(sp, "subject", "gains")
    sp.add_argument("--theta", choices=("identity", "certificate"), default="certificate")
    sp.add_argument("--box")
    sp.add_argument("--norm", choices=("one", "two", "inf"))
    sp.add_argument("--mode", choices=("corrected", "paper-literal"))
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("simulate", help="one closed-loop run (trial 0 of the scenario)")
    common(sp, "subject", "scenario", "gains", "config")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("montecarlo", help="seeded Monte Carlo batch")
    common(sp, "subject", "scenario", "gains", "config")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("report", help="metrics from a trajectory CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return parser


def run_command(argv):
    try:
        args = build_parser().parse_args(argv)
        if args.command == "check" and not args.gains:
            raise ConfigError("check needs --gains")
        if args.command == "synth" and not args.subject:
            raise ConfigError("synth needs --subject")
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be >= 1")
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print(f"infeasible: best margin {exc.best_margin:.6g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
