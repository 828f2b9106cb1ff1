"""Command line front end.

Subcommands: ``monitor`` a trace or trajectory, ``repair`` a trajectory
once, ``simulate`` one scenario, ``sweep`` a grid of runs.  Exit codes:
0 success/satisfied, 1 rule violated (monitor), 2 usage or input error,
3 repair infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from .dsl import SpecSyntaxError, Specification, parse_spec
from .enforce import EnforceConfig, enforce_tick
from .robustness import (
    HorizonError,
    prefix_series,
    robustness,
    smooth_robustness,
)
from .sim import Scenario, builtin_scenarios, run_scenario, sweep
from .trace import (
    PlannedTrajectory,
    PredictedEnvironment,
    Trace,
    build_trace,
    resample,
    resolve_placeholders,
)

log = logging.getLogger("stlenforce")

AT_THRESHOLD = "robustness at threshold but no prefix strictly below it"


class CliError(Exception):
    """Bad input or configuration; maps to exit code 2."""


def _setup_logging() -> None:
    level_name = os.environ.get("STLE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON ({e})") from None


def _load_spec(path: str | None, top: str | None) -> Specification:
    if path is None:
        raise CliError("--spec is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file: {path}")
    try:
        spec = parse_spec(p.read_text())
    except SpecSyntaxError as e:
        raise CliError(f"{path}: {e}") from None
    if top:
        if top not in spec.formulas:
            raise CliError(f"{path} defines no formula named {top!r}")
        spec = Specification(spec.formulas, top, spec.registry)
    return spec


def _validate(args) -> None:
    theta = getattr(args, "theta", None)
    if isinstance(theta, float) and theta < 0:
        raise CliError(f"--theta must be >= 0, got {theta}")
    if getattr(args, "smoothness_a", 10.0) <= 0:
        raise CliError("--smoothness-a must be > 0")
    if getattr(args, "dt", None) is not None and args.dt <= 0:
        raise CliError("--dt must be > 0")


def _theta_list(text: str) -> list[float]:
    """Either a comma list or an inclusive start:stop:step range."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(f"bad theta range {text!r}, expected start:stop:step")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise CliError("theta range step must be > 0")
        out = []
        v = start
        while v <= stop + 1e-9:
            out.append(round(v, 9))
            v += step
        return out
    return [float(x) for x in text.split(",") if x.strip()]


def _seed_list(text: str) -> list[int]:
    if "," in text:
        return [int(x) for x in text.split(",") if x.strip()]
    n = int(text)
    if n <= 0:
        raise CliError("--seeds must be positive")
    return list(range(n))


def _load_scenario(name_or_path: str) -> Scenario:
    builtins = builtin_scenarios()
    if name_or_path in builtins:
        return builtins[name_or_path]
    if Path(name_or_path).exists():
        return Scenario.from_json(_load_json(name_or_path))
    raise CliError(
        f"unknown scenario {name_or_path!r}; builtins: "
        + ", ".join(sorted(builtins))
    )


# ---------------------------------------------------------------------------
# monitor


def cmd_monitor(args) -> int:
    _validate(args)
    spec = _load_spec(args.spec, args.top_formula)
    data = _load_json(args.input)
    if "signals" in data:
        trace = Trace.from_json(data, registry=spec.registry)
    elif "waypoints" in data:
        if not args.environment:
            raise CliError("a trajectory input needs --environment")
        traj = PlannedTrajectory.from_json(data)
        if args.dt is not None:
            traj = resample(traj.waypoints, args.dt)
        env = PredictedEnvironment.from_json(_load_json(args.environment))
        trace = build_trace(traj, env, spec)
    else:
        raise CliError(f"{args.input}: neither a trace nor a trajectory file")

    if trace.placeholder_names:
        _alpha, trace = resolve_placeholders(trace, spec)
    top = spec.top
    try:
        rho_val = robustness(top, trace)
        rho_s = smooth_robustness(top, trace, a=args.smoothness_a)
    except HorizonError as e:
        raise CliError(f"trace too short for the rules: {e}") from None
    verdict = "SATISFIED" if rho_val > 0 else "VIOLATED"
    print(f"rho         {rho_val:.6f}")
    print(f"rho_smooth  {rho_s:.6f}  (a={args.smoothness_a:g})")
    print(f"verdict     {verdict}")
    print("prefix robustness:")
    for t, v in prefix_series(top, trace):
        print(f"  k={t:<6g} {v:.6f}")
    return 0 if rho_val > 0 else 1


# ---------------------------------------------------------------------------
# repair


def cmd_repair(args) -> int:
    _validate(args)
    spec = _load_spec(args.spec, args.top_formula)
    traj_path = Path(args.trajectory)
    traj = PlannedTrajectory.from_json(_load_json(args.trajectory))
    env = PredictedEnvironment.from_json(_load_json(args.environment))

    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    out_traj = out_dir / f"{traj_path.stem}.repaired.json"
    out_log = out_dir / f"{traj_path.stem}.repair-log.jsonl"

    cfg = EnforceConfig(theta=args.theta, a=args.smoothness_a,
                        validate_switches=False)
    repaired, rec = enforce_tick(spec, traj, env, cfg)

    if rec.failure and not rec.triggered:
        raise CliError(rec.failure)
    if not rec.triggered or rec.failure == AT_THRESHOLD:
        shutil.copyfile(traj_path, out_traj)
        out_log.write_text("")
        print(f"already satisfying (rho={rec.rho:.6f} vs theta={args.theta:g})")
        print(f"wrote {out_traj} (unchanged) and empty log {out_log}")
        return 0
    if not rec.repaired:
        print(f"repair failed: {rec.failure}", file=sys.stderr)
        return 3

    out_traj.write_text(json.dumps(repaired.to_json(), indent=2) + "\n")
    out_log.write_text(rec.action.to_json_line() + "\n")
    a = rec.action
    print(f"repaired waypoint k={a.k:g}: {a.signal} delta={a.delta:.6f}")
    print(f"rho(prefix) {a.rho_before:.6f} -> {a.rho_after:.6f}")
    print(f"wrote {out_traj} and {out_log}")
    return 0


# ---------------------------------------------------------------------------
# simulate / sweep


def _write_run_outputs(out_dir: Path, report, tag: str) -> None:
    (out_dir / f"{tag}.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    traj = getattr(report, "executed_trajectory", None)
    if traj is not None:
        with open(out_dir / f"{tag}.executed.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "speed", "acc", "steer", "gear"])
            for wp in traj.waypoints:
                w.writerow([f"{wp.t:.3f}", f"{wp.x:.4f}", f"{wp.y:.4f}",
                            f"{wp.speed:.4f}", f"{wp.acc:.4f}",
                            f"{wp.steer:.4f}", wp.gear])
    with open(out_dir / f"{tag}.ticks.jsonl", "w") as fh:
        for rec in report.ticks:
            fh.write(rec.to_json_line() + "\n")


def cmd_simulate(args) -> int:
    _validate(args)
    scenario = _load_scenario(args.scenario)
    spec = (_load_spec(args.spec, args.top_formula) if args.spec
            else scenario.spec())
    seeds = _seed_list(args.seeds)
    theta = args.theta if args.theta is not None else 0.4
    cfg = EnforceConfig(theta=theta, a=args.smoothness_a,
                        enabled=not args.no_enforce)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    passes = 0
    for seed in seeds:
        report = run_scenario(spec, scenario, config=cfg, seed=seed)
        passes += int(report.passed)
        rho_txt = "n/a" if report.final_rho is None else f"{report.final_rho:.4f}"
        print(f"seed {seed}: pass={report.passed} rho={rho_txt} "
              f"fixes={report.fixes} ticks={len(report.ticks)}")
        if out_dir:
            _write_run_outputs(out_dir, report, f"{scenario.name}-seed{seed}")
    mode = "baseline" if args.no_enforce else f"theta={theta:g}"
    print(f"{scenario.name} [{mode}]: {passes}/{len(seeds)} passed")
    return 0


def cmd_sweep(args) -> int:
    _validate(args)
    scenarios = [_load_scenario(s) for s in args.scenario]
    spec = _load_spec(args.spec, args.top_formula) if args.spec else None
    thetas = [] if args.no_enforce else (
        _theta_list(args.theta) if args.theta else [0.4])
    seeds = _seed_list(args.seeds)
    result = sweep(scenarios, thetas, seeds, spec=spec,
                   include_baseline=True, workers=args.workers)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    json_path = out_dir / "sweep.json"
    result.write_csv(csv_path)
    json_path.write_text(json.dumps(result.to_json(), indent=2) + "\n")
    for scn in scenarios:
        keys = ["baseline"] + [f"{t:g}" for t in thetas]
        for key in keys:
            n = sum(1 for r in result.rows
                    if r["scenario"] == scn.name and r["theta"] == key)
            p = sum(r["pass"] for r in result.rows
                    if r["scenario"] == scn.name and r["theta"] == key)
            print(f"{scn.name} theta={key}: {p}/{n} passed")
    print(f"wrote {csv_path} and {json_path}")
    return 0


# ---------------------------------------------------------------------------
# argument surface


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stlenforce",
        description="Monitor, repair and enforce temporal traffic rules "
                    "over planned trajectories.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, theta_default=None, theta_range=False):
        p.add_argument("--spec", help="rule file (name = formula; ...)")
        if theta_range:
            p.add_argument("--theta", default=theta_default,
                           help="comma list or start:stop:step range")
        else:
            p.add_argument("--theta", type=float, default=theta_default,
                           help="robustness threshold")
        p.add_argument("--smoothness-a", type=float, default=10.0,
                       dest="smoothness_a", help="smooth semantics sharpness")
        p.add_argument("--dt", type=float, default=None,
                       help="resample trajectories to this spacing (s)")
        p.add_argument("--top-formula", dest="top_formula", default=None,
                       help="override which formula is enforced")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("monitor", help="score a trace or trajectory file")
    common(p)
    p.add_argument("input", help="trace JSON or trajectory JSON")
    p.add_argument("--environment", default=None,
                   help="environment JSON (needed for trajectory input)")
    p.set_defaults(fn=cmd_monitor)

    p = sub.add_parser("repair", help="repair one trajectory file once")
    common(p, theta_default=0.4)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--environment", required=True)
    p.set_defaults(fn=cmd_repair)

    p = sub.add_parser("simulate", help="run one scenario closed loop")
    common(p)
    p.add_argument("--scenario", required=True,
                   help="builtin name or scenario JSON path")
    p.add_argument("--seeds", default="1",
                   help="seed count or comma-separated seed list")
    p.add_argument("--no-enforce", action="store_true", dest="no_enforce")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="grid of scenarios x thetas x seeds")
    common(p, theta_range=True)
    p.add_argument("--scenario", action="append", required=True,
                   help="repeatable: builtin name or scenario JSON path")
    p.add_argument("--seeds", default="10")
    p.add_argument("--no-enforce", action="store_true", dest="no_enforce")
    p.add_argument("--workers", type=int, default=0,
                   help="parallel worker processes for the grid")
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SpecSyntaxError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
