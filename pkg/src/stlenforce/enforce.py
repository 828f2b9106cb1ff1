"""Runtime enforcement around a planner, plus control-command validation.

Each planner tick the proposed trajectory is scored against the rules; a
near-violation triggers one gradient repair of one waypoint.  A separate
validation stage overwrites command-derived boolean switches with the
assignment that the placeholder resolution chose, so lights and flashers
match what the rules demanded of the plan.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from .autodiff import backward, forward_record
from .dsl import Formula
from .repair import (
    HalvingExhaustedError,
    RepairAction,
    RepairConfig,
    RepairError,
    joint_magnitude,
    magnitude,
    positional_difference,
    ranked_candidates,
    apply_repair,
    earliest_violation,
)
from .robustness import HorizonError, robustness, smooth_robustness
from .trace import PlannedTrajectory, _formula_and_registry, build_trace, resolve_placeholders

__all__ = [
    "SWITCH_NAMES",
    "ControlCommand",
    "TickRecord",
    "EnforceConfig",
    "EnforcementReport",
    "enforce_tick",
    "validate_commands",
]

SWITCH_NAMES = (
    "fogLight",
    "warningFlash",
    "highBeam",
    "lowBeam",
    "leftTurnSignal",
    "rightTurnSignal",
)


@dataclass(frozen=True)
class ControlCommand:
    throttle: float = 0.0
    brake: float = 0.0
    steer: float = 0.0
    gear: str = "DRIVE"
    fogLight: bool = False
    warningFlash: bool = False
    highBeam: bool = False
    lowBeam: bool = False
    leftTurnSignal: bool = False
    rightTurnSignal: bool = False

    def __post_init__(self):
        if not (0.0 <= self.throttle <= 1.0 and 0.0 <= self.brake <= 1.0):
            raise ValueError("throttle/brake must be fractions in [0, 1]")
        if self.leftTurnSignal and self.rightTurnSignal:
            raise ValueError("at most one turn signal may be on")

    def switches(self) -> dict:
        return {name: getattr(self, name) for name in SWITCH_NAMES}


@dataclass
class TickRecord:
    """What enforcement saw and did at one planner tick."""

    time: float
    rho: float = float("nan")  # discrete robustness of the resolved plan
    rho_smooth: float = float("nan")
    triggered: bool = False
    repaired: bool = False
    action: Optional[RepairAction] = None
    rho_after: Optional[float] = None  # prefix robustness after the fix
    rho_full_after: Optional[float] = None
    command_flips: int = 0
    objective_ratio: Optional[float] = None
    failure: Optional[str] = None
    eval_ms: float = 0.0
    # assignment chosen for command-derived placeholders (not serialized)
    alpha: object = None

    def to_json_line(self) -> str:
        d = {
            "time": self.time,
            "rho": self.rho,
            "rho_smooth": self.rho_smooth,
            "triggered": self.triggered,
            "repaired": self.repaired,
            "rho_after": self.rho_after,
            "command_flips": self.command_flips,
            "objective_ratio": self.objective_ratio,
            "failure": self.failure,
            "eval_ms": self.eval_ms,
        }
        if self.action is not None:
            d["action"] = json.loads(self.action.to_json_line())
        return json.dumps(d)


@dataclass(frozen=True)
class EnforceConfig:
    theta: float = 0.4
    a: float = 10.0
    max_halvings: int = 32
    position_step: float = 0.05
    lane_window: float = 15.0
    enabled: bool = True
    validate_switches: bool = True
    pair_fallback: bool = True  # try the top-2 signals jointly if one fails

    def __post_init__(self):
        if self.theta < 0 or self.a <= 0:
            raise ValueError("need theta >= 0 and a > 0")

    def repair_config(self) -> RepairConfig:
        return RepairConfig(
            theta=self.theta,
            a=self.a,
            max_halvings=self.max_halvings,
            position_step=self.position_step,
            lane_window=self.lane_window,
        )


@dataclass
class EnforcementReport:
    """One simulated run, tick records plus the run-level verdict."""

    scenario: str
    seed: int
    theta: float
    enforced: bool
    passed: bool = False
    final_rho: Optional[float] = None
    ticks: list = field(default_factory=list)
    fixes: int = 0
    max_fix: float = 0.0
    fix_diffs: list = field(default_factory=list)
    command_flips: int = 0
    collided: bool = False
    timed_out: bool = False
    reached: bool = False
    duration_s: float = 0.0  # simulated seconds
    run_s: float = 0.0  # wall-clock seconds
    avg_eval_ms: float = 0.0

    @property
    def fix_pct(self) -> float:
        return 100.0 * self.fixes / max(1, len(self.ticks))

    def mean_fix(self) -> float:
        return sum(self.fix_diffs) / len(self.fix_diffs) if self.fix_diffs else 0.0

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "theta": self.theta,
            "enforced": self.enforced,
            "pass": self.passed,
            "final_rho": self.final_rho,
            "ticks": len(self.ticks),
            "fixes": self.fixes,
            "max_fix": self.max_fix,
            "mean_fix": self.mean_fix(),
            "fix_pct": self.fix_pct,
            "command_flips": self.command_flips,
            "collided": self.collided,
            "timed_out": self.timed_out,
            "reached": self.reached,
            "duration_s": self.duration_s,
            "run_s": self.run_s,
            "avg_eval_ms": self.avg_eval_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary())


# ---------------------------------------------------------------------------
# the per-tick enforcement pipeline


def _apply_and_verify(
    spec,
    top: Formula,
    traj: PlannedTrajectory,
    env,
    signal: str,
    k: float,
    delta0: float,
    first_h: int,
    base_smooth: float,
    cfg: EnforceConfig,
    rcfg: RepairConfig,
):
    """Apply the halving sequence at trajectory level until the rebuilt
    prefix strictly improves the smooth robustness.  Column edits and the
    geometric edit can differ (a moved waypoint shifts every distance
    signal at that step), so the check is repeated on the real rebuild.

    ``base_smooth`` is the smooth robustness of the violating prefix; the
    full-trace value is numerically blind to a fix at one interior scene.
    """
    for h in range(first_h, cfg.max_halvings + 1):
        d = delta0 / (2.0**h)
        try:
            cand = apply_repair(traj, env, env.roadmap, signal, k, d, rcfg)
        except RepairError:
            if h == cfg.max_halvings:
                raise
            continue
        rebuilt = build_trace(cand, env, spec)
        _, resolved = resolve_placeholders(rebuilt, spec)
        pref = resolved.prefix(k)
        after = smooth_robustness(top, pref, a=cfg.a)
        if after > base_smooth:
            return cand, d, h, robustness(top, pref), robustness(top, resolved)
    raise HalvingExhaustedError(
        f"rebuilt trajectory never improved smooth robustness for {signal}"
    )


def enforce_tick(spec, traj: PlannedTrajectory, env, config: Optional[EnforceConfig] = None):
    """Validate one planned trajectory; repair at most one waypoint.

    Returns (possibly repaired trajectory, tick record).  Enforcement
    failures land in record.failure; only configuration errors raise.
    """
    cfg = config or EnforceConfig()
    t_start = time.perf_counter()
    top, _registry = _formula_and_registry(spec, None)
    rec = TickRecord(time=traj.t0)

    def done(out_traj):
        rec.eval_ms = (time.perf_counter() - t_start) * 1e3
        return out_traj, rec

    try:
        plan_trace = build_trace(traj, env, spec)
        alpha, resolved = resolve_placeholders(plan_trace, spec)
        rec.alpha = alpha
        rec.rho = robustness(top, resolved)
        rec.rho_smooth = smooth_robustness(top, resolved, a=cfg.a)
    except HorizonError as e:
        rec.failure = f"plan too short to evaluate: {e}"
        return done(traj)

    if not cfg.enabled or rec.rho > cfg.theta:
        return done(traj)
    rec.triggered = True

    k = earliest_violation(top, resolved, cfg.theta)
    if k is None:
        rec.failure = "robustness at threshold but no prefix strictly below it"
        return done(traj)

    prefix = resolved.prefix(k)
    try:
        _, tape = forward_record(top, prefix, a=cfg.a)
    except HorizonError as e:
        rec.failure = str(e)
        return done(traj)
    grads = backward(tape)
    cands = ranked_candidates(grads, float(prefix.times[-1]))
    if not cands:
        rec.failure = "no controllable signal with a usable gradient"
        return done(traj)

    rcfg = cfg.repair_config()
    rho_prefix_disc = robustness(top, prefix)
    prefix_smooth = smooth_robustness(top, prefix, a=cfg.a)

    picks = None
    try:
        sig, kk, g = cands[0]
        mag = magnitude(top, prefix, sig, kk, g, cfg.theta, rcfg)
        picks = [(sig, kk, g, mag.delta * (2.0**mag.halvings), mag.halvings)]
    except HalvingExhaustedError:
        if cfg.pair_fallback and len(cands) >= 2:
            try:
                ds, h = joint_magnitude(top, prefix, cands[:2], cfg.theta, rcfg)
                picks = [
                    (c[0], c[1], c[2], d * (2.0**h), h) for c, d in zip(cands[:2], ds)
                ]
            except HalvingExhaustedError as e:
                rec.failure = str(e)
                return done(traj)
        else:
            rec.failure = "halving schedule exhausted without improvement"
            return done(traj)
    except RepairError as e:
        rec.failure = str(e)
        return done(traj)

    # apply (one signal, or two signals on the same waypoint) and verify on
    # the rebuilt trace
    try:
        if len(picks) == 1:
            sig, kk, g, delta0, h0 = picks[0]
            before_wp = traj.waypoints[traj.index_of_label(kk)]
            cand, d, h, rho_after, rho_full_after = _apply_and_verify(
                spec, top, traj, env, sig, kk, delta0, h0, prefix_smooth, cfg, rcfg
            )
            after_wp = cand.waypoints[cand.index_of_label(kk)]
            pd = positional_difference(sig, before_wp, after_wp, d, traj.dt)
            used_h = h
        else:
            cand = traj
            pd = 0.0
            d = 0.0
            used_h = picks[0][4]
            sig, kk = picks[0][0], picks[0][1]
            for psig, pk, _pg, pdelta0, ph in picks:
                before_wp = cand.waypoints[cand.index_of_label(pk)]
                dd = pdelta0 / (2.0**ph)
                cand = apply_repair(cand, env, env.roadmap, psig, pk, dd, rcfg)
                after_wp = cand.waypoints[cand.index_of_label(pk)]
                pd += positional_difference(psig, before_wp, after_wp, dd, traj.dt)
                d = dd
            rebuilt = build_trace(cand, env, spec)
            _, resolved2 = resolve_placeholders(rebuilt, spec)
            pref2 = resolved2.prefix(kk)
            if smooth_robustness(top, pref2, a=cfg.a) <= prefix_smooth:
                rec.failure = "joint edit did not improve the rebuilt trace"
                return done(traj)
            rho_after = robustness(top, pref2)
            rho_full_after = robustness(top, resolved2)
            sig = "+".join(p[0] for p in picks)
    except RepairError as e:
        rec.failure = str(e)
        return done(traj)

    rec.repaired = True
    rec.rho_after = rho_after
    rec.rho_full_after = rho_full_after
    rec.action = RepairAction(
        time=traj.t0,
        k=kk,
        signal=sig,
        delta=d,
        halvings=used_h,
        rho_before=rho_prefix_disc,
        rho_after=rho_after,
        positional_diff=pd,
    )
    if pd > 0:
        rec.objective_ratio = (rho_full_after - rec.rho) / pd
    return done(cand)


# ---------------------------------------------------------------------------
# command validation (boolean switches)


def validate_commands(spec, executed_trace, commands, alpha):
    """Overwrite command-derived boolean switches to match the resolved
    assignment at the current timestep; motion fields pass through.

    ``commands`` may be one ControlCommand or a list; the shape is kept.
    """
    single = isinstance(commands, ControlCommand)
    pending = [commands] if single else list(commands)
    if alpha is not None:
        wanted = {
            name: val
            for (t, name), val in alpha.items()
            if t == 0.0 and name in SWITCH_NAMES
        }
        if wanted.get("leftTurnSignal") and wanted.get("rightTurnSignal"):
            wanted["leftTurnSignal"] = False  # keep the command valid
        if wanted:
            pending = [replace(cmd, **wanted) for cmd in pending]
    return pending[0] if single else pending


def count_switch_flips(before: ControlCommand, after: ControlCommand) -> int:
    return sum(
        1 for name in SWITCH_NAMES if getattr(before, name) != getattr(after, name)
    )
