"""Gradient-guided minimal repair of planned trajectories.

Pipeline: locate the earliest prefix whose robustness dips under the
threshold, differentiate the smooth robustness of that prefix, pick the
controllable signal with the strongest gradient at the prefix end, size
the edit with a halving schedule, and rewrite exactly one waypoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .autodiff import GradientMap, backward, forward_record
from .dsl import Formula, SignalRegistry
from .robustness import HorizonError, prefix_robustness, robustness, smooth_robustness
from .trace import PlannedTrajectory, Waypoint, _direction_code

__all__ = [
    "RepairError",
    "UnrepairableError",
    "HalvingExhaustedError",
    "RepairInfeasibleError",
    "RepairConfig",
    "MagnitudeResult",
    "RepairAction",
    "GRADIENT_FLOOR",
    "signal_class",
    "is_controllable",
    "earliest_violation",
    "select_signal",
    "ranked_candidates",
    "magnitude",
    "joint_magnitude",
    "apply_repair",
    "positional_difference",
    "repair_once",
]


class RepairError(RuntimeError):
    pass


class UnrepairableError(RepairError):
    """No controllable signal carries a usable gradient."""


class HalvingExhaustedError(RepairError):
    """No halved magnitude improved the smooth robustness."""


class RepairInfeasibleError(RepairError):
    """The positional search found no on-road point closer to the target."""


# below this, a gradient is noise rather than leverage
GRADIENT_FLOOR = 1e-12

_STEER_FOR_CODE = {0: 0.0, 1: 0.1, 2: -0.1}


@dataclass(frozen=True)
class RepairConfig:
    theta: float = 0.4
    a: float = 10.0
    max_halvings: int = 32
    position_step: float = 0.05  # meters between positional candidates
    lane_window: float = 15.0  # search +- this far along the lane
    grad_floor: float = GRADIENT_FLOOR

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("threshold must be non-negative")
        if self.a <= 0:
            raise ValueError("sharpness a must be positive")
        if self.max_halvings < 0 or self.position_step <= 0 or self.lane_window <= 0:
            raise ValueError("bad repair configuration")


@dataclass(frozen=True)
class MagnitudeResult:
    delta: float
    halvings: int
    smooth_before: float
    smooth_after: float


@dataclass
class RepairAction:
    """One applied (or attempted) fix, in repair-log form."""

    time: float  # wall-clock tick time in the run, seconds
    k: float  # violating timestep label within the plan
    signal: str
    delta: float
    halvings: int
    rho_before: float
    rho_after: float
    positional_diff: float
    note: str = ""

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "time": self.time,
                "k": self.k,
                "signal": self.signal,
                "delta": self.delta,
                "halvings": self.halvings,
                "rho_before": self.rho_before,
                "rho_after": self.rho_after,
                "positional_diff": self.positional_diff,
                "note": self.note,
            }
        )


# ---------------------------------------------------------------------------
# signal classification


def signal_class(name: str) -> Optional[int]:
    """Rank within the fixed repair priority; None when not controllable."""
    if name == "speed":
        return 0
    if name == "acc":
        return 1
    if name.startswith("D("):
        return 2
    if name.startswith("Lane("):
        return 3
    if name == "direction":
        return 4
    return None


def is_controllable(name: str) -> bool:
    return signal_class(name) is not None


# ---------------------------------------------------------------------------
# violation search


def earliest_violation(formula: Formula, trace, theta: float) -> Optional[float]:
    """Smallest timestep label whose prefix robustness drops below theta.

    Prefixes too short for the formula's temporal windows are skipped.
    Returns None when every evaluable prefix sits at or above theta.
    """
    for t in trace.times:
        try:
            r = prefix_robustness(formula, trace, float(t))
        except HorizonError:
            continue
        if r < theta:
            return float(t)
    return None


def ranked_candidates(grads: GradientMap, k: float, floor: float = GRADIENT_FLOOR):
    """Controllable signals at timestep ``k`` ordered best-first.

    Order: larger |gradient|, then the fixed class priority, then the
    lexicographically larger name.
    """
    cands = []
    for (t, name), g in grads.items():
        if t != k:
            continue
        rank = signal_class(name)
        if rank is None or abs(g) < floor:
            continue
        cands.append((name, float(t), float(g)))
    cands.sort(key=lambda c: (abs(c[2]), -signal_class(c[0]), c[0]), reverse=True)
    return cands


def select_signal(
    formula: Formula,
    prefix,
    grads: GradientMap,
    registry: Optional[SignalRegistry] = None,
) -> tuple[str, float, float]:
    """Best repair signal at the prefix end, per gradient magnitude."""
    k = float(prefix.times[-1])
    cands = ranked_candidates(grads, k)
    if not cands:
        raise UnrepairableError(
            f"no controllable signal with |gradient| >= {GRADIENT_FLOOR} at timestep {k}"
        )
    return cands[0]


# ---------------------------------------------------------------------------
# magnitude with halving


def magnitude(
    formula: Formula,
    prefix,
    signal: str,
    k: float,
    grad: float,
    theta: Optional[float] = None,
    config: Optional[RepairConfig] = None,
) -> MagnitudeResult:
    """First halved edit size that strictly raises the smooth robustness.

    The initial size is (theta - rho)/gradient with the discrete prefix
    robustness in the numerator; each rejected candidate halves it.
    """
    cfg = config or RepairConfig()
    th = cfg.theta if theta is None else theta
    if abs(grad) <= cfg.grad_floor:
        raise UnrepairableError(f"gradient {grad} too small to size a repair")
    rho_now = robustness(formula, prefix)
    base = smooth_robustness(formula, prefix, a=cfg.a)
    x = prefix.value(signal, k)
    delta0 = (th - rho_now) / grad
    for h in range(cfg.max_halvings + 1):
        d = delta0 / (2.0**h)
        cand = prefix.with_value(signal, k, x + d)
        after = smooth_robustness(formula, cand, a=cfg.a)
        if after > base:
            return MagnitudeResult(delta=d, halvings=h, smooth_before=base, smooth_after=after)
    raise HalvingExhaustedError(
        f"no magnitude improved smooth robustness within {cfg.max_halvings} halvings"
    )


def joint_magnitude(
    formula: Formula,
    prefix,
    picks: list[tuple[str, float, float]],
    theta: Optional[float] = None,
    config: Optional[RepairConfig] = None,
) -> tuple[list[float], int]:
    """Halving schedule over a simultaneous edit of several signals.

    Fallback for the rare case where no single-signal magnitude works;
    the deficit is split evenly across the picked signals.
    """
    cfg = config or RepairConfig()
    th = cfg.theta if theta is None else theta
    rho_now = robustness(formula, prefix)
    base = smooth_robustness(formula, prefix, a=cfg.a)
    xs = [prefix.value(sig, k) for sig, k, _ in picks]
    deltas0 = [(th - rho_now) / (len(picks) * g) for _, _, g in picks]
    for h in range(cfg.max_halvings + 1):
        ds = [d / (2.0**h) for d in deltas0]
        cand = prefix
        for (sig, k, _), x, d in zip(picks, xs, ds):
            cand = cand.with_value(sig, k, x + d)
        if smooth_robustness(formula, cand, a=cfg.a) > base:
            return ds, h
    raise HalvingExhaustedError("joint magnitude found no improving edit")


# ---------------------------------------------------------------------------
# trajectory edits


def _positional_target_frame(traj: PlannedTrajectory, roadmap, signal: str):
    """(anchor lane, artifact arc length) used by the distance builders."""
    first = traj.waypoints[0]
    anchor_lane, s0, _ = roadmap.locate((first.x, first.y))
    arg = signal[signal.index("(") + 1 : -1]
    art_s = roadmap.artifact_s(arg, anchor_lane, s_from=s0)
    return anchor_lane, art_s


def apply_repair(
    traj: PlannedTrajectory,
    env,
    roadmap,
    signal: str,
    k: float,
    delta: float,
    config: Optional[RepairConfig] = None,
) -> PlannedTrajectory:
    """Rewrite the single waypoint at timestep ``k`` per the repair rules."""
    cfg = config or RepairConfig()
    i = traj.index_of_label(k)
    wp = traj.waypoints[i]

    if signal == "speed":
        v = wp.speed + delta
        if wp.gear == "DRIVE":
            v = max(0.0, v)
        return traj.replace_waypoint(i, replace(wp, speed=v))

    if signal == "acc":
        return traj.replace_waypoint(i, replace(wp, acc=wp.acc + delta))

    if signal == "direction":
        cur = _direction_code(wp.steer)
        want = cur + delta
        d0 = min((0, 1, 2), key=lambda c: (abs(c - want), c))
        return traj.replace_waypoint(i, replace(wp, steer=_STEER_FOR_CODE[d0]))

    if signal.startswith("D("):
        lane, s_wp, lat = roadmap.locate((wp.x, wp.y))
        anchor_lane, art_s = _positional_target_frame(traj, roadmap, signal)
        s_here, _ = anchor_lane.project((wp.x, wp.y))
        target = (art_s - s_here) + delta
        err0 = abs(delta)
        steps = int(round(cfg.lane_window / cfg.position_step))
        s_c = s_wp + cfg.position_step * np.arange(-steps, steps + 1)
        s_c = s_c[(s_c >= 0.0) & (s_c <= lane.length)]
        if len(s_c):
            pts = lane.points_at(s_c, lat)
            s_a, _ = anchor_lane.project_many(pts)
            err = np.abs((art_s - s_a) - target)
            # earliest grid point tied (to tolerance) with the best error
            j = int(np.flatnonzero(err <= err.min() + 1e-12)[0])
            if err[j] < err0 - 1e-12:
                return traj.replace_waypoint(
                    i, wp.moved_to(float(pts[j, 0]), float(pts[j, 1]))
                )
        raise RepairInfeasibleError(
            f"no lane position within +-{cfg.lane_window} m improves {signal} toward {target:.3f}"
        )

    if signal.startswith("Lane("):
        lane, s_wp, lat = roadmap.locate((wp.x, wp.y))
        target = lane.ordinal + delta
        err0 = abs(delta)
        best = None
        for cand in roadmap.lanes:
            e = abs(cand.ordinal - target)
            if best is None or e < best[0] - 1e-12 or (abs(e - best[0]) <= 1e-12 and cand.ordinal < best[1]):
                s_c, _ = cand.project((wp.x, wp.y))
                pt = cand.point_at(s_c, 0.0)
                best = (e, cand.ordinal, float(pt[0]), float(pt[1]))
        if best is None or best[0] >= err0 - 1e-12:
            raise RepairInfeasibleError(f"no lane improves {signal} toward ordinal {target:.2f}")
        return traj.replace_waypoint(i, wp.moved_to(best[2], best[3]))

    raise UnrepairableError(f"signal {signal!r} is not controllable")


def positional_difference(
    signal: str, before: Waypoint, after: Waypoint, delta: float, dt: float
) -> float:
    """Positional disruption of one edit, in meters."""
    if signal == "speed":
        return abs(after.speed - before.speed) * dt
    if signal == "acc":
        return abs(after.acc - before.acc) * dt * dt
    if signal == "direction":
        return 0.0
    return math.hypot(after.x - before.x, after.y - before.y)


# ---------------------------------------------------------------------------
# trace-level driver (column edits, no geometry)


def repair_once(
    formula: Formula,
    trace,
    theta: Optional[float] = None,
    config: Optional[RepairConfig] = None,
) -> Optional[tuple["object", RepairAction]]:
    """One gradient repair applied directly to a trace column.

    Returns None when no prefix violates; otherwise (edited trace, action).
    Used for randomized monotonicity checks and by callers that carry no
    geometric trajectory.
    """
    cfg = config or RepairConfig()
    th = cfg.theta if theta is None else theta
    k = earliest_violation(formula, trace, th)
    if k is None:
        return None
    prefix = trace.prefix(k)
    _, tape = forward_record(formula, prefix, a=cfg.a)
    grads = backward(tape)
    sig, kk, g = select_signal(formula, prefix, grads)
    mag = magnitude(formula, prefix, sig, kk, g, th, cfg)
    edited = trace.with_value(sig, kk, trace.value(sig, kk) + mag.delta)
    action = RepairAction(
        time=0.0,
        k=kk,
        signal=sig,
        delta=mag.delta,
        halvings=mag.halvings,
        rho_before=robustness(formula, prefix),
        rho_after=robustness(formula, edited.prefix(kk)),
        positional_diff=0.0,
        note="trace-level",
    )
    return edited, action
