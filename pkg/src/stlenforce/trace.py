"""Trajectory, predicted environment, and the signal trace built from them.

A planner emits uniformly spaced waypoints.  Pairing the trajectory with
the predicted environment (scripted road users, light schedules, weather,
map) yields a Trace: one row per waypoint, one float column per signal
the active rules reference.

Boolean command signals (fog light, horn, ...) are not decided by the
planner, so their columns start as NaN placeholders.  They must be
resolved to concrete true/false values before robustness evaluation;
``resolve_placeholders`` picks the assignment that maximizes robustness,
preferring fewer switched-on values on ties.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import robustness as _rb
from .dsl import (
    And,
    Always,
    Eventually,
    Formula,
    Not,
    Or,
    Prop,
    SignalRegistry,
    Specification,
    Until,
    contains_temporal,
    default_registry,
    referenced_signals,
)
from .roadmap import Lane, MapConfigError, RoadMap

GEARS = ("DRIVE", "REVERSE", "PARK", "NEUTRAL")

# steer angles below this magnitude count as driving straight
STRAIGHT_STEER = 0.05

DIRECTION_FORWARD, DIRECTION_LEFT, DIRECTION_RIGHT = 0.0, 1.0, 2.0

# benign defaults when no lead vehicle is in the corridor
NO_NPC_SPEED = 1e6
NO_NPC_RANGE = 1e6
CLEAR_ROAD_DISTANCE = 1e6


class ScriptHorizonError(ValueError):
    """A scripted road user has no data for the requested time."""


class PlaceholderError(_rb.PlaceholderError):
    pass


@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float
    speed: float
    acc: float = 0.0
    steer: float = 0.0
    gear: str = "DRIVE"

    def moved_to(self, x: float, y: float) -> "Waypoint":
        return replace(self, x=x, y=y)


class PlannedTrajectory:
    """Uniformly spaced waypoint list, validated on construction."""

    def __init__(self, waypoints):
        wps = tuple(waypoints)
        if not wps:
            raise ValueError("a trajectory needs at least one waypoint")
        for wp in wps:
            if wp.gear not in GEARS:
                raise ValueError(f"unknown gear {wp.gear!r}")
            if wp.gear == "DRIVE" and wp.speed < -1e-9:
                raise ValueError(f"negative speed {wp.speed} at t={wp.t} in DRIVE")
        ts = np.array([wp.t for wp in wps])
        if len(wps) > 1:
            gaps = np.diff(ts)
            if np.any(gaps <= 0):
                raise ValueError("waypoint times must be strictly increasing")
            if np.max(gaps) - np.min(gaps) > 1e-6:
                raise ValueError("waypoints must be uniformly spaced")
            self._dt = float(np.mean(gaps))
        else:
            self._dt = 0.0
        self.waypoints = wps

    def __len__(self):
        return len(self.waypoints)

    def __iter__(self):
        return iter(self.waypoints)

    def __getitem__(self, i) -> Waypoint:
        return self.waypoints[i]

    @property
    def dt(self) -> float:
        return self._dt

    @property
    def t0(self) -> float:
        return self.waypoints[0].t

    def times(self) -> np.ndarray:
        return np.array([wp.t for wp in self.waypoints])

    def index_of_label(self, k: float) -> int:
        """Waypoint index whose time is ``k`` seconds after the first."""
        target = self.t0 + k
        for i, wp in enumerate(self.waypoints):
            if abs(wp.t - target) <= 1e-6:
                return i
        raise ValueError(f"no waypoint at timestep {k}")

    def replace_waypoint(self, i: int, wp: Waypoint) -> "PlannedTrajectory":
        if abs(wp.t - self.waypoints[i].t) > 1e-9:
            raise ValueError("replacement waypoint must keep its time")
        wps = list(self.waypoints)
        wps[i] = wp
        return PlannedTrajectory(wps)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "waypoints": [
                {
                    "t": wp.t, "x": wp.x, "y": wp.y, "speed": wp.speed,
                    "acc": wp.acc, "steer": wp.steer, "gear": wp.gear,
                }
                for wp in self.waypoints
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PlannedTrajectory":
        return cls(
            Waypoint(
                float(d["t"]), float(d["x"]), float(d["y"]), float(d["speed"]),
                float(d.get("acc", 0.0)), float(d.get("steer", 0.0)),
                d.get("gear", "DRIVE"),
            )
            for d in data["waypoints"]
        )


def resample(waypoints, dt: float) -> PlannedTrajectory:
    """Linearly resample raw waypoints onto a uniform grid of spacing ``dt``.

    Positions, speeds, accelerations, and steer interpolate linearly;
    gear snaps to the nearest source waypoint.
    """
    if dt <= 0:
        raise ValueError(f"resample spacing must be positive, got {dt}")
    wps = list(waypoints)
    if not wps:
        raise ValueError("nothing to resample")
    ts = np.array([wp.t for wp in wps])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("waypoint times must be strictly increasing")
    if len(wps) == 1:
        return PlannedTrajectory(wps)
    t0, t_end = ts[0], ts[-1]
    n = int(math.floor((t_end - t0) / dt + 1e-9)) + 1
    grid = t0 + dt * np.arange(n)
    cols = {
        name: np.interp(grid, ts, np.array([getattr(wp, name) for wp in wps]))
        for name in ("x", "y", "speed", "acc", "steer")
    }
    nearest = np.clip(np.searchsorted(ts, grid + 1e-12), 1, len(ts) - 1)
    pick_prev = (grid - ts[nearest - 1]) <= (ts[nearest] - grid)
    gear_idx = np.where(pick_prev, nearest - 1, nearest)
    out = [
        Waypoint(float(grid[i]), float(cols["x"][i]), float(cols["y"][i]),
                 float(max(cols["speed"][i], 0.0)), float(cols["acc"][i]),
                 float(cols["steer"][i]), wps[int(gear_idx[i])].gear)
        for i in range(n)
    ]
    return PlannedTrajectory(out)


# ---------------------------------------------------------------------------
# predicted environment


class NPCTrack:
    """Scripted road user positions over absolute time, linearly interpolated."""

    def __init__(self, npc_id: str, kind: str, times, points, speeds=None):
        self.id = npc_id
        if kind not in ("vehicle", "pedestrian"):
            raise ValueError(f"unknown road user kind {kind!r}")
        self.kind = kind
        self.times = np.asarray(times, dtype=float)
        self.points = np.asarray(points, dtype=float).reshape(len(self.times), 2)
        if speeds is None:
            if len(self.times) > 1:
                d = np.hypot(*np.diff(self.points, axis=0).T)
                sp = d / np.diff(self.times)
                speeds = np.concatenate([sp, sp[-1:]])
            else:
                speeds = np.zeros(1)
        self.speeds = np.asarray(speeds, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError(f"script times for {npc_id!r} must increase")

    @classmethod
    def static(cls, npc_id: str, kind: str, x: float, y: float) -> "NPCTrack":
        return cls(npc_id, kind, [0.0, 1e12], [[x, y], [x, y]], [0.0, 0.0])

    @property
    def coverage_end(self) -> float:
        return float(self.times[-1])

    def at(self, t: float):
        """(x, y, speed) at absolute time ``t``."""
        if t < self.times[0] - 1e-9 or t > self.times[-1] + 1e-9:
            raise ScriptHorizonError(
                f"road user {self.id!r} has no script data at t={t:.3f} "
                f"(covers [{self.times[0]:.3f}, {self.times[-1]:.3f}])"
            )
        x = float(np.interp(t, self.times, self.points[:, 0]))
        y = float(np.interp(t, self.times, self.points[:, 1]))
        sp = float(np.interp(t, self.times, self.speeds))
        return x, y, sp

    def velocity_at(self, t: float) -> tuple[float, float]:
        """Script velocity vector at ``t`` (zero for single-point scripts)."""
        if len(self.times) < 2:
            return 0.0, 0.0
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 2)
        dt = self.times[i + 1] - self.times[i]
        v = (self.points[i + 1] - self.points[i]) / dt
        return float(v[0]), float(v[1])

    def to_json(self) -> dict:
        return {
            "id": self.id, "kind": self.kind,
            "times": self.times.tolist(),
            "points": self.points.tolist(),
            "speeds": self.speeds.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "NPCTrack":
        return cls(d["id"], d["kind"], d["times"], d["points"], d.get("speeds"))


class LightSchedule:
    """Traffic light phases: (duration seconds, color, blink) tuples.

    Cyclic schedules repeat forever with an optional phase offset;
    non-cyclic ones hold the last phase.
    """

    def __init__(self, light_id: str, phases, cyclic: bool = True, offset: float = 0.0):
        self.id = light_id
        self.phases = tuple(
            (float(dur), str(color).upper(), bool(blink)) for dur, color, blink in phases
        )
        if not self.phases or any(d <= 0 for d, _, _ in self.phases):
            raise ValueError("light phases need positive durations")
        self.cyclic = cyclic
        self.offset = float(offset)
        self.cycle = float(sum(d for d, _, _ in self.phases))

    def at(self, t: float) -> tuple[str, bool]:
        tau = t - self.offset
        if self.cyclic:
            tau = tau % self.cycle
        elif tau < 0:
            tau = 0.0
        acc = 0.0
        for dur, color, blink in self.phases:
            acc += dur
            if tau < acc - 1e-12:
                return color, blink
        return self.phases[-1][1], self.phases[-1][2]

    def with_offset(self, offset: float) -> "LightSchedule":
        return LightSchedule(self.id, self.phases, self.cyclic, offset)

    def to_json(self) -> dict:
        return {
            "id": self.id, "cyclic": self.cyclic, "offset": self.offset,
            "phases": [[d, c, b] for d, c, b in self.phases],
        }

    @classmethod
    def from_json(cls, d: dict) -> "LightSchedule":
        return cls(d["id"], [tuple(p) for p in d["phases"]],
                   d.get("cyclic", True), d.get("offset", 0.0))


@dataclass
class PredictedEnvironment:
    roadmap: RoadMap
    npcs: tuple = ()
    lights: dict = field(default_factory=dict)
    fog: float = 0.0
    snow: float = 0.0
    horizon: float | None = None

    def light(self, light_id: str) -> LightSchedule | None:
        return self.lights.get(light_id)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "roadmap": self.roadmap.to_json(),
            "npcs": [npc.to_json() for npc in self.npcs],
            "lights": {lid: s.to_json() for lid, s in self.lights.items()},
            "fog": self.fog,
            "snow": self.snow,
            "horizon": self.horizon,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PredictedEnvironment":
        return cls(
            roadmap=RoadMap.from_json(d["roadmap"]),
            npcs=tuple(NPCTrack.from_json(n) for n in d.get("npcs", ())),
            lights={lid: LightSchedule.from_json(s)
                    for lid, s in d.get("lights", {}).items()},
            fog=float(d.get("fog", 0.0)),
            snow=float(d.get("snow", 0.0)),
            horizon=d.get("horizon"),
        )


# ---------------------------------------------------------------------------
# the trace itself


class Trace:
    """Per-scene float signal matrix over uniformly spaced timesteps.

    ``times`` are labels in seconds relative to the first scene (the
    first is always 0).  Enum signals store their integer code, boolean
    signals +1/-1, and unresolved command placeholders NaN.
    """

    def __init__(self, times, signals: dict, dt: float | None = None,
                 placeholder_names=(), registry: SignalRegistry | None = None,
                 t0: float = 0.0):
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValueError("a trace needs at least one scene")
        if abs(self.times[0]) > 1e-9:
            raise ValueError("trace timesteps must start at 0")
        n = len(self.times)
        if n > 1:
            gaps = np.diff(self.times)
            if np.any(gaps <= 0) or np.max(gaps) - np.min(gaps) > 1e-6:
                raise ValueError("trace timesteps must be uniformly spaced")
            inferred = float(gaps[0])
            if dt is not None and abs(dt - inferred) > 1e-6:
                raise ValueError(f"dt={dt} disagrees with scene spacing {inferred}")
            self.dt = inferred
        else:
            self.dt = float(dt) if dt else 1.0
        self.signals = {}
        for name, col in signals.items():
            arr = np.asarray(col, dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"signal {name!r} has {arr.shape}, expected ({n},)")
            self.signals[name] = arr
        self.placeholder_names = tuple(placeholder_names)
        for name in self.placeholder_names:
            if name not in self.signals:
                raise ValueError(f"placeholder {name!r} has no column")
        self.registry = registry if registry is not None else default_registry()
        self.t0 = float(t0)

    def __len__(self):
        return len(self.times)

    def index_of(self, t) -> int:
        idx = int(round(float(t) / self.dt)) if self.dt else 0
        if 0 <= idx < len(self.times) and abs(self.times[idx] - float(t)) <= 1e-6:
            return idx
        raise ValueError(
            f"no scene at timestep {t} (trace covers 0..{self.times[-1]:g} "
            f"step {self.dt:g})"
        )

    def value(self, name: str, t) -> float:
        return float(self.signals[name][self.index_of(t)])

    def prefix(self, k) -> "Trace":
        """Scenes from the start through timestep ``k`` inclusive."""
        end = self.index_of(k) + 1
        return Trace(
            self.times[:end], {n: c[:end] for n, c in self.signals.items()},
            dt=self.dt, placeholder_names=self.placeholder_names,
            registry=self.registry, t0=self.t0,
        )

    def with_value(self, name: str, t, value: float) -> "Trace":
        if name not in self.signals:
            raise KeyError(f"trace has no signal {name!r}")
        cols = dict(self.signals)
        col = cols[name].copy()
        col[self.index_of(t)] = value
        cols[name] = col
        return Trace(self.times, cols, dt=self.dt,
                     placeholder_names=self.placeholder_names,
                     registry=self.registry, t0=self.t0)

    def substitute(self, assignment: "Assignment") -> "Trace":
        """Fill every placeholder column from the assignment (default false)."""
        cols = dict(self.signals)
        for name in self.placeholder_names:
            col = np.empty(len(self.times))
            for i, t in enumerate(self.times):
                col[i] = 1.0 if assignment.get(float(t), name) else -1.0
            cols[name] = col
        return Trace(self.times, cols, dt=self.dt, placeholder_names=(),
                     registry=self.registry, t0=self.t0)

    def to_json(self) -> dict:
        sig_out = {}
        for name, col in self.signals.items():
            info = self.registry.resolve(name) if self.registry.has(name) else None
            if name in self.placeholder_names:
                sig_out[name] = [None if math.isnan(v) else bool(v > 0) for v in col]
            elif info is not None and info.kind == "bool":
                sig_out[name] = [bool(v > 0) for v in col]
            elif info is not None and info.kind == "enum":
                sig_out[name] = [info.enum_values[int(v)] for v in col]
            else:
                sig_out[name] = [float(v) for v in col]
        return {
            "schema": 1,
            "t0": self.t0,
            "dt": self.dt,
            "times": [float(t) for t in self.times],
            "signals": sig_out,
            "placeholders": list(self.placeholder_names),
        }

    @classmethod
    def from_json(cls, data: dict, registry: SignalRegistry | None = None) -> "Trace":
        reg = registry if registry is not None else default_registry()
        times = data["times"]
        signals = {}
        for name, vals in data["signals"].items():
            info = reg.resolve(name) if reg.has(name) else None
            col = np.empty(len(vals))
            for i, v in enumerate(vals):
                if v is None:
                    col[i] = math.nan
                elif isinstance(v, bool):
                    col[i] = 1.0 if v else -1.0
                elif isinstance(v, str):
                    if info is None or info.kind != "enum":
                        raise ValueError(f"string value for non-enum signal {name!r}")
                    col[i] = float(info.code(v))
                else:
                    col[i] = float(v)
            signals[name] = col
        return cls(times, signals, dt=data.get("dt"),
                   placeholder_names=tuple(data.get("placeholders", ())),
                   registry=reg, t0=float(data.get("t0", 0.0)))


class Assignment:
    """Boolean choice per (timestep, command signal)."""

    def __init__(self, values: dict | None = None):
        self.values: dict[tuple[float, str], bool] = {}
        if values:
            for (t, name), v in values.items():
                self.values[(float(t), name)] = bool(v)

    @classmethod
    def all_false(cls, times, names) -> "Assignment":
        return cls({(float(t), n): False for t in times for n in names})

    def get(self, t: float, name: str, default: bool = False) -> bool:
        return self.values.get((float(t), name), default)

    def set(self, t: float, name: str, value: bool) -> None:
        self.values[(float(t), name)] = bool(value)

    def true_count(self) -> int:
        return sum(1 for v in self.values.values() if v)

    def items(self):
        return sorted(self.values.items())

    def copy(self) -> "Assignment":
        return Assignment(self.values)

    def __eq__(self, other):
        return isinstance(other, Assignment) and self.values == other.values

    def to_json(self) -> list:
        return [
            {"t": t, "signal": name, "value": v}
            for (t, name), v in self.items()
        ]

    @classmethod
    def from_json(cls, rows) -> "Assignment":
        return cls({(row["t"], row["signal"]): row["value"] for row in rows})


# ---------------------------------------------------------------------------
# building a trace from trajectory + environment


def _direction_code(steer: float) -> float:
    if steer > STRAIGHT_STEER:
        return DIRECTION_LEFT
    if steer < -STRAIGHT_STEER:
        return DIRECTION_RIGHT
    return DIRECTION_FORWARD


def _formula_and_registry(spec, registry):
    if isinstance(spec, Specification):
        return spec.top, (registry or spec.registry)
    return spec, (registry or default_registry())


def build_trace(trajectory: PlannedTrajectory, env: PredictedEnvironment,
                spec, registry: SignalRegistry | None = None) -> Trace:
    """Evaluate every signal the rules reference at each waypoint.

    Distance signals are measured as arc length along the lane of the
    first waypoint, to the nearest matching artifact ahead of it.
    """
    formula, reg = _formula_and_registry(spec, registry)
    names = sorted(referenced_signals(formula))
    rm = env.roadmap
    wps = trajectory.waypoints
    n = len(wps)
    times = trajectory.times() - trajectory.t0

    points = np.array([[wp.x, wp.y] for wp in wps])
    loc_lanes, loc_s, loc_lat = rm.locate_many(points)
    located = list(zip(loc_lanes, loc_s, loc_lat))
    lane0 = located[0][0]
    s_anchor_lane, _ = lane0.project_many(points)
    abs_times = trajectory.times()

    # anchors are re-resolved per waypoint so a crossed stop line drops
    # behind instead of feeding the rules a negative distance
    lane_sl = [sl for sl in rm.stoplines if sl.lane_id == lane0.id]
    lane_sl.sort(key=lambda sl: sl.s)
    sl_s = np.array([sl.s for sl in lane_sl])
    sl_idx = np.searchsorted(sl_s, s_anchor_lane - 1e-6, side="left")

    def _stop_light(i: int):
        j = sl_idx[i]
        if j >= len(lane_sl) or lane_sl[j].light_id is None:
            return None
        return env.light(lane_sl[j].light_id)

    jn_entries = None

    def _junction_entries():
        nonlocal jn_entries
        if jn_entries is None:
            es = [rm.junction_entry_s(jn, lane0) for jn in rm.junctions]
            jn_entries = np.sort(np.array([e for e in es if e is not None]))
        return jn_entries

    def _dist_ahead(target: str) -> np.ndarray:
        if target == "stopline":
            cands = sl_s
        elif target == "junction":
            cands = _junction_entries()
        else:
            # named artifacts keep their absolute position, behind or ahead
            try:
                at = rm.artifact_s(target, lane0, float(s_anchor_lane[0]))
            except MapConfigError:
                return np.full(n, CLEAR_ROAD_DISTANCE)
            return at - s_anchor_lane
        idx = np.searchsorted(cands, s_anchor_lane - 1e-6, side="left")
        out = np.full(n, CLEAR_ROAD_DISTANCE)
        hit = idx < len(cands)
        out[hit] = cands[idx[hit]] - s_anchor_lane[hit]
        return out

    signals: dict[str, np.ndarray] = {}
    placeholders: list[str] = []

    def _npc_xy(npc: NPCTrack, mask: np.ndarray):
        """Scripted positions at every masked scene time, or raise where
        the script runs out exactly as the scalar lookup would."""
        ts = abs_times[mask] if mask is not None else abs_times
        bad = (ts < npc.times[0] - 1e-9) | (ts > npc.times[-1] + 1e-9)
        if bad.any():
            npc.at(float(ts[np.argmax(bad)]))  # raises ScriptHorizonError
        x = np.interp(ts, npc.times, npc.points[:, 0])
        y = np.interp(ts, npc.times, npc.points[:, 1])
        sp = np.interp(ts, npc.times, npc.speeds)
        return x, y, sp

    def _npc_velocity(npc: NPCTrack, ts: np.ndarray):
        if len(npc.times) < 2:
            return np.zeros(len(ts)), np.zeros(len(ts))
        seg = np.clip(np.searchsorted(npc.times, ts, side="right") - 1,
                      0, len(npc.times) - 2)
        dt_seg = np.diff(npc.times)[seg]
        v = np.diff(npc.points, axis=0)[seg] / dt_seg[:, None]
        return v[:, 0], v[:, 1]

    def _lane_groups():
        """Scene indices grouped by the lane each waypoint sits on."""
        groups: dict[int, list] = {}
        for i, (lane_i, _s, _l) in enumerate(located):
            groups.setdefault(id(lane_i), []).append(i)
        return [(located[ix[0]][0], np.asarray(ix)) for ix in groups.values()]

    def npc_flags(kind: str, reach: float) -> np.ndarray:
        # right-of-way conflicts ahead: every pedestrian counts, but only
        # vehicles that are moving on a crossing or oncoming course; a lead
        # car travelling with the flow is not priority traffic
        out = np.full(n, -1.0)
        groups = _lane_groups()
        for npc in env.npcs:
            if npc.kind != kind:
                continue
            unset = out < 0.0
            if not unset.any():
                break
            xs, ys, _sp = _npc_xy(npc, unset)
            scenes = np.flatnonzero(unset)
            pts = np.column_stack([xs, ys])
            s_npc = np.empty(len(scenes))
            lat = np.empty(len(scenes))
            head = np.empty(len(scenes))
            for lane_i, ix in groups:
                sel = np.isin(scenes, ix)
                if not sel.any():
                    continue
                s_g, lat_g = lane_i.project_many(pts[sel])
                s_npc[sel], lat[sel] = s_g, lat_g
                if kind == "vehicle":
                    seg = np.clip(
                        np.searchsorted(lane_i._cum, np.clip(s_g, 0.0, lane_i.length),
                                        side="right") - 1,
                        0, len(lane_i._seg_len) - 1)
                    head[sel] = np.arctan2(lane_i._dirs[seg, 1], lane_i._dirs[seg, 0])
            s_i = loc_s[scenes]
            width = np.array([located[i][0].width for i in scenes])
            ahead = s_npc - s_i
            hit = (ahead > 0.0) & (ahead <= reach) & (np.abs(lat) <= width)
            if kind == "vehicle":
                vx, vy = _npc_velocity(npc, abs_times[scenes])
                vnorm = np.hypot(vx, vy)
                along = np.where(vnorm > 0,
                                 (vx * np.cos(head) + vy * np.sin(head)) / np.maximum(vnorm, 1e-12),
                                 0.0)
                hit &= (vnorm >= 0.5) & (along <= math.cos(math.radians(45.0)))
            out[scenes[hit]] = 1.0
        return out

    def lead_ranges():
        """(range, speed) of the nearest vehicle ahead per scene."""
        rng = np.full(n, NO_NPC_RANGE)
        spd = np.full(n, NO_NPC_SPEED)
        groups = _lane_groups()
        for npc in env.npcs:
            if npc.kind != "vehicle":
                continue
            xs, ys, sp = _npc_xy(npc, None)
            pts = np.column_stack([xs, ys])
            for lane_i, ix in groups:
                s_g, lat_g = lane_i.project_many(pts[ix])
                ahead = s_g - loc_s[ix]
                hit = (ahead > 0.0) & (np.abs(lat_g) <= 0.75 * lane_i.width)
                closer = hit & (ahead < rng[ix])
                rows = ix[closer]
                rng[rows] = ahead[closer]
                spd[rows] = sp[ix][closer]
        return rng, spd

    lead_cache = None
    for name in names:
        info = reg.resolve(name)
        if info.source == "command":
            signals[name] = np.full(n, np.nan)
            placeholders.append(name)
            continue
        if name == "speed":
            signals[name] = np.array([wp.speed for wp in wps])
        elif name == "acc":
            signals[name] = np.array([wp.acc for wp in wps])
        elif name == "direction":
            signals[name] = np.array([_direction_code(wp.steer) for wp in wps])
        elif name.startswith("D("):
            signals[name] = _dist_ahead(name[2:-1])
        elif name.startswith("Lane("):
            signals[name] = np.array([float(loc[0].ordinal) for loc in located])
        elif name == "TL(color)":
            dark = float(info.code("BLACK"))
            signals[name] = np.array([
                float(info.code(lt.at(abs_times[i])[0])) if (lt := _stop_light(i)) else dark
                for i in range(n)
            ])
        elif name == "TL(blink)":
            signals[name] = np.array([
                1.0 if (lt := _stop_light(i)) and lt.at(abs_times[i])[1] else -1.0
                for i in range(n)
            ])
        elif name.startswith("PriorityV("):
            signals[name] = npc_flags("vehicle", float(name[10:-1]))
        elif name.startswith("PriorityP("):
            signals[name] = npc_flags("pedestrian", float(name[10:-1]))
        elif name == "fog":
            signals[name] = np.full(n, float(env.fog))
        elif name == "snow":
            signals[name] = np.full(n, float(env.snow))
        elif name in ("NPCAhead.speed", "NPCAhead.range"):
            if lead_cache is None:
                lead_cache = lead_ranges()
            signals[name] = lead_cache[0] if name == "NPCAhead.range" else lead_cache[1]
        else:
            raise MapConfigError(f"no builder for signal {name!r}")

    return Trace(times, signals, dt=trajectory.dt if n > 1 else None,
                 placeholder_names=tuple(placeholders), registry=reg,
                 t0=trajectory.t0)


# ---------------------------------------------------------------------------
# placeholder resolution


def _collect_blocks(f: Formula, pending: frozenset, pol: int, out: list) -> None:
    if not contains_temporal(f):
        if referenced_signals(f) & pending:
            out.append((f, pol))
        return
    if isinstance(f, Not):
        _collect_blocks(f.child, pending, -pol, out)
    elif isinstance(f, (And, Or)):
        for c in f.children:
            _collect_blocks(c, pending, pol, out)
    elif isinstance(f, (Always, Eventually)):
        _collect_blocks(f.child, pending, pol, out)
    elif isinstance(f, Until):
        _collect_blocks(f.left, pending, pol, out)
        _collect_blocks(f.right, pending, pol, out)


def _combo_order(k: int):
    return sorted(itertools.product((False, True), repeat=k), key=lambda c: (sum(c), c))


JOINT_SEARCH_CAP = 20  # max placeholder slots for exhaustive joint search


def resolve_placeholders(trace: Trace, spec,
                         registry: SignalRegistry | None = None):
    """Choose placeholder values maximizing robustness at the trace start.

    Returns ``(assignment, resolved trace)``.  Ties prefer fewer
    switched-on commands, then earlier signals off.  When each command
    signal occurs in exactly one rule block with a single polarity the
    blocks are optimized independently per scene; otherwise a joint
    exhaustive search runs, capped at 2**20 combinations.
    """
    formula, reg = _formula_and_registry(spec, registry)
    pending = frozenset(trace.placeholder_names) & referenced_signals(formula)
    assignment = Assignment.all_false(trace.times, trace.placeholder_names)
    if not pending:
        return assignment, trace.substitute(assignment)

    raw_blocks: list = []
    _collect_blocks(formula, pending, 1, raw_blocks)
    blocks: list = []
    for item in raw_blocks:
        if item not in blocks:
            blocks.append(item)

    homes: dict[str, list] = {name: [] for name in pending}
    for blk, pol in blocks:
        for name in referenced_signals(blk) & pending:
            homes[name].append((blk, pol))
    independent = all(len(v) == 1 for v in homes.values())

    if independent:
        for blk, pol in blocks:
            sigs = sorted(referenced_signals(blk) & pending)
            best_vals = None
            best_combo = [None] * len(trace)
            for combo in _combo_order(len(sigs)):
                cols = dict(trace.signals)
                for name, v in zip(sigs, combo):
                    cols[name] = np.full(len(trace), 1.0 if v else -1.0)
                tmp = Trace(trace.times, cols, dt=trace.dt, registry=reg, t0=trace.t0)
                vals = _rb._eval_exact(blk, tmp, {}) * pol
                if best_vals is None:
                    best_vals = vals.copy()
                    best_combo = [combo] * len(trace)
                else:
                    better = vals > best_vals
                    best_vals = np.where(better, vals, best_vals)
                    for i in np.nonzero(better)[0]:
                        best_combo[int(i)] = combo
            for i, t in enumerate(trace.times):
                for name, v in zip(sigs, best_combo[i]):
                    assignment.set(float(t), name, v)
        return assignment, trace.substitute(assignment)

    # coupled commands: exhaustive joint search over every (scene, signal) slot
    sigs = sorted(pending)
    slots = [(float(t), name) for t in trace.times for name in sigs]
    if len(slots) > JOINT_SEARCH_CAP:
        raise PlaceholderError(
            f"placeholder search space too large: {len(slots)} coupled slots "
            f"(limit {JOINT_SEARCH_CAP})"
        )
    best = None
    for combo in itertools.product((False, True), repeat=len(slots)):
        cand = assignment.copy()
        for (t, name), v in zip(slots, combo):
            cand.set(t, name, v)
        val = _rb.robustness(formula, trace.substitute(cand))
        key = (-val, sum(combo), combo)
        if best is None or key < best[0]:
            best = (key, cand)
    assignment = best[1]
    return assignment, trace.substitute(assignment)
