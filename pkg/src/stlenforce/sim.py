"""Desk-scale closed-loop simulator.

A scenario bundles a road map, an ego start, scripted road users, light
schedules and the rule text that applies.  ``run_scenario`` drives a
kinematic bicycle ego along planner output at a fixed world rate,
screens every replanned trajectory through the enforcement layer at the
planner rate, and scores the executed trace against the same rules.
"""

from __future__ import annotations

import csv
import io
import math
import random
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dsl import Specification, parse_spec
from .enforce import (
    SWITCH_NAMES,
    ControlCommand,
    EnforceConfig,
    EnforcementReport,
    TickRecord,
    enforce_tick,
    validate_commands,
)
from .robustness import HorizonError, robustness
from .roadmap import Junction, RoadMap, StopLine, straight_lane
from .trace import (
    LightSchedule,
    NPCTrack,
    PlannedTrajectory,
    PredictedEnvironment,
    ScriptHorizonError,
    Waypoint,
    _formula_and_registry,
    build_trace,
)

WHEELBASE = 2.8
ACCEL_LIMIT = 6.0  # hard braking authority; comfortable driving stays well under this
WORLD_DT = 0.1
PLANNER_DT = 0.5
PLAN_HORIZON = 8.0

# tracker shape: how far ahead speed dips are honoured, and the
# pure-pursuit aim distance
SPEED_LOOKAHEAD = 2.5
PURSUIT_LOOKAHEAD = 0.8

COLLISION_RADIUS = 1.5
BRAKE_TTC = 1.0


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# world state


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    heading: float
    speed: float
    acc: float = 0.0
    steer: float = 0.0
    gear: str = "DRIVE"


@dataclass(frozen=True)
class WorldState:
    """Snapshot of everything the planner can see at time ``t``."""

    t: float
    ego: EgoState
    npcs: dict  # id -> (x, y, speed)
    lights: dict  # id -> (color, blink)
    fog: float = 0.0
    snow: float = 0.0


# ---------------------------------------------------------------------------
# scenario description


@dataclass
class Scenario:
    name: str
    roadmap: RoadMap
    spec_source: str
    ego_start: tuple  # (x, y, heading, speed)
    cruise_speed: float
    destination: tuple  # (x, y)
    destination_radius: float = 2.5
    npcs: tuple = ()
    lights: dict = field(default_factory=dict)
    fog: float = 0.0
    snow: float = 0.0
    timeout: float = 60.0
    world_dt: float = WORLD_DT
    planner_dt: float = PLANNER_DT
    horizon: float = PLAN_HORIZON
    planner: str = "cruise"
    # lateral swerve profile (ramp_start_s, ramp_len_s, hold_end_s, offset)
    drift: Optional[tuple] = None

    def spec(self) -> Specification:
        return parse_spec(self.spec_source)

    def randomized(self, seed: int) -> "Scenario":
        """Jitter light phases, cruise speed, npc scripts and the swerve.

        Deterministic per (scenario name, seed); seeding by string keeps
        the draw independent of process hash randomization.
        """
        rng = random.Random(f"{self.name}:{seed}")
        lights = {
            lid: sched.with_offset(sched.offset + rng.uniform(0.0, sched.cycle))
            for lid, sched in self.lights.items()
        }
        cruise = self.cruise_speed * (1.0 + rng.uniform(-0.04, 0.04))
        npcs = []
        for npc in self.npcs:
            dx = rng.uniform(-0.4, 0.4)
            dy = rng.uniform(0.0, 4.0)
            pts = np.asarray(npc.points, dtype=float) + np.array([dx, dy])
            npcs.append(NPCTrack(npc.id, npc.kind, npc.times, pts, npc.speeds))
        drift = self.drift
        if drift is not None:
            drift = (drift[0] + rng.uniform(-4.0, 4.0),) + tuple(drift[1:])
        return replace(self, lights=lights, cruise_speed=cruise,
                       npcs=tuple(npcs), drift=drift)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "name": self.name,
            "roadmap": self.roadmap.to_json(),
            "spec_source": self.spec_source,
            "ego_start": list(self.ego_start),
            "cruise_speed": self.cruise_speed,
            "destination": list(self.destination),
            "destination_radius": self.destination_radius,
            "npcs": [npc.to_json() for npc in self.npcs],
            "lights": {lid: s.to_json() for lid, s in self.lights.items()},
            "fog": self.fog,
            "snow": self.snow,
            "timeout": self.timeout,
            "world_dt": self.world_dt,
            "planner_dt": self.planner_dt,
            "horizon": self.horizon,
            "planner": self.planner,
            "drift": list(self.drift) if self.drift else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        return cls(
            name=d["name"],
            roadmap=RoadMap.from_json(d["roadmap"]),
            spec_source=d["spec_source"],
            ego_start=tuple(d["ego_start"]),
            cruise_speed=float(d["cruise_speed"]),
            destination=tuple(d["destination"]),
            destination_radius=float(d.get("destination_radius", 2.5)),
            npcs=tuple(NPCTrack.from_json(n) for n in d.get("npcs", ())),
            lights={lid: LightSchedule.from_json(s)
                    for lid, s in d.get("lights", {}).items()},
            fog=float(d.get("fog", 0.0)),
            snow=float(d.get("snow", 0.0)),
            timeout=float(d.get("timeout", 60.0)),
            world_dt=float(d.get("world_dt", WORLD_DT)),
            planner_dt=float(d.get("planner_dt", PLANNER_DT)),
            horizon=float(d.get("horizon", PLAN_HORIZON)),
            planner=d.get("planner", "cruise"),
            drift=tuple(d["drift"]) if d.get("drift") else None,
        )


def initial_state(scenario: Scenario) -> WorldState:
    x, y, heading, speed = scenario.ego_start
    ego = EgoState(float(x), float(y), float(heading), float(speed))
    npcs = {npc.id: npc.at(0.0) for npc in scenario.npcs}
    lights = {lid: s.at(0.0) for lid, s in scenario.lights.items()}
    return WorldState(0.0, ego, npcs, lights, scenario.fog, scenario.snow)


# ---------------------------------------------------------------------------
# world stepping


def step_world(scenario: Scenario, state: WorldState, command: ControlCommand,
               dt: float) -> WorldState:
    """Advance the world one step under a control command.

    Kinematic bicycle: commanded acceleration moves speed first, then the
    updated speed carries the ego along its current heading, so path
    length equals the integral of speed exactly.
    """
    if dt <= 0:
        raise ValueError(f"world step must be positive, got {dt}")
    ego = state.ego
    a_cmd = (command.throttle - command.brake) * ACCEL_LIMIT
    v = ego.speed + a_cmd * dt
    if ego.gear != "REVERSE":
        v = max(0.0, v)
    x = ego.x + v * dt * math.cos(ego.heading)
    y = ego.y + v * dt * math.sin(ego.heading)
    heading = _wrap_angle(ego.heading + v * command.steer * dt / WHEELBASE)
    new_ego = EgoState(x, y, heading, v, a_cmd, command.steer, command.gear)
    t = state.t + dt
    npcs = {}
    for npc in scenario.npcs:
        npcs[npc.id] = npc.at(min(t, npc.coverage_end))
    lights = {lid: s.at(t) for lid, s in scenario.lights.items()}
    return WorldState(t, new_ego, npcs, lights, state.fog, state.snow)


def predict_environment(scenario: Scenario, state: WorldState,
                        horizon: Optional[float] = None,
                        noise_sigma: float = 0.0,
                        rng: Optional[random.Random] = None) -> PredictedEnvironment:
    """Environment the planner/enforcer sees from ``state`` forward.

    Scripts and schedules are handed over as-is (perfect prediction);
    optional Gaussian noise perturbs npc positions.  Raises eagerly when
    a script cannot cover the requested horizon.
    """
    h = scenario.horizon if horizon is None else float(horizon)
    if h < 0:
        raise ValueError(f"prediction horizon must be >= 0, got {h}")
    if h == 0:
        return PredictedEnvironment(scenario.roadmap, npcs=(), lights={},
                                    fog=state.fog, snow=state.snow, horizon=0.0)
    npcs = []
    for npc in scenario.npcs:
        if state.t + h > npc.coverage_end + 1e-9:
            raise ScriptHorizonError(
                f"road user {npc.id!r} script ends at {npc.coverage_end:.3f}, "
                f"cannot predict to {state.t + h:.3f}"
            )
        if noise_sigma > 0.0:
            gen = rng if rng is not None else random
            pts = np.asarray(npc.points, dtype=float).copy()
            for i in range(pts.shape[0]):
                pts[i, 0] += gen.gauss(0.0, noise_sigma)
                pts[i, 1] += gen.gauss(0.0, noise_sigma)
            npc = NPCTrack(npc.id, npc.kind, npc.times, pts, npc.speeds)
        npcs.append(npc)
    return PredictedEnvironment(scenario.roadmap, npcs=tuple(npcs),
                                lights=dict(scenario.lights),
                                fog=state.fog, snow=state.snow, horizon=h)


def time_to_collision(scenario: Scenario, state: WorldState) -> float:
    """Straight-line time to the nearest conflicting road user ahead."""
    ego = state.ego
    hx, hy = math.cos(ego.heading), math.sin(ego.heading)
    best = math.inf
    for npc in scenario.npcs:
        t = min(state.t, npc.coverage_end)
        x, y, _sp = npc.at(t)
        rx, ry = x - ego.x, y - ego.y
        ahead = rx * hx + ry * hy
        lateral = rx * hy - ry * hx
        if not (0.0 < ahead <= 60.0 and abs(lateral) <= 2.0):
            continue
        vx, vy = npc.velocity_at(t)
        closing = ego.speed - (vx * hx + vy * hy)
        if closing <= 1e-6:
            continue
        best = min(best, max(0.0, ahead - 4.0) / closing)
    return best


def _in_collision(scenario: Scenario, state: WorldState) -> bool:
    for _nid, (x, y, _sp) in state.npcs.items():
        if math.hypot(x - state.ego.x, y - state.ego.y) < COLLISION_RADIUS:
            return True
    return False


# ---------------------------------------------------------------------------
# planner stubs


class CruisePlanner:
    """Follows the lane toward a target speed; ignores lights entirely."""

    strategy = "cruise"

    def __init__(self, roadmap: RoadMap, target_speed: float, accel: float = 1.5,
                 dt: float = PLANNER_DT, horizon: float = PLAN_HORIZON,
                 lateral_fn: Optional[Callable[[float], float]] = None,
                 lane_ordinal: Optional[int] = None):
        self.roadmap = roadmap
        self.target_speed = float(target_speed)
        self.accel = float(accel)
        self.dt = float(dt)
        self.horizon = float(horizon)
        self.lateral_fn = lateral_fn
        self.lane_ordinal = lane_ordinal

    def _frame(self, ego: EgoState):
        if self.lane_ordinal is not None:
            lane = self.roadmap.lane_by_ordinal(self.lane_ordinal)
            s0, lat0 = lane.project((ego.x, ego.y))
            return lane, s0, lat0
        lane, s0, lat0 = self.roadmap.locate((ego.x, ego.y))
        return lane, s0, lat0

    def _speed_profile(self, v0: float, n: int) -> np.ndarray:
        # knot 0 already takes one ramp step: the tracker holds the active
        # knot for its whole interval, so pinning knot 0 at the current
        # speed would block acceleration outright
        v = np.empty(n)
        prev = max(0.0, v0)
        for i in range(n):
            dv = self.target_speed - prev
            dv = min(max(dv, -self.accel * self.dt), self.accel * self.dt)
            v[i] = max(0.0, prev + dv)
            prev = v[i]
        return v

    def plan(self, state: WorldState, destination=None) -> PlannedTrajectory:
        ego = state.ego
        lane, s0, lat0 = self._frame(ego)
        n = int(round(self.horizon / self.dt)) + 1
        speeds = self._speed_profile(ego.speed, n)
        s = np.empty(n)
        s[0] = s0
        for i in range(1, n):
            s[i] = s[i - 1] + speeds[i] * self.dt
        lat = np.empty(n)
        for i in range(n):
            want = self.lateral_fn(s[i]) if self.lateral_fn else 0.0
            # blend out the ego's current offset over the first couple
            # of seconds so waypoint 0 sits on the ego
            fade = max(0.0, 1.0 - (i * self.dt) / 2.0)
            lat[i] = want + (lat0 - (self.lateral_fn(s0) if self.lateral_fn else 0.0)) * fade
        pts = np.array([lane.point_at(s[i], lat[i]) for i in range(n)])
        headings = np.empty(n)
        for i in range(n - 1):
            dx, dy = pts[i + 1] - pts[i]
            headings[i] = math.atan2(dy, dx) if (dx or dy) else ego.heading
        headings[n - 1] = headings[n - 2] if n > 1 else ego.heading
        wps = []
        for i in range(n):
            acc = (speeds[i + 1] - speeds[i]) / self.dt if i + 1 < n else 0.0
            if i + 1 < n:
                ds = max(speeds[i + 1] * self.dt, 0.25)
                steer = _wrap_angle(headings[min(i + 1, n - 1)] - headings[i])
                steer = min(max(steer * WHEELBASE / ds, -0.5), 0.5)
            else:
                steer = 0.0
            wps.append(Waypoint(state.t + i * self.dt, pts[i][0], pts[i][1],
                                float(speeds[i]), float(acc), float(steer)))
        return PlannedTrajectory(wps)


class LawfulPlanner(CruisePlanner):
    """Cruise profile capped by a comfortable stop at red or yellow lights."""

    strategy = "lawful"

    def __init__(self, roadmap, target_speed, lights: dict, decel: float = 1.8,
                 **kw):
        super().__init__(roadmap, target_speed, **kw)
        self.lights = lights
        self.decel = float(decel)

    def plan(self, state: WorldState, destination=None) -> PlannedTrajectory:
        raw = super().plan(state, destination)
        lane, s0, _ = self._frame(state.ego)
        stop = self.roadmap.next_stopline(lane, s0)
        if stop is None or stop.light_id is None:
            return raw
        sched = self.lights.get(stop.light_id)
        if sched is None:
            return raw
        wps = list(raw.waypoints)
        speeds = np.array([wp.speed for wp in wps])
        s = s0
        out = []
        for i, wp in enumerate(wps):
            color, _blink = sched.at(wp.t)
            v = speeds[i]
            if i > 0:
                s = s + v * self.dt
            if color != "GREEN":
                gap = stop.s - 1.0 - s
                allowed = math.sqrt(max(0.0, 2.0 * self.decel * gap)) if gap > 0 else 0.0
                v = min(v, allowed)
            speeds[i] = v
            x, y = lane.point_at(s)
            acc = 0.0
            out.append(Waypoint(wp.t, float(x), float(y), float(v), acc, wp.steer))
        for i in range(len(out) - 1):
            out[i] = replace(out[i], acc=(out[i + 1].speed - out[i].speed) / self.dt)
        return PlannedTrajectory(out)


class ReplayPlanner:
    """Emits a fixed list of trajectories, holding the last one."""

    strategy = "replay"

    def __init__(self, trajectories):
        self.trajectories = list(trajectories)
        if not self.trajectories:
            raise ValueError("replay planner needs at least one trajectory")
        self._i = 0

    def plan(self, state: WorldState, destination=None) -> PlannedTrajectory:
        traj = self.trajectories[min(self._i, len(self.trajectories) - 1)]
        self._i += 1
        return traj


def _drift_fn(drift: tuple) -> Callable[[float], float]:
    ramp_start, ramp_len, hold_end, offset = drift

    def fn(s: float) -> float:
        if s <= ramp_start:
            return 0.0
        if s <= ramp_start + ramp_len:
            return offset * (s - ramp_start) / ramp_len
        if s <= hold_end:
            return offset
        # ease back over the same ramp length
        back = (s - hold_end) / ramp_len
        return offset * max(0.0, 1.0 - back)

    return fn


def make_planner(scenario: Scenario):
    kind = scenario.planner
    lateral = _drift_fn(scenario.drift) if scenario.drift else None
    lane_pin = 0 if scenario.drift else None
    if kind == "cruise":
        return CruisePlanner(scenario.roadmap, scenario.cruise_speed,
                             dt=scenario.planner_dt, horizon=scenario.horizon,
                             lateral_fn=lateral, lane_ordinal=lane_pin)
    if kind == "lawful":
        return LawfulPlanner(scenario.roadmap, scenario.cruise_speed,
                             scenario.lights, dt=scenario.planner_dt,
                             horizon=scenario.horizon, lateral_fn=lateral,
                             lane_ordinal=lane_pin)
    raise ValueError(f"unknown planner strategy {kind!r}")


# ---------------------------------------------------------------------------
# plan tracking


def _plan_arrays(traj: PlannedTrajectory):
    ts = traj.times()
    xs = np.array([wp.x for wp in traj.waypoints])
    ys = np.array([wp.y for wp in traj.waypoints])
    vs = np.array([wp.speed for wp in traj.waypoints])
    return ts, xs, ys, vs


def _desired_speed(traj: PlannedTrajectory, t: float) -> float:
    """Minimum planned speed over the lookahead window.

    Honouring the window minimum (rather than the instantaneous plan
    speed) lets a single slowed-down waypoint actually brake the ego
    before the waypoint arrives.  The window is anchored at the latest
    waypoint at or before t (zero-order hold), so a cut to the plan's
    active knot keeps commanding brakes for the whole planning step
    instead of evaporating at the first world substep.
    """
    ts, _xs, _ys, vs = _plan_arrays(traj)
    v_now = float(np.interp(t, ts, vs))
    i0 = max(int(np.searchsorted(ts, t + 1e-9, side="right")) - 1, 0)
    i1 = int(np.searchsorted(ts, t + SPEED_LOOKAHEAD + 1e-9, side="right"))
    lo = float(vs[i0:max(i1, i0 + 1)].min())
    return min(v_now, lo)


def tracking_command(traj: Optional[PlannedTrajectory], state: WorldState,
                     switches: Optional[dict] = None,
                     perfect: bool = False) -> ControlCommand:
    sw = {name: False for name in SWITCH_NAMES}
    if switches:
        sw.update({k: bool(v) for k, v in switches.items() if k in sw})
    if sw["leftTurnSignal"] and sw["rightTurnSignal"]:
        sw["leftTurnSignal"] = False
    if traj is None:
        return ControlCommand(brake=1.0, **sw)
    ego = state.ego
    v_des = _desired_speed(traj, state.t)
    # stiff speed loop: trailing a decaying reference by tau*slope stays
    # inside the repair margin only when tau is small
    a = (v_des - ego.speed) / 0.12
    a = min(max(a, -ACCEL_LIMIT), ACCEL_LIMIT)
    throttle = max(0.0, a) / ACCEL_LIMIT
    brake = max(0.0, -a) / ACCEL_LIMIT
    ts, xs, ys, _vs = _plan_arrays(traj)
    t_aim = state.t + PURSUIT_LOOKAHEAD
    tx = float(np.interp(t_aim, ts, xs))
    ty = float(np.interp(t_aim, ts, ys))
    dx, dy = tx - ego.x, ty - ego.y
    dist = math.hypot(dx, dy)
    if dist > 0.3 and ego.speed > 0.3:
        alpha = _wrap_angle(math.atan2(dy, dx) - ego.heading)
        steer = 2.0 * WHEELBASE * math.sin(alpha) / max(dist, 1.0)
        steer = min(max(steer, -0.5), 0.5)
    else:
        steer = 0.0
    gear = traj.waypoints[0].gear
    return ControlCommand(throttle=throttle, brake=brake, steer=steer,
                          gear=gear, **sw)


def _snap_step(scenario: Scenario, state: WorldState,
               traj: PlannedTrajectory, dt: float) -> WorldState:
    # tracker bypass: teleport the ego onto the plan at t + dt
    t = state.t + dt
    ts, xs, ys, vs = _plan_arrays(traj)
    x = float(np.interp(t, ts, xs))
    y = float(np.interp(t, ts, ys))
    v = float(np.interp(t, ts, vs))
    i = min(int(np.searchsorted(ts, t, side="right")), len(ts) - 1)
    j = max(i - 1, 0)
    dx, dy = xs[i] - xs[j], ys[i] - ys[j]
    heading = math.atan2(dy, dx) if (dx or dy) else state.ego.heading
    wp = traj.waypoints[j]
    ego = EgoState(x, y, heading, v, wp.acc, wp.steer, wp.gear)
    npcs = {npc.id: npc.at(min(t, npc.coverage_end)) for npc in scenario.npcs}
    lights = {lid: s.at(t) for lid, s in scenario.lights.items()}
    return WorldState(t, ego, npcs, lights, state.fog, state.snow)


# ---------------------------------------------------------------------------
# closed-loop run


def run_scenario(spec, scenario: Scenario, planner=None,
                 config: Optional[EnforceConfig] = None, seed: Optional[int] = 0,
                 perfect_tracking: bool = False,
                 noise_sigma: float = 0.0) -> EnforcementReport:
    """Drive one scenario to destination, collision or timeout.

    The executed trace is sampled at planner ticks and scored with the
    exact semantics; pass means its robustness is strictly positive.
    """
    scn = scenario.randomized(seed) if seed is not None else scenario
    cfg = config or EnforceConfig()
    if isinstance(spec, str):
        spec = parse_spec(spec)
    top, _reg = _formula_and_registry(spec, None)
    if planner is None:
        planner = make_planner(scn)
    noise_rng = random.Random(f"{scn.name}:noise:{seed}") if noise_sigma > 0 else None

    wall0 = time.perf_counter()
    state = initial_state(scn)
    steps_per_tick = max(1, int(round(scn.planner_dt / scn.world_dt)))
    n_world = int(round(scn.timeout / scn.world_dt))

    samples: list[Waypoint] = []
    switch_hist: list[dict] = []
    ticks: list[TickRecord] = []
    applied = {name: False for name in SWITCH_NAMES}
    current_plan: Optional[PlannedTrajectory] = None
    reached = collided = timed_out = False

    for step in range(n_world + 1):
        dx = state.ego.x - scn.destination[0]
        dy = state.ego.y - scn.destination[1]
        if math.hypot(dx, dy) <= scn.destination_radius:
            reached = True
            break
        if _in_collision(scn, state):
            collided = True
            break
        if step == n_world:
            timed_out = True
            break

        if step % steps_per_tick == 0:
            env = predict_environment(scn, state, scn.horizon,
                                      noise_sigma=noise_sigma, rng=noise_rng)
            raw = planner.plan(state, scn.destination)
            plan, rec = enforce_tick(spec, raw, env, cfg)
            ticks.append(rec)
            desired = dict(applied)
            if cfg.enabled and cfg.validate_switches and rec.alpha is not None:
                base = ControlCommand(**{n: applied[n] for n in SWITCH_NAMES})
                fixed = validate_commands(spec, None, base, rec.alpha)
                desired = {n: getattr(fixed, n) for n in SWITCH_NAMES}
            flips = sum(1 for n in SWITCH_NAMES if desired[n] != applied[n])
            rec.command_flips = flips
            if rec.repaired and rec.rho_full_after is not None and rec.action:
                denom = rec.action.positional_diff + flips
                if denom > 0:
                    rec.objective_ratio = (rec.rho_full_after - rec.rho) / denom
            applied = desired
            current_plan = plan
            samples.append(Waypoint(state.t, state.ego.x, state.ego.y,
                                    state.ego.speed, state.ego.acc,
                                    state.ego.steer, state.ego.gear))
            switch_hist.append(dict(applied))

        command = tracking_command(current_plan, state, applied)
        if time_to_collision(scn, state) < BRAKE_TTC:
            command = replace(command, throttle=0.0, brake=1.0)
        if perfect_tracking and current_plan is not None:
            state = _snap_step(scn, state, current_plan, scn.world_dt)
        else:
            state = step_world(scn, state, command, scn.world_dt)

    final_rho = None
    executed = None
    if samples:
        executed = PlannedTrajectory(samples)
        env_score = PredictedEnvironment(scn.roadmap, npcs=scn.npcs,
                                         lights=dict(scn.lights),
                                         fog=scn.fog, snow=scn.snow)
        trace = build_trace(executed, env_score, spec)
        if trace.placeholder_names:
            from .trace import Assignment

            alpha = Assignment()
            for i, t in enumerate(trace.times):
                for name in trace.placeholder_names:
                    alpha.set(float(t), name, switch_hist[i].get(name, False))
            trace = trace.substitute(alpha)
        try:
            final_rho = robustness(top, trace)
        except HorizonError:
            final_rho = None

    fix_diffs = [r.action.positional_diff for r in ticks
                 if r.repaired and r.action is not None]
    flips_total = sum(r.command_flips for r in ticks)
    eval_ms = [r.eval_ms for r in ticks]
    # lawful and complete: an ego that stalls out the clock does not pass
    passed = reached and (final_rho is None or final_rho > 0.0)
    report = EnforcementReport(
        scenario=scn.name,
        seed=seed if seed is not None else -1,
        theta=cfg.theta,
        enforced=cfg.enabled,
        passed=passed,
        final_rho=final_rho,
        ticks=ticks,
        fixes=len(fix_diffs),
        max_fix=max(fix_diffs) if fix_diffs else 0.0,
        fix_diffs=fix_diffs,
        command_flips=flips_total,
        collided=collided,
        timed_out=timed_out,
        reached=reached,
        duration_s=state.t,
        run_s=time.perf_counter() - wall0,
        avg_eval_ms=float(np.mean(eval_ms)) if eval_ms else 0.0,
    )
    report.executed_trajectory = executed
    return report


# ---------------------------------------------------------------------------
# builtin scenarios


RED_LIGHT_RULES = """\
// color codes: yellow 0, green 1, red 2, dark 3; the x16 scale keeps the
// wrong-phase margin below any envelope gap a replanned cruise can open, so
// the speed term stays the dominant (differentiable) branch of a violation.
// The two lines are secants of a constant-deceleration profile; their min
// is a concave envelope needing about 1.1 m/s^2 anywhere on the ride, which
// a once-per-tick repair cascade can follow without dipping between samples.
// No near-side zone bound: shallow boundary terms would soak up the softmax
// weight and starve the speed gradient.
red_envelope = G(((16 * TL(color) > 24) && (16 * TL(color) < 40) && (D(stopline) < 48))
                 -> ((speed < 1.2 + 0.22 * D(stopline))
                     && (speed < 3.2 + 0.12 * D(stopline))));
red_turn = G(((direction > 1.5) && (PriorityV(30) || PriorityP(20)))
             -> (speed < 3));
speed_cap = G(speed < 9.5);
visibility = G(fog < 1);
laws = red_envelope && red_turn && speed_cap && visibility;
"""

SPEED_LIMIT_RULES = """\
limit = G(speed < 16.7);
visibility = G(fog < 1);
laws = limit && visibility;
"""

LANE_CHANGE_RULES = """\
// the x8 lane test keeps the on-lane margin far from any trigger threshold,
// and the zone opens where the envelope still clears cruise speed, so no
// violation ever coexists with a shallow zone-boundary term
lane_slow = G(((8 * Lane(current) > 4) && (D(junction) < 36))
              -> (speed < 4 + 0.15 * D(junction)));
lane_bound = G(Lane(current) < 2.5);
visibility = G(fog < 1);
laws = lane_slow && lane_bound && visibility;
"""

FOG_LIGHT_RULES = """\
fog_gear = G((fog >= 0.5) -> (fogLight && warningFlash));
slow_when_blind = G(speed < 15);
laws = fog_gear && slow_when_blind;
"""


def _red_light_scenario() -> Scenario:
    lane = straight_lane("L0", 0, x=0.0, y0=-10.0, y1=170.0)
    stoplines = [
        StopLine("SL-0", "L0", s=80.0, light_id="TL-0"),
        # far line keeps a distance anchor ahead after the ego crosses SL-0
        StopLine("SL-end", "L0", s=170.0, light_id=None),
    ]
    junction = Junction("J-0", ((-6.0, 70.5), (6.0, 70.5), (6.0, 84.0), (-6.0, 84.0)))
    rm = RoadMap([lane], stoplines, [junction])
    lights = {"TL-0": LightSchedule("TL-0", [(3.0, "GREEN", False),
                                             (2.0, "YELLOW", False),
                                             (28.0, "RED", False)])}
    ped = NPCTrack.static("ped-0", "pedestrian", 5.8, 62.0)
    return Scenario(
        name="red_light",
        roadmap=rm,
        spec_source=RED_LIGHT_RULES,
        ego_start=(0.0, 0.0, math.pi / 2, 7.0),
        cruise_speed=8.0,
        destination=(0.0, 100.0),
        npcs=(ped,),
        lights=lights,
        fog=0.08,
        timeout=60.0,
    )


def _speed_limit_scenario() -> Scenario:
    lane = straight_lane("L0", 0, x=0.0, y0=-10.0, y1=250.0)
    rm = RoadMap([lane])
    lead = NPCTrack("lead-0", "vehicle",
                    np.linspace(0.0, 120.0, 25),
                    [(0.0, 100.0 + 20.0 * t) for t in np.linspace(0.0, 120.0, 25)],
                    [20.0] * 25)
    return Scenario(
        name="speed_limit",
        roadmap=rm,
        spec_source=SPEED_LIMIT_RULES,
        ego_start=(0.0, 0.0, math.pi / 2, 12.0),
        cruise_speed=19.4,
        destination=(0.0, 150.0),
        npcs=(lead,),
        fog=0.1,
        timeout=30.0,
    )


def _lane_change_scenario() -> Scenario:
    l0 = straight_lane("L0", 0, x=0.0, y0=-10.0, y1=150.0)
    l1 = straight_lane("L1", 1, x=3.5, y0=-10.0, y1=150.0)
    junctions = [
        Junction("J-0", ((-3.0, 70.0), (7.0, 70.0), (7.0, 84.0), (-3.0, 84.0))),
        # far junction keeps the distance anchor alive past J-0
        Junction("J-end", ((-3.0, 140.0), (7.0, 140.0), (7.0, 148.0), (-3.0, 148.0))),
    ]
    rm = RoadMap([l0, l1], junctions=junctions)
    parked = NPCTrack.static("parked-0", "vehicle", 3.5, 120.0)
    return Scenario(
        name="lane_change",
        roadmap=rm,
        spec_source=LANE_CHANGE_RULES,
        ego_start=(0.0, 0.0, math.pi / 2, 8.0),
        cruise_speed=8.0,
        destination=(1.75, 118.0),
        destination_radius=3.0,
        npcs=(parked,),
        fog=0.05,
        timeout=40.0,
        # lateral offsets are left-positive, so lane 1 at x=+3.5 sits at -3.5
        drift=(45.0, 10.0, 100.0, -3.5),
    )


def _fog_lights_scenario() -> Scenario:
    lane = straight_lane("L0", 0, x=0.0, y0=-10.0, y1=120.0)
    rm = RoadMap([lane])
    return Scenario(
        name="fog_lights",
        roadmap=rm,
        spec_source=FOG_LIGHT_RULES,
        ego_start=(0.0, 0.0, math.pi / 2, 8.0),
        cruise_speed=8.0,
        destination=(0.0, 60.0),
        fog=0.55,
        timeout=30.0,
    )


def builtin_scenarios() -> dict:
    out = {}
    for build in (_red_light_scenario, _speed_limit_scenario,
                  _lane_change_scenario, _fog_lights_scenario):
        scn = build()
        out[scn.name] = scn
    return out


# ---------------------------------------------------------------------------
# sweeps


CSV_COLUMNS = ("scenario", "theta", "seed", "pass", "final_rho", "fixes",
               "max_fix", "fix_pct", "avg_eval_ms", "run_s")


@dataclass
class SweepResult:
    rows: list
    fix_diffs: dict  # (scenario, theta) -> list of positional diffs

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([row[c] for c in CSV_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def pass_rate(self, scenario: str, theta) -> float:
        key = self._theta_key(theta)
        hits = [r["pass"] for r in self.rows
                if r["scenario"] == scenario and r["theta"] == key]
        return float(np.mean(hits)) if hits else float("nan")

    def improvement(self, scenario: str) -> list:
        """(theta, pass-rate gain over baseline) per enforced theta."""
        base = self.pass_rate(scenario, "baseline")
        thetas = sorted({r["theta"] for r in self.rows
                         if r["scenario"] == scenario and r["theta"] != "baseline"})
        return [(th, self.pass_rate(scenario, th) - base) for th in thetas]

    def fix_stats(self, scenario: str, theta) -> dict:
        diffs = self.fix_diffs.get((scenario, self._theta_key(theta)), [])
        if not diffs:
            return {"count": 0, "mean": 0.0, "max": 0.0}
        return {"count": len(diffs), "mean": float(np.mean(diffs)),
                "max": float(np.max(diffs))}

    def mean_fixes(self, scenario: str, theta) -> float:
        key = self._theta_key(theta)
        vals = [r["fixes"] for r in self.rows
                if r["scenario"] == scenario and r["theta"] == key]
        return float(np.mean(vals)) if vals else float("nan")

    @staticmethod
    def _theta_key(theta):
        return theta if isinstance(theta, str) else f"{float(theta):g}"

    def to_json(self) -> dict:
        scenarios = sorted({r["scenario"] for r in self.rows})
        return {
            "schema": 1,
            "rows": self.rows,
            "improvement": {s: self.improvement(s) for s in scenarios},
            "fix_stats": {
                f"{s}@{th}": self.fix_stats(s, th)
                for (s, th) in sorted(self.fix_diffs)
            },
        }


def _report_row(scn_name: str, theta_key: str, seed: int,
                rep: EnforcementReport) -> dict:
    return {
        "scenario": scn_name,
        "theta": theta_key,
        "seed": seed,
        "pass": int(rep.passed),
        "final_rho": "" if rep.final_rho is None else f"{rep.final_rho:.6f}",
        "fixes": rep.fixes,
        "max_fix": f"{rep.max_fix:.4f}",
        "fix_pct": f"{rep.fix_pct:.2f}",
        "avg_eval_ms": f"{rep.avg_eval_ms:.3f}",
        "run_s": f"{rep.run_s:.3f}",
    }


def _run_sweep_job(payload):
    """Worker entry: everything rebuilt from plain data, no shared state."""
    scn_json, spec_source, key, theta, seed, cfg_dict = payload
    scn = Scenario.from_json(scn_json)
    spec = parse_spec(spec_source)
    cfg = EnforceConfig(**cfg_dict)
    rep = run_scenario(spec, scn, config=cfg, seed=seed)
    return _report_row(scn.name, key, seed, rep), (scn.name, key), rep.fix_diffs


def sweep(scenarios, thetas, seeds, spec=None, include_baseline: bool = True,
          config: Optional[EnforceConfig] = None,
          progress: Optional[Callable[[str], None]] = None,
          workers: int = 0) -> SweepResult:
    """Grid of runs: scenarios x (baseline + thetas) x seeds.

    ``workers`` > 1 fans seeded runs out across processes; each job is a
    pure function of its payload, so the merged result is identical to a
    sequential run.
    """
    if isinstance(scenarios, Scenario):
        scenarios = [scenarios]
    base = config or EnforceConfig()
    jobs = []
    for scn in scenarios:
        if spec is None:
            spec_source = scn.spec_source
        elif isinstance(spec, Specification):
            spec_source = spec.to_source()
        else:
            spec_source = str(spec)
        conditions = []
        if include_baseline:
            conditions.append(("baseline", None))
        conditions.extend((f"{float(th):g}", float(th)) for th in thetas)
        for key, th in conditions:
            if th is None:
                run_cfg = replace(base, enabled=False)
            else:
                run_cfg = replace(base, theta=th, enabled=True)
            cfg_dict = {
                "theta": run_cfg.theta, "a": run_cfg.a,
                "max_halvings": run_cfg.max_halvings,
                "position_step": run_cfg.position_step,
                "lane_window": run_cfg.lane_window,
                "enabled": run_cfg.enabled,
                "validate_switches": run_cfg.validate_switches,
                "pair_fallback": run_cfg.pair_fallback,
            }
            for seed in seeds:
                jobs.append((scn.to_json(), spec_source, key, th, int(seed),
                             cfg_dict))
    rows = []
    diffs: dict[tuple, list] = {}
    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_job, jobs, chunksize=4))
    else:
        results = [_run_sweep_job(j) for j in jobs]
    for row, diff_key, fix_diffs in results:
        rows.append(row)
        diffs.setdefault(diff_key, []).extend(fix_diffs)
        if progress:
            progress(f"{row['scenario']} theta={row['theta']} "
                     f"seed={row['seed']} pass={row['pass']} fixes={row['fixes']}")
    return SweepResult(rows=rows, fix_diffs=diffs)
