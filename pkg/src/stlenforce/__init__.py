"""Runtime enforcement of temporal traffic rules over planned trajectories.

The package monitors signal temporal logic rules against an autonomous
vehicle's planned trajectory, locates the earliest near-violation, and
minimally repairs the plan (and pending control commands) so the rules
hold again.  A small closed-loop simulator exercises the whole stack.
"""

from .autodiff import GradientMap, Tape, backward, forward_record
from .dsl import (
    And,
    Eventually,
    Formula,
    Not,
    Or,
    Prop,
    SignalRegistry,
    SpecSyntaxError,
    Specification,
    Always,
    Until,
    default_registry,
    parse_formula,
    parse_spec,
    to_source,
)
from .enforce import (
    ControlCommand,
    EnforceConfig,
    EnforcementReport,
    TickRecord,
    enforce_tick,
    validate_commands,
)
from .repair import (
    HalvingExhaustedError,
    RepairAction,
    RepairConfig,
    RepairError,
    UnrepairableError,
    apply_repair,
    earliest_violation,
    magnitude,
    repair_once,
    select_signal,
)
from .roadmap import Junction, Lane, MapConfigError, RoadMap, StopLine, straight_lane
from .robustness import (
    HorizonError,
    PlaceholderError,
    RobustnessConfig,
    prefix_robustness,
    prefix_series,
    robustness,
    robustness_series,
    rho,
    rho_prefix,
    rho_smooth,
    smooth_robustness,
    smooth_series,
    smoothing_error_bound,
)
from .sim import (
    CruisePlanner,
    LawfulPlanner,
    ReplayPlanner,
    Scenario,
    SweepResult,
    WorldState,
    builtin_scenarios,
    predict_environment,
    run_scenario,
    step_world,
    sweep,
)
from .trace import (
    Assignment,
    LightSchedule,
    NPCTrack,
    PlannedTrajectory,
    PredictedEnvironment,
    ScriptHorizonError,
    Trace,
    Waypoint,
    build_trace,
    resample,
    resolve_placeholders,
)
from . import laws

__version__ = "0.1.0"

__all__ = [
    "Always",
    "And",
    "Assignment",
    "ControlCommand",
    "CruisePlanner",
    "EnforceConfig",
    "EnforcementReport",
    "Eventually",
    "Formula",
    "GradientMap",
    "HalvingExhaustedError",
    "HorizonError",
    "Junction",
    "Lane",
    "LawfulPlanner",
    "LightSchedule",
    "MapConfigError",
    "NPCTrack",
    "Not",
    "Or",
    "PlaceholderError",
    "PlannedTrajectory",
    "PredictedEnvironment",
    "Prop",
    "RepairAction",
    "RepairConfig",
    "RepairError",
    "ReplayPlanner",
    "RoadMap",
    "RobustnessConfig",
    "Scenario",
    "ScriptHorizonError",
    "SignalRegistry",
    "SpecSyntaxError",
    "Specification",
    "StopLine",
    "SweepResult",
    "Tape",
    "TickRecord",
    "Trace",
    "UnrepairableError",
    "Until",
    "Waypoint",
    "WorldState",
    "__version__",
    "apply_repair",
    "backward",
    "build_trace",
    "builtin_scenarios",
    "default_registry",
    "earliest_violation",
    "enforce_tick",
    "forward_record",
    "laws",
    "magnitude",
    "parse_formula",
    "parse_spec",
    "predict_environment",
    "prefix_robustness",
    "prefix_series",
    "repair_once",
    "resample",
    "resolve_placeholders",
    "rho",
    "rho_prefix",
    "rho_smooth",
    "robustness",
    "robustness_series",
    "run_scenario",
    "select_signal",
    "smooth_robustness",
    "smooth_series",
    "smoothing_error_bound",
    "step_world",
    "straight_lane",
    "sweep",
    "to_source",
    "validate_commands",
]
