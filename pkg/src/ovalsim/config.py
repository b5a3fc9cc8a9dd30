"""Scenario configuration: YAML schema, validation, and typed assembly.

A scenario file fully determines a run: track geometry, cars and their
stacks, module configurations, sensor noise and degradation scripts, the
race bracket ladder, and the operator script. See docs/scenario_schema.md
for the documented schema. Validation errors name the offending key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .control import ControllerConfig
from .localization import DegradationWindow, GateConfig, GnssNoise, MeasurementKind, SolutionStatus, Unit
from .perception import PerceptionConfig
from .planning import Flag, PlannerConfig, Role
from .track import LaneId
from .tracking import TrackerConfig
from .vehicle import VehicleParams

MPH_TO_MPS = 0.44704


class ScenarioError(ValueError):
    """Schema violation; message names the offending key."""


@dataclass(frozen=True)
class ScheduleConfig:
    plant_dt: float = 0.001
    localization_hz: float = 100.0
    controller_hz: float = 100.0
    planner_hz: float = 20.0
    telemetry_hz: float = 10.0

    def ticks(self, hz: float) -> int:
        period = 1.0 / hz
        n = round(period / self.plant_dt)
        if abs(n * self.plant_dt - period) > 1e-9:
            raise ScenarioError(f"period 1/{hz} Hz is not a multiple of plant_dt")
        return max(n, 1)


@dataclass(frozen=True)
class RaceConfig:
    brackets_mph: tuple[float, ...] = (80.0,)
    pass_gap: float = 30.0
    two_lap_window: int = 2
    min_lateral_separation: float = 2.0
    alongside_window: float = 8.0  # |station gap| below which laterals must clear
    auto_waving_gap: float = 40.0  # trail gap that triggers the waving flag
    stop_decel: float = 5.0  # m/s^2 controlled-stop ramp

    @property
    def brackets_mps(self) -> tuple[float, ...]:
        return tuple(v * MPH_TO_MPS for v in self.brackets_mph)


@dataclass(frozen=True)
class CarConfig:
    name: str
    stack: str = "full"  # full | scripted
    start_lane: LaneId = LaneId.INNER
    start_station: float = 0.0
    start_speed: float = 0.0
    role: Role = Role.DEFENDER
    params: VehicleParams = field(default_factory=VehicleParams)


@dataclass(frozen=True)
class OperatorEvent:
    t: float
    command: str  # set_flag | set_round_speed | emergency_stop | reset_latch | merge_to
    value: object = None


@dataclass
class ScenarioConfig:
    name: str
    seed: int = 0
    duration: float = 60.0
    track: dict = field(default_factory=dict)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    race: RaceConfig = field(default_factory=RaceConfig)
    cars: list[CarConfig] = field(default_factory=list)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    gnss_noise: GnssNoise = field(default_factory=GnssNoise)
    degradations: list[DegradationWindow] = field(default_factory=list)
    operator_script: list[OperatorEvent] = field(default_factory=list)
    initial_flag: Flag = Flag.GREEN
    plant_log_decimation: int = 10
    telemetry_car: int = 0


def _require(cfg: dict, key: str, ctx: str):
    if key not in cfg:
        raise ScenarioError(f"missing required key '{ctx}{key}'")
    return cfg[key]


def _build_dataclass(cls, data: dict, ctx: str, coercions: dict | None = None):
    """Construct a (frozen) config dataclass from a dict, naming bad keys."""
    import dataclasses

    allowed = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in allowed:
            raise ScenarioError(f"unknown key '{ctx}{k}'")
        if coercions and k in coercions:
            v = coercions[k](v)
        elif isinstance(v, list):
            v = tuple(tuple(e) if isinstance(e, list) else e for e in v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid block '{ctx[:-1]}': {exc}") from exc


def _parse_car(data: dict, idx: int) -> CarConfig:
    ctx = f"cars[{idx}]."
    name = data.get("name", f"car{idx}")
    stack = data.get("stack", "full")
    if stack not in ("full", "scripted"):
        raise ScenarioError(f"invalid value for '{ctx}stack': {stack}")
    start = data.get("start", {})
    lane = LaneId(start.get("lane", "inner"))
    role = Role(data.get("role", "defender"))
    params = _build_dataclass(VehicleParams, data.get("vehicle", {}), ctx + "vehicle.")
    return CarConfig(
        name=name, stack=stack, start_lane=lane,
        start_station=float(start.get("station", 0.0)),
        start_speed=float(start.get("speed", 0.0)),
        role=role, params=params,
    )


def _parse_degradation(data: dict, idx: int) -> DegradationWindow:
    ctx = f"localization.degradation[{idx}]."
    return DegradationWindow(
        unit=Unit(_require(data, "unit", ctx)),
        t_start=float(_require(data, "t_start", ctx)),
        t_end=float(_require(data, "t_end", ctx)),
        kind=MeasurementKind(data["kind"]) if "kind" in data else None,
        variance_scale=float(data.get("variance_scale", 1.0)),
        status=SolutionStatus[data["status"].upper()] if "status" in data else None,
        silence=bool(data.get("silence", False)),
    )


def _parse_operator_event(data: dict, idx: int) -> OperatorEvent:
    ctx = f"operator_script[{idx}]."
    cmd = _require(data, "command", ctx)
    known = ("set_flag", "set_round_speed", "emergency_stop", "reset_latch", "merge_to")
    if cmd not in known:
        raise ScenarioError(f"unknown command in '{ctx}command': {cmd}")
    return OperatorEvent(t=float(_require(data, "t", ctx)), command=cmd,
                         value=data.get("value"))


def parse_scenario(raw: dict, name: str = "scenario") -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a mapping")
    known = {
        "name", "seed", "duration", "track", "schedule", "race", "cars",
        "perception", "tracker", "planner", "controller", "localization",
        "operator_script", "initial_flag", "logging", "telemetry_car",
    }
    for k in raw:
        if k not in known:
            raise ScenarioError(f"unknown key '{k}'")

    sched = _build_dataclass(ScheduleConfig, raw.get("schedule", {}), "schedule.")
    race = _build_dataclass(RaceConfig, raw.get("race", {}), "race.")
    cars = [_parse_car(c, i) for i, c in enumerate(raw.get("cars", []))]
    if not cars:
        raise ScenarioError("missing required key 'cars'")
    roles = [c.role for c in cars]
    if len(cars) == 2 and roles.count(Role.ATTACKER) != 1:
        raise ScenarioError("two-car scenarios need exactly one attacker ('cars[*].role')")
    if len(cars) > 2:
        raise ScenarioError("at most two cars are supported ('cars')")

    loc = raw.get("localization", {})
    for k in loc:
        if k not in ("noise", "gates", "degradation"):
            raise ScenarioError(f"unknown key 'localization.{k}'")
    noise = _build_dataclass(GnssNoise, loc.get("noise", {}), "localization.noise.")
    gate = _build_dataclass(GateConfig, loc.get("gates", {}), "localization.gates.")
    degradations = [
        _parse_degradation(d, i) for i, d in enumerate(loc.get("degradation", []))
    ]
    script = [
        _parse_operator_event(e, i) for i, e in enumerate(raw.get("operator_script", []))
    ]
    script.sort(key=lambda e: e.t)
    logging_cfg = raw.get("logging", {})
    for k in logging_cfg:
        if k != "plant_decimation":
            raise ScenarioError(f"unknown key 'logging.{k}'")

    return ScenarioConfig(
        name=raw.get("name", name),
        seed=int(raw.get("seed", 0)),
        duration=float(raw.get("duration", 60.0)),
        track=raw.get("track", {}),
        schedule=sched,
        race=race,
        cars=cars,
        perception=_build_dataclass(PerceptionConfig, raw.get("perception", {}),
                                    "perception."),
        tracker=_build_dataclass(TrackerConfig, raw.get("tracker", {}), "tracker."),
        planner=_build_dataclass(PlannerConfig, raw.get("planner", {}), "planner."),
        controller=_build_dataclass(ControllerConfig, raw.get("controller", {}),
                                    "controller."),
        gate=gate,
        gnss_noise=noise,
        degradations=degradations,
        operator_script=script,
        initial_flag=Flag(raw.get("initial_flag", "green")),
        plant_log_decimation=int(logging_cfg.get("plant_decimation", 10)),
        telemetry_car=int(raw.get("telemetry_car", 0)),
    )


def bundled_scenarios() -> list[str]:
    pkg = resources.files("ovalsim.scenarios")
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".yaml"))


def load_scenario_config(name_or_path: str, overrides: dict | None = None) -> ScenarioConfig:
    """Load a bundled scenario by name or any YAML file by path."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") or path.exists():
        if not path.exists():
            raise ScenarioError(f"scenario file not found: {name_or_path}")
        text = path.read_text()
        name = path.stem
    else:
        pkg = resources.files("ovalsim.scenarios")
        candidate = pkg / f"{name_or_path}.yaml"
        if not candidate.is_file():
            raise ScenarioError(
                f"unknown scenario '{name_or_path}'; bundled: {', '.join(bundled_scenarios())}"
            )
        text = candidate.read_text()
        name = name_or_path
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML parse error: {exc}") from exc
    if overrides:
        raw = {**raw, **overrides}
    return parse_scenario(raw, name)
