"""Race executive: owns sim time and the fixed-rate schedule, dispatches
module ticks in a fixed order (sensors -> localization -> tracker ->
planner -> controller -> plant), enforces competition rules (roles, flags,
round speeds, pass detection and role swap, two-lap window), and executes
controlled stops.

Sim time is an integer plant-tick counter, so module periods divide
exactly and identical scenarios with identical seeds replay bit-identically
(headless runs are single-threaded; UDP endpoints only attach when ports
are configured and never influence the log).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import control, vehicle
from .config import ScenarioConfig
from .localization import (
    GnssSimulator,
    LocalizationStack,
    MeasurementKind,
    Unit,
)
from .logrec import LOG_SCHEMA_VERSION, RunLog
from .perception import SensorSource, simulate_frame
from .planning import Flag, Planner, PrimitiveKind, RaceContext, Role
from .telemetry import (
    CommandReceiver,
    HEALTH_BITS,
    OperatorCommand,
    TelemetrySender,
    TelemetrySnapshot,
    pack_health,
)
from .track import LaneId, Track, closest_point
from .tracking import Tracker, predict_tracks

GNSS_PERIODS_TICKS = {  # at 1 ms plant step (Hz: 20/20/1/125/100)
    MeasurementKind.POSE: 50,
    MeasurementKind.VELOCITY: 50,
    MeasurementKind.HEADING: 1000,
    MeasurementKind.IMU: 8,
    MeasurementKind.WHEEL_SPEED: 10,
}


@dataclass
class RaceState:
    flags: list[Flag]
    roles: list[Role]
    round_speed: float
    round_index: int = 0
    laps: list[int] = field(default_factory=list)
    pass_ledger: list[dict] = field(default_factory=list)
    phase: str = "running"  # running | closing
    defender_laps_at_round_start: int = 0

    def attacker_index(self) -> int | None:
        if Role.ATTACKER in self.roles:
            return self.roles.index(Role.ATTACKER)
        return None

    def defender_index(self) -> int | None:
        if Role.DEFENDER in self.roles:
            return self.roles.index(Role.DEFENDER)
        return None


class CarRuntime:
    """One vehicle plus its stack instances (full) or truth-fed controller
    (scripted)."""

    def __init__(self, idx: int, cfg, scenario: ScenarioConfig, track: Track,
                 seed: int):
        self.idx = idx
        self.name = cfg.name
        self.full_stack = cfg.stack == "full"
        self.params = cfg.params
        lane = track.lane(cfg.start_lane)
        x, y, psi, kappa = lane.pose_at(cfg.start_station)
        self.state = vehicle.VehicleState(
            x=x, y=y, psi=psi, x_dot=cfg.start_speed,
            psi_dot=cfg.start_speed * kappa,
            wheel_speeds=(cfg.start_speed,) * 4,
            gear=control.gear_select(cfg.start_speed, scenario.controller.gear_table),
        )
        self.controller = control.Controller(self.params, scenario.controller)
        self.controller.gear = self.state.gear
        self.planner = Planner(scenario.planner, track, cfg.start_lane)
        self.cmd = vehicle.ActuationCommand(gear=self.state.gear)
        self.traj = None
        self.odom = self.state
        self.stop_speed: float | None = None
        self.safe_stopped = False
        self.last_cte = 0.0
        self.last_v_target = 0.0
        self.prev_station: float | None = None
        self.progress = 0.0  # accumulated along-track distance, for lap counting
        self.published_tracks = []
        self.last_frame_time = {SensorSource.LIDAR: -math.inf,
                                SensorSource.CAMERA: -math.inf}
        if self.full_stack:
            degradations = scenario.degradations if idx == 0 else []
            self.gnss = GnssSimulator(scenario.gnss_noise, degradations,
                                      seed=seed * 7919 + 13)
            state0 = [x, y, psi, cfg.start_speed, 0.0, cfg.start_speed * kappa]
            self.loc = LocalizationStack(scenario.gate, 0.0, state0)
            self.tracker = Tracker(scenario.tracker, track.bounds)
            self.rng = np.random.default_rng(seed * 104729 + idx + 1)
            self.pending_detections: list[tuple[float, int, object]] = []
            self._det_seq = 0


class InvariantViolation(RuntimeError):
    pass


class RaceExecutive:
    """Single authority over sim time; module ticks run sequentially."""

    def __init__(self, scenario: ScenarioConfig, log: RunLog | None = None,
                 telemetry_port: int | None = None,
                 command_port: int | None = None,
                 check_invariants: bool = True):
        self.scenario = scenario
        self.track = Track.from_config(scenario.track)
        self.log = log if log is not None else RunLog()
        self.check_invariants = check_invariants
        self.invariant_failures: list[str] = []

        sched = scenario.schedule
        self.dt = sched.plant_dt
        self.ticks = {
            "localization": sched.ticks(sched.localization_hz),
            "controller": sched.ticks(sched.controller_hz),
            "planner": sched.ticks(sched.planner_hz),
            "telemetry": sched.ticks(sched.telemetry_hz),
            "lidar": sched.ticks(1.0 / scenario.perception.lidar_period),
            "camera": sched.ticks(1.0 / scenario.perception.camera_period),
        }
        self.n = 0
        self.cars = [
            CarRuntime(i, c, scenario, self.track, scenario.seed + i)
            for i, c in enumerate(scenario.cars)
        ]
        flags = [scenario.initial_flag for _ in self.cars]
        self.race = RaceState(
            flags=flags,
            roles=[c.role for c in scenario.cars],
            round_speed=scenario.race.brackets_mps[0],
            laps=[0 for _ in self.cars],
        )
        self._script = list(scenario.operator_script)
        self._last_cmd_seq = 0
        self.cmd_rx = (
            CommandReceiver(command_port).start() if command_port is not None else None
        )
        self.telemetry = TelemetrySender(rate_hz=sched.telemetry_hz, port=telemetry_port)
        self.log.write(
            "header", schema=LOG_SCHEMA_VERSION, scenario=scenario.name,
            seed=scenario.seed, duration=scenario.duration,
            cars=[c.name for c in self.cars],
        )

    # -- public API -----------------------------------------------------------

    @property
    def sim_time(self) -> float:
        return self.n * self.dt

    def run(self, duration: float | None = None, stop_when=None) -> None:
        """Advance the world; stop_when (checked once per sim second) allows
        scenario tests to end as soon as their goal condition holds."""
        steps = int(round((duration or self.scenario.duration) / self.dt))
        check_every = int(round(1.0 / self.dt))
        for i in range(steps):
            self.tick()
            if stop_when is not None and (i + 1) % check_every == 0 and stop_when(self):
                break

    def apply_command(self, cmd: OperatorCommand) -> None:
        """Idempotent replay: only commands with fresh sequence numbers apply."""
        if cmd.seq <= self._last_cmd_seq:
            return
        self._last_cmd_seq = cmd.seq
        self._apply_operator(cmd.kind, cmd.payload, source="udp")

    # -- one plant step --------------------------------------------------------

    def tick(self) -> None:
        t = self.sim_time
        self._operator_inputs(t)
        self._sensors(t)
        self._localization(t)
        self._tracker(t)
        if self.n % self.ticks["planner"] == 0:
            self._race_rules(t)
            self._planner(t)
        self._controller(t)
        self._plant(t)
        self._telemetry(t)
        self.n += 1

    # -- stages ---------------------------------------------------------------

    def _operator_inputs(self, t: float) -> None:
        while self._script and self._script[0].t <= t + 1e-12:
            ev = self._script.pop(0)
            self._apply_operator(ev.command, ev.value, source="script")
        if self.cmd_rx is not None:
            for cmd in self.cmd_rx.drain():
                self.apply_command(cmd)

    def _apply_operator(self, command: str, value, source: str) -> None:
        t = self.sim_time
        if command == "set_flag":
            flag = Flag(value) if isinstance(value, str) else list(Flag)[int(value)]
            self.race.flags = [flag for _ in self.cars]
        elif command == "set_round_speed":
            self.race.round_speed = float(value)
        elif command == "emergency_stop":
            for car in self.cars:
                self._trigger_stop(car, "emergency_stop")
        elif command == "reset_latch":
            for car in self.cars:
                car.safe_stopped = False
                car.stop_speed = None
                if car.full_stack:
                    car.loc.health.reset_latch()
        elif command == "merge_to":
            self.cars[0].planner.forced_merge = LaneId(value)
        self.log.write("race_event", t=t, event="operator", command=command,
                       value=value if not isinstance(value, (list, tuple)) else list(value),
                       source=source)

    def _trigger_stop(self, car: CarRuntime, reason: str) -> None:
        if car.stop_speed is None:
            car.stop_speed = max(car.state.x_dot, 0.0)
            self.log.write("race_event", t=self.sim_time, event="controlled_stop",
                           car=car.name, reason=reason)

    def _sensors(self, t: float) -> None:
        pcfg = self.scenario.perception
        for source, key in ((SensorSource.LIDAR, "lidar"), (SensorSource.CAMERA, "camera")):
            if self.n % self.ticks[key] != 0:
                continue
            for car in self.cars:
                if not car.full_stack:
                    continue
                opponent = self._opponent_state(car)
                dets = simulate_frame(car.state, opponent, pcfg, source, t, car.rng)
                car.last_frame_time[source] = t
                latency = pcfg.latency_of(source)
                for det in dets:
                    car.pending_detections.append((t + latency, car._det_seq, det))
                    car._det_seq += 1
                    self.log.write(
                        "detection", t=t, car=car.name, source=source.value,
                        x=det.x, y=det.y, conf=det.confidence,
                        fp=det.is_false_positive,
                    )
        # GNSS / IMU / wheel-speed sources
        for car in self.cars:
            if not car.full_stack:
                continue
            truth = car.state
            accel = (truth.a_long - truth.psi_dot * truth.y_dot, truth.a_lat)
            for kind, period in GNSS_PERIODS_TICKS.items():
                if self.n % period != 0:
                    continue
                for unit in (Unit.A, Unit.B):
                    if kind == MeasurementKind.WHEEL_SPEED and unit != Unit.A:
                        continue
                    m = car.gnss.emit(unit, kind, t, truth, accel=accel)
                    if m is None:
                        continue
                    result = car.loc.feed(m, t)
                    if not result.accept:
                        self.log.write("gate", t=t, car=car.name, unit=unit.value,
                                       kind=kind.value, reason=result.reason)

    def _localization(self, t: float) -> None:
        if self.n % self.ticks["localization"] != 0:
            return
        for car in self.cars:
            if car.full_stack:
                odom = car.loc.emit(t)
                car.odom = odom
                health = car.loc.health
                if health.safe_stop_required and not car.safe_stopped:
                    car.safe_stopped = True
                    self._trigger_stop(car, health.safe_stop_reason)
                self.log.write(
                    "localization", t=t, car=car.name, x=odom.x, y=odom.y,
                    psi=odom.psi, vx=odom.x_dot, vy=odom.y_dot, r=odom.psi_dot,
                    cov_trace=float(np.trace(odom.covariance[:2, :2])),
                    safe_stop=health.safe_stop_required,
                )
            else:
                car.odom = car.state

    def _tracker(self, t: float) -> None:
        for car in self.cars:
            if not car.full_stack:
                continue
            if car.pending_detections:
                due = [e for e in car.pending_detections if e[0] <= t + 1e-12]
                if due:
                    car.pending_detections = [
                        e for e in car.pending_detections if e[0] > t + 1e-12
                    ]
                    car.tracker.ingest([d for _, _, d in sorted(due, key=lambda e: (e[0], e[1]))])
            if self.n % self.ticks["localization"] == 0:
                confirmed = car.tracker.process(t)
                horizon = t - self.scenario.tracker.reorder_buffer
                car.published_tracks = predict_tracks(
                    confirmed,
                    max(horizon - car.tracker._filter_time, 0.0)
                    if car.tracker._filter_time is not None else 0.0,
                    self.scenario.tracker,
                )
                if confirmed and self.n % self.ticks["planner"] == 0:
                    trk = confirmed[0]
                    self.log.write(
                        "tracker", t=t, car=car.name, id=trk.id,
                        x=float(trk.state[0]), y=float(trk.state[1]),
                        vx=float(trk.state[2]), vy=float(trk.state[3]),
                        psi=float(trk.state[4]),
                        cov_trace=float(np.trace(trk.covariance)),
                        status=trk.status.value,
                    )

    def _race_rules(self, t: float) -> None:
        center = self.track.centerline
        race = self.race
        for i, car in enumerate(self.cars):
            s, _ = closest_point(center, (car.state.x, car.state.y))
            if car.prev_station is not None:
                car.progress += center.station_gap(s, car.prev_station)
                if car.progress >= (race.laps[i] + 1) * center.total_length:
                    race.laps[i] += 1
                    self.log.write("race_event", t=t, event="lap", car=car.name,
                                   laps=race.laps[i])
            car.prev_station = s

        if len(self.cars) != 2:
            return
        ai, di = race.attacker_index(), race.defender_index()
        if ai is None or di is None:
            return
        atk, dfd = self.cars[ai], self.cars[di]
        s_a, _ = closest_point(center, (atk.state.x, atk.state.y))
        s_d, _ = closest_point(center, (dfd.state.x, dfd.state.y))
        gap = center.station_gap(s_a, s_d)

        cfg = self.scenario.race
        if (
            race.phase == "running"
            and cfg.auto_waving_gap > 0
            and race.flags[ai] == Flag.GREEN
            and -cfg.auto_waving_gap <= gap < 0
        ):
            race.flags = [Flag.WAVING_GREEN for _ in self.cars]
            self.log.write("race_event", t=t, event="flag", flag="waving_green",
                           reason="auto_gap")

        if race.phase == "running" and gap >= cfg.pass_gap and race.flags[ai] == Flag.WAVING_GREEN:
            race.phase = "closing"
            race.pass_ledger.append({
                "t": t, "passer": atk.name, "bracket_mph":
                self.scenario.race.brackets_mph[min(race.round_index,
                                                    len(cfg.brackets_mph) - 1)],
                "round_speed": race.round_speed,
            })
            self.log.write("race_event", t=t, event="pass", passer=atk.name,
                           gap=gap, round_speed=race.round_speed)

        if race.phase == "closing":
            on_inner = atk.planner.current_lane == LaneId.INNER
            merge_idle = atk.planner.prev.kind != PrimitiveKind.SAFE_MERGE or \
                atk.planner._merge_traj is None
            if on_inner and merge_idle:
                self._advance_round(t, swap_reason="pass_complete", advance_speed=True)
        elif race.phase == "running":
            if race.laps[di] - race.defender_laps_at_round_start >= cfg.two_lap_window:
                self.log.write("race_event", t=t, event="pass_failed", car=atk.name,
                               round_speed=race.round_speed)
                self._advance_round(t, swap_reason="two_lap_timeout", advance_speed=False)

    def _advance_round(self, t: float, swap_reason: str, advance_speed: bool) -> None:
        race = self.race
        race.roles = [Role.DEFENDER if r == Role.ATTACKER else Role.ATTACKER
                      for r in race.roles]
        if advance_speed:
            race.round_index += 1
            idx = min(race.round_index, len(self.scenario.race.brackets_mph) - 1)
            race.round_speed = self.scenario.race.brackets_mps[idx]
        race.phase = "running"
        race.flags = [Flag.GREEN for _ in self.cars]
        di = race.defender_index()
        if di is not None:
            race.defender_laps_at_round_start = race.laps[di]
        for car in self.cars:
            car.planner.reset_round()
        self.log.write("race_event", t=t, event="role_swap", reason=swap_reason,
                       roles=[r.value for r in race.roles],
                       round_speed=race.round_speed)

    def _planner(self, t: float) -> None:
        for i, car in enumerate(self.cars):
            opponent = None
            if car.full_stack and car.published_tracks:
                opponent = car.published_tracks[0]
            elif not car.full_stack:
                opponent = None  # scripted defender plans without an opponent
            ctx = RaceContext(
                role=self.race.roles[i],
                flag=self.race.flags[i],
                round_speed=self.race.round_speed,
                opponent=opponent,
                ego=car.odom,
                now=t,
                current_lane=car.planner.current_lane,
                stop_speed=car.stop_speed,
            )
            action, traj = car.planner.tick(ctx)
            car.traj = traj
            self.log.write(
                "planner", t=t, car=car.name, primitive=action.kind.value,
                lane=action.target_lane.value, v_target=float(action.target_speed),
                gap=car.planner.last_gap, degraded=car.planner.degraded,
            )
            if self.check_invariants:
                try:
                    traj.check_valid(self.scenario.planner.a_lat_max)
                except ValueError as exc:
                    self.invariant_failures.append(f"trajectory: {exc}")
        if self.check_invariants and len(self.cars) == 2:
            self._check_separation(t)

    def _check_separation(self, t: float) -> None:
        center = self.track.centerline
        a, b = self.cars
        s_a, lat_a = closest_point(center, (a.state.x, a.state.y))
        s_b, lat_b = closest_point(center, (b.state.x, b.state.y))
        gap = abs(center.station_gap(s_a, s_b))
        if gap < self.scenario.race.alongside_window:
            lateral = abs(lat_a - lat_b)
            if lateral < self.scenario.race.min_lateral_separation:
                self.invariant_failures.append(
                    f"lateral separation {lateral:.2f} m at t={t:.2f} (gap {gap:.1f} m)"
                )

    def _controller(self, t: float) -> None:
        if self.n % self.ticks["controller"] != 0:
            return
        for car in self.cars:
            v_target = None
            if car.stop_speed is not None and car.traj is not None:
                v_target = min(car.traj.speed_at((car.odom.x, car.odom.y)),
                               car.stop_speed)
            steer, throttle, brake, gear, info = car.controller.tick(
                car.odom, car.traj, v_target
            )
            car.cmd = vehicle.ActuationCommand(
                steer=steer, throttle=throttle, brake=brake, gear=gear
            )
            car.last_v_target = info.get("v_target", 0.0)
            if car.traj is not None:
                car.last_cte = car.traj.lateral_offset((car.odom.x, car.odom.y))
            err = info.get("error")
            self.log.write(
                "controller", t=t, car=car.name, steer=steer, throttle=throttle,
                brake=brake, gear=gear, cte=car.last_cte,
                speed=car.odom.x_dot, v_target=car.last_v_target,
                bracket=info.get("bracket"),
                lookahead=info.get("lookahead"),
                e1=err.e1 if err else None, e1_dot=err.e1_dot if err else None,
                e2=err.e2 if err else None, e2_dot=err.e2_dot if err else None,
            )

    def _plant(self, t: float) -> None:
        for car in self.cars:
            if car.stop_speed is not None:
                car.stop_speed = max(car.stop_speed - self.scenario.race.stop_decel * self.dt, 0.0)
            car.state = vehicle.step(car.state, car.cmd, car.params, self.dt)
            if self.check_invariants:
                if math.hypot(car.state.a_lat, car.state.a_long) > car.params.mu_limit + 1e-9:
                    self.invariant_failures.append(
                        f"friction circle exceeded at t={t:.3f} for {car.name}"
                    )
            if self.n % self.scenario.plant_log_decimation == 0:
                s = car.state
                self.log.write(
                    "plant", t=t, car=car.name, x=s.x, y=s.y, psi=s.psi,
                    vx=s.x_dot, vy=s.y_dot, r=s.psi_dot, gear=s.gear,
                    wheels=list(s.wheel_speeds), steer=car.cmd.steer,
                    throttle=car.cmd.throttle, brake=car.cmd.brake,
                    a_lat=s.a_lat, a_long=s.a_long, traction_lost=s.traction_lost,
                )

    def _opponent_state(self, car: CarRuntime):
        others = [c for c in self.cars if c is not car]
        return others[0].state if others else None

    def _telemetry(self, t: float) -> None:
        if self.n % self.ticks["telemetry"] != 0:
            return
        car = self.cars[self.scenario.telemetry_car]
        snap = self.telemetry.offer(t, lambda seq: self._snapshot(seq, t, car))
        if snap is not None:
            self.log.write("telemetry", t=t, seq=snap.seq,
                           size=self.telemetry.sent[-1][2])

    def _snapshot(self, seq: int, t: float, car: CarRuntime) -> TelemetrySnapshot:
        i = car.idx
        odom = car.odom
        opp = car.published_tracks[0] if car.full_stack and car.published_tracks else None
        health = self._health_flags(car)
        return TelemetrySnapshot.build(
            seq=seq, sim_time=t,
            ego_x=odom.x, ego_y=odom.y, ego_psi=odom.psi,
            ego_speed=odom.x_dot,
            target_speed=car.last_v_target,
            flag=self.race.flags[i].value, role=self.race.roles[i].value,
            opp_present=opp is not None,
            opp_x=float(opp.state[0]) if opp else 0.0,
            opp_y=float(opp.state[1]) if opp else 0.0,
            opp_speed=opp.speed if opp else 0.0,
            health_bits=pack_health(health),
            cte=car.last_cte,
            steer=car.cmd.steer, throttle=car.cmd.throttle, brake=car.cmd.brake,
        )

    def _health_flags(self, car: CarRuntime) -> dict[str, bool]:
        t = self.sim_time
        flags = {name: False for name in HEALTH_BITS}
        flags["traction_lost"] = car.state.traction_lost
        flags["spinout_detected"] = vehicle.detect_spinout(car.state, car.params)
        flags["planner_healthy"] = car.traj is not None and car.controller.healthy
        flags["telemetry_socket_ok"] = self.telemetry.socket_ok
        flags["localization_rate_ok"] = True
        pcfg = self.scenario.perception
        flags["lidar_rate_ok"] = (
            t - car.last_frame_time[SensorSource.LIDAR] <= 3.0 * pcfg.lidar_period
        )
        flags["camera_rate_ok"] = (
            t - car.last_frame_time[SensorSource.CAMERA] <= 3.0 * pcfg.camera_period
        )
        if car.full_stack:
            h = car.loc.health
            cfg = self.scenario.gate
            for unit, prefix in ((Unit.A, "unit_a"), (Unit.B, "unit_b")):
                for kind, suffix in (
                    (MeasurementKind.POSE, "pose"),
                    (MeasurementKind.VELOCITY, "velocity"),
                    (MeasurementKind.HEADING, "heading"),
                ):
                    flags[f"{prefix}_{suffix}_ok"] = h.source_ok(unit, kind, t, cfg)
            flags["fused_cov_ok"] = not h.fused_cov_alarm
            flags["safe_stop_latched"] = h.safe_stop_required or car.stop_speed is not None
            flags["opponent_tracked"] = bool(car.published_tracks)
        else:
            flags["fused_cov_ok"] = True
        return flags

    def close(self) -> None:
        if self.cmd_rx is not None:
            self.cmd_rx.stop()
        self.telemetry.close()
        self.log.close()


def load_scenario(name_or_path: str, overrides: dict | None = None,
                  log_path=None, **kwargs) -> RaceExecutive:
    """Build a deterministic world from a scenario file or bundled name."""
    from .config import load_scenario_config

    cfg = load_scenario_config(name_or_path, overrides)
    return RaceExecutive(cfg, log=RunLog(log_path), **kwargs)
