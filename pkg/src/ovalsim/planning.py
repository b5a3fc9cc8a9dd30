"""Behavior planning: action primitives, safe-merge generation, and
velocity profiling, emitted as target trajectories at 20 Hz.

Primitive selection follows the competition roles and flags: a defender
holds the inside lane at the round speed; an attacker trails under Green,
merges out to pass under Waving Green when the clearance gate allows, and
closes the door back to the inside lane once ahead by the pass margin.
Merges blend the lateral offset between lanes with the closed-form quintic
minimum-jerk polynomial, so position and its first two derivatives are
continuous at both ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .track import (
    LaneId,
    Raceline,
    TargetPoint,
    Track,
    closest_point,
    in_track_bounds,
    wrap_angle,
)
from .tracking import TrackedAgent


class Flag(str, Enum):
    GREEN = "green"
    WAVING_GREEN = "waving_green"
    YELLOW = "yellow"
    RED = "red"


class Role(str, Enum):
    ATTACKER = "attacker"
    DEFENDER = "defender"


class PrimitiveKind(str, Enum):
    MAINTAIN = "maintain"
    TRAIL = "trail"
    SAFE_MERGE = "safe_merge"


class MergeError(RuntimeError):
    """Merge geometry rejected (leaves bounds or exceeds curvature cap)."""


@dataclass(frozen=True)
class MergeParams:
    start_s: float  # station on the origin raceline
    duration_s: float
    origin: LaneId
    target: LaneId


@dataclass(frozen=True)
class ActionPrimitive:
    kind: PrimitiveKind
    target_lane: LaneId
    target_speed: float
    merge: MergeParams | None = None
    gap_setpoint: float | None = None  # Trail only

    def __post_init__(self) -> None:
        if self.kind == PrimitiveKind.SAFE_MERGE and self.merge is None:
            raise ValueError("SafeMerge requires merge parameters")
        if self.kind == PrimitiveKind.TRAIL and self.gap_setpoint is None:
            raise ValueError("Trail requires a gap setpoint")


@dataclass(eq=False)
class PlannedTrajectory:
    """Sampled target path with per-point speed. s starts at 0 at the ego."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    v: np.ndarray
    stamp: float

    def __post_init__(self) -> None:
        self._psi_unwrapped = np.unwrap(self.psi)

    def __len__(self) -> int:
        return len(self.s)

    @property
    def horizon_length(self) -> float:
        return float(self.s[-1] - self.s[0])

    def closest_index(self, pos) -> int:
        d2 = (self.x - pos[0]) ** 2 + (self.y - pos[1]) ** 2
        return int(np.argmin(d2))

    def closest_station(self, pos) -> float:
        """Continuous station of pos by projection onto adjacent segments."""
        i = self.closest_index(pos)
        best_s, best_d2 = self.s[i], math.inf
        for j in (i - 1, i):
            if j < 0 or j + 1 >= len(self.s):
                continue
            ex, ey = self.x[j + 1] - self.x[j], self.y[j + 1] - self.y[j]
            seg2 = ex * ex + ey * ey
            if seg2 <= 0:
                continue
            u = ((pos[0] - self.x[j]) * ex + (pos[1] - self.y[j]) * ey) / seg2
            u = min(max(u, 0.0), 1.0)
            cx, cy = self.x[j] + u * ex, self.y[j] + u * ey
            d2 = (pos[0] - cx) ** 2 + (pos[1] - cy) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best_s = self.s[j] + u * (self.s[j + 1] - self.s[j])
        return float(best_s)

    def lookahead(self, pos, d: float, ref_speed: float) -> TargetPoint:
        """Pose d meters further along the path from pos's closest point."""
        s_target = min(self.closest_station(pos) + d, self.s[-1])
        j = min(int(np.searchsorted(self.s, s_target, side="right")) - 1, len(self.s) - 2)
        span = self.s[j + 1] - self.s[j]
        u = (s_target - self.s[j]) / span if span > 0 else 0.0
        psi = wrap_angle(
            self._psi_unwrapped[j] + u * (self._psi_unwrapped[j + 1] - self._psi_unwrapped[j])
        )
        kappa = self.kappa[j] + u * (self.kappa[j + 1] - self.kappa[j])
        return TargetPoint(
            x=float(self.x[j] + u * (self.x[j + 1] - self.x[j])),
            y=float(self.y[j] + u * (self.y[j + 1] - self.y[j])),
            psi=float(psi),
            psi_dot=float(kappa * ref_speed),
            s=float(s_target),
            kappa=float(kappa),
        )

    def speed_at(self, pos) -> float:
        return float(self.v[self.closest_index(pos)])

    def lateral_offset(self, pos) -> float:
        """Signed cross-track offset of pos from the path (positive left)."""
        i = self.closest_index(pos)
        j = min(max(i, 0), len(self.s) - 2)
        ex, ey = self.x[j + 1] - self.x[j], self.y[j + 1] - self.y[j]
        seg2 = ex * ex + ey * ey
        if seg2 <= 0:
            return 0.0
        u = min(max(((pos[0] - self.x[j]) * ex + (pos[1] - self.y[j]) * ey) / seg2, 0.0), 1.0)
        cx, cy = self.x[j] + u * ex, self.y[j] + u * ey
        dist = math.hypot(pos[0] - cx, pos[1] - cy)
        cross = ex * (pos[1] - cy) - ey * (pos[0] - cx)
        return math.copysign(dist, cross) if dist > 0 else 0.0

    def check_valid(self, a_lat_max: float) -> None:
        if np.any(~np.isfinite(self.v)) or np.any(self.v < 0):
            raise ValueError("trajectory speeds must be finite and non-negative")
        if not np.all(np.diff(self.s) > 0):
            raise ValueError("trajectory stations must increase")
        worst = np.max(self.v**2 * np.abs(self.kappa))
        if worst > a_lat_max + 1e-6:
            raise ValueError(f"profiled speed violates lateral limit: {worst:.2f}")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: float = 300.0  # m
    spacing: float = 2.0  # m
    gap_setpoint: float = 25.0  # m behind the opponent while trailing
    k_gap: float = 0.2  # 1/s proportional gap law
    trail_overspeed: float = 10.0  # m/s allowed above round speed to close gaps
    pass_speed_margin: float = 8.0  # m/s above round speed during an overtake
    merge_duration: float = 3.0  # s
    a_lat_max: float = 22.5  # m/s^2
    a_accel: float = 6.0  # m/s^2 forward profiling limit
    a_decel: float = 10.0  # m/s^2 backward profiling limit
    kappa_cap: float = 0.05  # 1/m; merge rejected above this
    lateral_clearance: float = 1.5  # m beyond one vehicle width
    vehicle_width: float = 1.9  # m
    longitudinal_clear: float = 15.0  # m; stations closer than this count as alongside
    close_door_gap: float = 30.0  # m lead required before merging back
    ahead_hysteresis: float = 2.0  # m band on the ahead/behind flip
    yellow_speed: float = 12.0  # m/s

    @property
    def min_lateral_separation(self) -> float:
        return self.vehicle_width + self.lateral_clearance


@dataclass(frozen=True)
class RaceContext:
    """Planner-tick snapshot assembled by the executive."""

    role: Role
    flag: Flag
    round_speed: float
    opponent: TrackedAgent | None
    ego: object  # anything with x, y, psi, x_dot
    now: float
    current_lane: LaneId = LaneId.INNER
    stop_speed: float | None = None  # controlled-stop ceiling, ramped by the executive

    def __post_init__(self) -> None:
        if self.round_speed < 0:
            raise ValueError("round_speed must be non-negative")


def minimum_jerk_blend(u: float) -> float:
    """Quintic blend 6u^5 - 15u^4 + 10u^3 on [0, 1]."""
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def velocity_profile(
    traj: PlannedTrajectory,
    v_cmd: float,
    a_lat_max: float,
    a_accel: float,
    a_decel: float,
) -> PlannedTrajectory:
    """Cap speeds by lateral limit then forward/backward longitudinal limits."""
    kappa = np.abs(traj.kappa)
    cap = np.where(kappa > 1e-9, np.sqrt(a_lat_max / np.maximum(kappa, 1e-9)), np.inf)
    v = np.minimum(v_cmd, cap)
    ds = np.diff(traj.s)
    for i in range(len(v) - 1):  # forward: acceleration limit
        v[i + 1] = min(v[i + 1], math.sqrt(v[i] ** 2 + 2.0 * a_accel * ds[i]))
    for i in range(len(v) - 2, -1, -1):  # backward: deceleration limit
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2.0 * a_decel * ds[i]))
    return replace(traj, v=v)


def pass_progress(
    ego_pos,
    opp_pos,
    raceline: Raceline,
    prev_ahead: bool | None,
    hysteresis: float = 2.0,
) -> tuple[bool, float]:
    """Along-track lead of the ego over the opponent, with an anti-chatter band.

    Returns (ahead, gap) with gap = ego station minus opponent station
    mapped to (-L/2, L/2]. Inside the +/-hysteresis band the previous
    ahead/behind call is retained.
    """
    s_ego, _ = closest_point(raceline, ego_pos)
    s_opp, _ = closest_point(raceline, opp_pos)
    gap = raceline.station_gap(s_ego, s_opp)
    if prev_ahead is not None and abs(gap) <= hysteresis:
        return prev_ahead, gap
    return gap > 0.0, gap


def _refresh_geometry(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, ...]:
    """Arc length, heading, and curvature of a sampled path by differences."""
    ds = np.hypot(np.diff(x), np.diff(y))
    s = np.concatenate([[0.0], np.cumsum(ds)])
    psi_seg = np.arctan2(np.diff(y), np.diff(x))
    psi_u = np.unwrap(psi_seg)
    psi = np.concatenate([psi_u, psi_u[-1:]])
    psi_mid = np.concatenate([psi_u[:1], 0.5 * (psi_u[1:] + psi_u[:-1]), psi_u[-1:]])
    kappa = np.gradient(psi_mid, s, edge_order=1)
    return s, np.array([wrap_angle(a) for a in psi]), kappa


def _window_trajectory(
    line: Raceline, start_s: float, cfg: PlannerConfig, stamp: float
) -> PlannedTrajectory:
    _, x, y, psi, kappa = line.sample_window(start_s, cfg.horizon, cfg.spacing)
    s = np.arange(len(x), dtype=float) * cfg.spacing
    return PlannedTrajectory(s=s, x=x, y=y, psi=psi, kappa=kappa,
                             v=np.zeros_like(s), stamp=stamp)


def safe_merge(
    origin: Raceline,
    target: Raceline,
    start_s: float,
    duration_s: float,
    v_ref: float,
    cfg: PlannerConfig,
    stamp: float = 0.0,
    bounds=None,
) -> PlannedTrajectory:
    """Minimum-jerk lateral blend from the origin to the target raceline.

    The merge spans duration_s at v_ref along the origin stations, then the
    path continues on the target raceline out to the planning horizon.
    Rejects merges that leave the track bounds or exceed the curvature cap.
    """
    if duration_s <= 0:
        raise MergeError("merge duration must be positive")
    merge_len = max(duration_s * max(v_ref, 1.0), cfg.spacing * 4.0)
    stations, bx, by, bpsi, _ = origin.sample_window(start_s, merge_len, cfg.spacing)
    u = np.clip((stations - start_s) / merge_len, 0.0, 1.0)
    blend = np.array([minimum_jerk_blend(ui) for ui in u])
    delta = np.empty_like(blend)
    for i in range(len(stations)):
        _, lat = closest_point(target, (bx[i], by[i]))
        delta[i] = -lat  # offset that carries the origin point onto the target
    off = delta * blend
    x = bx - off * np.sin(bpsi)
    y = by + off * np.cos(bpsi)

    remaining = cfg.horizon - merge_len
    if remaining > cfg.spacing:
        s_t, _ = closest_point(target, (x[-1], y[-1]))
        _, tx, ty, _, _ = target.sample_window(s_t + cfg.spacing, remaining, cfg.spacing)
        x = np.concatenate([x, tx])
        y = np.concatenate([y, ty])

    s, psi, kappa = _refresh_geometry(x, y)
    traj = PlannedTrajectory(s=s, x=x, y=y, psi=psi, kappa=kappa,
                             v=np.zeros_like(s), stamp=stamp)
    peak = float(np.max(np.abs(traj.kappa)))
    if peak > cfg.kappa_cap:
        raise MergeError(
            f"merge duration too short: curvature {peak:.4f} exceeds cap {cfg.kappa_cap}"
        )
    if bounds is not None:
        for px, py in zip(traj.x, traj.y):
            if not in_track_bounds(bounds, (px, py)):
                raise MergeError(f"merge exits track bounds at ({px:.1f}, {py:.1f})")
    return traj


def merge_clearance_ok(
    ego_s: float,
    ego_speed: float,
    opp_s: float,
    opp_speed: float,
    lane_separation: float,
    track_length: float,
    duration_s: float,
    cfg: PlannerConfig,
) -> bool:
    """Predictive gate: during the merge, whenever the cars are alongside the
    ego must already have blended at least the clearance margin away."""
    steps = 24
    for i in range(steps + 1):
        t = duration_s * i / steps
        gap = (ego_s + ego_speed * t) - (opp_s + opp_speed * t)
        gap = (gap + 0.5 * track_length) % track_length - 0.5 * track_length
        if abs(gap) < cfg.longitudinal_clear:
            lateral = lane_separation * minimum_jerk_blend(t / duration_s)
            if lateral < cfg.min_lateral_separation:
                return False
    return True


def select_action(
    ctx: RaceContext,
    prev: ActionPrimitive,
    cfg: PlannerConfig,
    *,
    merge_done: bool = True,
    clearance_ok: bool = False,
    ahead: bool | None = None,
    gap: float | None = None,
    close_door_fired: bool = False,
) -> ActionPrimitive:
    """Pick the next primitive from role, flag, and opponent situation.

    Transitions are hysteretic: an active merge always runs to geometric
    completion, the pass merge is only entered from Trail under Waving
    Green, and the close-the-door merge fires once per round.
    """
    lane = ctx.current_lane
    if ctx.flag == Flag.RED:
        return ActionPrimitive(PrimitiveKind.MAINTAIN, lane, 0.0)
    if ctx.flag == Flag.YELLOW:
        return ActionPrimitive(
            PrimitiveKind.MAINTAIN, lane, min(ctx.round_speed, cfg.yellow_speed)
        )
    if prev.kind == PrimitiveKind.SAFE_MERGE and not merge_done:
        return prev

    if ctx.role == Role.DEFENDER:
        if lane != LaneId.INNER:
            merge = MergeParams(0.0, cfg.merge_duration, lane, LaneId.INNER)
            return ActionPrimitive(
                PrimitiveKind.SAFE_MERGE, LaneId.INNER, ctx.round_speed, merge
            )
        return ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.INNER, ctx.round_speed)

    # Attacker
    pass_speed = ctx.round_speed + cfg.pass_speed_margin
    if ctx.flag == Flag.WAVING_GREEN and ctx.opponent is not None:
        passed = bool(ahead) and gap is not None and gap >= cfg.close_door_gap
        if lane == LaneId.OUTER:
            if passed and not close_door_fired:
                merge = MergeParams(0.0, cfg.merge_duration, LaneId.OUTER, LaneId.INNER)
                return ActionPrimitive(
                    PrimitiveKind.SAFE_MERGE, LaneId.INNER, pass_speed, merge
                )
            return ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.OUTER, pass_speed)
        if (
            prev.kind == PrimitiveKind.TRAIL
            and clearance_ok
            and not bool(ahead)
        ):
            merge = MergeParams(0.0, cfg.merge_duration, lane, LaneId.OUTER)
            return ActionPrimitive(
                PrimitiveKind.SAFE_MERGE, LaneId.OUTER, pass_speed, merge
            )
        return ActionPrimitive(
            PrimitiveKind.TRAIL, lane, ctx.round_speed, gap_setpoint=cfg.gap_setpoint
        )
    if ctx.opponent is not None:
        return ActionPrimitive(
            PrimitiveKind.TRAIL, lane, ctx.round_speed, gap_setpoint=cfg.gap_setpoint
        )
    return ActionPrimitive(PrimitiveKind.MAINTAIN, lane, ctx.round_speed)


def trail_speed(
    gap: float, opp_speed: float, setpoint: float, k_gap: float, v_max: float
) -> float:
    """Proportional gap law: v = v_opp + k (gap - setpoint), clamped to [0, v_max]."""
    return min(max(opp_speed + k_gap * (gap - setpoint), 0.0), v_max)


class Planner:
    """Stateful 20 Hz planning task for one car."""

    def __init__(self, cfg: PlannerConfig, track: Track, start_lane: LaneId = LaneId.INNER):
        self.cfg = cfg
        self.track = track
        self.current_lane = start_lane
        self.prev = ActionPrimitive(PrimitiveKind.MAINTAIN, start_lane, 0.0)
        self.prev_ahead: bool | None = None
        self.close_door_fired = False
        self._merge_traj: PlannedTrajectory | None = None
        self._merge_end_xy: tuple[float, float] | None = None
        self._merge_target: LaneId | None = None
        self.last_gap: float | None = None
        self.degraded = False  # lost-opponent fallback engaged
        self.forced_merge: LaneId | None = None  # scenario-scripted lane change

    def reset_round(self) -> None:
        self.close_door_fired = False
        self.prev_ahead = None

    def tick(self, ctx: RaceContext) -> tuple[ActionPrimitive, PlannedTrajectory]:
        cfg = self.cfg
        center = self.track.centerline
        ego_pos = (ctx.ego.x, ctx.ego.y)
        ahead = None
        gap = None
        if ctx.opponent is not None:
            ahead, gap = pass_progress(
                ego_pos, tuple(ctx.opponent.position), center,
                self.prev_ahead, cfg.ahead_hysteresis,
            )
            self.prev_ahead = ahead
        self.last_gap = gap

        merge_done = self._merge_done(ego_pos)
        # _merge_done may have just updated current_lane; selection must see
        # the live lane, not the snapshot taken before this tick.
        ctx = replace(ctx, current_lane=self.current_lane)
        clearance = self._clearance_ok(ctx, ego_pos) if ctx.opponent is not None else False
        if self.forced_merge is not None and merge_done:
            target = self.forced_merge
            self.forced_merge = None
            if target != self.current_lane:
                merge = MergeParams(0.0, cfg.merge_duration, self.current_lane, target)
                action = ActionPrimitive(
                    PrimitiveKind.SAFE_MERGE, target, ctx.round_speed, merge
                )
            else:
                action = ActionPrimitive(PrimitiveKind.MAINTAIN, target, ctx.round_speed)
        else:
            action = select_action(
                ctx, self.prev, cfg,
                merge_done=merge_done,
                clearance_ok=clearance,
                ahead=ahead,
                gap=gap,
                close_door_fired=self.close_door_fired,
            )
        self.degraded = (
            self.prev.kind == PrimitiveKind.TRAIL
            and action.kind == PrimitiveKind.MAINTAIN
            and ctx.opponent is None
            and ctx.flag in (Flag.GREEN, Flag.WAVING_GREEN)
        )

        action, traj = self._build_trajectory(ctx, action, ego_pos, gap)
        if (
            action.kind == PrimitiveKind.SAFE_MERGE
            and action.merge is not None
            and action.target_lane == LaneId.INNER
            and action.merge.origin == LaneId.OUTER
        ):
            self.close_door_fired = True
        self.prev = action
        return action, traj

    # -- internals ---------------------------------------------------------

    def _merge_done(self, ego_pos) -> bool:
        if self._merge_traj is None:
            return True
        ex, ey = self._merge_end_xy
        if math.hypot(ego_pos[0] - ex, ego_pos[1] - ey) < 4.0 * self.cfg.spacing:
            self.current_lane = self._merge_target
            self._merge_traj = None
            return True
        # Passing the end station also completes the merge.
        lane = self.track.lane(self._merge_target)
        s_ego, lat = closest_point(lane, ego_pos)
        s_end, _ = closest_point(lane, (ex, ey))
        if lane.station_gap(s_ego, s_end) > 0 and abs(lat) < 1.0:
            self.current_lane = self._merge_target
            self._merge_traj = None
            return True
        return False

    def _clearance_ok(self, ctx: RaceContext, ego_pos) -> bool:
        center = self.track.centerline
        s_ego, _ = closest_point(center, ego_pos)
        s_opp, _ = closest_point(center, tuple(ctx.opponent.position))
        return merge_clearance_ok(
            s_ego, getattr(ctx.ego, "x_dot", 0.0),
            s_opp, ctx.opponent.speed,
            self.track.width / 2.0, center.total_length,
            self.cfg.merge_duration, self.cfg,
        )

    def _build_trajectory(
        self, ctx: RaceContext, action: ActionPrimitive, ego_pos, gap
    ) -> tuple[ActionPrimitive, PlannedTrajectory]:
        cfg = self.cfg
        v_cmd = action.target_speed
        if action.kind == PrimitiveKind.TRAIL and ctx.opponent is not None and gap is not None:
            v_cmd = trail_speed(
                -gap, ctx.opponent.speed, action.gap_setpoint, cfg.k_gap,
                ctx.round_speed + cfg.trail_overspeed,
            )
        if ctx.stop_speed is not None:
            v_cmd = min(v_cmd, ctx.stop_speed)

        if action.kind == PrimitiveKind.SAFE_MERGE:
            if self._merge_traj is None or self._merge_target != action.target_lane:
                origin = self.track.lane(action.merge.origin)
                target = self.track.lane(action.target_lane)
                start_s, _ = closest_point(origin, ego_pos)
                v_ref = max(getattr(ctx.ego, "x_dot", v_cmd), 10.0)
                try:
                    raw = safe_merge(
                        origin, target, start_s, action.merge.duration_s,
                        v_ref, cfg, stamp=ctx.now, bounds=self.track.bounds,
                    )
                except MergeError:
                    # Hold the current lane; selection retries next tick.
                    action = ActionPrimitive(
                        PrimitiveKind.MAINTAIN, self.current_lane, action.target_speed
                    )
                    lane = self.track.lane(self.current_lane)
                    s0, _ = closest_point(lane, ego_pos)
                    traj = _window_trajectory(lane, s0, cfg, ctx.now)
                    return action, velocity_profile(
                        traj, v_cmd, cfg.a_lat_max, cfg.a_accel, cfg.a_decel
                    )
                merge_len = action.merge.duration_s * v_ref
                end_i = min(int(merge_len / cfg.spacing), len(raw) - 1)
                self._merge_traj = raw
                self._merge_end_xy = (float(raw.x[end_i]), float(raw.y[end_i]))
                self._merge_target = action.target_lane
            traj = replace(self._merge_traj, stamp=ctx.now)
        else:
            lane = self.track.lane(action.target_lane)
            start_s, _ = closest_point(lane, ego_pos)
            traj = _window_trajectory(lane, start_s, cfg, ctx.now)
            self.current_lane = action.target_lane

        return action, velocity_profile(traj, v_cmd, cfg.a_lat_max, cfg.a_accel, cfg.a_decel)
