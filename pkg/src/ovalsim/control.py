"""Trajectory tracking: speed-bracketed LQR steering with a pure-pursuit
lookahead, P + feed-forward longitudinal control with rate-limit smoothing,
and lookup-table gear selection.

The lateral loop linearizes the dynamic bicycle model into error
coordinates (lateral error, its rate, yaw error, its rate) relative to a
lookahead pose on the planned trajectory and applies u = -K e, where K is
the CARE gain of the speed bracket containing the current speed. Gains are
solved once at bracket build time at each bracket's linearization speed.

Bracket Q/R values are invented placeholders tuned for stability (the
originals are not public): lateral-error weight tapers off and the steering
penalty rises with speed, so the controller grows less reactive while yaw
errors keep a higher relative emphasis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .planning import PlannedTrajectory
from .riccati import solve_care
from .track import TargetPoint, wrap_angle
from .vehicle import VehicleParams

V_LATERAL_FLOOR = 0.5  # m/s; error dynamics are singular in 1/V_x below this


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorState:
    e1: float  # m, lateral error (positive: vehicle left of the target pose)
    e1_dot: float  # m/s
    e2: float  # rad, yaw error, wrapped
    e2_dot: float  # rad/s

    def as_array(self) -> np.ndarray:
        return np.array([self.e1, self.e1_dot, self.e2, self.e2_dot])


@dataclass(frozen=True)
class GainBracket:
    v_low: float
    v_high: float  # math.inf for the top bracket
    q_diag: tuple[float, float, float, float]
    r: float
    k: np.ndarray  # (4,) feedback gain row

    def contains(self, v: float) -> bool:
        return self.v_low <= v < self.v_high


@dataclass(frozen=True)
class ControllerConfig:
    d_base: float = 5.0  # m
    k_vd: float = 0.10  # s, lookahead speed gain
    k_p: float = 0.5  # throttle P gain
    k_ff: float = 0.0114  # feed-forward on target speed (balances drag)
    alpha_brake: float = 0.06
    delta_throttle: float = 0.04  # per 100 Hz tick
    delta_brake: float = 0.08
    bracket_edges: tuple[float, ...] = (0, 10, 20, 25, 30, 35, 40, 45, 50, 55, 60)
    q_low: tuple[float, float, float, float] = (1.0, 0.1, 2.0, 0.2)
    q_high: tuple[float, float, float, float] = (0.8, 0.1, 2.0, 0.3)
    r_low: float = 5.0
    r_high: float = 15.0
    # (v_low, v_high, gear); contiguous cover of [0, inf)
    gear_table: tuple[tuple[float, float, int], ...] = (
        (0.0, 16.0, 1),
        (16.0, 27.0, 2),
        (27.0, 38.0, 3),
        (38.0, 48.0, 4),
        (48.0, 57.0, 5),
        (57.0, math.inf, 6),
    )
    gear_hysteresis: float = 1.0  # m/s below a boundary before downshifting

    def __post_init__(self) -> None:
        if self.d_base <= 0 or self.delta_throttle <= 0 or self.delta_brake <= 0:
            raise ControlError("d_base and rate limits must be positive")


def error_dynamics(v: float, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Error-coordinate (A, B) of the dynamic bicycle model at speed v."""
    if v <= V_LATERAL_FLOOR:
        raise ControlError(f"error dynamics singular at v={v} (<= {V_LATERAL_FLOOR})")
    cf, cr = 2.0 * params.c_alpha_f, 2.0 * params.c_alpha_r
    m, iz, lf, lr = params.mass, params.inertia_z, params.l_f, params.l_r
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -(cf + cr) / (m * v), (cf + cr) / m, -(cf * lf - cr * lr) / (m * v)],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, -(cf * lf - cr * lr) / (iz * v), (cf * lf - cr * lr) / iz,
         -(cf * lf**2 + cr * lr**2) / (iz * v)],
    ])
    B = np.array([[0.0], [cf / m], [0.0], [cf * lf / iz]])
    return A, B


def build_gain_brackets(
    params: VehicleParams, cfg: ControllerConfig
) -> list[GainBracket]:
    """Solve the CARE per speed bracket at its linearization speed.

    Brackets cover [0, inf) contiguously; the unbounded top bracket
    linearizes at its lower edge, the others at their midpoint. Q and R are
    interpolated between the low- and high-speed anchors.
    """
    edges = list(cfg.bracket_edges) + [math.inf]
    brackets: list[GainBracket] = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        v_lin = lo if math.isinf(hi) else 0.5 * (lo + hi)
        v_lin = max(v_lin, 2.0 * V_LATERAL_FLOOR)
        w = min(max((v_lin - 5.0) / 55.0, 0.0), 1.0)
        q = tuple((1 - w) * ql + w * qh for ql, qh in zip(cfg.q_low, cfg.q_high))
        r = (1 - w) * cfg.r_low + w * cfg.r_high
        A, B = error_dynamics(v_lin, params)
        _, K = solve_care(A, B, np.diag(q), np.array([[r]]))
        brackets.append(GainBracket(v_low=lo, v_high=hi, q_diag=q, r=r, k=K.ravel()))
    return brackets


def bracket_for(brackets: list[GainBracket], v: float) -> GainBracket:
    for b in brackets:
        if b.contains(v):
            return b
    raise ControlError(f"no gain bracket covers speed {v}")


def error_state(state, target: TargetPoint) -> ErrorState:
    """Error coordinates of the vehicle relative to a target pose.

    e1 is the lateral component of (vehicle - target) in the target frame;
    its rate uses the body-frame lateral velocity, consistent with the
    error dynamics above.
    """
    dx = state.x - target.x
    dy = state.y - target.y
    e1 = dx * math.sin(-target.psi) + dy * math.cos(-target.psi)
    e2 = wrap_angle(state.psi - target.psi)
    e1_dot = state.y_dot + state.x_dot * e2
    e2_dot = state.psi_dot - target.psi_dot
    return ErrorState(e1=e1, e1_dot=e1_dot, e2=e2, e2_dot=e2_dot)


def lateral_control(
    state,
    traj: PlannedTrajectory | None,
    brackets: list[GainBracket],
    cfg: ControllerConfig,
    params: VehicleParams,
    last_steer: float = 0.0,
) -> tuple[float, dict]:
    """Speed-scheduled LQR steering toward the lookahead pose.

    Returns (steer, info); info carries the error state and bracket index
    for logging. On an empty trajectory the last steer is held and the
    health flag set.
    """
    if traj is None or len(traj) < 2:
        return last_steer, {"healthy": False}
    vx = state.x_dot
    if vx < V_LATERAL_FLOOR:
        return 0.0, {"healthy": True, "low_speed": True}
    d = cfg.d_base + cfg.k_vd * vx
    target = traj.lookahead((state.x, state.y), d, vx)
    e = error_state(state, target)
    b = bracket_for(brackets, vx)
    u = float(-(b.k @ e.as_array()))
    steer = min(max(u, -params.max_steer), params.max_steer)
    info = {
        "healthy": True,
        "error": e,
        "bracket": brackets.index(b),
        "lookahead": d,
        "target": target,
    }
    return steer, info


def smooth(prev: float, new: float, delta: float) -> float:
    """Rate limiter: clamp new into [prev - delta, prev + delta]."""
    if delta <= 0:
        raise ControlError("smoothing delta must be positive")
    return min(max(new, prev - delta), prev + delta)


def longitudinal_control(
    state,
    v_target: float,
    cfg: ControllerConfig,
    prev_throttle: float,
    prev_brake: float,
) -> tuple[float, float]:
    """P + feed-forward speed tracking split into throttle/brake channels.

    Channels are rate-limited and strictly mutually exclusive: the engaging
    channel waits until the opposing one has ramped to zero.
    """
    if v_target < 0:
        raise ControlError("v_target must be non-negative")
    command = cfg.k_p * (v_target - state.x_dot) + cfg.k_ff * v_target
    if command >= 0.0:
        throttle_target, brake_target = command, 0.0
    else:
        throttle_target, brake_target = 0.0, -cfg.alpha_brake * command
    if throttle_target > 0.0 and prev_brake > 0.0:
        throttle, brake = 0.0, smooth(prev_brake, 0.0, cfg.delta_brake)
    elif brake_target > 0.0 and prev_throttle > 0.0:
        throttle, brake = smooth(prev_throttle, 0.0, cfg.delta_throttle), 0.0
    else:
        throttle = smooth(prev_throttle, throttle_target, cfg.delta_throttle)
        brake = smooth(prev_brake, brake_target, cfg.delta_brake)
    return min(max(throttle, 0.0), 1.0), min(max(brake, 0.0), 1.0)


def gear_select(
    v: float,
    table: tuple[tuple[float, float, int], ...],
    prev_gear: int | None = None,
    hysteresis: float = 1.0,
) -> int:
    """Gear of the interval containing v, with a downshift hysteresis band."""
    v = max(v, table[0][0])  # odometry noise can dip just below zero
    chosen = None
    for lo, hi, gear in table:
        if lo <= v < hi:
            chosen = (lo, hi, gear)
            break
    if chosen is None:
        raise ControlError(f"gear table does not cover speed {v}")
    lo, hi, gear = chosen
    if prev_gear is not None and gear < prev_gear:
        # Only downshift once v has dropped a full band below the boundary.
        if v > hi - hysteresis - 1e-12:
            return prev_gear
    return gear


@dataclass
class Controller:
    """100 Hz tracking task; stateless except smoothing memory and gear."""

    params: VehicleParams
    cfg: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self) -> None:
        self.brackets = build_gain_brackets(self.params, self.cfg)
        self.prev_throttle = 0.0
        self.prev_brake = 0.0
        self.gear = 1
        self.last_steer = 0.0
        self.healthy = True

    def tick(self, state, traj: PlannedTrajectory | None, v_target: float | None = None):
        """One control step from an odometry snapshot and the active trajectory.

        Returns (steer, throttle, brake, gear, info).
        """
        steer, info = lateral_control(
            state, traj, self.brackets, self.cfg, self.params, self.last_steer
        )
        self.healthy = info.get("healthy", False)
        self.last_steer = steer
        if v_target is None:
            v_target = traj.speed_at((state.x, state.y)) if traj is not None else 0.0
        throttle, brake = longitudinal_control(
            state, v_target, self.cfg, self.prev_throttle, self.prev_brake
        )
        self.prev_throttle = throttle
        self.prev_brake = brake
        self.gear = gear_select(state.x_dot, self.cfg.gear_table, self.gear,
                                self.cfg.gear_hysteresis)
        info["v_target"] = v_target
        return steer, throttle, brake, self.gear, info
