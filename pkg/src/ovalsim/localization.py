"""Localization: simulated dual-GNSS/IMU/wheel-speed sources, heuristic
measurement gating, and a planar EKF emitting 100 Hz fused odometry.

Every raw measurement first passes the gating heuristics (solution status,
reported variance, staleness, finiteness); rejected measurements never
touch the filter, so deleting them from the stream reproduces the fused
output exactly. Accepted measurements feed a 6-state EKF
(x, y, psi, vx, vy, psi_dot; body-frame velocities). IMU accelerations act
as the prediction control input and the gyro updates the yaw rate. A
rollback buffer replays the event log when measurements arrive out of
timestamp order.

Safe-stop policy: the stack stays operational while at least one unit (or
a cross-unit combination) supplies acceptable pose, velocity, and heading;
it latches a safe stop when that fails on both units simultaneously or the
fused covariance alarm trips.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .track import wrap_angle
from .vehicle import VehicleState


class Unit(str, Enum):
    A = "unit_a"
    B = "unit_b"


class MeasurementKind(str, Enum):
    POSE = "pose"
    VELOCITY = "velocity"
    HEADING = "heading"
    IMU = "imu"
    WHEEL_SPEED = "wheel_speed"


class SolutionStatus(IntEnum):
    NO_SOLUTION = 0
    SINGLE = 1
    RTK_FLOAT = 2
    RTK_FIXED = 3


_KIND_ARITY = {
    MeasurementKind.POSE: 3,  # x, y, z
    MeasurementKind.VELOCITY: 4,  # vx, vy, vz (world), course
    MeasurementKind.HEADING: 1,
    MeasurementKind.IMU: 4,  # ax, ay, az (body), gyro
    MeasurementKind.WHEEL_SPEED: 4,
}

# Nominal source rates (Hz), after the real units' message set.
SOURCE_RATES = {
    MeasurementKind.POSE: 20.0,
    MeasurementKind.VELOCITY: 20.0,
    MeasurementKind.HEADING: 1.0,
    MeasurementKind.IMU: 125.0,
    MeasurementKind.WHEEL_SPEED: 100.0,
}


@dataclass(frozen=True)
class SourceMeasurement:
    source_id: Unit
    kind: MeasurementKind
    timestamp: float
    values: tuple[float, ...]
    variance: tuple[float, ...]
    status: SolutionStatus = SolutionStatus.RTK_FIXED

    def __post_init__(self) -> None:
        if len(self.values) != _KIND_ARITY[self.kind]:
            raise ValueError(f"{self.kind} expects {_KIND_ARITY[self.kind]} values")
        if any(v <= 0 for v in self.variance):
            raise ValueError("variances must be positive")


@dataclass(frozen=True)
class FusedOdometry:
    x: float
    y: float
    psi: float
    x_dot: float  # body frame
    y_dot: float
    psi_dot: float
    covariance: np.ndarray  # 6x6
    stamp: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.x_dot, self.y_dot, self.psi_dot])


@dataclass
class GateConfig:
    min_status: dict = field(default_factory=lambda: {
        MeasurementKind.POSE: SolutionStatus.SINGLE,
        MeasurementKind.VELOCITY: SolutionStatus.SINGLE,
        MeasurementKind.HEADING: SolutionStatus.SINGLE,
        MeasurementKind.IMU: SolutionStatus.SINGLE,
        MeasurementKind.WHEEL_SPEED: SolutionStatus.SINGLE,
    })
    max_variance: dict = field(default_factory=lambda: {
        MeasurementKind.POSE: 1.0,  # m^2
        MeasurementKind.VELOCITY: 1.0,
        MeasurementKind.HEADING: 0.1,
        MeasurementKind.IMU: 5.0,
        MeasurementKind.WHEEL_SPEED: 2.0,
    })
    staleness: float = 0.25  # s
    innovation_gate: float = 6.0  # Mahalanobis units
    rate_watchdog_factor: float = 3.0  # x nominal period
    fused_cov_threshold: float = 4.0  # trace of the position block, m^2
    rollback: float = 0.2  # s


@dataclass(frozen=True)
class GateResult:
    accept: bool
    reason: str = ""


def gate_measurement(m: SourceMeasurement, cfg: GateConfig, now: float) -> GateResult:
    """Classify a measurement as fusable or name the heuristic it failed."""
    if not all(math.isfinite(v) for v in m.values):
        return GateResult(False, "non_finite")
    if m.status < cfg.min_status[m.kind]:
        return GateResult(False, "status")
    if max(m.variance) > cfg.max_variance[m.kind]:
        return GateResult(False, "variance")
    if now - m.timestamp > cfg.staleness:
        return GateResult(False, "stale")
    return GateResult(True)


@dataclass
class _Event:
    timestamp: float
    seq: int
    measurement: SourceMeasurement


class FusionFilter:
    """6-state planar EKF with an out-of-order rollback buffer."""

    # Process noise density (per second) for x, y, psi, vx, vy, psi_dot.
    # Velocity and yaw-rate entries must cover racing slews (accelerations
    # beyond 20 m/s^2, yaw accelerations beyond 10 rad/s^2) between updates,
    # or the innovation gate starves the filter of real motion.
    Q_DIAG = (1e-4, 1e-4, 1e-5, 2.0, 2.0, 5.0)

    def __init__(self, cfg: GateConfig, t0: float = 0.0, state0=None):
        self.cfg = cfg
        x0 = np.zeros(6) if state0 is None else np.asarray(state0, dtype=float)
        P0 = np.diag([25.0, 25.0, 1.0, 25.0, 4.0, 1.0])
        self._base = (t0, x0.copy(), P0.copy(), np.zeros(3))
        self._events: list[_Event] = []
        self._seq = 0
        self._state = x0.copy()
        self._cov = P0.copy()
        self._control = np.zeros(3)  # ax, ay, gyro
        self._time = t0
        self.dropped_innovation = 0
        self._reject_streak = 0

    # -- core EKF steps ------------------------------------------------------

    @classmethod
    def _predict(cls, x, P, u, dt):
        if dt <= 0:
            return x, P
        px, py, psi, vx, vy, r = x
        ax, ay, gyro = u
        c, s = math.cos(psi), math.sin(psi)
        x_new = np.array([
            px + (vx * c - vy * s) * dt,
            py + (vx * s + vy * c) * dt,
            wrap_angle(psi + r * dt),
            vx + (ax + r * vy) * dt,
            vy + (ay - r * vx) * dt,
            r,
        ])
        F = np.eye(6)
        F[0, 2] = (-vx * s - vy * c) * dt
        F[0, 3] = c * dt
        F[0, 4] = -s * dt
        F[1, 2] = (vx * c - vy * s) * dt
        F[1, 3] = s * dt
        F[1, 4] = c * dt
        F[2, 5] = dt
        F[3, 4] = r * dt
        F[3, 5] = vy * dt
        F[4, 3] = -r * dt
        F[4, 5] = -vx * dt
        P_new = F @ P @ F.T + np.diag(cls.Q_DIAG) * dt
        return x_new, 0.5 * (P_new + P_new.T)

    def _measurement_model(self, x, m: SourceMeasurement):
        """Returns (innovation, H, R) for an accepted measurement."""
        kind = m.kind
        if kind == MeasurementKind.POSE:
            H = np.zeros((2, 6)); H[0, 0] = H[1, 1] = 1.0
            z = np.array(m.values[:2])
            nu = z - x[:2]
            R = np.diag(m.variance[:2])
        elif kind == MeasurementKind.VELOCITY:
            psi, vx, vy = x[2], x[3], x[4]
            c, s = math.cos(psi), math.sin(psi)
            h = np.array([vx * c - vy * s, vx * s + vy * c])
            nu = np.array(m.values[:2]) - h
            H = np.zeros((2, 6))
            H[0, 2] = -vx * s - vy * c
            H[0, 3] = c
            H[0, 4] = -s
            H[1, 2] = vx * c - vy * s
            H[1, 3] = s
            H[1, 4] = c
            R = np.diag(m.variance[:2])
        elif kind == MeasurementKind.HEADING:
            H = np.zeros((1, 6)); H[0, 2] = 1.0
            nu = np.array([wrap_angle(m.values[0] - x[2])])
            R = np.array([[m.variance[0]]])
        elif kind == MeasurementKind.WHEEL_SPEED:
            H = np.zeros((1, 6)); H[0, 3] = 1.0
            nu = np.array([float(np.mean(m.values)) - x[3]])
            R = np.array([[float(np.mean(m.variance))]])
        elif kind == MeasurementKind.IMU:
            # Gyro updates the yaw-rate state; accelerations act as control.
            H = np.zeros((1, 6)); H[0, 5] = 1.0
            nu = np.array([m.values[3] - x[5]])
            R = np.array([[m.variance[3] if len(m.variance) > 3 else m.variance[-1]]])
        else:  # pragma: no cover
            raise ValueError(f"unknown measurement kind {kind}")
        return nu, H, R

    def _apply(self, x, P, u, m: SourceMeasurement):
        """Update (x, P, u) with one measurement; returns the new triple."""
        nu, H, R = self._measurement_model(x, m)
        S = H @ P @ H.T + R
        md2 = float(nu @ np.linalg.solve(S, nu))
        if md2 > self.cfg.innovation_gate**2:
            self.dropped_innovation += 1
            self._reject_streak += 1
            if self._reject_streak > 40:
                # Filter walked away from reality; inflate to re-acquire.
                P = P + np.diag([25.0, 25.0, 1.0, 25.0, 4.0, 1.0])
                self._reject_streak = 0
            if m.kind == MeasurementKind.IMU:
                u = np.array(m.values[:2] + (u[2],))
            return x, P, u
        self._reject_streak = 0
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ nu
        x[2] = wrap_angle(x[2])
        ikh = np.eye(6) - K @ H
        P = ikh @ P @ ikh.T + K @ R @ K.T
        if m.kind == MeasurementKind.IMU:
            u = np.array([m.values[0], m.values[1], m.values[3]])
        return x, 0.5 * (P + P.T), u

    # -- event-log machinery ---------------------------------------------------

    def fuse(self, m: SourceMeasurement) -> bool:
        """Insert an accepted measurement; replays history when out of order.

        Returns False when the measurement predates the rollback window.
        """
        t_base = self._base[0]
        if m.timestamp < t_base:
            return False
        ev = _Event(m.timestamp, self._seq, m)
        self._seq += 1
        if not self._events or m.timestamp >= self._events[-1].timestamp:
            self._events.append(ev)
            x, P, u = self._state, self._cov, self._control
            x, P = self._predict(x, P, u, m.timestamp - self._time)
            x, P, u = self._apply(x, P, u, m)
            self._state, self._cov, self._control = x, P, u
            self._time = max(self._time, m.timestamp)
        else:
            stamps = [e.timestamp for e in self._events]
            idx = bisect.bisect_right(stamps, m.timestamp)
            self._events.insert(idx, ev)
            self._replay()
        self._advance_base()
        return True

    def _replay(self) -> None:
        t, x, P, u = self._base
        x, P, u = x.copy(), P.copy(), u.copy()
        for ev in self._events:
            x, P = self._predict(x, P, u, ev.timestamp - t)
            t = max(t, ev.timestamp)
            x, P, u = self._apply(x, P, u, ev.measurement)
        self._state, self._cov, self._control, self._time = x, P, u, t

    def _advance_base(self) -> None:
        horizon = self._time - self.cfg.rollback
        t, x, P, u = self._base
        x, P, u = x.copy(), P.copy(), u.copy()
        moved = False
        while self._events and self._events[0].timestamp <= horizon:
            ev = self._events.pop(0)
            x, P = self._predict(x, P, u, ev.timestamp - t)
            t = max(t, ev.timestamp)
            x, P, u = self._apply(x, P, u, ev.measurement)
            moved = True
        if moved:
            self._base = (t, x, P, u)

    def state_at(self, t: float) -> FusedOdometry:
        """Predict-to-now query; does not mutate the event chain."""
        x, P = self._predict(self._state, self._cov, self._control,
                             max(t - self._time, 0.0))
        return FusedOdometry(
            x=float(x[0]), y=float(x[1]), psi=float(x[2]), x_dot=float(x[3]),
            y_dot=float(x[4]), psi_dot=float(x[5]), covariance=P, stamp=t,
        )


def ekf_predict(odom: FusedOdometry, imu: SourceMeasurement, dt: float,
                cfg: GateConfig | None = None) -> FusedOdometry:
    """Standalone prediction step (exposed for testing the motion model)."""
    if not 0.0 <= dt <= 0.05:
        raise ValueError("predict dt must lie in [0, 0.05]")
    u = np.array([imu.values[0], imu.values[1], imu.values[3]])
    x, P = FusionFilter._predict(odom.as_array(), odom.covariance, u, dt)
    return FusedOdometry(*x, covariance=P, stamp=odom.stamp + dt)


# -- health ------------------------------------------------------------------


@dataclass
class SourceHealth:
    last_seen: float = -math.inf
    last_accepted: float = -math.inf
    last_reject: str = ""


@dataclass
class HealthFlags:
    sources: dict = field(default_factory=dict)  # (Unit, kind) -> SourceHealth
    fused_cov_alarm: bool = False
    safe_stop_required: bool = False
    safe_stop_reason: str = ""

    def source(self, unit: Unit, kind: MeasurementKind) -> SourceHealth:
        return self.sources.setdefault((unit, kind), SourceHealth())

    def note(self, m: SourceMeasurement, result: GateResult) -> None:
        h = self.source(m.source_id, m.kind)
        h.last_seen = max(h.last_seen, m.timestamp)
        if result.accept:
            h.last_accepted = max(h.last_accepted, m.timestamp)
        else:
            h.last_reject = result.reason

    def reset_latch(self) -> None:
        self.safe_stop_required = False
        self.safe_stop_reason = ""

    def source_ok(self, unit: Unit, kind: MeasurementKind, now: float,
                  cfg: GateConfig) -> bool:
        h = self.sources.get((unit, kind))
        if h is None:
            return False
        window = cfg.rate_watchdog_factor / SOURCE_RATES[kind]
        return now - h.last_accepted <= window


def evaluate_health(flags: HealthFlags, now: float, fused_cov: np.ndarray,
                    cfg: GateConfig) -> HealthFlags:
    """Latch a safe stop when no unit combination covers pose+velocity+heading
    or the fused covariance alarm trips. The latch survives until reset."""
    flags.fused_cov_alarm = float(np.trace(fused_cov[:2, :2])) > cfg.fused_cov_threshold
    needed = (MeasurementKind.POSE, MeasurementKind.VELOCITY, MeasurementKind.HEADING)
    covered = all(
        any(flags.source_ok(u, k, now, cfg) for u in (Unit.A, Unit.B)) for k in needed
    )
    if flags.fused_cov_alarm and not flags.safe_stop_required:
        flags.safe_stop_required = True
        flags.safe_stop_reason = "fused_covariance"
    if not covered and not flags.safe_stop_required:
        flags.safe_stop_required = True
        flags.safe_stop_reason = "both_units_degraded"
    return flags


# -- GNSS / sensor simulation --------------------------------------------------


@dataclass(frozen=True)
class DegradationWindow:
    """Scripted fault: scale reported+actual noise, drop status, or silence."""

    unit: Unit
    t_start: float
    t_end: float
    kind: MeasurementKind | None = None  # None applies to all kinds
    variance_scale: float = 1.0
    status: SolutionStatus | None = None
    silence: bool = False

    def applies(self, unit: Unit, kind: MeasurementKind, t: float) -> bool:
        if unit != self.unit or not (self.t_start <= t < self.t_end):
            return False
        return self.kind is None or self.kind == kind


@dataclass
class GnssNoise:
    pose_sigma: float = 0.03  # m
    velocity_sigma: float = 0.05  # m/s
    heading_sigma: float = 0.01  # rad
    accel_sigma: float = 0.05  # m/s^2
    gyro_sigma: float = 0.005  # rad/s
    wheel_sigma: float = 0.1  # m/s


class GnssSimulator:
    """Emits the measurement-source table rows at their nominal rates with
    configured noise and scripted degradations. Deterministic per seed."""

    def __init__(self, noise: GnssNoise, degradations: list[DegradationWindow],
                 seed: int):
        self.noise = noise
        self.degradations = list(degradations)
        self.rng = np.random.default_rng(seed)

    def _window(self, unit: Unit, kind: MeasurementKind, t: float):
        scale, status, silence = 1.0, SolutionStatus.RTK_FIXED, False
        for w in self.degradations:
            if w.applies(unit, kind, t):
                scale *= w.variance_scale
                if w.status is not None:
                    status = w.status
                silence = silence or w.silence
        return scale, status, silence

    def emit(self, unit: Unit, kind: MeasurementKind, t: float,
             truth: VehicleState, accel: tuple[float, float] | None = None
             ) -> SourceMeasurement | None:
        """One measurement of `kind` from `unit` at sim time t, or None if
        the unit is scripted silent. accel = true body (ax, ay) for IMU."""
        scale, status, silence = self._window(unit, kind, t)
        if silence:
            return None
        n = self.noise
        sd = math.sqrt(scale)
        rng = self.rng
        if kind == MeasurementKind.POSE:
            var = (n.pose_sigma**2) * scale
            values = (
                truth.x + rng.normal(0.0, n.pose_sigma * sd),
                truth.y + rng.normal(0.0, n.pose_sigma * sd),
                0.0 + rng.normal(0.0, n.pose_sigma * sd),
            )
            variance = (var, var, var)
        elif kind == MeasurementKind.VELOCITY:
            c, s = math.cos(truth.psi), math.sin(truth.psi)
            vx_w = truth.x_dot * c - truth.y_dot * s
            vy_w = truth.x_dot * s + truth.y_dot * c
            var = (n.velocity_sigma**2) * scale
            values = (
                vx_w + rng.normal(0.0, n.velocity_sigma * sd),
                vy_w + rng.normal(0.0, n.velocity_sigma * sd),
                0.0,
                wrap_angle(math.atan2(vy_w, vx_w) + rng.normal(0.0, n.heading_sigma * sd)),
            )
            variance = (var, var, var, (n.heading_sigma**2) * scale)
        elif kind == MeasurementKind.HEADING:
            values = (wrap_angle(truth.psi + rng.normal(0.0, n.heading_sigma * sd)),)
            variance = ((n.heading_sigma**2) * scale,)
        elif kind == MeasurementKind.IMU:
            ax, ay = accel if accel is not None else (0.0, 0.0)
            var_a = (n.accel_sigma**2) * scale
            values = (
                ax + rng.normal(0.0, n.accel_sigma * sd),
                ay + rng.normal(0.0, n.accel_sigma * sd),
                0.0,
                truth.psi_dot + rng.normal(0.0, n.gyro_sigma * sd),
            )
            variance = (var_a, var_a, var_a, (n.gyro_sigma**2) * scale)
        elif kind == MeasurementKind.WHEEL_SPEED:
            var = (n.wheel_sigma**2) * scale
            values = tuple(
                w + rng.normal(0.0, n.wheel_sigma * sd) for w in truth.wheel_speeds
            )
            variance = (var, var, var, var)
        else:  # pragma: no cover
            raise ValueError(kind)
        return SourceMeasurement(
            source_id=unit, kind=kind, timestamp=t, values=values,
            variance=variance, status=status,
        )


class LocalizationStack:
    """Gate + fuse + health for one car; emits odometry at the caller's rate."""

    def __init__(self, cfg: GateConfig, t0: float = 0.0, state0=None):
        self.cfg = cfg
        self.filter = FusionFilter(cfg, t0, state0)
        self.health = HealthFlags()
        self.rejects: list[tuple[float, Unit, MeasurementKind, str]] = []

    def feed(self, m: SourceMeasurement, now: float) -> GateResult:
        result = gate_measurement(m, self.cfg, now)
        self.health.note(m, result)
        if result.accept:
            self.filter.fuse(m)
        else:
            self.rejects.append((now, m.source_id, m.kind, result.reason))
        return result

    def emit(self, now: float) -> FusedOdometry:
        odom = self.filter.state_at(now)
        evaluate_health(self.health, now, odom.covariance, self.cfg)
        return odom
