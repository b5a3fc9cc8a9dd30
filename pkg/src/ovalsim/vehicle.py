"""Ground-truth plant: dynamic bicycle lateral model plus point-mass
longitudinal model, integrated with RK4 at a fixed step.

The lateral states (body lateral velocity, yaw rate) follow the four-state
dynamic bicycle model with the body longitudinal speed frozen over each
step. Longitudinal acceleration is drive force minus brake and quadratic
drag. The combined acceleration is saturated radially on a friction circle
of radius mu_limit; saturation raises a traction_lost flag and drives a
rear-wheel slip signature so spin-out onset is observable from wheel
speeds, mirroring how it shows up in real telemetry.

Default parameter values are placeholders (the real car's are not public);
everything is configurable and tests depend only on qualitative behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

_V_LATERAL_FLOOR = 0.5  # m/s; below this the bicycle model is singular
_LATERAL_DECAY_TAU = 0.2  # s; low-speed lateral state bleed-off
_REAR_SLIP_GAIN = 0.75  # wheel-speed slip per unit friction-circle excess


class PlantError(ValueError):
    """Raised on non-finite or out-of-contract step inputs."""


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 750.0  # kg
    inertia_z: float = 1000.0  # kg m^2
    c_alpha_f: float = 80000.0  # N/rad per front tire (enters as 2*C)
    # Rear stiffness above front keeps the understeer gradient positive;
    # equal stiffnesses with this weight split go open-loop unstable ~60 m/s.
    c_alpha_r: float = 120000.0  # N/rad per rear tire
    l_f: float = 1.7  # m, CoG to front axle
    l_r: float = 1.2  # m, CoG to rear axle
    drag_coeff: float = 1.6  # N/(m/s)^2
    max_drive_force: float = 15000.0  # N, first-gear cap
    max_brake_force: float = 22000.0  # N
    max_steer: float = 0.25  # rad
    mu_limit: float = 25.0  # m/s^2, friction-circle radius
    width: float = 1.9  # m, for separation checks
    length: float = 4.9  # m
    # Drive-force cap per gear as a fraction of max_drive_force.
    gear_force_scale: tuple[float, ...] = (1.0, 0.85, 0.74, 0.66, 0.60, 0.56)

    def __post_init__(self) -> None:
        positive = (
            self.mass, self.inertia_z, self.c_alpha_f, self.c_alpha_r,
            self.l_f, self.l_r, self.drag_coeff, self.max_drive_force,
            self.max_brake_force, self.max_steer, self.mu_limit,
        )
        if any(v <= 0 for v in positive):
            raise PlantError("vehicle parameters must be strictly positive")
        if self.l_f + self.l_r >= 5.0:
            raise PlantError("wheelbase must be under 5 m")
        if self.max_steer > 0.5:
            raise PlantError("max_steer must be at most 0.5 rad")

    def drive_force_cap(self, gear: int) -> float:
        idx = min(max(gear, 1), len(self.gear_force_scale)) - 1
        return self.max_drive_force * self.gear_force_scale[idx]


@dataclass(frozen=True)
class VehicleState:
    """Pose and body-frame velocities in the LTP frame, plus wheel plumbing."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    x_dot: float = 0.0  # body longitudinal speed V_x >= 0
    y_dot: float = 0.0  # body lateral speed
    psi_dot: float = 0.0
    gear: int = 1
    wheel_speeds: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    traction_lost: bool = False
    a_lat: float = 0.0  # recorded body lateral accel (post friction circle)
    a_long: float = 0.0  # recorded longitudinal accel

    def is_finite(self) -> bool:
        vals = (self.x, self.y, self.psi, self.x_dot, self.y_dot, self.psi_dot,
                *self.wheel_speeds)
        return all(math.isfinite(v) for v in vals)

    @property
    def speed(self) -> float:
        return math.hypot(self.x_dot, self.y_dot)


@dataclass(frozen=True)
class ActuationCommand:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0
    gear: int = 1

    def __post_init__(self) -> None:
        if self.throttle < 0 or self.brake < 0:
            raise PlantError("throttle/brake must be non-negative")
        if self.throttle > 0 and self.brake > 0:
            raise PlantError("throttle and brake are mutually exclusive")


def _lateral_derivatives(vy: float, r: float, vx: float, steer: float,
                         p: VehicleParams, scale: float) -> tuple[float, float]:
    """(dvy/dt, dr/dt) of the dynamic bicycle model at frozen vx."""
    cf, cr = 2.0 * p.c_alpha_f, 2.0 * p.c_alpha_r
    m, iz, lf, lr = p.mass, p.inertia_z, p.l_f, p.l_r
    dvy = (-(cf + cr) / (m * vx) * vy
           - (vx + (cf * lf - cr * lr) / (m * vx)) * r
           + (cf / m) * steer)
    dr = (-(cf * lf - cr * lr) / (iz * vx) * vy
          - (cf * lf * lf + cr * lr * lr) / (iz * vx) * r
          + (cf * lf / iz) * steer)
    return scale * dvy, scale * dr


def step(state: VehicleState, cmd: ActuationCommand, params: VehicleParams,
         dt: float) -> VehicleState:
    """Advance one plant step of dt seconds (dt in (0, 0.02])."""
    if not (0.0 < dt <= 0.02):
        raise PlantError(f"plant step {dt} outside (0, 0.02] s")
    if not state.is_finite():
        raise PlantError("non-finite vehicle state")

    steer = min(max(cmd.steer, -params.max_steer), params.max_steer)
    vx0, vy0, r0 = state.x_dot, state.y_dot, state.psi_dot
    low_speed = vx0 < _V_LATERAL_FLOOR

    drive = cmd.throttle * params.drive_force_cap(cmd.gear)
    brake = cmd.brake * params.max_brake_force if vx0 > 0 else 0.0
    drag = params.drag_coeff * vx0 * vx0
    a_long_nom = (drive - brake - drag) / params.mass

    if low_speed:
        a_lat_nom = 0.0
    else:
        dvy_nom, _ = _lateral_derivatives(vy0, r0, vx0, steer, params, 1.0)
        a_lat_nom = dvy_nom + vx0 * r0

    combined = math.hypot(a_lat_nom, a_long_nom)
    traction_lost = combined > params.mu_limit
    scale = params.mu_limit / combined if traction_lost else 1.0
    a_long = scale * a_long_nom
    a_lat = scale * a_lat_nom
    if vx0 + a_long * dt < 0.0:  # brake/drag cannot reverse the car
        a_long = -vx0 / dt

    def deriv(s):
        x, y, psi, vx, vy, r = s
        if low_speed:
            dvy = -vy / _LATERAL_DECAY_TAU
            dr = -r / _LATERAL_DECAY_TAU
        else:
            dvy, dr = _lateral_derivatives(vy, r, vx0, steer, params, scale)
        return (
            vx * math.cos(psi) - vy * math.sin(psi),
            vx * math.sin(psi) + vy * math.cos(psi),
            r,
            a_long,
            dvy,
            dr,
        )

    s0 = (state.x, state.y, state.psi, vx0, vy0, r0)
    k1 = deriv(s0)
    k2 = deriv(tuple(s + 0.5 * dt * d for s, d in zip(s0, k1)))
    k3 = deriv(tuple(s + 0.5 * dt * d for s, d in zip(s0, k2)))
    k4 = deriv(tuple(s + dt * d for s, d in zip(s0, k3)))
    x, y, psi, vx, vy, r = (
        s + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        for s, a, b, c, d in zip(s0, k1, k2, k3, k4)
    )
    vx = max(vx, 0.0)

    slip = 0.0
    if traction_lost:
        excess = combined / params.mu_limit - 1.0
        slip = min(_REAR_SLIP_GAIN * excess, 0.6)
    if drive >= brake:
        rear = vx * (1.0 + slip)
    else:
        rear = vx * (1.0 - slip)
    wheels = (vx, vx, rear, rear)

    return replace(
        state,
        x=x, y=y, psi=psi, x_dot=vx, y_dot=vy, psi_dot=r,
        gear=cmd.gear, wheel_speeds=wheels, traction_lost=traction_lost,
        a_lat=a_lat, a_long=a_long,
    )


def detect_spinout(state: VehicleState, params: VehicleParams) -> bool:
    """Rear wheels running >15% over the fronts while traction is saturated."""
    front = 0.5 * (state.wheel_speeds[0] + state.wheel_speeds[1])
    rear = 0.5 * (state.wheel_speeds[2] + state.wheel_speeds[3])
    if front <= 0.0:
        return False
    return state.traction_lost and rear > 1.15 * front
