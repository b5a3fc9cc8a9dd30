"""Detection simulator for tracker development: LiDAR-like and camera-like
measurements of the opponent with configurable noise, false positives,
dropout, latency, and update period.

Camera detections are synthesized through the pinhole model: the true depth
is converted to an apparent pixel height, Gaussian pixel noise is added,
and the noisy height is inverted back to depth. Range error therefore grows
with distance without modeling any images. LiDAR detections carry pose;
camera detections carry position only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .vehicle import VehicleState

_COV_FLOOR = 0.02  # m, keeps reported covariances positive definite


class SensorSource(str, Enum):
    LIDAR = "lidar"
    CAMERA = "camera"


class PerceptionError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    timestamp: float  # sensing instant, sim seconds
    source: SensorSource
    x: float
    y: float
    psi: float | None  # LiDAR only; cameras cannot estimate orientation
    confidence: float
    covariance: np.ndarray  # 2x2 position covariance, m^2
    is_false_positive: bool = False  # ground-truth label for sim analysis


@dataclass(frozen=True)
class PerceptionConfig:
    lidar_period: float = 0.05
    camera_period: float = 0.025
    lidar_range: float = 100.0
    camera_range: float = 200.0
    lidar_position_sigma: float = 0.15  # m
    lidar_heading_sigma: float = 0.05  # rad
    camera_pixel_sigma: float = 2.0  # px, applied to apparent height
    camera_lateral_sigma: float = 0.3  # m, transverse to the line of sight
    focal_length_px: float = 2000.0
    known_vehicle_height: float = 1.2  # m
    false_positive_rate: float = 0.0  # per frame
    dropout_rate: float = 0.0  # per frame
    lidar_latency: float = 0.0  # s, sensing-to-delivery
    camera_latency: float = 0.0
    fp_disc_radius: float = 80.0  # m around the ego, may leave track bounds
    true_confidence: tuple[float, float] = (0.6, 1.0)
    fp_confidence: tuple[float, float] = (0.2, 1.0)
    blind_spot_half_angle: float = 0.0  # rad each side of dead astern; 0 = off

    def __post_init__(self) -> None:
        if self.lidar_period <= 0 or self.camera_period <= 0:
            raise PerceptionError("sensor periods must be positive")
        for rate in (self.false_positive_rate, self.dropout_rate):
            if not 0.0 <= rate <= 1.0:
                raise PerceptionError("rates must lie in [0, 1]")

    def range_of(self, source: SensorSource) -> float:
        return self.lidar_range if source == SensorSource.LIDAR else self.camera_range

    def latency_of(self, source: SensorSource) -> float:
        return self.lidar_latency if source == SensorSource.LIDAR else self.camera_latency

    def period_of(self, source: SensorSource) -> float:
        return self.lidar_period if source == SensorSource.LIDAR else self.camera_period


def camera_depth(height_px: float, f: float, height_known: float) -> float:
    """Pinhole depth from apparent height: depth = height_known * f / height_px."""
    if height_px <= 0:
        raise PerceptionError(f"pixel height must be positive, got {height_px}")
    if f <= 0:
        raise PerceptionError("focal length must be positive")
    return height_known * f / height_px


def camera_pixel_height(depth: float, f: float, height_known: float) -> float:
    """Apparent pixel height at a given depth; inverse of camera_depth."""
    if depth <= 0:
        raise PerceptionError(f"depth must be positive, got {depth}")
    return height_known * f / depth


def _in_blind_spot(ego: VehicleState, bearing_world: float, cfg: PerceptionConfig) -> bool:
    if cfg.blind_spot_half_angle <= 0.0:
        return False
    rear = ego.psi + math.pi
    diff = math.remainder(bearing_world - rear, 2.0 * math.pi)
    return abs(diff) <= cfg.blind_spot_half_angle


def simulate_frame(
    ego: VehicleState,
    opponent: VehicleState | None,
    cfg: PerceptionConfig,
    source: SensorSource,
    t: float,
    rng: np.random.Generator,
) -> list[Detection]:
    """One sensor frame at sim time t. Deterministic given the rng state.

    Timestamps are the sensing instant; the caller is responsible for
    delaying delivery by the configured latency.
    """
    out: list[Detection] = []
    if opponent is not None:
        dx, dy = opponent.x - ego.x, opponent.y - ego.y
        dist = math.hypot(dx, dy)
        bearing = math.atan2(dy, dx)
        visible = (
            0.0 < dist <= cfg.range_of(source)
            and not _in_blind_spot(ego, bearing, cfg)
        )
        if visible and (cfg.dropout_rate == 0.0 or rng.uniform() >= cfg.dropout_rate):
            out.append(_true_detection(ego, opponent, dist, bearing, cfg, source, t, rng))
    if cfg.false_positive_rate > 0.0 and rng.uniform() < cfg.false_positive_rate:
        out.append(_false_positive(ego, cfg, source, t, rng))
    return out


def _true_detection(ego, opponent, dist, bearing, cfg, source, t, rng) -> Detection:
    if source == SensorSource.LIDAR:
        sigma = cfg.lidar_position_sigma
        x = opponent.x + rng.normal(0.0, sigma) if sigma > 0 else opponent.x
        y = opponent.y + rng.normal(0.0, sigma) if sigma > 0 else opponent.y
        psi = opponent.psi + (rng.normal(0.0, cfg.lidar_heading_sigma)
                              if cfg.lidar_heading_sigma > 0 else 0.0)
        eff = max(sigma, _COV_FLOOR)
        cov = np.diag([eff * eff, eff * eff])
    else:
        px = camera_pixel_height(dist, cfg.focal_length_px, cfg.known_vehicle_height)
        if cfg.camera_pixel_sigma > 0:
            px = max(px + rng.normal(0.0, cfg.camera_pixel_sigma), 0.5)
        depth = camera_depth(px, cfg.focal_length_px, cfg.known_vehicle_height)
        lateral = rng.normal(0.0, cfg.camera_lateral_sigma) if cfg.camera_lateral_sigma > 0 else 0.0
        ca, sa = math.cos(bearing), math.sin(bearing)
        x = ego.x + depth * ca - lateral * sa
        y = ego.y + depth * sa + lateral * ca
        psi = None
        # First-order range variance: sigma_r = depth^2 * sigma_px / (H * f).
        sigma_r = max(
            dist * dist * cfg.camera_pixel_sigma
            / (cfg.known_vehicle_height * cfg.focal_length_px),
            _COV_FLOOR,
        )
        sigma_t = max(cfg.camera_lateral_sigma, _COV_FLOOR)
        rot = np.array([[ca, -sa], [sa, ca]])
        cov = rot @ np.diag([sigma_r**2, sigma_t**2]) @ rot.T
    lo, hi = cfg.true_confidence
    return Detection(
        timestamp=t, source=source, x=float(x), y=float(y), psi=psi,
        confidence=float(rng.uniform(lo, hi)), covariance=cov,
    )


def _false_positive(ego, cfg, source, t, rng) -> Detection:
    radius = cfg.fp_disc_radius * math.sqrt(rng.uniform())
    angle = rng.uniform(0.0, 2.0 * math.pi)
    x = ego.x + radius * math.cos(angle)
    y = ego.y + radius * math.sin(angle)
    psi = rng.uniform(-math.pi, math.pi) if source == SensorSource.LIDAR else None
    sigma = max(
        cfg.lidar_position_sigma if source == SensorSource.LIDAR else 1.0, _COV_FLOOR
    )
    lo, hi = cfg.fp_confidence
    return Detection(
        timestamp=t, source=source, x=float(x), y=float(y), psi=psi,
        confidence=float(rng.uniform(lo, hi)),
        covariance=np.diag([sigma * sigma, sigma * sigma]),
        is_false_positive=True,
    )
