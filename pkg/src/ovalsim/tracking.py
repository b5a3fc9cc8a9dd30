"""Opponent tracking: filtering, greedy Mahalanobis association, Kalman
fusion of asynchronous multi-modal detections, and track lifecycle.

The motion model is a planar constant-velocity 5-state (x, y, vx, vy, psi)
Kalman filter with random-walk heading. Position updates come from either
modality; heading is updated only from LiDAR detections. Detections pass
through a timestamp-sorted reordering buffer before fusion so late-arriving
frames are processed in sensing order. A track is born Tentative on its
first detection, Confirmed on the second consecutive-sweep association,
and killed after five silent seconds; only Confirmed tracks are published.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .perception import Detection
from .track import TrackBounds, in_track_bounds, wrap_angle


class TrackStatus(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"


class AssociationError(RuntimeError):
    """Raised when an innovation covariance is singular."""


@dataclass(frozen=True)
class TrackerConfig:
    confidence_threshold: float = 0.5
    association_gate: float = 5.0  # Mahalanobis units
    birth_hits: int = 2
    death_timeout: float = 5.0  # s
    sensor_period: float = 0.05  # s; tentatives must re-associate within 2x
    reorder_buffer: float = 0.1  # s
    process_accel_sigma: float = 12.0  # m/s^2 white accel driving CV model
    process_psi_sigma: float = 0.8  # rad/sqrt(s) heading random walk
    initial_speed_sigma: float = 25.0  # m/s prior on unobserved velocity
    initial_psi_sigma: float = 1.5  # rad prior when birth det has no heading
    psi_measurement_sigma: float = 0.08  # rad, LiDAR heading R

    def __post_init__(self) -> None:
        if self.birth_hits < 1:
            raise ValueError("birth_hits must be at least 1")
        if self.death_timeout <= 0:
            raise ValueError("death_timeout must be positive")


@dataclass(frozen=True)
class TrackedAgent:
    """Fused belief of one opponent. State is (x, y, vx, vy, psi)."""

    id: int
    state: np.ndarray  # (5,)
    covariance: np.ndarray  # (5, 5) SPD
    status: TrackStatus
    consecutive_hits: int
    last_update: float  # sim s of last associated detection

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    @property
    def speed(self) -> float:
        return float(math.hypot(self.state[2], self.state[3]))


_H_POS = np.zeros((2, 5))
_H_POS[0, 0] = _H_POS[1, 1] = 1.0


def filter_detections(
    dets: list[Detection], cfg: TrackerConfig, bounds: TrackBounds
) -> list[Detection]:
    """Keep detections meeting the confidence threshold and inside bounds."""
    return [
        d
        for d in dets
        if d.confidence >= cfg.confidence_threshold
        and in_track_bounds(bounds, (d.x, d.y))
    ]


def mahalanobis(det: Detection, track: TrackedAgent) -> float:
    """Position-innovation Mahalanobis distance with S = H P H^T + R."""
    nu = np.array([det.x, det.y]) - track.position
    S = track.covariance[:2, :2] + det.covariance
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise AssociationError(f"singular innovation covariance: {S!r}") from exc
    z = np.linalg.solve(L, nu)
    return float(math.sqrt(z @ z))


def associate(
    dets: list[Detection], tracks: list[TrackedAgent], cfg: TrackerConfig
) -> tuple[list[tuple[Detection, TrackedAgent]], list[Detection], list[TrackedAgent]]:
    """Greedy matching: globally smallest gated distance first."""
    pairs = []
    for di, det in enumerate(dets):
        for ti, trk in enumerate(tracks):
            d = mahalanobis(det, trk)
            if d <= cfg.association_gate:
                pairs.append((d, di, ti))
    pairs.sort(key=lambda p: (p[0], p[1], p[2]))
    used_d: set[int] = set()
    used_t: set[int] = set()
    matches = []
    for _, di, ti in pairs:
        if di in used_d or ti in used_t:
            continue
        used_d.add(di)
        used_t.add(ti)
        matches.append((dets[di], tracks[ti]))
    unmatched_dets = [d for i, d in enumerate(dets) if i not in used_d]
    unmatched_tracks = [t for i, t in enumerate(tracks) if i not in used_t]
    return matches, unmatched_dets, unmatched_tracks


def _transition(dt: float, cfg: TrackerConfig) -> tuple[np.ndarray, np.ndarray]:
    F = np.eye(5)
    F[0, 2] = F[1, 3] = dt
    qa = cfg.process_accel_sigma**2
    q_pos = qa * dt**4 / 4.0
    q_cross = qa * dt**3 / 2.0
    q_vel = qa * dt**2
    Q = np.zeros((5, 5))
    for pos, vel in ((0, 2), (1, 3)):
        Q[pos, pos] = q_pos
        Q[pos, vel] = Q[vel, pos] = q_cross
        Q[vel, vel] = q_vel
    Q[4, 4] = cfg.process_psi_sigma**2 * dt
    return F, Q


def predict_tracks(
    tracks: list[TrackedAgent], dt: float, cfg: TrackerConfig
) -> list[TrackedAgent]:
    """Constant-velocity propagation; dt = 0 is the identity."""
    if dt < 0:
        raise ValueError("predict dt must be non-negative")
    if dt == 0.0:
        return list(tracks)
    F, Q = _transition(dt, cfg)
    out = []
    for t in tracks:
        state = F @ t.state
        cov = F @ t.covariance @ F.T + Q
        out.append(replace(t, state=state, covariance=0.5 * (cov + cov.T)))
    return out


def update_track(track: TrackedAgent, det: Detection, cfg: TrackerConfig) -> TrackedAgent:
    """Kalman update. Heading is touched only by LiDAR detections."""
    if det.psi is not None:
        H = np.zeros((3, 5))
        H[0, 0] = H[1, 1] = H[2, 4] = 1.0
        R = np.zeros((3, 3))
        R[:2, :2] = det.covariance
        R[2, 2] = cfg.psi_measurement_sigma**2
        nu = np.array([
            det.x - track.state[0],
            det.y - track.state[1],
            wrap_angle(det.psi - track.state[4]),
        ])
    else:
        H = _H_POS
        R = det.covariance
        nu = np.array([det.x - track.state[0], det.y - track.state[1]])
    P = track.covariance
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    state = track.state + K @ nu
    state[4] = wrap_angle(state[4])
    ikh = np.eye(5) - K @ H
    cov = ikh @ P @ ikh.T + K @ R @ K.T  # Joseph form keeps SPD
    hits = track.consecutive_hits + 1
    status = TrackStatus.CONFIRMED if hits >= cfg.birth_hits else track.status
    return replace(
        track,
        state=state,
        covariance=0.5 * (cov + cov.T),
        consecutive_hits=hits,
        status=status,
        last_update=det.timestamp,
    )


def birth_track(det: Detection, track_id: int, cfg: TrackerConfig) -> TrackedAgent:
    psi = det.psi if det.psi is not None else 0.0
    psi_var = (
        cfg.psi_measurement_sigma**2 if det.psi is not None else cfg.initial_psi_sigma**2
    )
    cov = np.zeros((5, 5))
    cov[:2, :2] = det.covariance
    cov[2, 2] = cov[3, 3] = cfg.initial_speed_sigma**2
    cov[4, 4] = psi_var
    state = np.array([det.x, det.y, 0.0, 0.0, psi])
    return TrackedAgent(
        id=track_id,
        state=state,
        covariance=cov,
        status=TrackStatus.TENTATIVE,
        consecutive_hits=1,
        last_update=det.timestamp,
    )


def lifecycle(
    tracks: list[TrackedAgent],
    unmatched_dets: list[Detection],
    now: float,
    cfg: TrackerConfig,
    next_id: int,
) -> tuple[list[TrackedAgent], int]:
    """Spawn tentatives from unmatched detections, drop dead tracks.

    Tentatives that miss re-association for two sensor periods are
    discarded ("successive sweeps" read strictly); any track silent longer
    than death_timeout is killed.
    """
    alive = []
    for t in tracks:
        silent = now - t.last_update
        if silent > cfg.death_timeout:
            continue
        if t.status == TrackStatus.TENTATIVE and silent > 2.0 * cfg.sensor_period:
            continue
        alive.append(t)
    for det in unmatched_dets:
        alive.append(birth_track(det, next_id, cfg))
        next_id += 1
    return alive, next_id


class Tracker:
    """Buffered fusion pipeline: ingest -> reorder -> associate -> update."""

    def __init__(self, cfg: TrackerConfig, bounds: TrackBounds):
        self.cfg = cfg
        self.bounds = bounds
        self.tracks: list[TrackedAgent] = []
        self._buffer: list[tuple[float, int, Detection]] = []
        self._seq = 0
        self._next_id = 1
        self._filter_time: float | None = None

    def ingest(self, dets: list[Detection]) -> None:
        for det in filter_detections(dets, self.cfg, self.bounds):
            self._buffer.append((det.timestamp, self._seq, det))
            self._seq += 1

    def process(self, now: float) -> list[TrackedAgent]:
        """Fuse everything older than the reordering horizon; return confirmed."""
        horizon = now - self.cfg.reorder_buffer
        self._buffer.sort(key=lambda e: (e[0], e[1]))
        due: list[Detection] = []
        while self._buffer and self._buffer[0][0] <= horizon:
            due.append(self._buffer.pop(0)[2])
        for frame_t, frame in _group_by_time(due):
            self._step_frame(frame_t, frame)
        # Silence-based deaths apply even when no detections arrive at all.
        self.tracks, self._next_id = lifecycle(self.tracks, [], max(horizon, 0.0),
                                               self.cfg, self._next_id)
        return self.confirmed()

    def confirmed(self) -> list[TrackedAgent]:
        return [t for t in self.tracks if t.status == TrackStatus.CONFIRMED]

    def _step_frame(self, t: float, frame: list[Detection]) -> None:
        if self._filter_time is None:
            self._filter_time = t
        dt = max(t - self._filter_time, 0.0)
        # Prune before associating: an overdue tentative or dead track must
        # not compete for this frame's detections ("successive sweeps" is
        # read strictly).
        self.tracks, self._next_id = lifecycle(self.tracks, [], t, self.cfg,
                                               self._next_id)
        self.tracks = predict_tracks(self.tracks, dt, self.cfg)
        self._filter_time = max(t, self._filter_time)
        matches, unmatched_dets, unmatched_tracks = associate(frame, self.tracks, self.cfg)
        updated = [update_track(trk, det, self.cfg) for det, trk in matches]
        self.tracks, self._next_id = lifecycle(
            updated + unmatched_tracks, unmatched_dets, t, self.cfg, self._next_id
        )


def _group_by_time(dets: list[Detection]):
    frames: list[tuple[float, list[Detection]]] = []
    for det in dets:
        if frames and abs(frames[-1][0] - det.timestamp) < 1e-9:
            frames[-1][1].append(det)
        else:
            frames.append((det.timestamp, [det]))
    return frames
