"""Oval track geometry: closed racelines, station queries, and bounds.

A raceline is an arc-length-sampled closed curve fitted through manually
chosen waypoints with periodic quintic splines (chord-length parameterized,
C4 smooth, so curvature and its first two derivatives are continuous).
Lanes are built by splitting the track width in half: lane centerlines sit
at +/- width/4 from the track centerline, boundaries at +/- width/2.

All poses live in the planar Local Tangent Plane (LTP) frame. Objects are
immutable after construction and safe to share across consumers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.interpolate import make_interp_spline
from shapely.geometry import LinearRing, LineString, Point, Polygon

MIN_WAYPOINT_SEPARATION = 0.1  # m


class LaneId(str, Enum):
    INNER = "inner"
    OUTER = "outer"
    MERGE = "merge"
    CENTER = "center"


class TrackGeometryError(ValueError):
    """Raised for invalid waypoint sets or degenerate geometry."""


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float


@dataclass(frozen=True)
class TargetPoint:
    """Lookahead query result: pose plus the reference yaw rate at it."""

    x: float
    y: float
    psi: float
    psi_dot: float
    s: float = 0.0
    kappa: float = 0.0


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(eq=False)
class Raceline:
    """Arc-length table of a lane curve: (s, x, y, psi, kappa) samples.

    For closed lines the last sample duplicates the first at s = total_length.
    """

    lane_id: LaneId
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    total_length: float
    closed: bool = True

    _psi_unwrapped: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("s", "x", "y", "psi", "kappa"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(np.diff(self.s) > 0):
            raise TrackGeometryError("raceline stations must be strictly increasing")
        self._psi_unwrapped = np.unwrap(self.psi)

    def __len__(self) -> int:
        return len(self.s)

    def sample_window(self, start_s: float, length: float, spacing: float):
        """Vectorized (s, x, y, psi, kappa) lookup along [start_s, start_s+length].

        Returned s values are global (unwrapped past closure for closed lines);
        psi is wrapped to (-pi, pi].
        """
        stations = start_s + np.arange(0.0, length + 0.5 * spacing, spacing)
        if self.closed:
            lookup = stations % self.total_length
        else:
            lookup = np.clip(stations, 0.0, self.total_length)
        x = np.interp(lookup, self.s, self.x)
        y = np.interp(lookup, self.s, self.y)
        psi_u = np.interp(lookup, self.s, self._psi_unwrapped)
        psi = np.array([wrap_angle(a) for a in psi_u])
        kappa = np.interp(lookup, self.s, self.kappa)
        return stations, x, y, psi, kappa

    def wrap_station(self, s: float) -> float:
        if self.closed:
            return s % self.total_length
        return min(max(s, 0.0), self.total_length)

    def pose_at(self, s: float) -> tuple[float, float, float, float]:
        """Interpolated (x, y, psi, kappa) at station s (wrapped/clamped)."""
        s = self.wrap_station(s)
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        i = min(max(i, 0), len(self.s) - 2)
        span = self.s[i + 1] - self.s[i]
        u = (s - self.s[i]) / span if span > 0 else 0.0
        x = self.x[i] + u * (self.x[i + 1] - self.x[i])
        y = self.y[i] + u * (self.y[i + 1] - self.y[i])
        dpsi = wrap_angle(self.psi[i + 1] - self.psi[i])
        psi = wrap_angle(self.psi[i] + u * dpsi)
        kappa = self.kappa[i] + u * (self.kappa[i + 1] - self.kappa[i])
        return float(x), float(y), float(psi), float(kappa)

    def station_gap(self, s_a: float, s_b: float) -> float:
        """Signed along-track gap s_a - s_b mapped to (-L/2, L/2]."""
        g = (s_a - s_b) % self.total_length
        if g > 0.5 * self.total_length:
            g -= self.total_length
        return g


def _validate_waypoints(waypoints, closed: bool) -> np.ndarray:
    pts = np.asarray([(w.x, w.y) for w in waypoints], dtype=float)
    if len(pts) < 4:
        raise TrackGeometryError(f"need at least 4 waypoints, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise TrackGeometryError("waypoints must be finite")
    # Drop an explicitly repeated closing waypoint; closure is implicit.
    if closed and np.hypot(*(pts[-1] - pts[0])) <= MIN_WAYPOINT_SEPARATION:
        pts = pts[:-1]
        if len(pts) < 4:
            raise TrackGeometryError("need at least 4 distinct waypoints for a closed line")
    seps = np.hypot(*np.diff(pts, axis=0).T)
    pairs = seps if not closed else np.append(seps, np.hypot(*(pts[0] - pts[-1])))
    if np.any(pairs <= MIN_WAYPOINT_SEPARATION):
        raise TrackGeometryError("consecutive waypoints closer than 0.1 m")
    return pts


def build_raceline(
    waypoints,
    closed: bool = True,
    sample_spacing: float = 1.0,
    lane_id: LaneId = LaneId.CENTER,
) -> Raceline:
    """Fit a periodic (closed) or natural (open) spline through waypoints.

    The sample grid is a uniform arc-length grid augmented with the exact
    waypoint stations, so the returned table passes through every waypoint.
    Rejects self-intersecting results.
    """
    if not (0.1 < sample_spacing <= 10.0):
        raise TrackGeometryError(f"sample_spacing {sample_spacing} outside (0.1, 10] m")
    pts = _validate_waypoints(waypoints, closed)

    if closed:
        knots = np.vstack([pts, pts[:1]])
    else:
        knots = pts
    chord = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(knots, axis=0).T))])
    if closed:
        spline = make_interp_spline(chord, knots, k=5, axis=0, bc_type="periodic")
    else:
        spline = make_interp_spline(chord, knots, k=3, axis=0, bc_type="natural")

    # Dense evaluation for the arc-length table; fine enough that chord sums
    # approximate arc length to well under 1e-3 m per meter.
    t_total = chord[-1]
    n_dense = max(int(t_total / (min(sample_spacing, 1.0) / 16.0)), 16 * len(knots))
    t_dense = np.linspace(0.0, t_total, n_dense + 1)
    xy_dense = spline(t_dense)
    seg = np.hypot(*np.diff(xy_dense, axis=0).T)
    s_dense = np.concatenate([[0.0], np.cumsum(seg)])
    total_length = float(s_dense[-1])

    wp_stations = np.interp(chord, t_dense, s_dense)
    grid = np.arange(0.0, total_length, sample_spacing)
    stations = np.union1d(grid, wp_stations[:-1] if closed else wp_stations)
    stations = stations[stations < total_length - 1e-9]
    # Collapse near-duplicates from the union, preferring waypoint stations.
    keep = np.concatenate([[True], np.diff(stations) > 1e-6])
    stations = stations[keep]
    if closed:
        stations = np.append(stations, total_length)
    elif stations[-1] < total_length:
        stations = np.append(stations, total_length)

    t_of_s = np.interp(stations, s_dense, t_dense)
    xy = spline(t_of_s)
    d1 = spline(t_of_s, 1)
    d2 = spline(t_of_s, 2)
    psi = np.arctan2(d1[:, 1], d1[:, 0])
    speed_sq = d1[:, 0] ** 2 + d1[:, 1] ** 2
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.maximum(speed_sq, 1e-12) ** 1.5

    line = Raceline(
        lane_id=lane_id,
        s=stations,
        x=xy[:, 0],
        y=xy[:, 1],
        psi=psi,
        kappa=kappa,
        total_length=total_length,
        closed=closed,
    )
    _check_smoothness(line)
    if _self_intersects(line):
        raise TrackGeometryError("raceline self-intersects; rework the waypoint set")
    return line


def _check_smoothness(line: Raceline) -> None:
    dpsi = np.abs([wrap_angle(d) for d in np.diff(line.psi)])
    if np.any(dpsi > 0.2):
        raise TrackGeometryError(f"heading jump {dpsi.max():.3f} rad between samples")
    ds = np.diff(line.s)
    dk = np.abs(np.diff(line.kappa)) / np.maximum(ds, 1e-9)
    if np.any(dk > 0.01):
        raise TrackGeometryError(f"curvature jump {dk.max():.4f} 1/m per m between samples")


def _self_intersects(line: Raceline) -> bool:
    coords = np.column_stack([line.x, line.y])
    if line.closed:
        return not LinearRing(coords[:-1]).is_simple
    return not LineString(coords).is_simple


def closest_point(raceline: Raceline, pos) -> tuple[float, float]:
    """Station and signed lateral offset (positive left of travel) of pos.

    Nearest-sample search then analytic projection onto the two adjacent
    segments; no global optimization.
    """
    px, py = float(pos[0]), float(pos[1])
    d2 = (raceline.x - px) ** 2 + (raceline.y - py) ** 2
    i = int(np.argmin(d2))
    n = len(raceline.s)

    best = None
    for j in (i - 1, i):
        if j < 0 or j + 1 >= n:
            if not raceline.closed:
                continue
            j %= n - 1  # closed: last sample duplicates first
        ax, ay = raceline.x[j], raceline.y[j]
        bx, by = raceline.x[j + 1], raceline.y[j + 1]
        ex, ey = bx - ax, by - ay
        seg_len2 = ex * ex + ey * ey
        if seg_len2 <= 0:
            continue
        u = ((px - ax) * ex + (py - ay) * ey) / seg_len2
        u = min(max(u, 0.0), 1.0)
        cx, cy = ax + u * ex, ay + u * ey
        dist2 = (px - cx) ** 2 + (py - cy) ** 2
        if best is None or dist2 < best[0]:
            s = raceline.s[j] + u * (raceline.s[j + 1] - raceline.s[j])
            # Sign: positive when pos lies left of the segment direction.
            cross = ex * (py - cy) - ey * (px - cx)
            lateral = math.copysign(math.sqrt(dist2), cross) if dist2 > 0 else 0.0
            best = (dist2, s, lateral)
    assert best is not None
    return float(raceline.wrap_station(best[1])), float(best[2])


def lookahead(raceline: Raceline, pos, d: float, ref_speed: float = 0.0) -> TargetPoint:
    """Pose on the raceline a distance d further along from pos's station."""
    if raceline.closed and not (0.0 < d < raceline.total_length / 2.0):
        raise TrackGeometryError(f"lookahead distance {d} outside (0, L/2)")
    s0, _ = closest_point(raceline, pos)
    s_target = raceline.wrap_station(s0 + d)
    x, y, psi, kappa = raceline.pose_at(s_target)
    return TargetPoint(x=x, y=y, psi=psi, psi_dot=kappa * ref_speed, s=s_target, kappa=kappa)


@dataclass(eq=False)
class TrackBounds:
    """Closed inner/outer boundary polygons. On-boundary points count outside."""

    inner: np.ndarray  # (N, 2)
    outer: np.ndarray  # (M, 2)
    width: float
    _inner_poly: Polygon = field(init=False, repr=False)
    _outer_poly: Polygon = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.inner = np.asarray(self.inner, dtype=float)
        self.outer = np.asarray(self.outer, dtype=float)
        self._inner_poly = Polygon(self.inner)
        self._outer_poly = Polygon(self.outer)
        if not (self._inner_poly.is_valid and self._outer_poly.is_valid):
            raise TrackGeometryError("boundary polygons must be simple")
        if not self._outer_poly.contains(self._inner_poly):
            raise TrackGeometryError("outer boundary must strictly enclose inner")


def in_track_bounds(bounds: TrackBounds, pos) -> bool:
    """True iff pos is strictly inside the outer and strictly outside the inner."""
    p = Point(float(pos[0]), float(pos[1]))
    return bounds._outer_poly.contains(p) and not bounds._inner_poly.covers(p)


def stadium_waypoints(
    straight_length: float,
    turn_radius: float,
    n_turn: int = 12,
    n_straight: int = 4,
) -> list[Waypoint]:
    """Counterclockwise stadium centerline: two straights joined by semicircles.

    Straights run along +/-x at y = -/+turn_radius; turn centers at
    x = +/- straight_length/2.
    """
    half = straight_length / 2.0
    r = turn_radius
    pts: list[Waypoint] = []
    for i in range(n_straight):  # bottom straight, travelling +x
        x = -half + straight_length * i / n_straight
        pts.append(Waypoint(x, -r))
    for i in range(n_turn):  # right turn, -pi/2 .. +pi/2
        a = -math.pi / 2.0 + math.pi * i / n_turn
        pts.append(Waypoint(half + r * math.cos(a), r * math.sin(a)))
    for i in range(n_straight):  # top straight, travelling -x
        x = half - straight_length * i / n_straight
        pts.append(Waypoint(x, r))
    for i in range(n_turn):  # left turn, pi/2 .. 3pi/2
        a = math.pi / 2.0 + math.pi * i / n_turn
        pts.append(Waypoint(-half + r * math.cos(a), r * math.sin(a)))
    return pts


def _stadium_polygon(straight_length: float, radius: float, ds: float = 2.0) -> np.ndarray:
    """Dense exact boundary polygon for a stadium of the given radius."""
    half = straight_length / 2.0
    n_arc = max(int(math.pi * radius / ds), 8)
    n_str = max(int(straight_length / ds), 2)
    pts = []
    for i in range(n_str):
        pts.append((-half + straight_length * i / n_str, -radius))
    for i in range(n_arc):
        a = -math.pi / 2.0 + math.pi * i / n_arc
        pts.append((half + radius * math.cos(a), radius * math.sin(a)))
    for i in range(n_str):
        pts.append((half - straight_length * i / n_str, radius))
    for i in range(n_arc):
        a = math.pi / 2.0 + math.pi * i / n_arc
        pts.append((-half + radius * math.cos(a), radius * math.sin(a)))
    return np.asarray(pts)


def _offset_polyline(line: Raceline, offset: float) -> np.ndarray:
    """Offset the sampled curve along its left normal by `offset` meters."""
    nx = -np.sin(line.psi)
    ny = np.cos(line.psi)
    return np.column_stack([line.x + offset * nx, line.y + offset * ny])


def _resample_as_waypoints(coords: np.ndarray, every: int) -> list[Waypoint]:
    idx = np.arange(0, len(coords) - 1, every)
    return [Waypoint(float(coords[i, 0]), float(coords[i, 1])) for i in idx]


@dataclass(eq=False)
class Track:
    """A two-lane oval: centerline, lane racelines, and wall bounds."""

    centerline: Raceline
    lanes: dict[LaneId, Raceline]
    bounds: TrackBounds
    width: float

    def lane(self, lane_id: LaneId) -> Raceline:
        return self.lanes[lane_id]

    @classmethod
    def from_centerline(
        cls, center: Raceline, width: float, sample_spacing: float = 1.0
    ) -> "Track":
        if width <= 0:
            raise TrackGeometryError("track width must be positive")
        left = _offset_polyline(center, +width / 4.0)
        right = _offset_polyline(center, -width / 4.0)
        # Left of travel points toward the infield iff the line runs CCW.
        centroid = np.array([center.x.mean(), center.y.mean()])
        left_r = np.hypot(*(left - centroid).T).mean()
        right_r = np.hypot(*(right - centroid).T).mean()
        inner_pts, outer_pts = (left, right) if left_r < right_r else (right, left)
        inner_off = width / 4.0 if left_r < right_r else -width / 4.0

        every = max(int(10.0 / sample_spacing), 1)  # waypoint every ~10 m
        inner = build_raceline(
            _resample_as_waypoints(inner_pts, every), True, sample_spacing, LaneId.INNER
        )
        outer = build_raceline(
            _resample_as_waypoints(outer_pts, every), True, sample_spacing, LaneId.OUTER
        )
        inner_wall = _offset_polyline(center, 2.0 * inner_off)[:-1]
        outer_wall = _offset_polyline(center, -2.0 * inner_off)[:-1]
        bounds = TrackBounds(inner=inner_wall, outer=outer_wall, width=width)
        return cls(
            centerline=center,
            lanes={LaneId.INNER: inner, LaneId.OUTER: outer, LaneId.CENTER: center},
            bounds=bounds,
            width=width,
        )

    @classmethod
    def stadium(
        cls,
        straight_length: float = 300.0,
        turn_radius: float = 190.0,
        width: float = 15.0,
        sample_spacing: float = 1.0,
    ) -> "Track":
        """Bundled LVMS-like default. Lane offsets of a stadium are stadiums,
        so lanes and walls are built analytically at their exact radii."""

        def line(radius: float, lane: LaneId) -> Raceline:
            return build_raceline(
                stadium_waypoints(straight_length, radius), True, sample_spacing, lane
            )

        center = line(turn_radius, LaneId.CENTER)
        inner = line(turn_radius - width / 4.0, LaneId.INNER)
        outer = line(turn_radius + width / 4.0, LaneId.OUTER)
        bounds = TrackBounds(
            inner=_stadium_polygon(straight_length, turn_radius - width / 2.0),
            outer=_stadium_polygon(straight_length, turn_radius + width / 2.0),
            width=width,
        )
        return cls(
            centerline=center,
            lanes={LaneId.INNER: inner, LaneId.OUTER: outer, LaneId.CENTER: center},
            bounds=bounds,
            width=width,
        )

    @classmethod
    def from_config(cls, cfg: dict) -> "Track":
        """Build from a track config block (see docs/scenario_schema.md).

        `kind: stadium` takes straight_length/turn_radius/width; `kind:
        waypoints` takes explicit centerline (and optionally per-lane and
        boundary) waypoint lists.
        """
        kind = cfg.get("kind", "stadium")
        spacing = float(cfg.get("sample_spacing", 1.0))
        width = float(cfg.get("width", 15.0))
        if kind == "stadium":
            return cls.stadium(
                straight_length=float(cfg.get("straight_length", 300.0)),
                turn_radius=float(cfg.get("turn_radius", 190.0)),
                width=width,
                sample_spacing=spacing,
            )
        if kind == "waypoints":
            def wps(key):
                return [Waypoint(float(p[0]), float(p[1])) for p in cfg[key]]

            center = build_raceline(wps("centerline_waypoints"), True, spacing, LaneId.CENTER)
            track = cls.from_centerline(center, width, spacing)
            if "inner_lane_waypoints" in cfg:
                track.lanes[LaneId.INNER] = build_raceline(
                    wps("inner_lane_waypoints"), True, spacing, LaneId.INNER
                )
            if "outer_lane_waypoints" in cfg:
                track.lanes[LaneId.OUTER] = build_raceline(
                    wps("outer_lane_waypoints"), True, spacing, LaneId.OUTER
                )
            if "inner_boundary" in cfg and "outer_boundary" in cfg:
                track.bounds = TrackBounds(
                    inner=np.asarray(cfg["inner_boundary"], dtype=float),
                    outer=np.asarray(cfg["outer_boundary"], dtype=float),
                    width=width,
                )
            return track
        raise TrackGeometryError(f"unknown track kind {kind!r}")
