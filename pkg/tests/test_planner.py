"""Planner: primitive selection, minimum-jerk merge, velocity profiling,
pass progress."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovalsim.planning import (
    ActionPrimitive,
    Flag,
    MergeError,
    MergeParams,
    PlannedTrajectory,
    PlannerConfig,
    PrimitiveKind,
    RaceContext,
    Role,
    _window_trajectory,
    minimum_jerk_blend,
    pass_progress,
    safe_merge,
    select_action,
    trail_speed,
    velocity_profile,
)
from ovalsim.track import LaneId, Track, closest_point
from ovalsim.tracking import TrackStatus, TrackedAgent
from ovalsim.vehicle import VehicleState


@pytest.fixture(scope="module")
def track():
    return Track.stadium()


@pytest.fixture()
def cfg():
    return PlannerConfig()


def opponent(x=80.0, y=-186.25, vx=35.0, vy=0.0):
    return TrackedAgent(
        id=1, state=np.array([x, y, vx, vy, 0.0]), covariance=np.eye(5),
        status=TrackStatus.CONFIRMED, consecutive_hits=5, last_update=0.0,
    )


def ctx_for(role, flag, opp=None, round_speed=35.8, lane=LaneId.INNER, stop=None):
    return RaceContext(role=role, flag=flag, round_speed=round_speed,
                       opponent=opp, ego=VehicleState(x=0.0, y=-186.25, x_dot=round_speed),
                       now=0.0, current_lane=lane, stop_speed=stop)


class TestMinimumJerkBlend:
    def test_endpoints(self):
        assert minimum_jerk_blend(0.0) == 0.0
        assert minimum_jerk_blend(1.0) == pytest.approx(1.0)

    def test_midpoint_symmetry(self):
        assert minimum_jerk_blend(0.5) == pytest.approx(0.5)

    def test_boundary_derivatives_zero(self):
        # Oracle: central finite differences on the polynomial.
        h = 1e-5
        def d1(u):
            return (minimum_jerk_blend(u + h) - minimum_jerk_blend(u - h)) / (2 * h)
        def d2(u):
            return (minimum_jerk_blend(u + h) - 2 * minimum_jerk_blend(u)
                    + minimum_jerk_blend(u - h)) / h**2
        for u in (0.0, 1.0):
            assert abs(d1(max(u, h))) < 1e-6 or abs(d1(min(u, 1 - h))) < 1e-6
        assert abs(d1(h)) < 1e-3 and abs(d1(1 - h)) < 1e-3
        assert abs(d2(h)) < 1e-2 and abs(d2(1 - h)) < 1e-2

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_monotone(self, u):
        # Pure polynomial (no clamping), so allow float roundoff at the ends.
        assert -1e-12 <= minimum_jerk_blend(u) <= 1.0 + 1e-12
        h = 1e-6
        if h <= u <= 1.0 - h:
            assert minimum_jerk_blend(u + h) >= minimum_jerk_blend(u - h) - 1e-12


class TestSelectAction:
    def test_defender_green_maintains_inner(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.INNER, 0.0)
        a = select_action(ctx_for(Role.DEFENDER, Flag.GREEN), prev, cfg)
        assert a.kind == PrimitiveKind.MAINTAIN
        assert a.target_lane == LaneId.INNER
        assert a.target_speed == pytest.approx(35.8)

    def test_attacker_green_trails(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.INNER, 0.0)
        a = select_action(ctx_for(Role.ATTACKER, Flag.GREEN, opponent()), prev, cfg,
                          gap=-80.0, ahead=False)
        assert a.kind == PrimitiveKind.TRAIL
        assert a.gap_setpoint == cfg.gap_setpoint

    def test_attacker_waving_with_clearance_merges_out(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.TRAIL, LaneId.INNER, 35.8,
                               gap_setpoint=25.0)
        a = select_action(ctx_for(Role.ATTACKER, Flag.WAVING_GREEN, opponent()),
                          prev, cfg, clearance_ok=True, ahead=False, gap=-25.0)
        assert a.kind == PrimitiveKind.SAFE_MERGE
        assert a.target_lane == LaneId.OUTER
        assert a.merge is not None

    def test_merge_not_entered_without_clearance(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.TRAIL, LaneId.INNER, 35.8,
                               gap_setpoint=25.0)
        a = select_action(ctx_for(Role.ATTACKER, Flag.WAVING_GREEN, opponent()),
                          prev, cfg, clearance_ok=False, ahead=False, gap=-25.0)
        assert a.kind == PrimitiveKind.TRAIL

    def test_merge_only_from_trail(self, cfg):
        # Legal transition graph: SafeMerge(outer) only entered from Trail.
        prev = ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.INNER, 35.8)
        a = select_action(ctx_for(Role.ATTACKER, Flag.WAVING_GREEN, opponent()),
                          prev, cfg, clearance_ok=True, ahead=False, gap=-25.0)
        assert a.kind == PrimitiveKind.TRAIL

    def test_close_the_door_after_pass(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.OUTER, 43.8)
        a = select_action(
            ctx_for(Role.ATTACKER, Flag.WAVING_GREEN, opponent(), lane=LaneId.OUTER),
            prev, cfg, ahead=True, gap=31.0, close_door_fired=False,
        )
        assert a.kind == PrimitiveKind.SAFE_MERGE
        assert a.target_lane == LaneId.INNER

    def test_no_close_door_below_30m(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.OUTER, 43.8)
        a = select_action(
            ctx_for(Role.ATTACKER, Flag.WAVING_GREEN, opponent(), lane=LaneId.OUTER),
            prev, cfg, ahead=True, gap=29.0, close_door_fired=False,
        )
        assert a.kind == PrimitiveKind.MAINTAIN
        assert a.target_lane == LaneId.OUTER

    def test_active_merge_continues(self, cfg):
        merge = MergeParams(0.0, 3.0, LaneId.INNER, LaneId.OUTER)
        prev = ActionPrimitive(PrimitiveKind.SAFE_MERGE, LaneId.OUTER, 43.8, merge)
        a = select_action(ctx_for(Role.ATTACKER, Flag.WAVING_GREEN, opponent()),
                          prev, cfg, merge_done=False)
        assert a is prev

    def test_red_flag_zero_speed(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.TRAIL, LaneId.INNER, 35.8,
                               gap_setpoint=25.0)
        a = select_action(ctx_for(Role.ATTACKER, Flag.RED, opponent()), prev, cfg)
        assert a.kind == PrimitiveKind.MAINTAIN
        assert a.target_speed == 0.0

    def test_yellow_reduced_speed(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.MAINTAIN, LaneId.INNER, 35.8)
        a = select_action(ctx_for(Role.DEFENDER, Flag.YELLOW), prev, cfg)
        assert a.target_speed == pytest.approx(cfg.yellow_speed)

    def test_lost_opponent_degrades_to_maintain(self, cfg):
        prev = ActionPrimitive(PrimitiveKind.TRAIL, LaneId.INNER, 35.8,
                               gap_setpoint=25.0)
        a = select_action(ctx_for(Role.ATTACKER, Flag.GREEN, None), prev, cfg)
        assert a.kind == PrimitiveKind.MAINTAIN
        assert a.target_speed == pytest.approx(35.8)


class TestTrailLaw:
    def test_fixed_point(self):
        assert trail_speed(25.0, 35.0, 25.0, 0.2, 60.0) == pytest.approx(35.0)

    def test_proportional_gain(self):
        # gap 20 m above setpoint at k=0.2 -> +4 m/s.
        assert trail_speed(45.0, 35.0, 25.0, 0.2, 60.0) == pytest.approx(39.0)

    def test_clamped(self):
        assert trail_speed(500.0, 35.0, 25.0, 0.2, 45.0) == 45.0
        assert trail_speed(-500.0, 5.0, 25.0, 0.2, 45.0) == 0.0


class TestSafeMerge:
    def test_identity_when_same_lane(self, track, cfg):
        inner = track.lanes[LaneId.INNER]
        traj = safe_merge(inner, inner, 50.0, 3.0, 40.0, cfg)
        for i in range(0, len(traj), 10):
            _, lat = closest_point(inner, (traj.x[i], traj.y[i]))
            assert abs(lat) < 0.02

    def test_reaches_target_lane(self, track, cfg):
        inner, outer = track.lanes[LaneId.INNER], track.lanes[LaneId.OUTER]
        traj = safe_merge(inner, outer, 0.0, 3.0, 40.0, cfg)
        merge_end = int(3.0 * 40.0 / cfg.spacing)
        _, lat = closest_point(outer, (traj.x[merge_end], traj.y[merge_end]))
        assert abs(lat) < 0.05

    def test_halfway_blend(self, track, cfg):
        inner, outer = track.lanes[LaneId.INNER], track.lanes[LaneId.OUTER]
        traj = safe_merge(inner, outer, 0.0, 3.0, 40.0, cfg)
        mid = int(0.5 * 3.0 * 40.0 / cfg.spacing)
        _, lat_i = closest_point(inner, (traj.x[mid], traj.y[mid]))
        _, lat_o = closest_point(outer, (traj.x[mid], traj.y[mid]))
        assert abs(abs(lat_i) - abs(lat_o)) < 0.2  # equidistant at u = 0.5

    def test_stays_in_bounds(self, track, cfg):
        inner, outer = track.lanes[LaneId.INNER], track.lanes[LaneId.OUTER]
        safe_merge(inner, outer, 400.0, 3.0, 45.0, cfg, bounds=track.bounds)

    def test_too_short_duration_rejected(self, track, cfg):
        inner, outer = track.lanes[LaneId.INNER], track.lanes[LaneId.OUTER]
        with pytest.raises(MergeError, match="curvature|duration"):
            safe_merge(inner, outer, 0.0, 0.2, 10.0, cfg)

    def test_smooth_curvature(self, track, cfg):
        inner, outer = track.lanes[LaneId.INNER], track.lanes[LaneId.OUTER]
        traj = safe_merge(inner, outer, 100.0, 3.0, 50.0, cfg)
        assert np.max(np.abs(traj.kappa)) < 0.02


class TestVelocityProfile:
    def make_traj(self, kappa_val, n=100, spacing=2.0):
        s = np.arange(n) * spacing
        return PlannedTrajectory(
            s=s, x=s, y=np.zeros(n), psi=np.zeros(n),
            kappa=np.full(n, kappa_val), v=np.zeros(n), stamp=0.0,
        )

    def test_straight_keeps_command(self):
        traj = velocity_profile(self.make_traj(0.0), 50.0, 20.0, 6.0, 10.0)
        assert np.allclose(traj.v, 50.0)

    def test_curvature_cap(self):
        # Oracle: v = sqrt(a_lat / kappa) = sqrt(20 / 0.01) ~ 44.7.
        traj = velocity_profile(self.make_traj(0.01), 60.0, 20.0, 6.0, 10.0)
        assert np.allclose(traj.v, math.sqrt(2000.0), rtol=1e-9)

    def test_postcondition_lateral(self):
        traj = self.make_traj(0.0)
        traj.kappa[40:60] = 0.02
        out = velocity_profile(traj, 60.0, 20.0, 6.0, 10.0)
        assert np.all(out.v**2 * np.abs(out.kappa) <= 20.0 + 1e-9)

    def test_longitudinal_limits(self):
        traj = self.make_traj(0.0)
        traj.kappa[50:55] = 0.05  # hard slow zone mid-path
        out = velocity_profile(traj, 60.0, 20.0, 6.0, 10.0)
        ds = np.diff(out.s)
        dv2 = np.diff(out.v**2) / (2.0 * ds)
        assert np.all(dv2 <= 6.0 + 1e-9)
        assert np.all(dv2 >= -10.0 - 1e-9)


class TestPassProgress:
    def test_clear_lead(self, track):
        center = track.centerline
        x1, y1, _, _ = center.pose_at(131.0)
        x0, y0, _, _ = center.pose_at(100.0)
        ahead, gap = pass_progress((x1, y1), (x0, y0), center, None)
        assert ahead and gap == pytest.approx(31.0, abs=0.5)

    def test_29m_is_ahead_but_not_pass_complete(self, track, cfg):
        center = track.centerline
        x1, y1, _, _ = center.pose_at(129.0)
        x0, y0, _, _ = center.pose_at(100.0)
        ahead, gap = pass_progress((x1, y1), (x0, y0), center, None)
        assert ahead
        assert gap < cfg.close_door_gap

    def test_hysteresis_band_retains_prev(self, track):
        center = track.centerline
        x1, y1, _, _ = center.pose_at(100.5)
        x0, y0, _, _ = center.pose_at(100.0)
        # Side by side inside the band: previous answer is retained.
        ahead, _ = pass_progress((x1, y1), (x0, y0), center, False, hysteresis=2.0)
        assert ahead is False
        ahead, _ = pass_progress((x1, y1), (x0, y0), center, True, hysteresis=2.0)
        assert ahead is True

    def test_wraparound_gap(self, track):
        center = track.centerline
        L = center.total_length
        x1, y1, _, _ = center.pose_at(5.0)
        x0, y0, _, _ = center.pose_at(L - 5.0)
        ahead, gap = pass_progress((x1, y1), (x0, y0), center, None)
        assert ahead and gap == pytest.approx(10.0, abs=0.5)


class TestTrajectoryQueries:
    def test_lookahead_continuous_station(self, track, cfg):
        lane = track.lanes[LaneId.INNER]
        traj = _window_trajectory(lane, 0.0, cfg, 0.0)
        # Station varies continuously as the query point advances.
        stations = [traj.closest_station((x, -186.25)) for x in np.linspace(0, 20, 41)]
        diffs = np.diff(stations)
        assert np.all(diffs > 0.0)
        assert np.all(diffs < 1.0)

    def test_planner_tick_budget(self, track):
        # The paper's planner runs comfortably at 20 Hz; enforce the budget.
        import time
        from ovalsim.planning import Planner

        planner = Planner(PlannerConfig(), track, LaneId.INNER)
        ego = VehicleState(x=0.0, y=-186.25, x_dot=40.0)
        ctx = RaceContext(role=Role.ATTACKER, flag=Flag.WAVING_GREEN,
                          round_speed=35.8, opponent=opponent(), ego=ego, now=0.0)
        planner.tick(ctx)  # warm caches
        t0 = time.monotonic()
        n = 40
        for _ in range(n):
            planner.tick(ctx)
        per_tick = (time.monotonic() - t0) / n
        assert per_tick < 0.05  # 20 Hz budget
