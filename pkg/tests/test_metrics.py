"""Metrics: bracket bucketing, G-G extremes, detection periods, report
round trips."""

import json
import math

import pytest

from ovalsim.logrec import RunLog, read_log
from ovalsim.metrics import (
    CTE_BRACKETS,
    MetricsError,
    compute_cte_brackets,
    compute_gg,
    detection_period_stats,
    write_report,
)


def controller_row(t, cte, speed, car="ego"):
    return {"type": "controller", "t": t, "car": car, "cte": cte, "speed": speed}


def plant_row(t, a_lat, a_long, car="ego"):
    return {"type": "plant", "t": t, "car": car, "a_lat": a_lat, "a_long": a_long}


def detection_row(t, car="ego", source="lidar", fp=False):
    return {"type": "detection", "t": t, "car": car, "source": source,
            "x": 0.0, "y": 0.0, "conf": 0.9, "fp": fp}


class TestCteBrackets:
    def test_constant_cte_at_50(self):
        rows = [controller_row(i * 0.01, 0.5, 50.0) for i in range(100)]
        out = compute_cte_brackets(rows)
        assert out.mean_abs[">10m/s"] == pytest.approx(0.5)
        assert out.mean_abs["50-55m/s"] == pytest.approx(0.5)
        assert out.mean_abs["45-50m/s"] is None  # 50 is not in [45, 50)
        assert out.count["50-55m/s"] == 100

    def test_all_below_10_leaves_brackets_empty(self):
        rows = [controller_row(i * 0.01, 0.3, 8.0) for i in range(50)]
        out = compute_cte_brackets(rows)
        for label, _, _ in CTE_BRACKETS:
            assert out.mean_abs[label] is None

    def test_mixed_fixture_hand_computed(self):
        # Oracle: hand bucketing. 22 m/s rows |cte|: 0.1, 0.3 -> mean 0.2;
        # 58 m/s rows: 1.0, 2.0 -> 1.5; 61 m/s row: 0.4.
        rows = [
            controller_row(0.0, 0.1, 22.0),
            controller_row(0.1, -0.3, 22.0),
            controller_row(0.2, 1.0, 58.0),
            controller_row(0.3, -2.0, 58.0),
            controller_row(0.4, 0.4, 61.0),
        ]
        out = compute_cte_brackets(rows)
        assert out.mean_abs["20-25m/s"] == pytest.approx(0.2)
        assert out.mean_abs["55-60m/s"] == pytest.approx(1.5)
        assert out.mean_abs[">60m/s"] == pytest.approx(0.4)
        assert out.mean_abs[">10m/s"] == pytest.approx((0.1 + 0.3 + 1.0 + 2.0 + 0.4) / 5)

    def test_labels_verbatim(self):
        labels = [b[0] for b in CTE_BRACKETS]
        assert labels == [">10m/s", ">60m/s", "55-60m/s", "50-55m/s", "45-50m/s",
                          "40-45m/s", "35-40m/s", "30-35m/s", "25-30m/s",
                          "20-25m/s", "10-20m/s"]

    def test_empty_log_rejected(self):
        with pytest.raises(MetricsError):
            compute_cte_brackets([])


class TestGg:
    def test_circle_extremes(self):
        # Oracle: constant-speed circle r=100 at 30 m/s -> a_lat = 9, a_long ~ 0.
        rows = [plant_row(i * 0.01, 9.0, 0.0) for i in range(100)]
        gg = compute_gg(rows)
        assert gg.max_abs_lat == pytest.approx(9.0)
        assert gg.max_abs_long == pytest.approx(0.0)
        assert len(gg.samples) == 100

    def test_standing_start(self):
        rows = [plant_row(i * 0.01, 0.0, 5.0) for i in range(10)]
        gg = compute_gg(rows)
        assert gg.max_abs_lat == 0.0
        assert gg.max_abs_long == pytest.approx(5.0)

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            compute_gg([])


class TestDetectionPeriods:
    def test_nominal_20hz(self):
        rows = [detection_row(i * 0.05) for i in range(200)]
        stats = detection_period_stats(rows)
        assert stats.mean_period == pytest.approx(0.05, abs=1e-9)

    def test_dropout_raises_mean_period(self):
        # Oracle: geometric thinning; keeping 1 in 4 frames of a 50 ms clock
        # gives a 200 ms mean period.
        rows = [detection_row(i * 0.05) for i in range(0, 1000, 4)]
        stats = detection_period_stats(rows)
        assert stats.mean_period == pytest.approx(0.2, abs=1e-9)

    def test_false_positives_excluded(self):
        rows = [detection_row(i * 0.05) for i in range(100)]
        rows.insert(10, detection_row(0.51, fp=True))
        stats = detection_period_stats(rows, true_only=True)
        assert stats.mean_period == pytest.approx(0.05, abs=1e-9)

    def test_needs_two_detections(self):
        with pytest.raises(MetricsError):
            detection_period_stats([detection_row(0.0)])


class TestReport:
    def test_write_and_recompute_identical(self, tmp_path):
        log_path = tmp_path / "run.jsonl"
        with RunLog(log_path) as log:
            log.write("header", schema=1, scenario="t", seed=0, duration=1.0,
                      cars=["ego"])
            for i in range(50):
                log.write("controller", t=i * 0.01, car="ego",
                          cte=0.1 * math.sin(i * 0.3), speed=45.0 + i * 0.1)
                log.write("plant", t=i * 0.01, car="ego",
                          a_lat=5.0 * math.sin(i * 0.2), a_long=1.0)
        in_memory = compute_cte_brackets(read_log(log_path))
        summary = write_report(read_log(log_path), tmp_path / "report")
        # Metrics are pure functions of the file: exact match on reload.
        reloaded = json.loads((tmp_path / "report" / "report.json").read_text())
        for label, mean, _ in in_memory.rows():
            got = reloaded["cars"]["ego"]["cte_brackets"][label]
            if mean is None:
                assert got is None
            else:
                assert got == mean
        assert (tmp_path / "report" / "cte_brackets.csv").exists()
        assert (tmp_path / "report" / "gg_samples.csv").exists()
