"""Run-log evaluation: cross-track error by speed bracket, G-G extremes,
detection-period statistics, and the pass ledger.

All metrics are pure functions of the JSON-lines run log, so recomputation
from a stored file reproduces in-run results exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

# (label, v_low, v_high); labels follow the reporting convention used for
# the real runs. The first bucket spans the whole run above 10 m/s.
CTE_BRACKETS = (
    (">10m/s", 10.0, math.inf),
    (">60m/s", 60.0, math.inf),
    ("55-60m/s", 55.0, 60.0),
    ("50-55m/s", 50.0, 55.0),
    ("45-50m/s", 45.0, 50.0),
    ("40-45m/s", 40.0, 45.0),
    ("35-40m/s", 35.0, 40.0),
    ("30-35m/s", 30.0, 35.0),
    ("25-30m/s", 25.0, 30.0),
    ("20-25m/s", 20.0, 25.0),
    ("10-20m/s", 10.0, 20.0),
)


class MetricsError(ValueError):
    pass


@dataclass
class BracketedCte:
    """Mean absolute CTE per speed bracket; None marks an empty bracket."""

    mean_abs: dict[str, float | None] = field(default_factory=dict)
    count: dict[str, int] = field(default_factory=dict)

    def rows(self):
        for label, _, _ in CTE_BRACKETS:
            yield label, self.mean_abs[label], self.count[label]


def compute_cte_brackets(rows: list[dict], car: str | None = None) -> BracketedCte:
    """Bucket controller-rate CTE samples by concurrent speed."""
    ctes = [
        r for r in rows
        if r["type"] == "controller" and (car is None or r["car"] == car)
        and r.get("cte") is not None
    ]
    if not ctes:
        raise MetricsError("log contains no controller rows")
    out = BracketedCte()
    for label, lo, hi in CTE_BRACKETS:
        vals = [abs(r["cte"]) for r in ctes if lo <= r["speed"] < hi]
        out.count[label] = len(vals)
        out.mean_abs[label] = sum(vals) / len(vals) if vals else None
    return out


@dataclass
class GgSummary:
    max_abs_lat: float
    max_abs_long: float
    samples: list[tuple[float, float]]  # (a_long, a_lat) for plotting


def compute_gg(rows: list[dict], car: str | None = None) -> GgSummary:
    plants = [
        r for r in rows
        if r["type"] == "plant" and (car is None or r["car"] == car)
    ]
    if not plants:
        raise MetricsError("log contains no plant rows")
    samples = [(r["a_long"], r["a_lat"]) for r in plants]
    return GgSummary(
        max_abs_lat=max(abs(a) for _, a in samples),
        max_abs_long=max(abs(a) for a, _ in samples),
        samples=samples,
    )


@dataclass
class DetectionPeriodStats:
    mean_period: float
    histogram: dict[str, int]  # bucketed by 25 ms bins
    mean_latency: float
    count: int


def detection_period_stats(rows: list[dict], source: str = "lidar",
                           car: str | None = None,
                           true_only: bool = True) -> DetectionPeriodStats:
    """Inter-detection periods from the time deltas between sequential
    detections of one sensor, plus mean sensing-to-delivery latency."""
    dets = [
        r for r in rows
        if r["type"] == "detection" and r["source"] == source
        and (car is None or r["car"] == car)
        and not (true_only and r.get("fp", False))
    ]
    if len(dets) < 2:
        raise MetricsError(f"not enough {source} detections for period stats")
    times = [r["t"] for r in dets]
    periods = [b - a for a, b in zip(times[:-1], times[1:]) if b > a]
    if not periods:
        raise MetricsError("detections never advanced in time")
    hist: dict[str, int] = {}
    for p in periods:
        key = f"{int(p / 0.025) * 25}ms"
        hist[key] = hist.get(key, 0) + 1
    latencies = [r.get("latency", 0.0) for r in dets]
    return DetectionPeriodStats(
        mean_period=sum(periods) / len(periods),
        histogram=dict(sorted(hist.items(), key=lambda kv: int(kv[0][:-2]))),
        mean_latency=sum(latencies) / len(latencies),
        count=len(dets),
    )


def pass_ledger(rows: list[dict]) -> list[dict]:
    return [r for r in rows if r["type"] == "race_event" and r["event"] == "pass"]


def write_report(rows: list[dict], out_dir: str | Path) -> dict:
    """Emit cte_brackets.csv, gg_samples.csv, and report.json; returns the
    summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cars = sorted({r["car"] for r in rows if r["type"] == "controller"})
    summary: dict = {"cars": {}, "passes": pass_ledger(rows)}

    with open(out / "cte_brackets.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["car", "bracket", "mean_abs_cte_m", "samples"])
        for car in cars:
            brackets = compute_cte_brackets(rows, car)
            for label, mean, count in brackets.rows():
                w.writerow([car, label, "" if mean is None else f"{mean:.6f}", count])
            summary["cars"].setdefault(car, {})["cte_brackets"] = {
                label: mean for label, mean, _ in brackets.rows()
            }

    with open(out / "gg_samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["car", "a_long", "a_lat"])
        for car in sorted({r["car"] for r in rows if r["type"] == "plant"}):
            gg = compute_gg(rows, car)
            for a_long, a_lat in gg.samples:
                w.writerow([car, a_long, a_lat])
            summary["cars"].setdefault(car, {})["gg"] = {
                "max_abs_lat": gg.max_abs_lat, "max_abs_long": gg.max_abs_long,
            }

    for car in sorted({r["car"] for r in rows if r["type"] == "detection"}):
        try:
            stats = detection_period_stats(rows, "lidar", car)
        except MetricsError:
            continue
        summary["cars"].setdefault(car, {})["lidar_detection_period"] = {
            "mean_s": stats.mean_period, "count": stats.count,
            "histogram": stats.histogram,
        }

    with open(out / "report.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
