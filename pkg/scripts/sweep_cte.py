#!/usr/bin/env python3
"""Sweep commanded lap speed and report bracketed cross-track error.

Useful when retuning gain brackets or the lookahead law:

    python scripts/sweep_cte.py --speeds 40 50 60 --duration 45
"""

import argparse

import numpy as np

from ovalsim.executive import load_scenario


def lap_stats(speed: float, duration: float, seed: int):
    overrides = {
        "duration": duration,
        "seed": seed,
        "operator_script": [{"t": 0.0, "command": "set_round_speed", "value": speed}],
        "cars": [{"name": "ego", "stack": "full", "role": "defender",
                  "start": {"lane": "inner", "station": 0.0, "speed": min(speed, 50.0)}}],
    }
    exe = load_scenario("time_trial", overrides=overrides)
    exe.run()
    exe.close()
    ctes = [abs(r["cte"]) for r in exe.log.rows
            if r["type"] == "controller" and r["t"] > 10.0]
    plant = [r for r in exe.log.rows if r["type"] == "plant" and r["t"] > 10.0]
    a_max = max(np.hypot(r["a_lat"], r["a_long"]) for r in plant)
    return np.mean(ctes), np.max(ctes), a_max


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--speeds", nargs="+", type=float, default=[40.0, 50.0, 60.0])
    ap.add_argument("--duration", type=float, default=45.0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    print(f"{'v [m/s]':>8} {'mean|CTE|':>10} {'max|CTE|':>10} {'max |a|':>8}")
    for v in args.speeds:
        mean, worst, a_max = lap_stats(v, args.duration, args.seed)
        print(f"{v:8.1f} {mean:10.3f} {worst:10.3f} {a_max:8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
