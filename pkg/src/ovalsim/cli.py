"""Command-line entry point.

    ovalsim run --scenario time_trial --seed 7 --headless --log-dir out/
    ovalsim report --log out/run.jsonl --out-dir out/
    ovalsim basestation --telemetry-port 15600 --command-port 15601 \
        --ui-bridge-port 15602

`run` executes a scenario (optionally streaming telemetry and hosting the
command port), writes the run log, and emits the metrics report. Exit code
is nonzero when an invariant is breached in check mode.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import ScenarioError, bundled_scenarios, load_scenario_config
from .logrec import RunLog, read_log
from .metrics import write_report


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ovalsim",
                                description="Deterministic oval-racing stack simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("--scenario", required=True,
                     help=f"bundled name ({', '.join(bundled_scenarios())}) or YAML path")
    run.add_argument("--seed", type=int, default=None, help="override scenario seed")
    run.add_argument("--duration", type=float, default=None, help="sim seconds")
    run.add_argument("--log-dir", default="runs", help="output directory")
    run.add_argument("--headless", action="store_true",
                     help="no sockets, no pacing (default when no ports given)")
    run.add_argument("--telemetry-port", type=int, default=None)
    run.add_argument("--command-port", type=int, default=None)
    run.add_argument("--ui-bridge-port", type=int, default=None,
                     help="also host an inline base station with this WebSocket port")
    run.add_argument("--realtime", action="store_true",
                     help="pace sim time to wall clock (best effort, UI mode)")
    run.add_argument("--no-check", action="store_true",
                     help="skip invariant checking")

    rep = sub.add_parser("report", help="recompute metrics from a stored run log")
    rep.add_argument("--log", required=True)
    rep.add_argument("--out-dir", default=None)

    bs = sub.add_parser("basestation", help="UDP receiver + WebSocket UI bridge")
    bs.add_argument("--telemetry-port", type=int, required=True)
    bs.add_argument("--command-host", default="127.0.0.1")
    bs.add_argument("--command-port", type=int, required=True)
    bs.add_argument("--ui-bridge-port", type=int, required=True)
    return p


def _cmd_run(args) -> int:
    from .executive import RaceExecutive

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.duration is not None:
        overrides["duration"] = args.duration
    try:
        cfg = load_scenario_config(args.scenario, overrides)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2

    log_dir = Path(args.log_dir)
    log_path = log_dir / f"{cfg.name}_seed{cfg.seed}.jsonl"
    station = None
    try:
        exe = RaceExecutive(
            cfg, log=RunLog(log_path),
            telemetry_port=args.telemetry_port,
            command_port=args.command_port,
            check_invariants=not args.no_check,
        )
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2

    if args.ui_bridge_port is not None:
        if args.telemetry_port is None or args.command_port is None:
            print("--ui-bridge-port needs --telemetry-port and --command-port",
                  file=sys.stderr)
            return 2
        from .basestation import BaseStation

        station = BaseStation(
            telemetry_port=args.telemetry_port, command_host="127.0.0.1",
            command_port=args.command_port, bridge_port=args.ui_bridge_port,
        ).start()
        print(f"UI bridge on ws://127.0.0.1:{station.bridge.port}")

    steps = int(round(cfg.duration / cfg.schedule.plant_dt))
    t_wall = time.monotonic()
    try:
        for i in range(steps):
            exe.tick()
            if args.realtime:
                ahead = exe.sim_time - (time.monotonic() - t_wall)
                if ahead > 0.002:
                    time.sleep(ahead)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
    finally:
        exe.close()
        if station is not None:
            station.stop()

    write_report(exe.log.rows, log_dir / f"{cfg.name}_seed{cfg.seed}_report")
    print(f"log: {log_path}")
    passes = [r for r in exe.log.rows
              if r["type"] == "race_event" and r["event"] == "pass"]
    if passes:
        print(f"passes: {len(passes)}")
    if exe.invariant_failures:
        print("INVARIANT FAILURES:", file=sys.stderr)
        for msg in exe.invariant_failures[:20]:
            print(f"  {msg}", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    rows = read_log(args.log)
    out_dir = args.out_dir or (Path(args.log).with_suffix("") .as_posix() + "_report")
    summary = write_report(rows, out_dir)
    print(f"report written to {out_dir}")
    for car, data in sorted(summary.get("cars", {}).items()):
        overall = data.get("cte_brackets", {}).get(">10m/s")
        if overall is not None:
            print(f"  {car}: mean |CTE| above 10 m/s = {overall:.3f} m")
    return 0


def _cmd_basestation(args) -> int:
    from .basestation import BaseStation

    station = BaseStation(
        telemetry_port=args.telemetry_port, command_host=args.command_host,
        command_port=args.command_port, bridge_port=args.ui_bridge_port,
    ).start()
    print(f"listening for telemetry on udp:{args.telemetry_port}, "
          f"bridge on ws://127.0.0.1:{station.bridge.port}")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        station.stop()
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "report":
        return _cmd_report(args)
    if args.command == "basestation":
        return _cmd_basestation(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
