#!/usr/bin/env python3
"""Thin wrapper over the CLI for quick experiments:

    python scripts/run_scenario.py time_trial --duration 20
"""

import sys

from ovalsim.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    if argv and not argv[0].startswith("-"):
        argv = ["--scenario", argv[0]] + argv[1:]
    sys.exit(main(["run"] + argv))
