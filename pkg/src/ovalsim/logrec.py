"""Typed JSON-lines run log.

One row per record with a "type" discriminator; rows are written in
simulation order with deterministic float formatting, so identical runs
produce byte-identical files. Metrics are pure functions of this file.
"""

from __future__ import annotations

import json
from pathlib import Path

LOG_SCHEMA_VERSION = 1

ROW_TYPES = (
    "header", "plant", "controller", "tracker", "planner", "localization",
    "gate", "detection", "race_event", "telemetry", "health",
)


class RunLog:
    """Collects rows in memory; optionally streams them to a file."""

    def __init__(self, path: str | Path | None = None):
        self.rows: list[dict] = []
        self._fh = None
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w")

    def write(self, row_type: str, **fields) -> None:
        assert row_type in ROW_TYPES, row_type
        row = {"type": row_type, **fields}
        self.rows.append(row)
        if self._fh is not None:
            self._fh.write(json.dumps(row) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "RunLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_log(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
