"""Trajectory CSV and metrics JSON files.

Floats are written with ``repr`` so reading a file back yields the exact
values that were logged.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .env import END_PHASES, FLIGHT_PHASES

TRAJECTORY_COLUMNS = ("trial", "drone", "t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az",
                      "ux", "uy", "uz", "reward", "phase")
_INT_COLUMNS = ("trial", "drone")
_PHASES = set(FLIGHT_PHASES) | set(END_PHASES) | {"pad"}


class TrajectoryError(ValueError):
    """Malformed trajectory file; ``problems`` lists ``(line, message)`` pairs."""

    def __init__(self, path, problems: list[tuple[int, str]]):
        self.problems = problems
        shown = "\n".join(f"  line {line}: {msg}" for line, msg in problems[:20])
        more = f"\n  ... and {len(problems) - 20} more" if len(problems) > 20 else ""
        super().__init__(f"{path}: {len(problems)} malformed line(s)\n{shown}{more}")


def write_trajectory(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for r in rows:
            w.writerow([r[c] if c in _INT_COLUMNS or c == "phase" else repr(float(r[c])) for c in TRAJECTORY_COLUMNS])
    return path


def _parse_row(fields: list[str]) -> dict:
    if len(fields) != len(TRAJECTORY_COLUMNS):
        raise ValueError(f"expected {len(TRAJECTORY_COLUMNS)} fields, found {len(fields)}")
    row = {}
    for name, text in zip(TRAJECTORY_COLUMNS, fields):
        if name in _INT_COLUMNS:
            try:
                row[name] = int(text)
            except ValueError:
                raise ValueError(f"column {name!r}: {text!r} is not an integer") from None
        elif name == "phase":
            if text not in _PHASES:
                raise ValueError(f"column 'phase': unknown phase {text!r}")
            row[name] = text
        else:
            try:
                value = float(text)
            except ValueError:
                raise ValueError(f"column {name!r}: {text!r} is not a number") from None
            if not math.isfinite(value):
                raise ValueError(f"column {name!r}: non-finite value {text!r}")
            row[name] = value
    return row


def read_trajectory(path) -> list[dict]:
    """Parse a trajectory CSV, reporting every bad line at once.

    Besides per-line syntax, every drone of every trial must close with a
    ``pad`` row followed by an end-state row (or be marked invalid); a file
    cut short fails on its last line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TrajectoryError(path, [(0, str(exc))]) from exc
    lines = text.splitlines()
    if not lines:
        raise TrajectoryError(path, [(1, "empty file")])
    problems: list[tuple[int, str]] = []
    header = next(csv.reader([lines[0]]))
    if tuple(header) != TRAJECTORY_COLUMNS:
        problems.append((1, f"header must be {','.join(TRAJECTORY_COLUMNS)}"))
    rows: list[dict] = []
    line_of: list[int] = []
    for lineno, fields in enumerate(csv.reader(lines[1:]), start=2):
        try:
            rows.append(_parse_row(fields))
            line_of.append(lineno)
        except ValueError as exc:
            problems.append((lineno, str(exc)))
    if not problems:
        problems.extend(_structure_problems(rows, line_of))
    if problems:
        raise TrajectoryError(path, problems)
    return rows


def _structure_problems(rows, line_of) -> list[tuple[int, str]]:
    out = []
    state: dict = {}
    last_line: dict = {}
    for r, line in zip(rows, line_of):
        key = (r["trial"], r["drone"])
        phase = r["phase"]
        prev = state.get(key)
        if prev in END_PHASES:
            out.append((line, f"trial {key[0]} drone {key[1]}: row after the episode ended"))
        elif phase in END_PHASES and phase != "invalid" and prev != "pad":
            out.append((line, f"trial {key[0]} drone {key[1]}: end row {phase!r} without a preceding pad row"))
        elif prev == "pad" and phase not in END_PHASES:
            out.append((line, f"trial {key[0]} drone {key[1]}: pad row must be followed by an end row"))
        state[key] = phase
        last_line[key] = line
    for key, phase in state.items():
        if phase not in END_PHASES:
            out.append((last_line[key], f"trial {key[0]} drone {key[1]}: file ends before the episode does"))
    return sorted(out)


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_metrics(path, metrics: dict) -> Path:
    """Sorted-key JSON; non-finite numbers become ``null``."""
    path = Path(path)
    path.write_text(json.dumps(_clean(metrics), indent=2, sort_keys=True) + "\n")
    return path


def read_metrics(path) -> dict:
    return json.loads(Path(path).read_text())


def compare_metrics(expected: dict, actual: dict, tol: float = 1e-9) -> list[str]:
    """Keys whose numeric values differ by more than ``tol`` (or differ in kind)."""
    expected, actual = _clean(expected), _clean(actual)
    out = []
    for key, want in expected.items():
        if key not in actual:
            continue
        got = actual[key]
        if isinstance(want, (int, float)) and isinstance(got, (int, float)) and not isinstance(want, bool):
            if abs(float(want) - float(got)) > tol:
                out.append(f"{key}: summary {want!r} vs replay {got!r}")
        elif (want is None) != (got is None):
            out.append(f"{key}: summary {want!r} vs replay {got!r}")
    return out
