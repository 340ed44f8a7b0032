"""CSV readers and writers. Floats are written with ``repr`` so files round-trip exactly."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

from .airspace import FlightPlan

PLAN_HEADER = ["aircraft", "seq", "x", "y", "altitude", "t", "ground_speed", "fuel"]

PathLike = Union[str, Path]


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(dest: Union[PathLike, TextIO], header: Sequence[str], rows: Iterable) -> None:
    """Write rows (dicts keyed by header, or sequences) with ``\\n`` line endings."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            vals = [r[h] for h in header] if isinstance(r, dict) else list(r)
            w.writerow([_fmt(v) for v in vals])

    if hasattr(dest, "write"):
        emit(dest)
    else:
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        with open(dest, "w", newline="") as fh:
            emit(fh)


def csv_text(header: Sequence[str], rows: Iterable) -> str:
    buf = io.StringIO()
    write_csv(buf, header, rows)
    return buf.getvalue()


def write_plans(dest: Union[PathLike, TextIO], plans: Sequence[FlightPlan],
                fuel: Optional[dict] = None) -> None:
    fuel = fuel or {}
    rows = []
    for p in sorted(plans, key=lambda q: q.owner):
        for i, (x, y, z, t) in enumerate(p.waypoints):
            rows.append([p.owner, i, float(x), float(y), float(z), float(t),
                         float(p.ground_speed), float(fuel.get(p.owner, 120.0))])
    write_csv(dest, PLAN_HEADER, rows)


class ScenarioError(ValueError):
    pass


def read_plans(src: Union[PathLike, TextIO]) -> tuple[list[FlightPlan], dict]:
    """Parse a plan CSV into flight plans and per-aircraft fuel (minutes)."""
    if hasattr(src, "read"):
        text = src.read()
    else:
        text = Path(src).read_text()
    reader = csv.DictReader(io.StringIO(text))
    missing = set(PLAN_HEADER[:7]) - set(reader.fieldnames or [])
    if missing:
        raise ScenarioError(f"plan file missing columns: {sorted(missing)}")
    wps = defaultdict(list)
    speed, fuel = {}, {}
    try:
        for row in reader:
            aid = int(row["aircraft"])
            wps[aid].append((int(row["seq"]), float(row["x"]), float(row["y"]),
                             float(row["altitude"]), float(row["t"])))
            speed[aid] = float(row["ground_speed"])
            if row.get("fuel") not in (None, ""):
                fuel[aid] = float(row["fuel"])
        plans = [FlightPlan(aid, tuple(w[1:] for w in sorted(wps[aid])), speed[aid])
                 for aid in sorted(wps)]
    except (KeyError, ValueError) as e:
        raise ScenarioError(f"bad plan file: {e}") from e
    return plans, fuel


def json_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
