"""Trajectory (JSON lines) and ensemble statistics (CSV + JSON) formats.

Floats are written with ``repr`` precision through :mod:`json`, which is the
shortest string that round-trips to the same double.  Non-finite values in
the config echo become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .measurement import PositionGridConfig, Readout
from .qstate import BasisKind, QuantumState
from .reconstruction import TrajectorySample
from .trajectory import EnsembleStats, TrajectoryRecord

SCHEMA_VERSION = "collapse_lab.trajectory/1"
STATS_SCHEMA_VERSION = "collapse_lab.stats/1"


def _clean(obj: Any) -> Any:
    """Turn numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_line(obj: dict) -> str:
    return json.dumps(_clean(obj), separators=(",", ":"), allow_nan=False)


def _num_or_null(x: float | None) -> float | None:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass(eq=False)
class SerializedTrajectory:
    """What :func:`read_trajectory` gives back: header, record and the dH column."""

    header: dict
    record: TrajectoryRecord
    dH: list = field(default_factory=list)


def trajectory_header(record: TrajectoryRecord) -> dict:
    grid = None
    basis = BasisKind.LEVEL.value
    if record.samples:
        st = record.samples[0].state
        basis = st.basis_kind.value
        if st.grid is not None:
            g = st.grid
            grid = {"x_min": g.x_min, "dx": g.dx, "n_points": g.n_points, "mass": g.mass, "omega": g.omega}
    return {
        "schema": SCHEMA_VERSION,
        "seed": int(record.seed),
        "index": int(record.index),
        "outcome": record.outcome,
        "collapse_time": _num_or_null(record.collapse_time),
        "n_samples": len(record.samples),
        "basis": basis,
        "grid": grid,
        "config": record.config,
    }


def trajectory_lines(record: TrajectoryRecord, dH: Sequence[float | None] | None = None) -> list[str]:
    """Header line plus one row per sample."""
    if dH is None and record.reconstructions:
        dH = [rec.dH for rec in record.reconstructions]
    if dH is not None and len(dH) != len(record.samples):
        raise ValueError(f"dH has {len(dH)} entries for {len(record.samples)} samples")
    lines = [dumps_line(trajectory_header(record))]
    for k, s in enumerate(record.samples):
        a = s.state.amplitudes
        row = {
            "t": float(s.t),
            "re": [float(x) for x in a.real],
            "im": [float(x) for x in a.imag],
            "r": None if k == 0 else float(record.readouts[k - 1].r),
            "dH": None if dH is None else _num_or_null(dH[k]),
        }
        lines.append(dumps_line(row))
    return lines


def write_trajectory(record: TrajectoryRecord, path, dH: Sequence[float | None] | None = None) -> Path:
    path = Path(path)
    text = "\n".join(trajectory_lines(record, dH)) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc
    return path


def read_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise ValueError(f"{path}: empty file")
    return json.loads(first)


def read_trajectory(path) -> SerializedTrajectory:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read trajectory from {path}: {exc}") from exc
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')!r}")
    rows = [json.loads(line) for line in lines[1:] if line.strip()]
    grid = PositionGridConfig(**header["grid"]) if header.get("grid") else None
    kind = BasisKind(header.get("basis", "level"))
    samples, readouts, dH = [], [], []
    for k, row in enumerate(rows):
        amps = np.array(row["re"], dtype=float) + 1j * np.array(row["im"], dtype=float)
        ro = None
        if k > 0:
            ro = Readout(row["r"], samples[-1].t)
            readouts.append(ro)
        samples.append(TrajectorySample(row["t"], QuantumState(amps, kind, grid), ro))
        dH.append(row["dH"])
    record = TrajectoryRecord(
        seed=header["seed"],
        samples=samples,
        readouts=readouts,
        outcome=header.get("outcome"),
        index=header.get("index", 0),
        collapse_time=header.get("collapse_time"),
        config=header.get("config", {}),
    )
    return SerializedTrajectory(header, record, dH if any(x is not None for x in dH) else None)


def stats_csv(stats: EnsembleStats) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["outcome_index", "count", "frequency"])
    freq = stats.frequencies
    for i, c in enumerate(stats.outcome_counts):
        w.writerow([i, int(c), repr(float(freq[i]))])
    buf.write("\n")
    n = stats.mean_population_series.shape[1]
    w.writerow(["time"] + [f"mean_pop_{i}" for i in range(n)])
    for t, row in zip(stats.times, stats.mean_population_series):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return buf.getvalue()


def stats_summary(stats: EnsembleStats) -> dict:
    return {
        "schema": STATS_SCHEMA_VERSION,
        "seed": int(stats.base_seed),
        "n_trajectories": int(stats.n_trajectories),
        "n_collapsed": stats.n_collapsed,
        "mean_collapse_time": _num_or_null(stats.mean_collapse_time),
        "config": stats.config,
    }


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.json")


def write_stats(stats: EnsembleStats, path) -> tuple[Path, Path]:
    """Write the CSV to ``path`` and the summary to ``<stem>.summary.json``."""
    path = Path(path)
    side = summary_path(path)
    try:
        path.write_text(stats_csv(stats), encoding="utf-8")
        side.write_text(json.dumps(_clean(stats_summary(stats)), indent=1, allow_nan=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write stats to {path}: {exc}") from exc
    return path, side


def read_stats(path) -> tuple[list[dict], list[list[float]], dict]:
    """Parse a stats CSV back into (outcome rows, series rows, summary)."""
    text = Path(path).read_text(encoding="utf-8")
    first, second = text.split("\n\n", 1)
    outcome_rows = list(csv.DictReader(_io.StringIO(first)))
    series = [[float(x) for x in row] for row in list(csv.reader(_io.StringIO(second)))[1:]]
    side = summary_path(path)
    summary = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    return outcome_rows, series, summary


def write_jsonl(rows: Sequence[dict], path, header: dict | None = None) -> Path:
    """Generic JSON-lines writer for plot data (header first when given)."""
    path = Path(path)
    out = [dumps_line(header)] if header is not None else []
    out.extend(dumps_line(r) for r in rows)
    path.write_text("\n".join(out) + ("\n" if out else ""), encoding="utf-8")
    return path
