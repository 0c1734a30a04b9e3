"""CSV and JSON exchange formats.

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces the in-memory values bit for bit.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import FrequencyTrace, TrajectorySet
from .errors import NotFoundError, ParseError
from .grid_model import Network
from .wavefront import GridSpec, LocationResult, ScalarField, SpeedField, TdoaEntry, TdoaSamples


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    return repr(x)


def _write_lines(path, lines: Iterable[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    return path


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"file not found: {path}")
    return path.read_text().splitlines()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(path, doc) -> Path:
    return _write_lines(path, [json.dumps(doc, indent=1, sort_keys=True, allow_nan=False)])


def safe_name(bus_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", bus_id)


# -- time series ------------------------------------------------------------

def write_series_csv(path, times, columns: Sequence[str], data: np.ndarray) -> Path:
    """``time,<col...>`` with one row per instant; ``data`` is (T, ncols)."""
    data = np.asarray(data, dtype=float).reshape(len(times), len(columns))
    header = ",".join(["time", *columns])
    return _write_lines(path, [header] + [
        ",".join([fmt(t), *map(fmt, row)]) for t, row in zip(times, data)
    ])


def write_trajectory_csv(path, traj: TrajectorySet, stride: int = 1) -> Path:
    return write_series_csv(path, traj.times[::stride], traj.bus_ids, traj.freq_dev[::stride])


def write_trace_csv(path, trace: FrequencyTrace) -> Path:
    return write_series_csv(path, trace.times, [trace.bus], np.asarray(trace.values)[:, None])


def read_series_csv(path, net: Network | None = None) -> list[FrequencyTrace]:
    """One FrequencyTrace per data column; positions come from ``net`` when given."""
    lines = _read_lines(path)
    if not lines or not lines[0].startswith("time"):
        raise ParseError(f"{path}: expected a 'time,...' header")
    cols = lines[0].split(",")[1:]
    try:
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if rows.size == 0 or rows.shape[1] != len(cols) + 1:
        raise ParseError(f"{path}: no data or ragged rows")
    out = []
    for j, bus in enumerate(cols):
        pos = None
        if net is not None and bus in net.index:
            pos = net.buses[net.index[bus]].pos
        out.append(FrequencyTrace(bus, pos, rows[:, 0].copy(), rows[:, j + 1].copy()))
    return out


def read_trace_dir(directory, net: Network | None = None) -> list[FrequencyTrace]:
    d = Path(directory)
    if not d.is_dir():
        raise NotFoundError(f"trace directory not found: {d}")
    traces = []
    for p in sorted(d.glob("*.csv")):
        traces.extend(read_series_csv(p, net))
    if net is not None:
        order = {bus: i for i, bus in enumerate(net.ids)}
        traces.sort(key=lambda tr: order.get(tr.bus, len(order)))
    return traces


# -- TDOA samples -----------------------------------------------------------

def write_tdoa_csv(path, samples: TdoaSamples) -> Path:
    return _write_lines(path, ["bus,x,y,tdoa_s"] + [
        f"{e.bus},{fmt(e.pos[0])},{fmt(e.pos[1])},{fmt(e.tdoa)}" for e in samples.entries
    ])


def read_tdoa_csv(path) -> TdoaSamples:
    lines = _read_lines(path)
    if not lines or lines[0].strip() != "bus,x,y,tdoa_s":
        raise ParseError(f"{path}: expected header 'bus,x,y,tdoa_s'")
    entries = []
    try:
        for ln in lines[1:]:
            if not ln:
                continue
            bus, x, y, t = ln.split(",")
            entries.append(TdoaEntry(bus, (float(x), float(y)), float(t)))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return TdoaSamples(tuple(entries), 0.0)


def write_exclusions_csv(path, samples: TdoaSamples) -> Path:
    return _write_lines(path, ["bus,reason"] + [
        f"{bus},{reason.replace(',', ';')}" for bus, reason in samples.exclusions
    ])


# -- fields -----------------------------------------------------------------

def write_field_csv(path, field: ScalarField | SpeedField) -> Path:
    g = field.grid
    head = [
        f"nx={g.nx},ny={g.ny}",
        f"x_min={fmt(g.x_min)},x_max={fmt(g.x_max)}",
        f"y_min={fmt(g.y_min)},y_max={fmt(g.y_max)}",
        "masked_value=NaN",
    ]
    vals = np.where(field.mask, field.values, np.nan)
    return _write_lines(path, head + [",".join(map(fmt, row)) for row in vals])


def _kv(line: str) -> dict[str, str]:
    try:
        return dict(part.split("=", 1) for part in line.split(","))
    except ValueError:
        raise ParseError(f"malformed field header line {line!r}") from None


def read_field_csv(path) -> ScalarField:
    lines = _read_lines(path)
    if len(lines) < 4:
        raise ParseError(f"{path}: truncated field header")
    h = {}
    for ln in lines[:4]:
        h.update(_kv(ln))
    try:
        grid = GridSpec(float(h["x_min"]), float(h["x_max"]), float(h["y_min"]), float(h["y_max"]),
                        int(h["nx"]), int(h["ny"]))
        vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[4:] if ln], dtype=float)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc
    if vals.shape != grid.shape:
        raise ParseError(f"{path}: body shape {vals.shape} does not match header {grid.shape}")
    return ScalarField(grid, vals, np.isfinite(vals))


# -- localization -----------------------------------------------------------

def write_location_csv(path, res: LocationResult) -> Path:
    return _write_lines(path, [",".join(fmt(v) for v in (res.pos[0], res.pos[1], res.residual, res.v_hat))])


def read_location_csv(path) -> tuple[float, float, float, float]:
    lines = [ln for ln in _read_lines(path) if ln]
    if len(lines) != 1:
        raise ParseError(f"{path}: expected a single line")
    x, y, r, v = (float(s) for s in lines[0].split(","))
    return x, y, r, v
