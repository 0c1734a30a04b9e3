"""End-to-end runs shared by the CLI subcommands and the acceptance suite."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import RunConfig
from .dynamics import FrequencyTrace, TrajectorySet, sample_measurements, simulate
from .errors import EmptyRegion, EmwaveError, InsufficientCells
from .fileio import (
    dump_json,
    safe_name,
    sha256_file,
    write_exclusions_csv,
    write_field_csv,
    write_tdoa_csv,
    write_trace_csv,
    write_trajectory_csv,
)
from .grid_model import Network, ScenarioSpec, apply_pv_scenario
from .wavefront import (
    ScalarField,
    SpeedField,
    TdoaSamples,
    build_tdoa_samples,
    interpolate_field,
    penetration_raster,
    penetration_speed_correlation,
    regional_speed_stats,
    speed_field,
)


@dataclass
class Analysis:
    samples: TdoaSamples
    tdoa_field: ScalarField
    speed: SpeedField
    penetration: ScalarField
    stats: dict


def run_simulation(net: Network, cfg: RunConfig) -> tuple[TrajectorySet, list[FrequencyTrace]]:
    traj = simulate(net, cfg.disturbance(net), cfg.sim())
    return traj, sample_measurements(traj, net, cfg.sensor())


def analyze_traces(traces: Sequence[FrequencyTrace], net: Network, cfg: RunConfig) -> Analysis:
    """Detection, interpolation, gradient speed and summary statistics."""
    dist = cfg.disturbance(net)
    samples = build_tdoa_samples(traces, net, dist, cfg.detector())
    sensor_pos = [tr.pos for tr in traces if tr.pos is not None]
    grid = cfg.grid(sensor_pos)
    interp = cfg["interp"]
    tfield = interpolate_field(samples, grid, float(interp["power"]), interp["max_radius"])
    speed = speed_field(tfield, float(cfg["speed"]["min_grad"]))
    pen = penetration_raster(net, grid, float(interp["power"]))
    stats = summarize(speed, net, cfg.region_masks(grid), samples)
    return Analysis(samples, tfield, speed, pen, stats)


def summarize(speed: SpeedField, net: Network, regions: Mapping[str, np.ndarray], samples: TdoaSamples) -> dict:
    valid = speed.speed[speed.mask]
    try:
        interior = speed.interior_median()
    except EmptyRegion:
        interior = None
    region_stats = {}
    for name, mask in regions.items():
        try:
            region_stats[name] = regional_speed_stats(speed, {name: mask})[name]
        except EmptyRegion as exc:
            region_stats[name] = {"error": f"EmptyRegion: {exc}"}
    try:
        r, note = penetration_speed_correlation(speed, net), None
    except InsufficientCells as exc:
        r, note = None, f"{type(exc).__name__}: {exc}"
    return {
        "event_time": samples.event_time,
        "n_arrivals": len(samples),
        "n_excluded": len(samples.exclusions),
        "speed": {
            "valid_cells": int(valid.size),
            "interior_median": interior,
            "mean": float(valid.mean()),
            "median": float(np.median(valid)),
            "p5": float(np.percentile(valid, 5)),
            "p95": float(np.percentile(valid, 95)),
        },
        "regions": region_stats,
        "pearson_r": r,
        "pearson_note": note,
    }


def write_analysis(out: Path, a: Analysis) -> list[Path]:
    out = Path(out)
    return [
        write_tdoa_csv(out / "tdoa.csv", a.samples),
        write_exclusions_csv(out / "exclusions.csv", a.samples),
        write_field_csv(out / "tdoa_field.csv", a.tdoa_field),
        write_field_csv(out / "speed_field.csv", a.speed),
        write_field_csv(out / "penetration_field.csv", a.penetration),
        dump_json(out / "stats.json", a.stats),
    ]


def write_simulation(out: Path, traj: TrajectorySet, traces: Sequence[FrequencyTrace], cfg: RunConfig) -> list[Path]:
    out = Path(out)
    files = [write_trace_csv(out / "traces" / f"trace_{safe_name(tr.bus)}.csv", tr) for tr in traces]
    if cfg["output"]["trajectory"]:
        files.append(write_trajectory_csv(out / "trajectory.csv", traj, int(cfg["output"]["trajectory_stride"])))
    return files


def write_manifest(out: Path, command: str, cfg: RunConfig, files: Sequence[Path],
                   net: Network | None = None, inputs: Mapping[str, str] | None = None) -> Path:
    out = Path(out)
    doc = {
        "command": command,
        "config_hash": cfg.config_hash(net, inputs),
        "seed": cfg.seed,
        "files": [
            {"path": Path(f).relative_to(out).as_posix(), "sha256": sha256_file(f)}
            for f in sorted(files, key=lambda p: Path(p).relative_to(out).as_posix())
        ],
    }
    if inputs:
        doc["inputs"] = dict(sorted(inputs.items()))
    return dump_json(out / f"manifest_{command}.json", doc)


# -- scenario sweep ---------------------------------------------------------

@dataclass
class ScenarioOutcome:
    name: str
    spec: ScenarioSpec
    analysis: Analysis | None = None
    error: EmwaveError | None = None
    files: list[Path] = field(default_factory=list)


def sweep_workers(n_jobs: int) -> int:
    cap = os.environ.get("EMWAVE_THREADS")
    try:
        cap = int(cap) if cap else os.cpu_count() or 1
    except ValueError:
        cap = 1
    return max(1, min(n_jobs, cap))


def run_scenario(base: Network, name: str, spec: ScenarioSpec, cfg: RunConfig, out: Path | None) -> ScenarioOutcome:
    res = ScenarioOutcome(name, spec)
    try:
        net = apply_pv_scenario(base, spec)
        _, traces = run_simulation(net, cfg)
        res.analysis = analyze_traces(traces, net, cfg)
        if out is not None:
            res.files = write_analysis(out / f"scenario_{safe_name(name)}", res.analysis)
    except EmwaveError as exc:
        res.error = exc
    return res


def run_sweep(base: Network, cfg: RunConfig, out: Path | None = None) -> list[ScenarioOutcome]:
    """All scenarios of ``cfg``; results come back in scenario-list order."""
    jobs = cfg.scenarios()
    workers = sweep_workers(len(jobs))
    if workers == 1:
        return [run_scenario(base, n, s, cfg, out) for n, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(run_scenario, base, n, s, cfg, out) for n, s in jobs]
        return [f.result() for f in futs]


def summary_rows(outcomes: Sequence[ScenarioOutcome], region_names: Sequence[str]) -> tuple[list[str], list[list]]:
    header = ["scenario", "penetration", "status", "interior_median_speed",
              *[f"{r}_median_speed" for r in region_names], "pearson_r"]
    rows = []
    for o in outcomes:
        if o.error is not None:
            rows.append([o.name, o.spec.penetration, f"failed:{type(o.error).__name__}",
                         None, *[None] * len(region_names), None])
            continue
        st = o.analysis.stats
        rows.append([o.name, o.spec.penetration, "ok", st["speed"]["interior_median"],
                     *[st["regions"][r].get("median") for r in region_names], st["pearson_r"]])
    return header, rows
