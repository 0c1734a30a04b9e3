"""``emwave`` command line.

    emwave simulate --config run.yaml [--out DIR] [--seed N] [--sim.dt 0.0005 ...]
    emwave analyze  --config run.yaml [--traces DIR]
    emwave scenario --config sweep.yaml
    emwave locate   --config run.yaml --tdoa tdoa.csv
    emwave replay   --config run.yaml [--traces DIR] [--frames 2.0,2.5,3.0]

Any ``--<dotted.config.key> VALUE`` flag overrides the config file. Errors
print one ``error=<Class> code=<n> message=<text>`` line on stderr and exit
with the class's code.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import pipeline
from .config import RunConfig, parse_overrides
from .errors import CollinearSensors, EmwaveError, TimeOutOfRange
from .fileio import (
    _write_lines,
    fmt,
    read_tdoa_csv,
    read_trace_dir,
    sha256_file,
    write_field_csv,
    write_location_csv,
)
from .wavefront import locate_event, replay_frames


def _inputs_digest(paths) -> dict[str, str]:
    return {Path(p).name: sha256_file(p) for p in paths}


def cmd_simulate(cfg: RunConfig, args) -> int:
    net = cfg.network()
    traj, traces = pipeline.run_simulation(net, cfg)
    out = cfg.out_dir
    files = pipeline.write_simulation(out, traj, traces, cfg)
    pipeline.write_manifest(out, "simulate", cfg, files, net)
    print(f"wrote {len(traces)} traces to {out / 'traces'}")
    return 0


def _trace_dir(cfg: RunConfig, args) -> Path:
    return Path(args.traces) if args.traces else cfg.out_dir / "traces"


def cmd_analyze(cfg: RunConfig, args) -> int:
    net = cfg.network()
    tdir = _trace_dir(cfg, args)
    traces = read_trace_dir(tdir, net)
    a = pipeline.analyze_traces(traces, net, cfg)
    out = cfg.out_dir
    files = pipeline.write_analysis(out, a)
    pipeline.write_manifest(out, "analyze", cfg, files, net, _inputs_digest(sorted(tdir.glob("*.csv"))))
    s = a.stats
    print(f"{s['n_arrivals']} arrivals, {s['n_excluded']} excluded; "
          f"interior median speed {s['speed']['interior_median']}")
    return 0


def cmd_scenario(cfg: RunConfig, args) -> int:
    base = cfg.network()
    out = cfg.out_dir
    outcomes = pipeline.run_sweep(base, cfg, out)
    regions = list(cfg["regions"] or {})
    header, rows = pipeline.summary_rows(outcomes, regions)
    cell = lambda v: "" if v is None else (fmt(v) if isinstance(v, float) else str(v))
    summary = _write_lines(out / "summary.csv", [",".join(header)] + [",".join(cell(v) for v in r) for r in rows])
    files = [summary] + [f for o in outcomes for f in o.files]
    pipeline.write_manifest(out, "scenario", cfg, files, base)
    for r in rows:
        print(" ".join(f"{h}={cell(v)}" for h, v in zip(header, r)))
    failed = [o for o in outcomes if o.error is not None]
    if failed:
        exc = failed[0].error
        _report(exc, f"{len(failed)} of {len(outcomes)} scenarios failed; first: {failed[0].name}: {exc}")
        return exc.exit_code
    return 0


def cmd_locate(cfg: RunConfig, args) -> int:
    tdoa_path = Path(args.tdoa) if args.tdoa else cfg.out_dir / "tdoa.csv"
    samples = read_tdoa_csv(tdoa_path)
    grid = cfg.grid(samples.positions)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = locate_event(samples, grid)
    out = cfg.out_dir
    f = write_location_csv(out / "location.csv", res)
    pipeline.write_manifest(out, "locate", cfg, [f], inputs=_inputs_digest([tdoa_path]))
    print(f"x={fmt(res.pos[0])} y={fmt(res.pos[1])} residual={fmt(res.residual)} v_hat={fmt(res.v_hat)}")
    if res.collinear:
        exc = CollinearSensors("sensor positions are collinear; location is mirror-ambiguous across the sensor line")
        _report(exc)
        return exc.exit_code
    return 0


def _frame_times(cfg: RunConfig, args, traces) -> list[float]:
    if args.frames:
        return [float(t) for t in args.frames.split(",") if t.strip()]
    ft = cfg["replay"].get("frame_times")
    if isinstance(ft, dict):
        return list(np.linspace(float(ft["start"]), float(ft["stop"]), int(ft["count"])))
    if ft:
        return [float(t) for t in ft]
    return [float(t) for t in traces[0].times]


def cmd_replay(cfg: RunConfig, args) -> int:
    net = cfg.network()
    tdir = _trace_dir(cfg, args)
    traces = read_trace_dir(tdir, net)
    if not traces:
        raise TimeOutOfRange(f"no traces in {tdir}")
    grid = cfg.grid([tr.pos for tr in traces if tr.pos is not None])
    times = _frame_times(cfg, args, traces)
    frames = replay_frames(traces, grid, times, float(cfg["interp"]["power"]), cfg["interp"]["max_radius"])
    out = cfg.out_dir / "frames"
    files = [write_field_csv(out / f"frame_{i:04d}.csv", fr) for i, fr in enumerate(frames)]
    files.append(_write_lines(out / "times.csv", ["frame,time"] + [f"{i},{fmt(t)}" for i, t in enumerate(times)]))
    pipeline.write_manifest(cfg.out_dir, "replay", cfg, files, net, _inputs_digest(sorted(tdir.glob("*.csv"))))
    print(f"wrote {len(frames)} frames to {out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "scenario": cmd_scenario,
    "locate": cmd_locate,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emwave", description="Electromechanical wave simulation and analysis")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML or JSON run configuration")
        s.add_argument("--out", help="output directory (overrides 'out')")
        s.add_argument("--seed", type=int, help="root seed (overrides 'seed')")
        if name in ("analyze", "replay"):
            s.add_argument("--traces", help="directory of trace CSVs (default: <out>/traces)")
        if name == "locate":
            s.add_argument("--tdoa", help="TDOA samples CSV (default: <out>/tdoa.csv)")
        if name == "replay":
            s.add_argument("--frames", help="comma-separated frame times in seconds")
    return p


def _report(exc: EmwaveError, message: str | None = None) -> None:
    msg = " ".join(str(message if message is not None else exc).split())
    print(f"error={type(exc).__name__} code={exc.exit_code} message={msg}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(rest)
        if args.out is not None:
            overrides["out"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = RunConfig.load(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except EmwaveError as exc:
        _report(exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
