import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from emwave import errors
from emwave.cli import main
from emwave.config import RunConfig, parse_overrides
from emwave.errors import ConfigError
from emwave.fileio import read_field_csv, read_location_csv, write_trace_csv
from emwave.dynamics import FrequencyTrace
from emwave.grid_model import build_chain, build_lattice, lattice_bus_id, save_network


def write_config(tmp_path, net, **doc):
    save_network(net, tmp_path / "net.json")
    base = {"network": "net.json", "out": str(tmp_path / "out"), "seed": 3}
    base.update(doc)
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(base))
    return p


def tree(d: Path) -> dict[str, bytes]:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture
def chain_cfg(tmp_path):
    net = build_chain(8, 100, 5, 1, 2)
    return write_config(tmp_path, net, disturbance={"bus": "1", "delta_p": -0.5, "t_event": 2.0},
                        sim={"t_end": 5.0}, grid={"nx": 8, "ny": 2})


def test_simulate_then_analyze(chain_cfg, tmp_path, capsys):
    assert main(["simulate", "--config", str(chain_cfg)]) == 0
    out = tmp_path / "out"
    assert len(list((out / "traces").glob("*.csv"))) == 8
    assert (out / "trajectory.csv").is_file()
    assert main(["analyze", "--config", str(chain_cfg)]) == 0
    for name in ("tdoa.csv", "exclusions.csv", "tdoa_field.csv", "speed_field.csv",
                 "penetration_field.csv", "stats.json", "manifest_simulate.json", "manifest_analyze.json"):
        assert (out / name).is_file(), name
    stats = json.loads((out / "stats.json").read_text())
    assert stats["n_arrivals"] == 8
    man = json.loads((out / "manifest_analyze.json").read_text())
    assert man["seed"] == 3 and len(man["inputs"]) == 8
    assert {f["path"] for f in man["files"]} >= {"tdoa.csv", "stats.json"}


def test_runs_are_byte_identical(chain_cfg, tmp_path):
    for out in ("a", "b"):
        assert main(["simulate", "--config", str(chain_cfg), "--out", str(tmp_path / out)]) == 0
        assert main(["analyze", "--config", str(chain_cfg), "--out", str(tmp_path / out)]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_seed_flag_changes_noise(chain_cfg, tmp_path):
    main(["simulate", "--config", str(chain_cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(chain_cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a["traces/trace_1.csv"] != b["traces/trace_1.csv"]
    assert a["trajectory.csv"] == b["trajectory.csv"]


def test_dotted_override(chain_cfg, tmp_path):
    assert main(["simulate", "--config", str(chain_cfg), "--sensor.sample_rate", "20", "--output.trajectory=false"]) == 0
    lines = (tmp_path / "out" / "traces" / "trace_1.csv").read_text().splitlines()
    assert len(lines) == 1 + 101
    assert not (tmp_path / "out" / "trajectory.csv").exists()


def test_missing_network_exit_code(tmp_path, capsys):
    p = tmp_path / "run.yaml"
    p.write_text("network: nowhere.json\n")
    assert main(["simulate", "--config", str(p)]) == errors.NotFoundError.exit_code
    err = capsys.readouterr().err
    assert err.startswith("error=NotFoundError code=10 ")


def test_empty_trace_dir(chain_cfg, tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["analyze", "--config", str(chain_cfg), "--traces", str(tmp_path / "empty")])
    assert code == errors.TooFewArrivals.exit_code


def test_unknown_override_key(chain_cfg):
    assert main(["simulate", "--config", str(chain_cfg), "--bogus.key", "1"]) == ConfigError.exit_code


def test_exit_codes_are_distinct():
    codes = [e.exit_code for e in errors.ALL_ERRORS]
    assert len(codes) == len(set(codes))
    assert 0 not in codes


def test_analyze_planar_ramp_traces(tmp_path):
    # arrivals T = x / 500 injected as synthetic step traces
    net = build_lattice(6, 6, 100, 5, 1, 2)
    cfg = write_config(tmp_path, net, disturbance={"bus": net.ids[0], "t_event": 2.0},
                       grid={"nx": 6, "ny": 6})
    tdir = tmp_path / "traces"
    t = np.arange(61) / 10
    for b in net.buses:
        arrival = 2.0 + b.pos[0] / 500.0
        v = np.clip((t - arrival) * 0.03, 0.0, None)
        write_trace_csv(tdir / f"trace_{b.id}.csv", FrequencyTrace(b.id, b.pos, t, v))
    assert main(["analyze", "--config", str(cfg), "--traces", str(tdir)]) == 0
    sp = read_field_csv(tmp_path / "out" / "speed_field.csv")
    np.testing.assert_allclose(sp.values[1:-1, 1:-1], 500.0, rtol=1e-9)


def test_locate_cli(tmp_path):
    p = tmp_path / "tdoa.csv"
    src = (200.0, 300.0)
    rows = ["bus,x,y,tdoa_s"]
    for i, (x, y) in enumerate([(0, 0), (500, 0), (0, 500), (500, 500)]):
        rows.append(f"s{i},{x},{y},{math.hypot(x - src[0], y - src[1]) / 800}")
    p.write_text("\n".join(rows) + "\n")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"grid": {"nx": 11, "ny": 11}, "out": str(tmp_path / "out")}))
    assert main(["locate", "--config", str(cfg), "--tdoa", str(p)]) == 0
    x, y, r, v = read_location_csv(tmp_path / "out" / "location.csv")
    assert (x, y) == src and r <= 1e-12 and v == pytest.approx(800)


def test_locate_collinear_exit(tmp_path):
    p = tmp_path / "tdoa.csv"
    p.write_text("bus,x,y,tdoa_s\na,0,0,0.5\nb,100,0,0.4\nc,200,0,0.45\n")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"grid": {"nx": 5, "ny": 5, "y_min": -100, "y_max": 100},
                                   "out": str(tmp_path / "out")}))
    assert main(["locate", "--config", str(cfg), "--tdoa", str(p)]) == errors.CollinearSensors.exit_code
    assert (tmp_path / "out" / "location.csv").is_file()


def test_replay_cli(chain_cfg, tmp_path):
    main(["simulate", "--config", str(chain_cfg)])
    assert main(["replay", "--config", str(chain_cfg), "--frames", "1.0,2.5,3.0"]) == 0
    frames = sorted((tmp_path / "out" / "frames").glob("frame_*.csv"))
    assert len(frames) == 3
    assert main(["replay", "--config", str(chain_cfg), "--frames", "9.0"]) == errors.TimeOutOfRange.exit_code


def test_scenario_cli(tmp_path, monkeypatch):
    net = build_lattice(8, 8, 100, 5, 1, 2, dispatch=1.0)
    cfg = write_config(tmp_path, net, disturbance={"bus": lattice_bus_id(4, 4), "delta_p": -1.0, "t_event": 2.0},
                       sim={"t_end": 4.0}, grid={"nx": 8, "ny": 8},
                       scenarios=[{"name": "zero", "penetration": 0.0}, {"name": "mid", "penetration": 0.25},
                                  {"name": "bad", "penetration": 0.6, "region_weights": {"nonexistent": 1}}],
                       regions={"east": "east"})
    monkeypatch.setenv("EMWAVE_THREADS", "3")
    code = main(["scenario", "--config", str(cfg), "--out", str(tmp_path / "par")])
    assert code != 0
    lines = (tmp_path / "par" / "summary.csv").read_text().splitlines()
    assert lines[0] == "scenario,penetration,status,interior_median_speed,east_median_speed,pearson_r"
    assert [ln.split(",")[2] for ln in lines[1:]] == ["ok", "ok", lines[3].split(",")[2]]
    assert lines[3].split(",")[2].startswith("failed:")
    monkeypatch.setenv("EMWAVE_THREADS", "1")
    main(["scenario", "--config", str(cfg), "--out", str(tmp_path / "seq")])
    assert tree(tmp_path / "par") == tree(tmp_path / "seq")


# -- config -----------------------------------------------------------------

def test_parse_overrides():
    assert parse_overrides(["--a.b", "3", "--c=x", "--d.e=[1, 2]"]) == {"a.b": 3, "c": "x", "d.e": [1, 2]}
    with pytest.raises(ConfigError):
        parse_overrides(["--a"])
    with pytest.raises(ConfigError):
        parse_overrides(["stray"])


def test_config_hash_semantics(tmp_path):
    net = build_chain(4, 100, 5, 1, 2)
    save_network(net, tmp_path / "n.json")
    base = RunConfig.from_dict({"network": "n.json"}, tmp_path)
    h = base.config_hash()
    assert RunConfig.from_dict({"network": "n.json", "out": "elsewhere"}, tmp_path).config_hash() == h
    assert RunConfig.from_dict({"network": "n.json", "sensor": {"sample_rate": 10}}, tmp_path).config_hash() == h
    assert RunConfig.from_dict({"network": "n.json", "seed": 1}, tmp_path).config_hash() != h
    assert RunConfig.from_dict({"network": "n.json"}, tmp_path, {"sim.dt": 0.0005}).config_hash() != h
    # moving the network file does not matter, changing its content does
    shutil.copy(tmp_path / "n.json", tmp_path / "m.json")
    assert RunConfig.from_dict({"network": "m.json"}, tmp_path).config_hash() == h
    save_network(build_chain(4, 100, 5, 1, 3), tmp_path / "m.json")
    assert RunConfig.from_dict({"network": "m.json"}, tmp_path).config_hash() != h


def test_unknown_top_level_key():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"netwrk": "x"})
