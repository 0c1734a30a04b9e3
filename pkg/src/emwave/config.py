"""Run configuration: one YAML/JSON document plus command-line overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .dynamics import Disturbance, SensorConfig, SimConfig
from .errors import ConfigError, EmwaveError, NotFoundError, ParseError
from .grid_model import REGION_NAMES, Network, ScenarioSpec, load_network, network_to_dict
from .wavefront import DetectorConfig, GridSpec

DEFAULTS: dict[str, Any] = {
    "network": None,
    "disturbance": {"bus": None, "delta_p": -0.5, "t_event": 2.0},
    "sim": {"dt": 0.001, "t_end": 6.0},
    "sensor": {"sample_rate": 10.0, "noise_sigma": 0.0002, "sensor_buses": None},
    "detector": {"threshold": 0.003, "mode": "absolute", "fraction": 0.2, "baseline_window": 2.0},
    "grid": None,
    "interp": {"power": 2.0, "max_radius": None},
    "speed": {"min_grad": 1e-6},
    "regions": {},
    "scenarios": [],
    "replay": {"frame_times": None},
    "output": {"trajectory": True, "trajectory_stride": 1},
    "seed": 0,
    "out": "out",
}

# keys that do not change results
NON_SEMANTIC = ("out",)


def deep_merge(base: Mapping, extra: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def parse_overrides(tokens: list[str]) -> dict[str, Any]:
    """``--a.b value`` / ``--a.b=value`` pairs; values are YAML scalars."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} needs a value")
            raw = tokens[i + 1]
            i += 2
        try:
            out[key] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return out


def _normalize(obj):
    # 10 and 10.0 configure the same run
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, float)):
        return float(obj)
    if isinstance(obj, Mapping):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return obj


@dataclass
class RunConfig:
    doc: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        doc: dict = {}
        base = Path.cwd()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise NotFoundError(f"config file not found: {p}")
            try:
                loaded = yaml.safe_load(p.read_text())
            except yaml.YAMLError as exc:
                raise ParseError(f"{p}: {exc}") from exc
            if loaded is None:
                loaded = {}
            if not isinstance(loaded, dict):
                raise ParseError(f"{p}: top level must be a mapping")
            doc = loaded
            base = p.resolve().parent
        return cls.from_dict(doc, base, overrides)

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir=".", overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = deep_merge(DEFAULTS, doc)
        for k, v in (overrides or {}).items():
            if k.split(".")[0] not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            set_dotted(merged, k, v)
        return cls(merged, Path(base_dir))

    def __getitem__(self, key):
        return self.doc[key]

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return Path(self.doc["out"])

    @property
    def seed(self) -> int:
        s = self.doc["seed"]
        if not isinstance(s, int) or s < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {s!r}")
        return s

    def network(self) -> Network:
        if not self.doc["network"]:
            raise ConfigError("config has no 'network' path")
        return load_network(self.path(self.doc["network"]))

    def _build(self, cls, section, **extra):
        try:
            return cls(**{**self.doc[section], **extra})
        except TypeError as exc:
            raise ConfigError(f"bad '{section}' section: {exc}") from exc

    def disturbance(self, net: Network | None = None) -> Disturbance:
        d = dict(self.doc["disturbance"])
        if d.get("bus") is None:
            if net is None:
                raise ConfigError("disturbance.bus is required")
            d["bus"] = net.ids[0]
        try:
            return Disturbance(str(d["bus"]), float(d["delta_p"]), float(d["t_event"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'disturbance' section: {exc!r}") from exc

    def sim(self) -> SimConfig:
        return self._build(SimConfig, "sim")

    def sensor(self) -> SensorConfig:
        return self._build(SensorConfig, "sensor", seed=self.seed)

    def detector(self) -> DetectorConfig:
        return self._build(DetectorConfig, "detector")

    def grid(self, positions) -> GridSpec:
        g = self.doc["grid"] or {}
        p = np.asarray(positions, dtype=float).reshape(-1, 2)
        auto = GridSpec.around(p, int(g.get("nx", 100)), int(g.get("ny", 100)))
        try:
            return GridSpec(
                float(g.get("x_min", auto.x_min)), float(g.get("x_max", auto.x_max)),
                float(g.get("y_min", auto.y_min)), float(g.get("y_max", auto.y_max)),
                int(g.get("nx", 100)), int(g.get("ny", 100)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'grid' section: {exc!r}") from exc

    def region_masks(self, grid: GridSpec) -> dict[str, np.ndarray]:
        out = {}
        for name, spec in (self.doc["regions"] or {}).items():
            if isinstance(spec, str):
                if spec not in REGION_NAMES:
                    raise ConfigError(f"region {name!r}: unknown named region {spec!r}")
                out[name] = grid.region(spec)
            elif isinstance(spec, Mapping):
                out[name] = grid.rect(float(spec.get("x_min", -np.inf)), float(spec.get("x_max", np.inf)),
                                      float(spec.get("y_min", -np.inf)), float(spec.get("y_max", np.inf)))
            else:
                raise ConfigError(f"region {name!r} must be a region name or a rectangle")
        return out

    def scenarios(self) -> list[tuple[str, ScenarioSpec]]:
        out = []
        for i, sc in enumerate(self.doc["scenarios"] or []):
            if not isinstance(sc, Mapping):
                raise ConfigError(f"scenario #{i} must be a mapping")
            sc = dict(sc)
            name = str(sc.pop("name", f"s{i}"))
            sc.setdefault("seed", self.seed)
            out.append((name, ScenarioSpec.from_dict(sc)))
        return out

    def semantic_doc(self, net: Network | None = None) -> dict:
        doc = {k: v for k, v in self.doc.items() if k not in NON_SEMANTIC}
        if net is None and doc.get("network"):
            try:
                net = self.network()
            except EmwaveError:
                net = None
        if net is not None:
            doc["network"] = network_to_dict(net)
        return doc

    def config_hash(self, net: Network | None = None, extra: Mapping | None = None) -> str:
        doc = self.semantic_doc(net)
        if extra:
            doc = {**doc, "_inputs": dict(extra)}
        blob = json.dumps(_normalize(doc), sort_keys=True, separators=(",", ":"), allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()
