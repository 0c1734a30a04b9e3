"""Network data model, file format, synthetic builders and PV scenarios.

Quantities are per unit on a common base; positions are planar (x, y) in
miles unless a different distance unit is used consistently.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import (
    InfeasiblePenetration,
    InvalidParameter,
    NoConvergence,
    NotFoundError,
    ParseError,
    ValidationError,
)
from .rng import make_generator

H_FLOOR = 0.01
LOAD_BUS_H = 0.5
BALANCE_TOL = 1e-9

REGION_NAMES = ("west", "east", "south", "north", "sw", "se", "nw", "ne")


@dataclass(frozen=True)
class Bus:
    id: str
    pos: tuple[float, float]
    inertia_h: float
    damping_d: float
    voltage: float = 1.0
    p_mech: float = 0.0
    p_load: float = 0.0
    pv_fraction: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    susceptance_b: float


@dataclass(frozen=True)
class Network:
    """Immutable lossless network.

    Construction runs validation; use the array properties for numerics.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    f0: float = 60.0
    h_floor: float = field(default=H_FLOOR, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        _validate(self)

    def __len__(self):
        return len(self.buses)

    @cached_property
    def index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def ids(self) -> list[str]:
        return [b.id for b in self.buses]

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.f0

    def _col(self, name):
        a = np.array([getattr(b, name) for b in self.buses], dtype=float)
        a.flags.writeable = False
        return a

    @cached_property
    def positions(self) -> np.ndarray:
        a = np.array([b.pos for b in self.buses], dtype=float).reshape(-1, 2)
        a.flags.writeable = False
        return a

    @cached_property
    def h(self):
        return self._col("inertia_h")

    @cached_property
    def d(self):
        return self._col("damping_d")

    @cached_property
    def v(self):
        return self._col("voltage")

    @cached_property
    def p_mech(self):
        return self._col("p_mech")

    @cached_property
    def p_load(self):
        return self._col("p_load")

    @cached_property
    def pv_fraction(self):
        return self._col("pv_fraction")

    @cached_property
    def branch_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(from index, to index, V_i V_j B_ij) per branch."""
        fi = np.array([self.index[br.from_bus] for br in self.branches], dtype=np.intp)
        ti = np.array([self.index[br.to_bus] for br in self.branches], dtype=np.intp)
        b = np.array([br.susceptance_b for br in self.branches], dtype=float)
        k = self.v[fi] * self.v[ti] * b
        return fi, ti, k

    def electrical_power(self, theta: np.ndarray) -> np.ndarray:
        """P_e,i = sum_j V_i V_j B_ij sin(theta_i - theta_j)."""
        fi, ti, k = self.branch_arrays
        flow = k * np.sin(theta[fi] - theta[ti])
        n = len(self.buses)
        return np.bincount(fi, flow, n) - np.bincount(ti, flow, n)

    def replace_buses(self, buses: Sequence[Bus]) -> "Network":
        return replace(self, buses=tuple(buses))


def _validate(net: Network) -> None:
    if not net.buses:
        raise ValidationError("network has no buses")
    if not (net.f0 > 0):
        raise ValidationError(f"f0 must be positive, got {net.f0}")
    seen = set()
    for b in net.buses:
        if b.id in seen:
            raise ValidationError(f"duplicate bus id {b.id!r}")
        seen.add(b.id)
        if not all(math.isfinite(c) for c in b.pos):
            raise ValidationError(f"bus {b.id!r}: non-finite position")
        if not b.inertia_h >= net.h_floor:
            raise ValidationError(f"bus {b.id!r}: inertia_h {b.inertia_h} below floor {net.h_floor}")
        if not b.damping_d >= 0:
            raise ValidationError(f"bus {b.id!r}: negative damping {b.damping_d}")
        if not b.voltage > 0:
            raise ValidationError(f"bus {b.id!r}: voltage must be positive")
        if not 0.0 <= b.pv_fraction <= 1.0:
            raise ValidationError(f"bus {b.id!r}: pv_fraction {b.pv_fraction} outside [0, 1]")
        if not (math.isfinite(b.p_mech) and math.isfinite(b.p_load)):
            raise ValidationError(f"bus {b.id!r}: non-finite injection")
    pairs = set()
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise ValidationError(f"branch {br.from_bus!r}-{br.to_bus!r} references unknown bus id {end!r}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch on bus {br.from_bus!r} is a self-loop")
        if not br.susceptance_b > 0:
            raise ValidationError(
                f"branch {br.from_bus!r}-{br.to_bus!r}: susceptance must be positive, got {br.susceptance_b}")
        key = frozenset((br.from_bus, br.to_bus))
        if key in pairs:
            raise ValidationError(f"duplicate branch between {br.from_bus!r} and {br.to_bus!r}")
        pairs.add(key)
    n = len(net.buses)
    if n > 1:
        idx = {b.id: i for i, b in enumerate(net.buses)}
        rows = [idx[br.from_bus] for br in net.branches]
        cols = [idx[br.to_bus] for br in net.branches]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, labels = connected_components(adj, directed=False)
        if ncomp > 1:
            stray = [b.id for b, lab in zip(net.buses, labels) if lab != labels[0]]
            raise ValidationError(f"network is disconnected; bus {stray[0]!r} is not reachable from {net.buses[0].id!r}")
    pm = math.fsum(b.p_mech for b in net.buses)
    pl = math.fsum(b.p_load for b in net.buses)
    if abs(pm - pl) > BALANCE_TOL * max(1.0, abs(pm), abs(pl)):
        raise ValidationError(f"unbalanced injections: sum p_mech = {pm!r}, sum p_load = {pl!r}")


# -- file format ------------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    return {
        "f0": net.f0,
        "buses": [
            {
                "id": b.id, "x": b.pos[0], "y": b.pos[1], "h": b.inertia_h,
                "d": b.damping_d, "v": b.voltage, "p_mech": b.p_mech,
                "p_load": b.p_load, "pv_fraction": b.pv_fraction,
            }
            for b in net.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "b": br.susceptance_b}
            for br in net.branches
        ],
    }


def network_from_dict(doc: Mapping) -> Network:
    try:
        buses = []
        for i, rec in enumerate(doc["buses"]):
            p_mech = float(rec.get("p_mech", 0.0))
            if "h" in rec:
                h = float(rec["h"])
            elif p_mech == 0.0:
                h = LOAD_BUS_H
            else:
                raise ParseError(f"bus {rec.get('id', i)!r}: generating bus needs an 'h' value")
            buses.append(Bus(
                id=str(rec["id"]),
                pos=(float(rec["x"]), float(rec["y"])),
                inertia_h=h,
                damping_d=float(rec.get("d", 0.0)),
                voltage=float(rec.get("v", 1.0)),
                p_mech=p_mech,
                p_load=float(rec.get("p_load", 0.0)),
                pv_fraction=float(rec.get("pv_fraction", 0.0)),
            ))
        branches = [
            Branch(str(rec["from"]), str(rec["to"]), float(rec["b"]))
            for rec in doc["branches"]
        ]
        f0 = float(doc.get("f0", 60.0))
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed network document: {exc!r}") from exc
    return Network(tuple(buses), tuple(branches), f0)


def dumps_network(net: Network) -> str:
    # json writes floats with repr(), the shortest round-trip form
    return json.dumps(network_to_dict(net), indent=1) + "\n"


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> Network:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"network file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return network_from_dict(doc)


# -- builders ---------------------------------------------------------------

def _check_damping(d):
    # undamped machines are allowed for conservation studies
    if not (isinstance(d, (int, float)) and d >= 0 and math.isfinite(d)):
        raise InvalidParameter(f"d must be non-negative, got {d!r}")


def _check_positive(**kw):
    for name, val in kw.items():
        if not (isinstance(val, (int, float)) and val > 0 and math.isfinite(val)):
            raise InvalidParameter(f"{name} must be positive, got {val!r}")


def build_chain(n: int, spacing: float, h: float, d: float, b: float, v: float = 1.0,
                flow: float = 0.0, dispatch: float = 0.0, f0: float = 60.0) -> Network:
    """Uniform 1-D chain with buses "1".."n" at x = 0, spacing, ...

    ``flow`` transfers power from bus 1 to bus n (negative reverses it);
    ``dispatch`` gives every bus matching generation and load.
    """
    if not isinstance(n, int) or n < 2:
        raise InvalidParameter(f"n must be an integer >= 2, got {n!r}")
    _check_positive(spacing=spacing, h=h, b=b, v=v)
    _check_damping(d)
    if dispatch < 0:
        raise InvalidParameter("dispatch must be non-negative")
    p_mech = [float(dispatch)] * n
    p_load = [float(dispatch)] * n
    if flow > 0:
        p_mech[0] += flow
        p_load[-1] += flow
    elif flow < 0:
        p_mech[-1] -= flow
        p_load[0] -= flow
    buses = [
        Bus(str(i + 1), (i * float(spacing), 0.0), float(h), float(d), float(v), p_mech[i], p_load[i])
        for i in range(n)
    ]
    branches = [Branch(str(i + 1), str(i + 2), float(b)) for i in range(n - 1)]
    return Network(tuple(buses), tuple(branches), f0)


def lattice_bus_id(row: int, col: int) -> str:
    return f"r{row}c{col}"


def region_mask(positions: np.ndarray, region: str, bounds=None) -> np.ndarray:
    """Boolean mask of the points inside a named half or quadrant.

    Halves split at the midpoint of ``bounds`` (x_min, x_max, y_min, y_max),
    which defaults to the bounding box of ``positions``. Points exactly on a
    split line belong to neither side.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if bounds is None:
        bounds = (pos[:, 0].min(), pos[:, 0].max(), pos[:, 1].min(), pos[:, 1].max())
    xm = 0.5 * (bounds[0] + bounds[1])
    ym = 0.5 * (bounds[2] + bounds[3])
    x, y = pos[:, 0], pos[:, 1]
    sides = {
        "west": x < xm, "east": x > xm, "south": y < ym, "north": y > ym,
    }
    if region in sides:
        return sides[region]
    if region in ("sw", "se", "nw", "ne"):
        ns = "north" if region[0] == "n" else "south"
        ew = "east" if region[1] == "e" else "west"
        return sides[ns] & sides[ew]
    raise InvalidParameter(f"unknown region {region!r}; expected one of {REGION_NAMES}")


def build_lattice(rows: int, cols: int, spacing: float, h: float, d: float, b: float,
                  v: float = 1.0, heterogeneity: Mapping[str, float] | None = None,
                  dispatch: float = 0.0, f0: float = 60.0) -> Network:
    """rows x cols grid with 4-neighbour branches; row index grows northward.

    ``heterogeneity`` maps region names (see ``region_mask``) to inertia
    multipliers; overlapping regions multiply.
    """
    for name, val in (("rows", rows), ("cols", cols)):
        if not isinstance(val, int) or val < 2:
            raise InvalidParameter(f"{name} must be an integer >= 2, got {val!r}")
    _check_positive(spacing=spacing, h=h, b=b, v=v)
    _check_damping(d)
    if dispatch < 0:
        raise InvalidParameter("dispatch must be non-negative")
    pos = np.array([(c * float(spacing), r * float(spacing)) for r in range(rows) for c in range(cols)])
    mult = np.ones(len(pos))
    for region, m in (heterogeneity or {}).items():
        if not m > 0:
            raise InvalidParameter(f"inertia multiplier for {region!r} must be positive")
        mult[region_mask(pos, region)] *= m
    buses = []
    for k, (r, c) in enumerate((r, c) for r in range(rows) for c in range(cols)):
        buses.append(Bus(lattice_bus_id(r, c), (float(pos[k, 0]), float(pos[k, 1])),
                         float(h) * float(mult[k]), float(d), float(v), float(dispatch), float(dispatch)))
    branches = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                branches.append(Branch(lattice_bus_id(r, c), lattice_bus_id(r, c + 1), float(b)))
            if r + 1 < rows:
                branches.append(Branch(lattice_bus_id(r, c), lattice_bus_id(r + 1, c), float(b)))
    return Network(tuple(buses), tuple(branches), f0)


# -- PV scenarios -----------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    """Target PV share of dispatched generation and where it concentrates.

    ``region_weights`` is "uniform", "random" (seeded draw) or a mapping
    from bus id or region name to a non-negative weight. Unlisted buses
    weigh zero.
    """

    penetration: float
    region_weights: str | Mapping[str, float] = "uniform"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.penetration <= 1.0:
            raise InvalidParameter(f"penetration must be in [0, 1], got {self.penetration!r}")
        rw = self.region_weights
        if isinstance(rw, str):
            if rw not in ("uniform", "random"):
                raise InvalidParameter(f"region_weights must be 'uniform', 'random' or a mapping, got {rw!r}")
        else:
            for k, w in rw.items():
                if not (w >= 0 and math.isfinite(w)):
                    raise InvalidParameter(f"region weight for {k!r} must be non-negative")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScenarioSpec":
        try:
            rw = doc.get("region_weights", "uniform")
            if isinstance(rw, Mapping):
                rw = {str(k): float(w) for k, w in rw.items()}
            return cls(float(doc["penetration"]), rw, int(doc.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed scenario: {exc!r}") from exc


def bus_weights(net: Network, spec: ScenarioSpec) -> np.ndarray:
    rw = spec.region_weights
    n = len(net)
    if rw == "uniform":
        return np.ones(n)
    if rw == "random":
        return make_generator(spec.seed, "siting").random(n)
    w = np.zeros(n)
    for key, val in rw.items():
        if key in net.index:
            w[net.index[key]] = val
        elif key in REGION_NAMES:
            w[region_mask(net.positions, key)] = val
        else:
            raise InvalidParameter(f"region_weights key {key!r} is neither a bus id nor a region name")
    return w


def assign_pv_fractions(p_mech: np.ndarray, weights: np.ndarray, penetration: float) -> np.ndarray:
    """Water-fill pv_i = min(1, s * w_i) so that the dispatch-weighted share hits the target.

    Only buses with p_mech > 0 and w > 0 receive PV.
    """
    p = np.where(p_mech > 0, p_mech, 0.0)
    total = math.fsum(p)
    pv = np.zeros_like(p)
    if penetration == 0.0:
        return pv
    if total <= 0:
        raise InfeasiblePenetration("network has no generating buses to host PV")
    eligible = (p > 0) & (weights > 0)
    reach = math.fsum(p[eligible]) / total
    if penetration > reach * (1 + 1e-12):
        raise InfeasiblePenetration(
            f"target penetration {penetration} exceeds the {reach:.6g} reachable with the given weights")
    # buses saturate in order of decreasing weight
    order = [i for i in np.argsort(-weights, kind="stable") if eligible[i]]
    capped = 0.0
    k = 0
    while True:
        need = penetration * total - capped
        if k == len(order):
            break
        # weights relative to the largest remaining one: the sum cannot underflow
        wmax = weights[order[k]]
        rel = {i: weights[i] / wmax for i in order[k:]}
        weighted = math.fsum(p[i] * rel[i] for i in order[k:])
        if need / weighted <= 1.0:
            break
        capped += p[order[k]]
        k += 1
    for i in order[:k]:
        pv[i] = 1.0
    for i in order[k:]:
        pv[i] = min(1.0, need * (rel[i] / weighted))
    return pv


def apply_pv_scenario(net: Network, spec: ScenarioSpec) -> Network:
    """Displace synchronous generation with zero-inertia PV.

    Dispatch, loads, voltages and topology are untouched; each bus keeps
    inertia_h * (1 - pv_fraction), floored at the network's H floor.
    """
    if spec.penetration == 0.0:
        return net
    pv = assign_pv_fractions(net.p_mech, bus_weights(net, spec), spec.penetration)
    buses = []
    for b, f in zip(net.buses, pv):
        f = float(f)
        buses.append(replace(b, pv_fraction=f, inertia_h=max(net.h_floor, b.inertia_h * (1.0 - f))))
    return net.replace_buses(buses)


def achieved_penetration(net: Network) -> float:
    p = np.where(net.p_mech > 0, net.p_mech, 0.0)
    return math.fsum(net.pv_fraction * p) / math.fsum(p)


# -- equilibrium ------------------------------------------------------------

def solve_equilibrium(net: Network, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Lossless power-flow angles with bus 0 as the angle reference.

    Damped Newton iteration; the returned residual max|P_e - (p_mech - p_load)|
    is checked against ``tol`` before returning.
    """
    n = len(net)
    p_net = net.p_mech - net.p_load
    theta = np.zeros(n)
    if n == 1:
        return theta
    fi, ti, k = net.branch_arrays

    def residual(th):
        return net.electrical_power(th) - p_net

    r = residual(theta)
    norm = np.max(np.abs(r))
    for _ in range(max_iter):
        if norm <= 1e-3 * tol:
            break
        w = k * np.cos(theta[fi] - theta[ti])
        jac = sp.coo_matrix(
            (np.concatenate([w, w, -w, -w]),
             (np.concatenate([fi, ti, fi, ti]), np.concatenate([fi, ti, ti, fi]))),
            shape=(n, n)).tocsc()[1:, 1:]
        try:
            step = spsolve(jac, r[1:])
        except Exception as exc:  # singular Jacobian
            raise NoConvergence(f"singular power-flow Jacobian: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise NoConvergence("singular power-flow Jacobian")
        alpha = 1.0
        while True:
            trial = theta.copy()
            trial[1:] -= alpha * step
            rt = residual(trial)
            nt = np.max(np.abs(rt))
            if nt < norm or alpha < 1e-4:
                break
            alpha *= 0.5
        if not nt < norm:
            # stalled: no descent along the Newton direction
            if norm <= tol:
                break
            raise NoConvergence(f"power flow stalled at residual {norm:.3g}; operating point infeasible")
        theta, r, norm = trial, rt, nt
    if not norm <= tol:
        raise NoConvergence(f"power flow did not converge in {max_iter} iterations (residual {norm:.3g})")
    return theta
