"""Arrival-time detection, gridded arrival-time maps and wave-speed fields.

Grids are node based: cell (row j, column i) sits at
``(x_min + i * dx, y_min + j * dy)``, and field arrays have shape (ny, nx)
with row 0 at y_min.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dynamics import Disturbance, FrequencyTrace
from .errors import (
    DegenerateField,
    EmptyRegion,
    EmptySamples,
    InsufficientBaseline,
    InsufficientCells,
    InvalidParameter,
    NoCrossing,
    TimeOutOfRange,
    TooFewArrivals,
    ZeroVariance,
)
from .grid_model import Network, region_mask

_EPS_T = 1e-9
_HIT = 1e-9
_CHUNK = 1 << 20


@dataclass(frozen=True)
class DetectorConfig:
    """Arrival threshold on |f - baseline|.

    In ``relative`` mode the threshold is ``fraction`` times the trace's peak
    post-event deviation and ``threshold`` is ignored.
    """

    threshold: float = 0.003
    mode: str = "absolute"
    fraction: float = 0.2
    baseline_window: float = 2.0

    def __post_init__(self):
        if self.mode not in ("absolute", "relative"):
            raise InvalidParameter(f"detector mode must be 'absolute' or 'relative', got {self.mode!r}")
        if not self.threshold > 0:
            raise InvalidParameter("threshold must be positive")
        if not 0 < self.fraction < 1:
            raise InvalidParameter("fraction must be in (0, 1)")
        if not self.baseline_window > 0:
            raise InvalidParameter("baseline_window must be positive")


@dataclass(frozen=True)
class TdoaEntry:
    bus: str
    pos: tuple[float, float]
    tdoa: float


@dataclass(frozen=True)
class TdoaSamples:
    entries: tuple[TdoaEntry, ...]
    event_time: float
    event_pos: tuple[float, float] | None = None
    exclusions: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for e in self.entries:
            if not e.tdoa >= 0:
                raise InvalidParameter(f"negative TDOA for bus {e.bus!r}")
        if len({e.pos for e in self.entries}) != len(self.entries):
            raise InvalidParameter("TDOA samples must have distinct positions")

    def __len__(self):
        return len(self.entries)

    @property
    def positions(self) -> np.ndarray:
        return np.array([e.pos for e in self.entries], dtype=float).reshape(-1, 2)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.tdoa for e in self.entries], dtype=float)

    def as_dict(self) -> dict[str, float]:
        return {e.bus: e.tdoa for e in self.entries}


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int = 100
    ny: int = 100

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise InvalidParameter("grid needs x_max > x_min and y_max > y_min")
        if not (int(self.nx) == self.nx >= 2 and int(self.ny) == self.ny >= 2):
            raise InvalidParameter("grid needs nx >= 2 and ny >= 2")

    @classmethod
    def around(cls, positions, nx: int = 100, ny: int = 100, pad: float = 0.0) -> "GridSpec":
        """Bounding box of ``positions`` grown by ``pad`` on each side."""
        p = np.asarray(positions, dtype=float).reshape(-1, 2)
        lo = p.min(axis=0) - pad
        hi = p.max(axis=0) + pad
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]), nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    def cell_positions(self) -> np.ndarray:
        """(ny * nx, 2) node coordinates in row-major order."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def interior(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    def region(self, name: str, bounds=None) -> np.ndarray:
        if bounds is None:
            bounds = (self.x_min, self.x_max, self.y_min, self.y_max)
        return region_mask(self.cell_positions(), name, bounds).reshape(self.shape)

    def rect(self, x_min, x_max, y_min, y_max) -> np.ndarray:
        p = self.cell_positions()
        m = (p[:, 0] >= x_min) & (p[:, 0] <= x_max) & (p[:, 1] >= y_min) & (p[:, 1] <= y_max)
        return m.reshape(self.shape)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        m = np.array(self.mask, dtype=bool).reshape(self.grid.shape)
        if not np.all(np.isfinite(v[m])):
            raise InvalidParameter("field values must be finite wherever the mask is set")
        v = np.where(m, v, np.nan)
        v.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True, eq=False)
class SpeedField:
    grid: GridSpec
    speed: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        s = np.array(self.speed, dtype=float).reshape(self.grid.shape)
        m = np.array(self.mask, dtype=bool).reshape(self.grid.shape)
        if not np.all(s[m] > 0):
            raise InvalidParameter("speed must be positive wherever the mask is set")
        s = np.where(m, s, np.nan)
        s.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "speed", s)
        object.__setattr__(self, "mask", m)

    @property
    def values(self) -> np.ndarray:
        return self.speed

    def interior_median(self) -> float:
        sel = self.mask & self.grid.interior()
        if not sel.any():
            raise EmptyRegion("no valid interior cells")
        return float(np.median(self.speed[sel]))


# -- arrival detection ------------------------------------------------------

def detect_tdoa(trace: FrequencyTrace, event_time: float, cfg: DetectorConfig = DetectorConfig()) -> float:
    """Delay from ``event_time`` to the first threshold crossing of the trace.

    The crossing instant is refined by linear interpolation between the
    bracketing samples.
    """
    t = np.asarray(trace.times, dtype=float)
    x = np.asarray(trace.values, dtype=float)
    eps = _EPS_T * max(1.0, abs(event_time))
    if t.size == 0 or t[0] > event_time - cfg.baseline_window + eps:
        raise InsufficientBaseline(
            f"bus {trace.bus!r}: trace must start by {event_time - cfg.baseline_window:.6g} s")
    base = (t >= event_time - cfg.baseline_window - eps) & (t <= event_time + eps)
    dev = np.abs(x - x[base].mean())
    after = np.flatnonzero(t > event_time + eps)
    if after.size == 0:
        raise NoCrossing(f"bus {trace.bus!r}: no samples after the event")
    if cfg.mode == "relative":
        thr = cfg.fraction * dev[after].max()
        if not thr > 0:
            raise NoCrossing(f"bus {trace.bus!r}: trace never deviates from its baseline")
    else:
        thr = cfg.threshold
    hits = after[dev[after] >= thr]
    if hits.size == 0:
        raise NoCrossing(f"bus {trace.bus!r}: |deviation| never reaches {thr:.6g} Hz")
    j = int(hits[0])
    t_cross = t[j]
    if j > 0:
        # the bracketing sample may be pre-event and already above threshold
        frac = 0.0 if dev[j - 1] >= thr else (thr - dev[j - 1]) / (dev[j] - dev[j - 1])
        t_cross = t[j - 1] + frac * (t[j] - t[j - 1])
    return max(0.0, float(t_cross - event_time))


def build_tdoa_samples(traces: Iterable[FrequencyTrace], net: Network | None,
                       event: Disturbance | float, cfg: DetectorConfig = DetectorConfig(),
                       min_arrivals: int = 3) -> TdoaSamples:
    """Run the detector on every trace; failed traces are recorded as exclusions."""
    if isinstance(event, Disturbance):
        event_time = event.t_event
        event_pos = net.buses[net.index[event.bus]].pos if net is not None and event.bus in net.index else None
    else:
        event_time, event_pos = float(event), None
    entries, excluded, seen = [], [], set()
    for tr in traces:
        pos = tr.pos
        if pos is None and net is not None and tr.bus in net.index:
            pos = net.buses[net.index[tr.bus]].pos
        if pos is None:
            excluded.append((tr.bus, "UnknownPosition"))
            continue
        pos = (float(pos[0]), float(pos[1]))
        if pos in seen:
            excluded.append((tr.bus, "DuplicatePosition"))
            continue
        try:
            tau = detect_tdoa(tr, event_time, cfg)
        except (NoCrossing, InsufficientBaseline) as exc:
            excluded.append((tr.bus, f"{type(exc).__name__}: {exc}"))
            continue
        seen.add(pos)
        entries.append(TdoaEntry(tr.bus, pos, tau))
    if len(entries) < min_arrivals:
        raise TooFewArrivals(f"{len(entries)} usable arrivals, need at least {min_arrivals}")
    return TdoaSamples(tuple(entries), float(event_time), event_pos, tuple(excluded))


# -- interpolation ----------------------------------------------------------

def idw_grid(positions, values, grid: GridSpec, power: float = 2.0,
             max_radius: float | None = None) -> ScalarField:
    """Inverse-distance weighting of scattered values onto the grid nodes."""
    src = np.asarray(positions, dtype=float).reshape(-1, 2)
    vals = np.asarray(values, dtype=float)
    if src.shape[0] == 0:
        raise EmptySamples("no samples to interpolate")
    if not power > 0:
        raise InvalidParameter("IDW power must be positive")
    cells = grid.cell_positions()
    out = np.empty(len(cells))
    valid = np.ones(len(cells), dtype=bool)
    step = max(1, _CHUNK // len(src))
    for lo in range(0, len(cells), step):
        c = cells[lo:lo + step]
        dist = np.hypot(c[:, None, 0] - src[None, :, 0], c[:, None, 1] - src[None, :, 1])
        nearest = dist.argmin(axis=1)
        dmin = dist[np.arange(len(c)), nearest]
        hit = dmin < _HIT
        with np.errstate(divide="ignore", over="ignore"):
            w = dist ** -power
        w[hit] = 0.0
        num = w @ vals
        den = w.sum(axis=1)
        res = np.empty(len(c))
        res[~hit] = num[~hit] / den[~hit]
        res[hit] = vals[nearest[hit]]
        out[lo:lo + step] = res
        if max_radius is not None:
            valid[lo:lo + step] = dmin <= max_radius
    return ScalarField(grid, out.reshape(grid.shape), valid.reshape(grid.shape))


def interpolate_field(samples: TdoaSamples, grid: GridSpec, power: float = 2.0,
                      max_radius: float | None = None) -> ScalarField:
    if len(samples) == 0:
        raise EmptySamples("no TDOA samples")
    return idw_grid(samples.positions, samples.values, grid, power, max_radius)


def _axis_gradient(v: np.ndarray, m: np.ndarray, coords: np.ndarray):
    """Derivative along axis 1 using central, else one-sided, differences over valid neighbours."""
    ny, nx = v.shape
    g = np.full(v.shape, np.nan)
    left = np.zeros(v.shape, dtype=bool)
    right = np.zeros(v.shape, dtype=bool)
    left[:, 1:] = m[:, :-1]
    right[:, :-1] = m[:, 1:]
    vl = np.full(v.shape, np.nan)
    vr = np.full(v.shape, np.nan)
    vl[:, 1:] = v[:, :-1]
    vr[:, :-1] = v[:, 1:]
    xl = np.full(nx, np.nan)
    xr = np.full(nx, np.nan)
    xl[1:] = coords[:-1]
    xr[:-1] = coords[1:]
    both = m & left & right
    only_r = m & right & ~left
    only_l = m & left & ~right
    g[both] = ((vr - vl) / (xr - xl)[None, :])[both]
    g[only_r] = ((vr - v) / (xr - coords)[None, :])[only_r]
    g[only_l] = ((v - vl) / (coords - xl)[None, :])[only_l]
    return g, both | only_r | only_l


def speed_field(tdoa_field: ScalarField, min_grad: float = 1e-6) -> SpeedField:
    """Propagation speed as the reciprocal arrival-time gradient magnitude."""
    grid = tdoa_field.grid
    v, m = tdoa_field.values, tdoa_field.mask
    gx, okx = _axis_gradient(v, m, grid.xs)
    gy, oky = _axis_gradient(v.T, m.T, grid.ys)
    gy, oky = gy.T, oky.T
    ok = okx & oky
    mag = np.hypot(np.where(ok, gx, 0.0), np.where(ok, gy, 0.0))
    ok &= mag >= min_grad
    if not ok.any():
        raise DegenerateField("no cell has a computable, non-flat arrival-time gradient")
    speed = np.where(ok, 1.0 / np.where(ok, mag, 1.0), np.nan)
    return SpeedField(grid, speed, ok)


# -- localization -----------------------------------------------------------

class CollinearWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LocationResult:
    pos: tuple[float, float]
    residual: float
    v_hat: float
    row: int
    col: int
    collinear: bool = False


def _collinear(points: np.ndarray) -> bool:
    c = points - points.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return bool(s[0] == 0 or s[-1] <= 1e-9 * s[0])


def locate_event(samples: TdoaSamples, grid: GridSpec) -> LocationResult:
    """Grid search for the source minimizing sum_k (tdoa_k - r_k / v)^2.

    The slowness 1/v is solved in closed form per candidate. With collinear
    sensors the result is flagged: its position across the sensor line is
    mirror-ambiguous.
    """
    if len(samples) < 3:
        raise TooFewArrivals(f"{len(samples)} samples, need at least 3")
    src = samples.positions
    tau = samples.values
    cells = grid.cell_positions()
    best = (math.inf, -1, 0.0)
    step = max(1, _CHUNK // len(src))
    for lo in range(0, len(cells), step):
        c = cells[lo:lo + step]
        r = np.hypot(c[:, None, 0] - src[None, :, 0], c[:, None, 1] - src[None, :, 1])
        rr = np.einsum("ij,ij->i", r, r)
        slow = (r @ tau) / rr
        resid = r * slow[:, None] - tau
        resid = np.einsum("ij,ij->i", resid, resid)
        k = int(np.argmin(resid))
        if resid[k] < best[0]:
            best = (float(resid[k]), lo + k, float(slow[k]))
    residual, flat, slow = best
    row, col = divmod(flat, grid.nx)
    collinear = _collinear(src)
    if collinear:
        warnings.warn("sensor positions are collinear; location is mirror-ambiguous",
                      CollinearWarning, stacklevel=2)
    v_hat = 1.0 / slow if slow > 0 else math.inf
    return LocationResult((float(cells[flat, 0]), float(cells[flat, 1])), residual, v_hat, row, col, collinear)


# -- replay -----------------------------------------------------------------

def replay_frames(traces: Sequence[FrequencyTrace], grid: GridSpec, frame_times: Sequence[float],
                  power: float = 2.0, max_radius: float | None = None) -> list[ScalarField]:
    """IDW maps of the instantaneous frequency deviation at each frame time."""
    traces = [tr for tr in traces if tr.pos is not None]
    if not traces:
        raise EmptySamples("no positioned traces to replay")
    t_lo = max(float(tr.times[0]) for tr in traces)
    t_hi = min(float(tr.times[-1]) for tr in traces)
    pos = np.array([tr.pos for tr in traces], dtype=float)
    frames = []
    for ft in frame_times:
        if not t_lo - _EPS_T <= ft <= t_hi + _EPS_T:
            raise TimeOutOfRange(f"frame time {ft} outside trace coverage [{t_lo}, {t_hi}]")
        vals = np.array([np.interp(ft, tr.times, tr.values) for tr in traces])
        frames.append(idw_grid(pos, vals, grid, power, max_radius))
    return frames


# -- statistics -------------------------------------------------------------

def penetration_raster(net: Network, grid: GridSpec, power: float = 2.0) -> ScalarField:
    return idw_grid(net.positions, net.pv_fraction, grid, power)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    sa = math.sqrt(math.fsum(a * a))
    sb = math.sqrt(math.fsum(b * b))
    if sa == 0 or sb == 0:
        raise ZeroVariance("correlation undefined: one input has zero variance")
    return math.fsum(a * b) / (sa * sb)


def penetration_speed_correlation(speed: SpeedField, net: Network, grid: GridSpec | None = None,
                                  power: float = 2.0, min_cells: int = 10) -> float:
    """Pearson r between rasterized PV penetration and wave speed over jointly valid cells."""
    grid = grid or speed.grid
    if grid != speed.grid:
        raise InvalidParameter("penetration raster grid must match the speed field grid")
    pen = penetration_raster(net, grid, power)
    ok = speed.mask & pen.mask
    if ok.sum() < min_cells:
        raise InsufficientCells(f"only {int(ok.sum())} jointly valid cells, need {min_cells}")
    a = pen.values[ok]
    if np.ptp(a) <= 1e-12 * max(1.0, np.abs(a).max()):
        raise ZeroVariance("penetration is uniform; correlation undefined")
    return pearson(a, speed.speed[ok])


def regional_speed_stats(speed: SpeedField, regions: Mapping[str, np.ndarray]) -> dict[str, dict[str, float]]:
    out = {}
    for name, mask in regions.items():
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != speed.grid.shape:
            raise InvalidParameter(f"region {name!r} mask shape {mask.shape} != grid {speed.grid.shape}")
        vals = speed.speed[mask & speed.mask]
        if vals.size == 0:
            raise EmptyRegion(f"region {name!r} has no valid cells")
        out[name] = {
            "count": int(vals.size),
            "mean": float(vals.mean()),
            "median": float(np.median(vals)),
            "p5": float(np.percentile(vals, 5)),
            "p95": float(np.percentile(vals, 95)),
        }
    return out
