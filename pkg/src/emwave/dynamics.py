"""Classical swing-equation dynamics and sensor emulation.

Per bus i, with omega_s = 2*pi*f0:

    (2 H_i / omega_s) theta_i'' = p_mech_i - p_load_i - P_e,i - D_i theta_i' / omega_s

integrated with fixed-step RK4 on the state (theta, theta').
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDisturbance, InvalidParameter, NumericalBlowup, UnknownSensorBus
from .grid_model import Network, solve_equilibrium
from .rng import make_generator

BLOWUP_HZ = 10.0
_EPS_T = 1e-9


@dataclass(frozen=True)
class Disturbance:
    bus: str
    delta_p: float
    t_event: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    dt: float = 0.001

    def __post_init__(self):
        if not 0 < self.dt <= 0.01:
            raise InvalidParameter(f"dt must be in (0, 0.01], got {self.dt!r}")
        if not self.t_end > 0:
            raise InvalidParameter(f"t_end must be positive, got {self.t_end!r}")


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    times: np.ndarray
    angles: np.ndarray
    freq_dev: np.ndarray
    rates: np.ndarray
    bus_ids: tuple[str, ...]
    event_time: float

    def column(self, bus: str) -> int:
        try:
            return self.bus_ids.index(bus)
        except ValueError:
            raise UnknownSensorBus(f"bus {bus!r} not in trajectory") from None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class SensorConfig:
    sample_rate: float = 10.0
    noise_sigma: float = 0.0002
    seed: int = 0
    sensor_buses: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise InvalidParameter("sample_rate must be positive")
        if not self.noise_sigma >= 0:
            raise InvalidParameter("noise_sigma must be non-negative")
        if self.sensor_buses is not None:
            object.__setattr__(self, "sensor_buses", tuple(str(b) for b in self.sensor_buses))


@dataclass(frozen=True, eq=False)
class FrequencyTrace:
    bus: str
    pos: tuple[float, float] | None
    times: np.ndarray
    values: np.ndarray

    def shifted(self, dt: float) -> "FrequencyTrace":
        return FrequencyTrace(self.bus, self.pos, self.times + dt, self.values)


def _readonly(a):
    a.flags.writeable = False
    return a


def event_step(t_event: float, dt: float) -> int:
    k = round(t_event / dt)
    if abs(k * dt - t_event) > _EPS_T * max(1.0, t_event):
        raise InvalidDisturbance(f"t_event {t_event!r} is not a multiple of dt {dt!r}")
    return int(k)


def simulate(net: Network, dist: Disturbance, cfg: SimConfig) -> TrajectorySet:
    """Step response of the network to ``dist`` from its power-flow equilibrium."""
    if dist.bus not in net.index:
        raise InvalidDisturbance(f"disturbance bus {dist.bus!r} not in network")
    if not dist.t_event >= 0:
        raise InvalidDisturbance("t_event must be non-negative")
    if not math.isfinite(dist.delta_p):
        raise InvalidDisturbance("delta_p must be finite")
    if not cfg.t_end > dist.t_event:
        raise InvalidParameter(f"t_end {cfg.t_end} must exceed t_event {dist.t_event}")
    dt = cfg.dt
    k_event = event_step(dist.t_event, dt)
    nsteps = int(round(cfg.t_end / dt))
    n = len(net)

    omega_s = net.omega_s
    a_p = omega_s / (2.0 * net.h)
    a_d = net.d / (2.0 * net.h)
    p_pre = net.p_mech - net.p_load
    p_post = p_pre.copy()
    p_post[net.index[dist.bus]] += dist.delta_p
    pe = net.electrical_power

    def accel(theta, w, p):
        return a_p * (p - pe(theta)) - a_d * w

    theta = solve_equilibrium(net)
    w = np.zeros(n)
    angles = np.empty((nsteps + 1, n))
    rates = np.empty((nsteps + 1, n))
    angles[0] = theta
    rates[0] = w
    limit = BLOWUP_HZ * 2.0 * math.pi
    h2 = 0.5 * dt
    for k in range(nsteps):
        p = p_post if k >= k_event else p_pre
        k1t, k1w = w, accel(theta, w, p)
        w2 = w + h2 * k1w
        k2t, k2w = w2, accel(theta + h2 * k1t, w2, p)
        w3 = w + h2 * k2w
        k3t, k3w = w3, accel(theta + h2 * k2t, w3, p)
        w4 = w + dt * k3w
        k4t, k4w = w4, accel(theta + dt * k3t, w4, p)
        theta = theta + (dt / 6.0) * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        w = w + (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        if not np.max(np.abs(w)) <= limit:
            raise NumericalBlowup(
                f"|frequency deviation| exceeded {BLOWUP_HZ} Hz at t = {(k + 1) * dt:.6g} s; "
                "the system is unstable or dt is too large")
        angles[k + 1] = theta
        rates[k + 1] = w
    times = np.arange(nsteps + 1) * dt
    return TrajectorySet(
        times=_readonly(times),
        angles=_readonly(angles),
        freq_dev=_readonly(rates / (2.0 * math.pi)),
        rates=_readonly(rates),
        bus_ids=tuple(net.ids),
        event_time=float(dist.t_event),
    )


def post_event_injection(net: Network, dist: Disturbance | None = None) -> np.ndarray:
    p = net.p_mech - net.p_load
    if dist is not None:
        p = p.copy()
        p[net.index[dist.bus]] += dist.delta_p
    return p


def total_energy(net: Network, angles, rates, dist: Disturbance | None = None):
    """Kinetic plus potential energy; conserved for D = 0 after the event.

    ``angles`` and ``rates`` may carry a leading time axis.
    """
    theta = np.asarray(angles, dtype=float)
    w = np.asarray(rates, dtype=float)
    fi, ti, k = net.branch_arrays
    kinetic = (w * w) @ (net.h / net.omega_s)
    potential = -np.cos(theta[..., fi] - theta[..., ti]) @ k - theta @ post_event_injection(net, dist)
    return kinetic + potential


def coi_frequency(net: Network, freq_dev):
    """Inertia-weighted mean frequency deviation (Hz)."""
    return np.asarray(freq_dev, dtype=float) @ net.h / math.fsum(net.h)


def sample_measurements(traj: TrajectorySet, net: Network, cfg: SensorConfig) -> list[FrequencyTrace]:
    """Decimate to ``cfg.sample_rate`` (nearest step) and add seeded Gaussian noise."""
    dt = traj.dt
    if cfg.sample_rate > (1.0 + 1e-9) / dt:
        raise InvalidParameter(f"sample_rate {cfg.sample_rate} exceeds the simulation rate {1.0 / dt:.6g}")
    buses = cfg.sensor_buses if cfg.sensor_buses is not None else traj.bus_ids
    cols = []
    for b in buses:
        if b not in net.index:
            raise UnknownSensorBus(f"sensor bus {b!r} not in network")
        cols.append(traj.column(b))
    t0, t_last = float(traj.times[0]), float(traj.times[-1])
    stride = 1.0 / (cfg.sample_rate * dt)
    n_samples = int(math.floor((t_last - t0) * cfg.sample_rate + 1e-9)) + 1
    m = np.arange(n_samples)
    if abs(stride - round(stride)) < 1e-9:
        idx = m * int(round(stride))
        times = traj.times[idx]
    else:
        idx = np.minimum(np.rint(m * stride).astype(np.intp), len(traj.times) - 1)
        times = t0 + m / cfg.sample_rate
    values = traj.freq_dev[np.ix_(idx, cols)].T.copy()
    if cfg.noise_sigma > 0:
        rng = make_generator(cfg.seed, "sensor")
        values += rng.normal(0.0, cfg.noise_sigma, size=values.shape)
    out = []
    for j, b in enumerate(buses):
        pos = net.buses[net.index[b]].pos
        out.append(FrequencyTrace(b, pos, _readonly(np.array(times, dtype=float)), _readonly(values[j])))
    return out
