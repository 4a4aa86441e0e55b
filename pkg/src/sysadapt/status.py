"""Synthetic system-load trajectories and the normalized status vector.

Background contenders (compression jobs, solvers, training runs, ...) are
abstracted as independent on/off Markov chains, each consuming a fixed
fraction of device capacity while active. The per-step load is the capped
sum of active demands. A trajectory regenerates bit-identically from its
(process_set, T, cap, seed) tuple.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, UnsupportedPlatformError

EMA_FACTOR = 0.2


@dataclass(frozen=True)
class BackgroundProcess:
    """One on/off load source: demand is the capacity fraction it consumes
    while active; p_on/p_off are the per-step switch probabilities."""

    demand: float
    p_on: float
    p_off: float

    def __post_init__(self):
        if not 0.0 < self.demand <= 1.0:
            raise ConfigError(f"demand must be in (0, 1], got {self.demand}")
        for name in ("p_on", "p_off"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SystemStatus:
    """Normalized snapshot of host utilization at one step.

    aux_signals = (smoothed load, one-step load delta clamped to [-1, 1]).
    """

    load: float
    per_proc_active: np.ndarray
    aux_signals: tuple[float, float]


class LoadTrajectory:
    """Fixed-length load series with per-process activity and precomputed
    smoothed/delta signals. Immutable after construction."""

    def __init__(self, loads, active, ema, delta, seed, cap, process_set):
        self.loads = loads
        self.active = active
        self.ema = ema
        self.delta = delta
        self.seed = seed
        self.cap = cap
        self.process_set = tuple(process_set)
        for arr in (self.loads, self.active, self.ema, self.delta):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.loads.shape[0]

    def to_dict(self) -> dict:
        # loads rounded to 9 decimals for bit-stable golden fixtures
        return {
            "seed": self.seed,
            "cap": self.cap,
            "processes": [
                {"demand": p.demand, "p_on": p.p_on, "p_off": p.p_off}
                for p in self.process_set
            ],
            "loads": [round(float(x), 9) for x in self.loads],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def generate_trajectory(process_set, T, cap, seed) -> LoadTrajectory:
    """Evolve every process's two-state chain for T steps and cap the summed
    demand. Deterministic given (process_set, T, cap, seed)."""
    if not 0.0 < cap <= 1.0:
        raise ConfigError(f"cap must be in (0, 1], got {cap}")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    procs = tuple(process_set)
    rng = np.random.default_rng(seed)
    if procs:
        u = rng.random((T, len(procs)))
        p_on = np.array([p.p_on for p in procs])
        p_off = np.array([p.p_off for p in procs])
        demand = np.array([p.demand for p in procs])
        active = kernels.markov_scan(u, p_on, p_off)
        loads = np.minimum(active @ demand, cap)
    else:
        active = np.zeros((T, 0))
        loads = np.zeros(T)
    ema, delta = kernels.ema_delta_scan(loads, EMA_FACTOR)
    return LoadTrajectory(loads, active, ema, delta, seed, cap, procs)


def sample_status(traj: LoadTrajectory, t: int) -> SystemStatus:
    if not 0 <= t < len(traj):
        raise IndexError(f"step {t} out of range for trajectory of length {len(traj)}")
    return SystemStatus(
        load=float(traj.loads[t]),
        per_proc_active=traj.active[t].astype(np.uint8),
        aux_signals=(float(traj.ema[t]), float(traj.delta[t])),
    )


def load_trajectory_fixture(path) -> dict:
    """Read a serialized trajectory document; regeneration uses
    generate_trajectory with the stored seed/cap/processes."""
    doc = json.loads(Path(path).read_text())
    doc["processes"] = [BackgroundProcess(**p) for p in doc["processes"]]
    return doc


class HostProbe:
    """Best-effort live utilization reader (non-deterministic, single caller).

    Keeps the same smoothed/delta signals as trajectory sampling, seeded at
    the first observation.
    """

    def __init__(self):
        self._ema = None
        self._prev = None

    def probe(self) -> SystemStatus:
        try:
            import psutil
        except ImportError as exc:
            raise UnsupportedPlatformError("psutil is unavailable on this host") from exc
        try:
            load = psutil.cpu_percent(interval=0.1) / 100.0
        except Exception as exc:  # counter access can fail on exotic platforms
            raise UnsupportedPlatformError(f"cannot read CPU utilization: {exc}") from exc
        load = min(max(load, 0.0), 1.0)
        if self._ema is None:
            self._ema = load
            delta = 0.0
        else:
            self._ema = (1.0 - EMA_FACTOR) * self._ema + EMA_FACTOR * load
            delta = min(max(load - self._prev, -1.0), 1.0)
        self._prev = load
        return SystemStatus(load=load, per_proc_active=np.zeros(0, dtype=np.uint8),
                            aux_signals=(self._ema, delta))


_default_probe = HostProbe()


def probe_host() -> SystemStatus:
    """Sample the real host via the default probe. Raises
    UnsupportedPlatformError when counters cannot be read."""
    return _default_probe.probe()
