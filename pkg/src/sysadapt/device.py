"""Per-device delay model, profile augmentation, and the measured backend.

A profile maps (action, load) to a processing time:

    delay = cost(action) / (base_speed * max(1 - load, capacity_floor)) + overhead

optionally multiplied by lognormal noise exp(noise_sigma * z). Costs are
work-units: kappa scaled by the squared resolution ratio and the cumulative
depth fraction of the chosen exit.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigError
from .stream import Action
from .status import SystemStatus

log = logging.getLogger("sysadapt")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    base_speed: float          # work-units per second at zero load
    depth_frac: tuple          # cumulative cost fraction per exit, last = 1.0
    res_ref: int               # resolution at which kappa is defined
    kappa: float               # work-units at (res_ref, deepest exit)
    overhead: float = 0.004    # seconds
    noise_sigma: float = 0.0   # lognormal sigma, dimensionless
    capacity_floor: float = 0.05

    def __post_init__(self):
        if self.base_speed <= 0:
            raise ConfigError(f"base_speed must be > 0, got {self.base_speed}")
        df = tuple(float(f) for f in self.depth_frac)
        object.__setattr__(self, "depth_frac", df)
        if not df or any(b <= a for a, b in zip(df, df[1:])) or df[-1] != 1.0:
            raise ConfigError(f"depth_frac must be strictly increasing and end at 1.0, got {df}")
        if self.overhead < 0 or self.noise_sigma < 0:
            raise ConfigError("overhead and noise_sigma must be >= 0")
        if not 0.0 < self.capacity_floor < 1.0:
            raise ConfigError(f"capacity_floor must be in (0, 1), got {self.capacity_floor}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_speed": self.base_speed,
            "depth_frac": list(self.depth_frac),
            "res_ref": self.res_ref,
            "kappa": self.kappa,
            "overhead": self.overhead,
            "noise_sigma": self.noise_sigma,
            "capacity_floor": self.capacity_floor,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DeviceProfile":
        doc = dict(doc)
        doc["depth_frac"] = tuple(doc["depth_frac"])
        doc.pop("fit_rmse", None)
        return cls(**doc)


@dataclass(frozen=True)
class DelaySample:
    """One observed (action, load) -> delay measurement."""

    action: Action
    load: float
    measured_delay: float

    def __post_init__(self):
        if self.measured_delay <= 0:
            raise ConfigError("measured_delay must be > 0")


def action_cost(profile: DeviceProfile, action: Action) -> float:
    """Work-units: kappa * (res / res_ref)^2 * depth_frac[j]."""
    ratio = action.res / profile.res_ref
    return profile.kappa * ratio * ratio * profile.depth_frac[action.depth_index]


def effective_speed(profile: DeviceProfile, load: float) -> float:
    return profile.base_speed * max(1.0 - load, profile.capacity_floor)


def model_delay(profile: DeviceProfile, action: Action, status: SystemStatus,
                rng: np.random.Generator | None = None) -> float:
    """Modeled processing time in seconds; deterministic when rng is None."""
    d = action_cost(profile, action) / effective_speed(profile, status.load) + profile.overhead
    if rng is not None and profile.noise_sigma > 0:
        d *= math.exp(profile.noise_sigma * rng.standard_normal())
    return d


def restrict_profile(profile: DeviceProfile, speed_frac: float) -> DeviceProfile:
    """Synthesize a slower variant of a device by capping its speed."""
    if not 0.0 < speed_frac <= 1.0:
        raise ConfigError(f"speed_frac must be in (0, 1], got {speed_frac}")
    return replace(profile, name=f"{profile.name}@x{speed_frac:g}",
                   base_speed=profile.base_speed * speed_frac)


@dataclass(frozen=True)
class CalibrationResult:
    profile: DeviceProfile
    fit_rmse: float

    def to_dict(self) -> dict:
        doc = self.profile.to_dict()
        doc["fit_rmse"] = self.fit_rmse
        return doc


def calibrate_profile(samples, template: DeviceProfile) -> CalibrationResult:
    """Least-squares fit of (base_speed, overhead) against measured delays,
    holding kappa/depth_frac/res_ref fixed from the template.

    The model is linear in (1/base_speed, overhead):
        delay ~= [cost/eff_frac] * (1/base_speed) + overhead
    """
    samples = list(samples)
    distinct_actions = {(s.action.res_index, s.action.depth_index) for s in samples}
    distinct_loads = {round(s.load, 12) for s in samples}
    if len(samples) < 3 * len(distinct_actions):
        raise CalibrationError(
            f"need >= {3 * len(distinct_actions)} samples for {len(distinct_actions)} actions, got {len(samples)}")
    if len(distinct_loads) < 2:
        raise CalibrationError("samples must span at least 2 distinct loads")

    scaled = np.array([
        action_cost(template, s.action) / max(1.0 - s.load, template.capacity_floor)
        for s in samples
    ])
    A = np.column_stack([scaled, np.ones(len(samples))])
    y = np.array([s.measured_delay for s in samples])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < 2:
        raise CalibrationError("sample set is rank-deficient; vary loads and actions")
    inv_speed, overhead = coef
    if inv_speed <= 0:
        raise CalibrationError("fit produced non-positive speed; samples inconsistent with the delay model")
    fitted = replace(template, base_speed=1.0 / inv_speed, overhead=max(overhead, 0.0))
    resid = A @ coef - y
    return CalibrationResult(fitted, float(np.sqrt(np.mean(resid ** 2))))


class KernelWorkload:
    """Dense multiply-accumulate kernel sized in work-units for wall-clock
    timing. One work-unit is macs_per_unit fused multiply-adds."""

    def __init__(self, profile: DeviceProfile, macs_per_unit: int = 25_000, chunk: int = 50_000):
        self.profile = profile
        self.macs_per_unit = macs_per_unit
        self.chunk = chunk
        self._a = np.linspace(0.5, 1.5, chunk)
        self._b = np.linspace(1.5, 0.5, chunk)
        res = time.get_clock_info("perf_counter").resolution
        if res > 1e-3:
            log.warning("perf_counter resolution %.3g s is coarser than 1 ms; "
                        "measured delays will be unreliable", res)

    def time_units(self, units: float) -> float:
        total = int(round(units * self.macs_per_unit))
        t0 = time.perf_counter()
        acc = 0.0
        done = 0
        while done < total:
            n = min(self.chunk, total - done)
            acc += float(np.dot(self._a[:n], self._b[:n]))
            done += n
        elapsed = time.perf_counter() - t0
        if not math.isfinite(acc):  # keep the accumulator live
            raise AssertionError("kernel accumulator overflowed")
        return elapsed


def measured_delay(action: Action, workload: KernelWorkload) -> float:
    """Execute the timing kernel sized to the action's cost and return the
    wall-clock seconds."""
    return workload.time_units(action_cost(workload.profile, action))


def _spin(stop_event):
    x = 0.5
    while not stop_event.is_set():
        for _ in range(10_000):
            x = x * 0.999 + 0.001
    return x


class BusyLoadWorkers:
    """Spawn n busy-loop processes to contend for CPU (bench suite only)."""

    def __init__(self, n_workers: int):
        self.n_workers = n_workers
        self._stop = multiprocessing.Event()
        self._procs: list[multiprocessing.Process] = []

    def __enter__(self):
        for _ in range(self.n_workers):
            p = multiprocessing.Process(target=_spin, args=(self._stop,), daemon=True)
            p.start()
            self._procs.append(p)
        time.sleep(0.2)  # let workers reach steady state
        return self

    def __exit__(self, *exc):
        self._stop.set()
        for p in self._procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
        return False
