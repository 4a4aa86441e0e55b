"""Simulation environment: one device profile, one background-load process
set, the frame stream, and the quality table, bundled behind a rollout API.

Rollouts on the modeled backend run entirely inside the compiled episode
kernel and are bit-reproducible per seed. The measured backend swaps the
delay model for wall-clock timings of a real multiply-accumulate kernel
(state features still come from the synthetic trajectory) and is therefore
non-deterministic; it exists for sanity benchmarks, not acceptance runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import kernels
from .agent import AgentParams
from .device import DeviceProfile, KernelWorkload, action_cost, measured_delay
from .errors import BackendError, ConfigError
from .status import BackgroundProcess, LoadTrajectory, generate_trajectory
from .stream import ActionSpace, FrameStream, QualityTable


@dataclass(frozen=True)
class RewardConfig:
    """Per-step reward: lambda_acc * acc - max(delay - d_b, 0), delay in
    seconds. d_b is the tolerance below which delay costs nothing."""

    lambda_acc: float = 2.0
    d_b: float = 0.03

    def __post_init__(self):
        if self.lambda_acc <= 0 or self.d_b <= 0:
            raise ConfigError("lambda_acc and d_b must be > 0")


@dataclass
class EpisodeLog:
    """Per-step record of one episode; arrays all share length T."""

    states: np.ndarray     # (T, D) agent inputs
    actions: np.ndarray    # (T,) flat action indices
    probs: np.ndarray      # (T,) probability of the chosen action
    accs: np.ndarray
    delays: np.ndarray
    rewards: np.ndarray
    dhats: np.ndarray      # delay-head predictions
    loads: np.ndarray

    def __len__(self) -> int:
        return self.actions.shape[0]


def _episode_rngs(seed):
    """Five independent child streams: trajectory, frame stream, action
    sampling, delay noise, accuracy noise. A fresh SeedSequence is built from
    the caller's entropy so repeated calls with the same seed always yield
    the same streams (SeedSequence.spawn is stateful on the instance)."""
    if isinstance(seed, np.random.SeedSequence):
        root = np.random.SeedSequence(entropy=seed.entropy, spawn_key=seed.spawn_key)
    else:
        root = np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in root.spawn(5)]


@dataclass
class SimEnv:
    space: ActionSpace
    quality: QualityTable
    stream: FrameStream
    profile: DeviceProfile
    processes: tuple[BackgroundProcess, ...]
    cap: float = 0.95
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    system_aware: bool = True
    backend: str = "modeled"
    workload: KernelWorkload | None = None

    def __post_init__(self):
        self.processes = tuple(self.processes)
        if self.quality.shape != (self.space.m, self.space.n):
            raise ConfigError(f"quality table shape {self.quality.shape} does not match "
                              f"action grid ({self.space.m}, {self.space.n})")
        if self.backend not in ("modeled", "measured"):
            raise ConfigError(f"backend must be modeled|measured, got {self.backend!r}")

    @cached_property
    def costs(self) -> np.ndarray:
        return np.array([action_cost(self.profile, a) for a in self.space.all_actions])

    def with_profile(self, profile: DeviceProfile) -> "SimEnv":
        return replace(self, profile=profile)

    def make_trajectory(self, T: int, seed) -> LoadTrajectory:
        return generate_trajectory(self.processes, T, self.cap, seed)

    def rollout(self, params: AgentParams, T: int, mode: str = "greedy", seed=0,
                trajectory: LoadTrajectory | None = None) -> EpisodeLog:
        """Simulate T steps. The per-seed random streams are fixed whether or
        not a trajectory override is supplied, so held-out evaluations can pin
        trajectories while keeping the rest of the draw reproducible."""
        if mode not in ("greedy", "sample"):
            raise ConfigError(f"mode must be greedy|sample, got {mode!r}")
        rng_traj, rng_stream, rng_act, rng_dn, rng_an = _episode_rngs(seed)
        if trajectory is None:
            trajectory = generate_trajectory(self.processes, max(T, 1), self.cap,
                                             rng_traj.integers(2 ** 63))
        if T > len(trajectory):
            raise ConfigError(f"episode length {T} exceeds trajectory length {len(trajectory)}")
        z_stream = rng_stream.standard_normal(max(T, 1))
        diffs = kernels.ar1_scan(z_stream, self.stream.rho, self.stream.mu,
                                 self.stream.sigma_d, self.stream.d0)
        u_act = rng_act.random(max(T, 1))
        z_delay = rng_dn.standard_normal(max(T, 1))
        if self.quality.binary_mode:
            acc_noise = rng_an.random(max(T, 1))
        else:
            acc_noise = rng_an.standard_normal(max(T, 1))
        if T == 0:
            D = params.input_dim
            empty = np.zeros(0)
            return EpisodeLog(np.zeros((0, D)), np.zeros(0, dtype=np.int64),
                              empty, empty.copy(), empty.copy(), empty.copy(),
                              empty.copy(), empty.copy())
        if self.backend == "measured":
            return self._rollout_measured(params, T, mode, trajectory, diffs,
                                          u_act, acc_noise)
        out = kernels.rollout(
            params.theta, params.n_actions, params.hidden, params.aux_hidden,
            self.costs, self.quality.flat(), self.space.res_norm(), self.space.depth_norm(),
            self.quality.w_diff, self.quality.acc_sigma, int(self.quality.binary_mode),
            self.profile.base_speed, self.profile.overhead, self.profile.noise_sigma,
            self.profile.capacity_floor,
            self.reward_cfg.lambda_acc, self.reward_cfg.d_b,
            trajectory.loads[:T], trajectory.ema[:T], trajectory.delta[:T], diffs[:T],
            u_act, z_delay, acc_noise,
            int(mode == "greedy"), 1.0 if self.system_aware else 0.0)
        states, actions, probs, accs, delays, rewards, dhats = out
        return EpisodeLog(states, actions, probs, accs, delays, rewards, dhats,
                          trajectory.loads[:T].copy())

    def _rollout_measured(self, params, T, mode, trajectory, diffs, u_act, acc_noise):
        """Python-loop episode with wall-clock delays from the timing kernel."""
        workload = self.workload or KernelWorkload(self.profile)
        A = params.n_actions
        D = params.input_dim
        sys_mask = 1.0 if self.system_aware else 0.0
        q = self.quality.flat()
        res_n = self.space.res_norm()
        dep_n = self.space.depth_norm()
        d_b = self.reward_cfg.d_b

        states = np.zeros((T, D))
        actions = np.zeros(T, dtype=np.int64)
        probs_sel = np.zeros(T)
        accs = np.zeros(T)
        delays = np.zeros(T)
        rewards = np.zeros(T)
        dhats = np.zeros(T)

        h = np.zeros(kernels.STREAM_DIM)
        h[kernels.FEAT_BIAS] = 1.0
        prev_a, prev_delay = -1, 0.0
        for t in range(T):
            x = np.zeros(D)
            x[:kernels.STREAM_DIM] = h
            x[kernels.STREAM_DIM] = trajectory.loads[t] * sys_mask
            x[kernels.STREAM_DIM + 1] = trajectory.ema[t] * sys_mask
            x[kernels.STREAM_DIM + 2] = trajectory.delta[t] * sys_mask
            if prev_a >= 0:
                x[kernels.STREAM_DIM + kernels.SYS_DIM + prev_a] = 1.0
            x[D - 1] = (prev_delay / d_b) * sys_mask

            probs, feats = kernels.forward(params.theta, x, A, params.hidden, params.aux_hidden)
            if mode == "greedy":
                a = int(np.argmax(probs))
            else:
                a = min(int(np.searchsorted(np.cumsum(probs), u_act[t], side="right")), A - 1)
            try:
                delay = measured_delay(self.space.from_flat(a), workload)
            except Exception as exc:
                raise BackendError(f"measured backend failed at step {t}: {exc}") from exc

            exp_acc = min(max(q[a] - self.quality.w_diff * diffs[t], 0.0), 1.0)
            if self.quality.binary_mode:
                acc = 1.0 if acc_noise[t] < exp_acc else 0.0
            elif self.quality.acc_sigma > 0:
                acc = min(max(exp_acc + self.quality.acc_sigma * acc_noise[t], 0.0), 1.0)
            else:
                acc = exp_acc
            r = self.reward_cfg.lambda_acc * acc - max(delay - d_b, 0.0)

            states[t] = x
            actions[t] = a
            probs_sel[t] = probs[a]
            accs[t] = acc
            delays[t] = delay
            rewards[t] = r
            dhats[t] = kernels.predict_delay_from_feats(
                params.theta, D, feats, a, A, params.hidden, params.aux_hidden, d_b)
            kernels.feature_update(h, diffs[t], res_n[a], dep_n[a], acc)
            prev_a, prev_delay = a, delay

        return EpisodeLog(states, actions, probs_sel, accs, delays, rewards, dhats,
                          trajectory.loads[:T].copy())

    # -- brute-force oracle -------------------------------------------------

    def expected_reward_grid(self, load: float, difficulty: float) -> np.ndarray:
        """Noise-free expected reward of every action at one (load,
        difficulty) point; the enumeration the cheating oracle maximizes."""
        eff = self.profile.base_speed * max(1.0 - load, self.profile.capacity_floor)
        delays = self.costs / eff + self.profile.overhead
        exp_acc = np.clip(self.quality.flat() - self.quality.w_diff * difficulty, 0.0, 1.0)
        return self.reward_cfg.lambda_acc * exp_acc - np.maximum(delays - self.reward_cfg.d_b, 0.0)

    def oracle_log(self, T: int, seed=0, trajectory: LoadTrajectory | None = None) -> EpisodeLog:
        """Per-step enumeration of all actions, picking the best expected
        reward with full knowledge of the surrogate and delay model. Uses the
        same seed-derivation as rollout so both see identical trajectories
        and difficulty series; delays and accuracies are expectations."""
        rng_traj, rng_stream, _, _, _ = _episode_rngs(seed)
        if trajectory is None:
            trajectory = generate_trajectory(self.processes, max(T, 1), self.cap,
                                             rng_traj.integers(2 ** 63))
        diffs = kernels.ar1_scan(rng_stream.standard_normal(max(T, 1)),
                                 self.stream.rho, self.stream.mu,
                                 self.stream.sigma_d, self.stream.d0)
        D = kernels.state_dim(self.space.size)
        states = np.zeros((T, D))
        actions = np.zeros(T, dtype=np.int64)
        accs = np.zeros(T)
        delays = np.zeros(T)
        rewards = np.zeros(T)
        eff_speed = self.profile.base_speed * np.maximum(1.0 - trajectory.loads[:T],
                                                         self.profile.capacity_floor)
        for t in range(T):
            grid = self.expected_reward_grid(trajectory.loads[t], diffs[t])
            a = int(np.argmax(grid))
            actions[t] = a
            rewards[t] = grid[a]
            delays[t] = self.costs[a] / eff_speed[t] + self.profile.overhead
            accs[t] = min(max(self.quality.flat()[a] - self.quality.w_diff * diffs[t], 0.0), 1.0)
        probs = np.ones(T)
        return EpisodeLog(states, actions, probs, accs, delays, rewards,
                          np.zeros(T), trajectory.loads[:T].copy())
