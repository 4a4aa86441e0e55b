"""End-to-end experiment orchestration: episode runs, metrics matching the
evaluation protocol (mean accuracy, max/mean delay, real-time fraction,
mean reward), held-out evaluation over 3 fixed trajectories, baseline and
transfer suites, hyperparameter sweeps, and report assembly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .agent import AgentParams
from .config import ExperimentConfig
from .device import restrict_profile
from .env import EpisodeLog, SimEnv
from .errors import ConfigError
from .training import (AdaptResult, MetaConfig, TrainResult, adapt_on_device,
                       episode_seed, meta_train, train_agent)

# A frame is real-time when its delay is strictly below 30 ms (30 fps),
# independent of the reward's d_b.
REALTIME_THRESHOLD = 0.030

# spawn-key namespaces (disjoint from training's)
_EVAL, _PRETRAIN, _UPPER, _META, _ADAPT_SEED, _RMSE = 10, 11, 12, 13, 14, 15


@dataclass(frozen=True)
class Metrics:
    mean_accuracy: float
    max_delay: float
    mean_delay: float
    rt_fraction: float
    mean_reward: float

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "max_delay": self.max_delay,
            "mean_delay": self.mean_delay,
            "rt_fraction": self.rt_fraction,
            "mean_reward": self.mean_reward,
        }


def compute_metrics(log) -> Metrics:
    """Metrics over one EpisodeLog or a list of them (frames pooled, so
    adaptation-phase frames count when included)."""
    logs = log if isinstance(log, (list, tuple)) else [log]
    logs = [l for l in logs if len(l) > 0]
    if not logs:
        raise ConfigError("compute_metrics needs at least one non-empty episode")
    accs = np.concatenate([l.accs for l in logs])
    delays = np.concatenate([l.delays for l in logs])
    rewards = np.concatenate([l.rewards for l in logs])
    return Metrics(
        mean_accuracy=float(np.mean(accs)),
        max_delay=float(np.max(delays)),
        mean_delay=float(np.mean(delays)),
        rt_fraction=float(np.mean(delays < REALTIME_THRESHOLD)),
        mean_reward=float(np.mean(rewards)),
    )


@dataclass
class Report:
    """Per-trajectory metrics plus their arithmetic mean and provenance."""

    rows: list[dict]
    aggregate: dict
    provenance: dict

    def to_dict(self) -> dict:
        return {"rows": self.rows, "aggregate": self.aggregate, "provenance": self.provenance}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def _aggregate(metric_dicts) -> dict:
    keys = metric_dicts[0].keys()
    return {k: float(np.mean([m[k] for m in metric_dicts])) for k in keys}


def make_report(per_traj: list[tuple[int, Metrics]], cfg: ExperimentConfig,
                extra_provenance: dict | None = None) -> Report:
    rows = [{"trajectory": i, "metrics": m.to_dict()} for i, m in per_traj]
    provenance = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "code_version": __version__,
    }
    if extra_provenance:
        provenance.update(extra_provenance)
    return Report(rows, _aggregate([m.to_dict() for _, m in per_traj]), provenance)


def run_episode(env: SimEnv, params: AgentParams, T: int, mode: str, seed) -> EpisodeLog:
    """One simulated episode on the env's configured backend."""
    return env.rollout(params, T, mode, seed)


def heldout_trajectories(env: SimEnv, cfg: ExperimentConfig):
    """The fixed evaluation trajectories, disjoint by construction from every
    training draw (different spawn-key namespace)."""
    out = []
    for j in range(cfg.eval.n_trajectories):
        ss = episode_seed(cfg.seed, _EVAL, j)
        traj = env.make_trajectory(cfg.eval.episode_len, ss)
        out.append((j, ss, traj))
    return out


def evaluate(env: SimEnv, params: AgentParams, cfg: ExperimentConfig,
             mode: str = "greedy", extra_logs: list[EpisodeLog] | None = None,
             extra_provenance: dict | None = None) -> Report:
    """Greedy (or sampled) evaluation on the held-out trajectories. When
    extra_logs are passed (adaptation frames), they join every trajectory
    pool and the aggregate, so reported numbers cover fine-tuning too."""
    per_traj = []
    all_logs = list(extra_logs or [])
    for j, ss, traj in heldout_trajectories(env, cfg):
        log = env.rollout(params, cfg.eval.episode_len, mode, ss, trajectory=traj)
        pool = (extra_logs or []) + [log]
        per_traj.append((j, compute_metrics(pool)))
        all_logs.append(log)
    report = make_report(per_traj, cfg, extra_provenance)
    report.provenance["eval_mode"] = mode
    return report


def eval_logs(env: SimEnv, params: AgentParams, cfg: ExperimentConfig,
              mode: str = "greedy") -> list[EpisodeLog]:
    return [env.rollout(params, cfg.eval.episode_len, mode, ss, trajectory=traj)
            for _, ss, traj in heldout_trajectories(env, cfg)]


def write_episodes_csv(logs, space, path) -> None:
    """episodes.csv: t, action_i, action_j, prob, load, acc, delay_s, reward."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "action_i", "action_j", "prob", "load", "acc", "delay_s", "reward"])
        for log in (logs if isinstance(logs, (list, tuple)) else [logs]):
            for t in range(len(log)):
                a = space.from_flat(int(log.actions[t]))
                w.writerow([t, a.res_index, a.depth_index,
                            f"{log.probs[t]:.9f}", f"{log.loads[t]:.9f}",
                            f"{log.accs[t]:.9f}", f"{log.delays[t]:.9f}",
                            f"{log.rewards[t]:.9f}"])


# -- suites ------------------------------------------------------------------


def train_policy(cfg: ExperimentConfig, env: SimEnv | list[SimEnv] | None = None,
                 seed_key: int = _PRETRAIN, log_sink=None) -> TrainResult:
    envs = env if env is not None else cfg.make_env()
    first = envs[0] if isinstance(envs, (list, tuple)) else envs
    params = AgentParams.init(first.space.m, first.space.n, cfg.seed)
    return train_agent(envs, params, cfg.reward, cfg.train.iters,
                       (cfg.seed, seed_key), episode_len=cfg.train.episode_len,
                       lr=cfg.train.lr, use_baseline=cfg.train.use_baseline,
                       aux_weight=cfg.train.aux_weight, log_sink=log_sink)


def run_baseline_suite(cfg: ExperimentConfig) -> dict[str, Report]:
    """{random policy, system-blind agent, full agent} on identical held-out
    trajectories. The system-blind row trains and evaluates with the status
    features zeroed; the random row is a zero-weight policy sampled
    uniformly."""
    env = cfg.make_env()
    blind_env = cfg.make_env(system_aware=False)

    full = train_policy(cfg, env)
    blind = train_policy(cfg, blind_env)
    uniform = AgentParams.zeros(env.space.m, env.space.n)

    return {
        "random": evaluate(env, uniform, cfg, mode="sample",
                           extra_provenance={"row": "random"}),
        "stream_aware": evaluate(blind_env, blind.params, cfg,
                                 extra_provenance={"row": "stream_aware"}),
        "san": evaluate(env, full.params, cfg, extra_provenance={"row": "san"}),
    }


def augmented_profiles(profiles, fracs):
    """Speed-restricted copies of each profile, one per fraction."""
    return [restrict_profile(p, f) for p in profiles for f in fracs]


def run_transfer_suite(cfg: ExperimentConfig, sources=None, target=None) -> dict:
    """Four-row device-transfer comparison on one held-out target:
    fully-supervised upper bound, direct transfer, self-supervised
    fine-tune, and meta-adaptation. Adapted rows count their adaptation
    frames in the reported metrics; all rows share evaluation trajectories
    and seeds."""
    sources = [cfg.profile_by_name(s) for s in (sources or cfg.transfer.sources)]
    target_profile = cfg.profile_by_name(target or cfg.transfer.target)
    if len(sources) < 2:
        raise ConfigError("transfer suite needs at least 2 source profiles")

    source_envs = [cfg.make_env(p) for p in sources]
    target_env = cfg.make_env(target_profile)

    pretrained = train_policy(cfg, source_envs, seed_key=_PRETRAIN)

    meta_envs = [cfg.make_env(p) for p in
                 augmented_profiles(sources, cfg.meta.restrict_fracs)]
    mcfg = MetaConfig(alpha=cfg.meta.alpha, beta=cfg.meta.beta,
                      inner_batch=cfg.meta.inner_batch,
                      episodes_per_meta_test=cfg.meta.episodes_per_meta_test,
                      episode_len=cfg.meta.episode_len)
    meta = meta_train(pretrained.params, meta_envs, mcfg, cfg.reward,
                      cfg.meta.iters, (cfg.seed, _META))

    ft = adapt_on_device(pretrained.params, target_env, cfg.adapt.n_steps,
                         (cfg.seed, _ADAPT_SEED), chunk=cfg.adapt.chunk, lr=cfg.adapt.lr)
    msa = adapt_on_device(meta.params, target_env, cfg.adapt.n_steps,
                          (cfg.seed, _ADAPT_SEED), chunk=cfg.adapt.chunk, lr=cfg.adapt.lr)

    upper = train_agent(target_env, AgentParams.init(target_env.space.m, target_env.space.n, cfg.seed),
                        cfg.reward, cfg.train.iters, (cfg.seed, _UPPER),
                        episode_len=cfg.train.episode_len, lr=cfg.train.lr,
                        use_baseline=cfg.train.use_baseline)

    rows = {
        "upper_bound": evaluate(target_env, upper.params, cfg,
                                extra_provenance={"row": "upper_bound"}),
        "direct_transfer": evaluate(target_env, pretrained.params, cfg,
                                    extra_provenance={"row": "direct_transfer"}),
        "finetune": evaluate(target_env, ft.params, cfg, extra_logs=ft.logs,
                             extra_provenance={"row": "finetune"}),
        "msa": evaluate(target_env, msa.params, cfg, extra_logs=msa.logs,
                        extra_provenance={"row": "msa"}),
    }
    upper_r = rows["upper_bound"].aggregate["mean_reward"]
    summary = {
        "target": target_profile.name,
        "sources": [p.name for p in sources],
        "reward_gap_to_upper": {
            name: upper_r - rows[name].aggregate["mean_reward"] for name in rows
        },
    }
    return {"rows": rows, "summary": summary}


def run_sweep(cfg: ExperimentConfig, param: str, values) -> list[dict]:
    """Retrain per value with shared seeds and evaluate on the shared
    held-out trajectories. param is d_b or lambda_acc."""
    if param not in ("d_b", "lambda_acc"):
        raise ConfigError(f"sweep param must be d_b|lambda_acc, got {param!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        from dataclasses import replace as _replace
        cfg_v = ExperimentConfig.from_dict(cfg.to_dict())
        cfg_v.reward = _replace(cfg.reward, **{param: float(v)})
        env = cfg_v.make_env()
        trained = train_policy(cfg_v, env)
        report = evaluate(env, trained.params, cfg_v,
                          extra_provenance={"sweep_param": param, "sweep_value": float(v)})
        out.append({"value": float(v), "report": report})
    return out
