"""Reward, losses, and the three training procedures: direct policy-gradient
training on one device pool, first-order meta-optimization across target
devices, and self-supervised adaptation on an unseen device.

The policy loss is the plain score-function estimator: each step's reward
acts as an immediate coefficient on -log p of the sampled action (no
discounting), optionally centered by a running-mean baseline. The
meta-update simulates a fine-tune on the delay-prediction loss per target
(pseudo-update with rate alpha), evaluates the policy loss at the adapted
parameters, and applies the summed gradients to the shared initialization
with rate beta (first-order approximation: no second derivatives).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .agent import AgentParams, Gradient
from .env import EpisodeLog, RewardConfig, SimEnv
from .errors import ConfigError, NumericalDivergenceError

# spawn-key namespaces for deriving independent episode seeds
_TRAIN, _META_INNER, _META_TEST, _ADAPT = 1, 3, 4, 5

BASELINE_DECAY = 0.99
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def episode_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(key))


def reward(acc: float, d: float, cfg: RewardConfig) -> float:
    """lambda_acc * acc - max(d - d_b, 0); continuous at d == d_b."""
    return cfg.lambda_acc * acc - max(d - cfg.d_b, 0.0)


def aux_loss(d: float, d_hat: float) -> float:
    """Squared delay-prediction error, seconds squared."""
    return (d - d_hat) ** 2


def policy_loss(params: AgentParams, log: EpisodeLog,
                baseline: float | None = None) -> tuple[float, Gradient]:
    """Sum over steps of -(r_t - b) * log p_t, with b = 0 when baseline is
    None, plus the exact gradient. p_t are the probabilities recorded at
    selection time; p_t <= 0 is an error, never clamped."""
    if len(log) == 0:
        raise ConfigError("policy_loss needs a non-empty episode")
    if np.any(log.probs <= 0.0):
        raise NumericalDivergenceError("recorded action probability <= 0")
    b = 0.0 if baseline is None else baseline
    coeffs = log.rewards - b
    loss = float(np.sum(-coeffs * np.log(log.probs)))
    grad, _, _ = kernels.backward_batch(
        params.theta, log.states, log.actions, coeffs,
        np.zeros(len(log)), np.zeros(len(log), dtype=bool),
        1.0, params.n_actions, params.hidden, params.aux_hidden)
    return loss, grad


def aux_batch_grad(params: AgentParams, log: EpisodeLog, d_b: float) -> tuple[float, Gradient]:
    """Mean squared delay-prediction error over an episode and its gradient.
    The policy head receives no gradient; the shared trunk does."""
    T = len(log)
    grad, _, al = kernels.backward_batch(
        params.theta, log.states, log.actions, np.zeros(T),
        log.delays, np.ones(T, dtype=bool),
        d_b, params.n_actions, params.hidden, params.aux_hidden)
    return al / T, grad / T


@dataclass
class AdamState:
    """Adaptive-moment optimizer state over the flat parameter vector."""

    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: AgentParams, lr: float) -> "AdamState":
        return cls(lr=lr, m=np.zeros_like(params.theta), v=np.zeros_like(params.theta))

    def update(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.step += 1
        kernels.adam_step(theta, grad, self.m, self.v, self.step,
                          self.lr, self.beta1, self.beta2, self.eps)


class RunningMean:
    """Exponential running mean used as the reward baseline."""

    def __init__(self, decay: float = BASELINE_DECAY):
        self.decay = decay
        self.value: float | None = None

    def update(self, x: float) -> float:
        if self.value is None:
            self.value = x
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * x
        return self.value


@dataclass
class TrainResult:
    params: AgentParams
    history: list[dict]


def _check_finite(what: str, it: int, *values: float) -> None:
    for v in values:
        if not np.isfinite(v):
            raise NumericalDivergenceError(f"{what} diverged at iteration {it}: {v!r}")


def train_agent(env, params: AgentParams, cfg: RewardConfig, iters: int, seed: int,
                *, episode_len: int = 256, lr: float = 1e-3, use_baseline: bool = True,
                aux_weight: float = 0.0, log_sink=None) -> TrainResult:
    """Policy-gradient training. Each iteration draws a fresh seeded load
    trajectory and frame stream, rolls one sampled-action episode, and takes
    one optimizer step on the policy loss (optionally plus aux_weight times
    the delay-prediction loss).

    env may be a single SimEnv or a sequence (iteration i trains on
    env[i % len]); all envs must share the reward config.
    """
    envs = tuple(env) if isinstance(env, (list, tuple)) else (env,)
    for e in envs:
        if e.reward_cfg != cfg:
            raise ConfigError("env reward config does not match training config")
    params = params.copy()
    adam = AdamState.for_params(params, lr)
    baseline = RunningMean() if use_baseline else None
    history: list[dict] = []
    for it in range(iters):
        e = envs[it % len(envs)]
        log = e.rollout(params, episode_len, "sample", episode_seed(seed, _TRAIN, it))
        mean_r = float(np.mean(log.rewards))
        _check_finite("mean reward", it, mean_r)
        if baseline is not None and baseline.value is None:
            baseline.update(mean_r)  # warm start: first episode is centered
        b = baseline.value if baseline is not None else None
        loss, grad = policy_loss(params, log, b)
        if aux_weight > 0.0:
            al, ag = aux_batch_grad(params, log, cfg.d_b)
            loss += aux_weight * al * len(log)
            grad = grad + aux_weight * len(log) * ag
        _check_finite("loss", it, loss)
        adam.update(params.theta, grad)
        if baseline is not None:
            baseline.update(mean_r)
        record = {
            "iter": it,
            "mean_reward": mean_r,
            "mean_delay": float(np.mean(log.delays)),
            "rt_frac": float(np.mean(log.delays < 0.030)),
            "loss": loss,
        }
        history.append(record)
        if log_sink is not None:
            log_sink.write(json.dumps(record) + "\n")
    return TrainResult(params, history)


@dataclass(frozen=True)
class MetaConfig:
    """Meta-optimization knobs. K, when set, must match the target count."""

    alpha: float = 1e-3   # pseudo-update rate on the delay loss
    beta: float = 1e-5    # outer rate on the meta parameters
    K: int | None = None
    inner_batch: int = 64
    episodes_per_meta_test: int = 2
    episode_len: int = 128

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0:
            raise ConfigError("alpha must be > 0 and beta >= 0")
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be >= 1")


def first_order_meta_update(phi: np.ndarray, tasks, alpha: float, beta: float) -> np.ndarray:
    """One outer update of the shared initialization phi.

    tasks is a sequence of (grad_inner, grad_outer) callables on parameter
    vectors. Per task: pseudo-update phi_tgt = phi - alpha * grad_inner(phi),
    then evaluate grad_outer at phi_tgt. The summed outer gradients step phi
    directly (first-order: the pseudo-update is not differentiated through).
    """
    total = np.zeros_like(phi)
    for grad_inner, grad_outer in tasks:
        phi_tgt = phi - alpha * grad_inner(phi)
        total += grad_outer(phi_tgt)
    return phi - beta * total


def _as_params(theta: np.ndarray, like: AgentParams) -> AgentParams:
    return AgentParams(theta, like.m, like.n, like.hidden, like.aux_hidden, like.seed)


def meta_step(phi_meta: AgentParams, targets, cfg: MetaConfig, rcfg: RewardConfig,
              seed: int) -> AgentParams:
    """One meta-iteration over K target environments.

    Every target uses the same derived seed bundle within this step, and the
    adaptation samples (inner) come from a different stream than the
    evaluation episodes (outer), so the two never share draws.
    """
    targets = tuple(targets)
    if not targets:
        raise ConfigError("meta_step needs at least one target environment")
    if cfg.K is not None and cfg.K != len(targets):
        raise ConfigError(f"MetaConfig.K={cfg.K} but {len(targets)} targets supplied")

    inner_seed = episode_seed(seed, _META_INNER)
    test_seeds = [episode_seed(seed, _META_TEST, e) for e in range(cfg.episodes_per_meta_test)]

    def make_task(env: SimEnv):
        def grad_inner(theta: np.ndarray) -> np.ndarray:
            p = _as_params(theta, phi_meta)
            log = env.rollout(p, cfg.inner_batch, "sample", inner_seed)
            _, g = aux_batch_grad(p, log, rcfg.d_b)
            return g

        def grad_outer(theta: np.ndarray) -> np.ndarray:
            p = _as_params(theta, phi_meta)
            total = np.zeros_like(theta)
            for s in test_seeds:
                log = env.rollout(p, cfg.episode_len, "sample", s)
                _check_finite("meta-test reward", 0, float(np.mean(log.rewards)))
                _, g = policy_loss(p, log, float(np.mean(log.rewards)))
                total += g
            return total

        return grad_inner, grad_outer

    theta = first_order_meta_update(phi_meta.theta.copy(),
                                    [make_task(env) for env in targets],
                                    cfg.alpha, cfg.beta)
    out = _as_params(theta, phi_meta)
    return out


def meta_train(phi: AgentParams, targets, cfg: MetaConfig, rcfg: RewardConfig,
               iters: int, seed: int, log_sink=None) -> TrainResult:
    """Repeated meta_step with per-iteration seed derivation."""
    params = phi.copy()
    history = []
    for u in range(iters):
        params = meta_step(params, targets, cfg, rcfg, (seed, u))
        if log_sink is not None or u == iters - 1:
            record = {"iter": u}
            if log_sink is not None:
                log_sink.write(json.dumps(record) + "\n")
            history.append(record)
    return TrainResult(params, history)


@dataclass
class AdaptResult:
    params: AgentParams
    logs: list[EpisodeLog]


def adapt_on_device(phi: AgentParams, env, n_steps: int, seed: int,
                    *, chunk: int = 32, lr: float = 1e-3) -> AdaptResult:
    """Deployment-time self-supervised fine-tuning: roll the current policy
    on the target, observe (state, action, delay), and apply n_steps
    optimizer updates on the delay-prediction loss alone. No accuracy labels
    are consumed. All frames processed here are returned for global metrics.
    """
    params = phi.copy()
    adam = AdamState.for_params(params, lr)
    logs: list[EpisodeLog] = []
    d_b = env.reward_cfg.d_b
    for s in range(n_steps):
        log = env.rollout(params, chunk, "sample", episode_seed(seed, _ADAPT, s))
        al, grad = aux_batch_grad(params, log, d_b)
        _check_finite("aux loss", s, al)
        adam.update(params.theta, grad)
        logs.append(log)
    return AdaptResult(params, logs)


def delay_rmse(env, params: AgentParams, T: int, seed) -> float:
    """Held-out delay-prediction RMSE under the current policy."""
    log = env.rollout(params, T, "sample", seed)
    return float(np.sqrt(np.mean((log.dhats - log.delays) ** 2)))
