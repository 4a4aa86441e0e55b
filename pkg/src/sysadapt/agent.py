"""The lightweight control policy and its hand-derived gradients.

A three-layer fully connected network maps the observed state
[stream feature | system status | previous action one-hot | previous
delay / d_b] to a distribution over the action grid. A small second head
consumes the shared trunk features plus the chosen action and predicts the
processing delay (softplus output scaled by the delay budget). Gradients
are exact and analytic for this fixed architecture; there is no autodiff.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError
from .stream import Action, ActionSpace
from .status import SystemStatus

CHECKPOINT_FORMAT_VERSION = 1

# A gradient is a flat float64 array with the same layout as AgentParams.theta.
Gradient = np.ndarray


@dataclass
class AgentParams:
    """Flat 64-bit parameter vector plus the layout that interprets it."""

    theta: np.ndarray
    m: int
    n: int
    hidden: int = 64
    aux_hidden: int = 32
    seed: int | None = None

    @property
    def n_actions(self) -> int:
        return self.m * self.n

    @property
    def input_dim(self) -> int:
        return kernels.state_dim(self.n_actions)

    def __post_init__(self):
        expected = kernels.param_count(self.input_dim, self.n_actions, self.hidden, self.aux_hidden)
        if self.theta.shape != (expected,):
            raise ConfigError(f"theta has shape {self.theta.shape}, layout expects ({expected},)")

    def views(self):
        return kernels.unpack_params(self.theta, self.input_dim, self.n_actions,
                                     self.hidden, self.aux_hidden)

    def copy(self) -> "AgentParams":
        return AgentParams(self.theta.copy(), self.m, self.n, self.hidden, self.aux_hidden, self.seed)

    @classmethod
    def zeros(cls, m: int, n: int, hidden: int = 64, aux_hidden: int = 32) -> "AgentParams":
        D = kernels.state_dim(m * n)
        return cls(np.zeros(kernels.param_count(D, m * n, hidden, aux_hidden)), m, n, hidden, aux_hidden)

    @classmethod
    def init(cls, m: int, n: int, seed: int, hidden: int = 64, aux_hidden: int = 32) -> "AgentParams":
        """Seeded uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out));
        biases start at zero."""
        A = m * n
        D = kernels.state_dim(A)
        params = cls.zeros(m, n, hidden, aux_hidden)
        rng = np.random.default_rng(seed)
        W1, b1, W2, b2, Wp, bp, Wa1, ba1, Wa2, ba2 = params.views()
        for W, fan_in, fan_out in (
            (W1, D, hidden),
            (W2, hidden, hidden),
            (Wp, hidden, A),
            (Wa1, hidden + A, aux_hidden),
            (Wa2, aux_hidden, 1),
        ):
            r = np.sqrt(6.0 / (fan_in + fan_out))
            W[...] = rng.uniform(-r, r, W.shape)
        params.seed = seed
        return params

    def save(self, path) -> None:
        """Checkpoint: flat float64 array plus a JSON sidecar describing it."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.theta)
        sidecar = {
            "dims": {"input": self.input_dim, "hidden": self.hidden,
                     "aux_hidden": self.aux_hidden, "actions": self.n_actions},
            "m": self.m,
            "n": self.n,
            "H": kernels.STREAM_DIM,
            "S": kernels.SYS_DIM,
            "seed": self.seed,
            "format_version": CHECKPOINT_FORMAT_VERSION,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "AgentParams":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        if sidecar.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format: {sidecar.get('format_version')}")
        theta = np.load(path.with_suffix(".npy"))
        return cls(theta, sidecar["m"], sidecar["n"],
                   sidecar["dims"]["hidden"], sidecar["dims"]["aux_hidden"],
                   sidecar.get("seed"))


@dataclass(frozen=True)
class AgentState:
    """Observed state at one step, kept as its three named pieces."""

    h: np.ndarray                 # stream feature, length 8
    sys: np.ndarray               # (load, smoothed load, load delta)
    prev_action_onehot: np.ndarray
    prev_delay_scaled: float      # previous delay / d_b

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.h, self.sys, self.prev_action_onehot, [self.prev_delay_scaled]])

    @classmethod
    def initial(cls, n_actions: int) -> "AgentState":
        from .stream import init_stream_feature
        return cls(init_stream_feature(), np.zeros(kernels.SYS_DIM),
                   np.zeros(n_actions), 0.0)

    @classmethod
    def build(cls, h: np.ndarray, status: SystemStatus, prev_action: Action | None,
              prev_delay: float, d_b: float, n_actions: int) -> "AgentState":
        onehot = np.zeros(n_actions)
        if prev_action is not None:
            onehot[prev_action.flat_index] = 1.0
        sys_vec = np.array([status.load, status.aux_signals[0], status.aux_signals[1]])
        return cls(h, sys_vec, onehot, prev_delay / d_b)


@dataclass(frozen=True)
class PolicyDistribution:
    probs: np.ndarray


def policy_forward(params: AgentParams, state: AgentState) -> tuple[PolicyDistribution, np.ndarray]:
    """Distribution over actions plus the trunk features for the delay head."""
    x = state.vector()
    if x.shape[0] != params.input_dim:
        raise ConfigError(f"state dimension {x.shape[0]} does not match agent input {params.input_dim}")
    probs, feats = kernels.forward(params.theta, x, params.n_actions,
                                   params.hidden, params.aux_hidden)
    return PolicyDistribution(probs), feats


def select_action(dist: PolicyDistribution, space: ActionSpace, mode: str = "greedy",
                  rng: np.random.Generator | None = None) -> tuple[Action, float]:
    """greedy -> lowest flat index among maxima; sample -> inverse CDF on rng."""
    probs = dist.probs
    if mode == "greedy":
        k = int(np.argmax(probs))
    elif mode == "sample":
        if rng is None:
            raise ConfigError("sample mode requires an rng")
        cs = np.cumsum(probs)
        k = min(int(np.searchsorted(cs, rng.random(), side="right")), len(probs) - 1)
    else:
        raise ConfigError(f"unknown selection mode {mode!r}")
    return space.from_flat(k), float(probs[k])


def predict_delay(params: AgentParams, features: np.ndarray, action: Action,
                  d_b: float = 0.03) -> float:
    """Predicted processing time in seconds, strictly positive."""
    return float(kernels.predict_delay_from_feats(
        params.theta, params.input_dim, features, action.flat_index,
        params.n_actions, params.hidden, params.aux_hidden, d_b))


def backward(params: AgentParams, state: AgentState, action: Action,
             reward_coeff: float = 0.0, aux_target: float | None = None,
             d_b: float = 0.03) -> Gradient:
    """Exact gradient of -reward_coeff * log p(action) plus, when aux_target
    is given, the squared delay-prediction error (d - d_hat)^2."""
    x = state.vector()
    use_aux = aux_target is not None
    grad, _, _ = kernels.backward_batch(
        params.theta, x[None, :], np.array([action.flat_index], dtype=np.int64),
        np.array([reward_coeff]), np.array([aux_target if use_aux else 0.0]),
        np.array([use_aux]), d_b, params.n_actions, params.hidden, params.aux_hidden)
    return grad
