"""Frame-stream surrogate: action grid, difficulty process, quality table,
and the recurrent stream feature.

Real frames are out of scope; a frame is just a difficulty in [0, 1] that
evolves as a clamped AR(1). Expected accuracy of an action is its table
entry minus a difficulty penalty. The 8-slot stream feature carries what a
recurrent summary of the stream would: difficulty EMAs at three horizons,
an EMA of achieved accuracy, the last action (normalized) and its score,
plus a constant bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError

FEATURE_DIM = kernels.STREAM_DIM


@dataclass(frozen=True)
class Action:
    res_index: int
    depth_index: int
    res: int
    flat_index: int


class ActionSpace:
    """The m x n (resolution, depth) grid in row-major order."""

    def __init__(self, resolutions, n_depths: int):
        resolutions = tuple(int(r) for r in resolutions)
        if not resolutions or any(b <= a for a, b in zip(resolutions, resolutions[1:])):
            raise ConfigError(f"resolutions must be strictly increasing, got {resolutions}")
        if n_depths < 1:
            raise ConfigError(f"n_depths must be >= 1, got {n_depths}")
        self.resolutions = resolutions
        self.n_depths = int(n_depths)
        self.all_actions = tuple(
            Action(i, j, res, i * n_depths + j)
            for i, res in enumerate(resolutions)
            for j in range(n_depths)
        )

    @property
    def m(self) -> int:
        return len(self.resolutions)

    @property
    def n(self) -> int:
        return self.n_depths

    @property
    def size(self) -> int:
        return self.m * self.n

    def action(self, i: int, j: int) -> Action:
        return self.all_actions[i * self.n_depths + j]

    def from_flat(self, k: int) -> Action:
        return self.all_actions[k]

    def res_norm(self) -> np.ndarray:
        """Per-action resolution normalized by the largest, in flat order."""
        top = self.resolutions[-1]
        return np.array([a.res / top for a in self.all_actions])

    def depth_norm(self) -> np.ndarray:
        """Per-action (j + 1) / n, in flat order."""
        return np.array([(a.depth_index + 1) / self.n_depths for a in self.all_actions])


def build_action_space(resolutions, n_depths: int) -> ActionSpace:
    return ActionSpace(resolutions, n_depths)


@dataclass(frozen=True)
class Frame:
    t: int
    difficulty: float


@dataclass
class FrameStream:
    """Clamped AR(1) difficulty process. The first frame returns d0; each
    later frame applies d' = rho*d + (1-rho)*mu + sigma_d*z."""

    rho: float
    mu: float
    sigma_d: float
    d0: float = None  # defaults to mu
    _cur: float = field(default=None, repr=False)
    _t: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.d0 is None:
            self.d0 = self.mu


def next_frame(stream: FrameStream, rng: np.random.Generator) -> Frame:
    if stream._cur is None:
        stream._cur = min(max(stream.d0, 0.0), 1.0)
    else:
        z = rng.standard_normal()
        v = stream.rho * stream._cur + (1.0 - stream.rho) * stream.mu + stream.sigma_d * z
        stream._cur = min(max(v, 0.0), 1.0)
    frame = Frame(stream._t, stream._cur)
    stream._t += 1
    return frame


def difficulty_series(stream: FrameStream, T: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized equivalent of T next_frame calls on a fresh stream: the
    first frame consumes no draw, each later frame consumes one."""
    z = np.empty(T)
    z[0] = 0.0
    if T > 1:
        z[1:] = rng.standard_normal(T - 1)
    return kernels.ar1_scan(z, stream.rho, stream.mu, stream.sigma_d, stream.d0)


class QualityTable:
    """Expected accuracy per action: q[i, j] - w_diff * difficulty, clamped
    to [0, 1]. q must be non-decreasing along both axes (more resolution or
    depth never hurts in expectation)."""

    def __init__(self, q, w_diff: float = 0.2, acc_sigma: float = 0.0, binary_mode: bool = False):
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 2:
            raise ConfigError("quality table must be 2-D (resolutions x depths)")
        if np.any(q < 0.0) or np.any(q > 1.0):
            raise ConfigError("quality entries must lie in [0, 1]")
        if np.any(np.diff(q, axis=0) < 0) or np.any(np.diff(q, axis=1) < 0):
            raise ConfigError("quality table must be non-decreasing along both axes")
        if w_diff < 0:
            raise ConfigError(f"w_diff must be >= 0, got {w_diff}")
        self.q = q
        self.q.setflags(write=False)
        self.w_diff = float(w_diff)
        self.acc_sigma = float(acc_sigma)
        self.binary_mode = bool(binary_mode)

    @property
    def shape(self):
        return self.q.shape

    def flat(self) -> np.ndarray:
        return self.q.reshape(-1)

    def expected(self, action: Action, difficulty: float) -> float:
        v = self.q[action.res_index, action.depth_index] - self.w_diff * difficulty
        return min(max(v, 0.0), 1.0)


def accuracy(qt: QualityTable, action: Action, frame: Frame,
             rng: np.random.Generator | None = None) -> float:
    """Realized per-frame score. rng=None returns the expectation; continuous
    mode adds clamped normal noise, binary mode draws correctness."""
    exp_acc = qt.expected(action, frame.difficulty)
    if rng is None:
        return exp_acc
    if qt.binary_mode:
        return 1.0 if rng.random() < exp_acc else 0.0
    if qt.acc_sigma > 0:
        return min(max(exp_acc + qt.acc_sigma * rng.standard_normal(), 0.0), 1.0)
    return exp_acc


def init_stream_feature() -> np.ndarray:
    h = np.zeros(FEATURE_DIM)
    h[kernels.FEAT_BIAS] = 1.0
    return h


def update_stream_feature(h_prev: np.ndarray, frame: Frame, action: Action,
                          acc: float, space: ActionSpace) -> np.ndarray:
    """Pure recurrence step; shares the kernel used inside episode rollouts."""
    h = h_prev.copy()
    kernels.feature_update(h, frame.difficulty,
                           action.res / space.resolutions[-1],
                           (action.depth_index + 1) / space.n_depths,
                           acc)
    return h
