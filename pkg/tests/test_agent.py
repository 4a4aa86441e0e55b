import json
import math

import numpy as np
import pytest

from sysadapt import kernels
from sysadapt.agent import (AgentParams, AgentState, PolicyDistribution,
                            backward, policy_forward, predict_delay,
                            select_action)
from sysadapt.errors import ConfigError
from sysadapt.stream import build_action_space

SPACE = build_action_space([128, 192, 256], 3)


def random_state(rng, n_actions=9):
    h = rng.random(8)
    sys_vec = rng.random(3)
    onehot = np.zeros(n_actions)
    onehot[rng.integers(0, n_actions)] = 1.0
    return AgentState(h, sys_vec, onehot, float(rng.random() * 3))


def test_zero_params_give_uniform_distribution(rng):
    params = AgentParams.zeros(3, 3)
    dist, feats = policy_forward(params, random_state(rng))
    assert np.allclose(dist.probs, 1.0 / 9, atol=1e-15)
    assert feats.shape == (64,)


def test_softmax_shift_invariance(rng):
    params = AgentParams.init(3, 3, seed=0)
    state = random_state(rng)
    probs_before = policy_forward(params, state)[0].probs
    *_, bp, _, _, _, _ = params.views()[:6] + params.views()[6:]
    # add a constant to every policy-head bias (shifts all logits equally)
    W1, b1, W2, b2, Wp, bp, *_ = params.views()
    bp += 3.7
    probs_after = policy_forward(params, state)[0].probs
    assert np.allclose(probs_before, probs_after, atol=1e-12)


def test_distribution_valid_over_seeds():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        params = AgentParams(rng.normal(0, 0.5, AgentParams.zeros(3, 3).theta.shape[0]), 3, 3)
        dist, _ = policy_forward(params, random_state(rng))
        assert np.all(dist.probs >= 0.0)
        assert abs(dist.probs.sum() - 1.0) < 1e-9


def test_state_dimension_mismatch_rejected(rng):
    params = AgentParams.zeros(3, 3)
    bad = AgentState(np.zeros(8), np.zeros(3), np.zeros(4), 0.0)  # wrong onehot width
    with pytest.raises(ConfigError):
        policy_forward(params, bad)


def test_select_action_greedy():
    dist = PolicyDistribution(np.array([0.1, 0.7, 0.2] + [0.0] * 6))
    action, p = select_action(dist, SPACE, "greedy")
    assert action.flat_index == 1
    assert p == pytest.approx(0.7)


def test_select_action_tie_breaks_low_index():
    probs = np.zeros(9)
    probs[3] = probs[5] = 0.5
    action, _ = select_action(PolicyDistribution(probs), SPACE, "greedy")
    assert action.flat_index == 3


def test_select_action_sampling_frequencies():
    space = build_action_space([128, 192], 2)
    dist = PolicyDistribution(np.full(4, 0.25))
    rng = np.random.default_rng(99)
    counts = np.zeros(4)
    n = 100_000
    for _ in range(n):
        a, p = select_action(dist, space, "sample", rng)
        counts[a.flat_index] += 1
        assert p == 0.25
    assert np.all(np.abs(counts / n - 0.25) < 0.01)


def test_select_action_sampling_reproducible():
    dist = PolicyDistribution(np.full(9, 1.0 / 9))
    seq1 = [select_action(dist, SPACE, "sample", np.random.default_rng(5))[0].flat_index
            for _ in range(1)]
    seq2 = [select_action(dist, SPACE, "sample", np.random.default_rng(5))[0].flat_index
            for _ in range(1)]
    assert seq1 == seq2
    with pytest.raises(ConfigError):
        select_action(dist, SPACE, "sample", None)


def test_predict_delay_zero_params_closed_form():
    params = AgentParams.zeros(3, 3)
    feats = np.zeros(64)
    d = predict_delay(params, feats, SPACE.action(1, 1), d_b=0.03)
    assert d == pytest.approx(math.log(2.0) * 0.03, abs=1e-12)


def test_predict_delay_strictly_positive(rng):
    for seed in range(50):
        r = np.random.default_rng(seed)
        params = AgentParams(r.normal(0, 2.0, AgentParams.zeros(3, 3).theta.shape[0]), 3, 3)
        _, feats = policy_forward(params, random_state(r))
        assert predict_delay(params, feats, SPACE.from_flat(int(r.integers(0, 9)))) > 0.0


def test_predict_delay_one_hot_locality(rng):
    params = AgentParams.init(3, 3, seed=4)
    state = random_state(rng)
    _, feats = policy_forward(params, state)
    before = predict_delay(params, feats, SPACE.action(0, 0))
    # perturb the aux-head input column for a different action's one-hot slot
    *_, Wa1, ba1, Wa2, ba2 = params.views()
    Wa1[:, 64 + SPACE.action(2, 2).flat_index] += 10.0
    after = predict_delay(params, feats, SPACE.action(0, 0))
    assert after == before


def test_backward_zero_coeff_no_aux_is_zero(rng):
    params = AgentParams.init(3, 3, seed=1)
    grad = backward(params, random_state(rng), SPACE.action(1, 2), reward_coeff=0.0)
    assert np.all(grad == 0.0)


def test_backward_policy_head_closed_form(rng):
    params = AgentParams.init(3, 3, seed=2)
    state = random_state(rng)
    action = SPACE.action(2, 0)
    coeff = 1.7
    dist, feats = policy_forward(params, state)
    grad = backward(params, state, action, reward_coeff=coeff)
    gWp = kernels.unpack_params(grad, params.input_dim, 9, 64, 32)[4]
    dlogits = coeff * dist.probs.copy()
    dlogits[action.flat_index] -= coeff
    assert np.allclose(gWp, np.outer(dlogits, feats), atol=1e-12)


def test_backward_matches_finite_differences(rng):
    params = AgentParams.init(3, 3, seed=3)
    state = random_state(rng)
    action = SPACE.action(1, 1)
    coeff, target, d_b = 0.8, 0.045, 0.03
    grad = backward(params, state, action, coeff, aux_target=target, d_b=d_b)
    x = state.vector()
    eps = 1e-5
    idx = np.random.default_rng(0).integers(0, grad.shape[0], 60)
    for i in idx:
        tp = params.theta.copy(); tp[i] += eps
        tm = params.theta.copy(); tm[i] -= eps
        fd = (kernels.scalar_loss(tp, x, action.flat_index, coeff, target, True, d_b, 9, 64, 32)
              - kernels.scalar_loss(tm, x, action.flat_index, coeff, target, True, d_b, 9, 64, 32)) / (2 * eps)
        if abs(grad[i]) > 1e-8:
            assert abs(fd - grad[i]) / abs(grad[i]) < 1e-4


def test_aux_only_gradient_skips_policy_head(rng):
    params = AgentParams.init(3, 3, seed=5)
    state = random_state(rng)
    grad = backward(params, state, SPACE.action(0, 1), reward_coeff=0.0, aux_target=0.05)
    gW1, gb1, gW2, gb2, gWp, gbp, gWa1, gba1, gWa2, gba2 = kernels.unpack_params(
        grad, params.input_dim, 9, 64, 32)
    assert np.all(gWp == 0.0) and np.all(gbp == 0.0)
    assert np.any(gW1 != 0.0) and np.any(gW2 != 0.0)  # shared trunk learns
    assert np.any(gWa1 != 0.0)


def test_checkpoint_round_trip(tmp_path):
    params = AgentParams.init(3, 3, seed=7)
    params.save(tmp_path / "ckpt")
    loaded = AgentParams.load(tmp_path / "ckpt")
    assert np.array_equal(loaded.theta, params.theta)
    assert (loaded.m, loaded.n, loaded.hidden, loaded.aux_hidden) == (3, 3, 64, 32)
    sidecar = json.loads((tmp_path / "ckpt.json").read_text())
    assert sidecar["format_version"] == 1
    assert sidecar["dims"]["actions"] == 9
    assert sidecar["H"] == 8 and sidecar["S"] == 3


def test_initialization_seeded_and_bounded():
    a = AgentParams.init(3, 3, seed=11)
    b = AgentParams.init(3, 3, seed=11)
    c = AgentParams.init(3, 3, seed=12)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
    W1 = a.views()[0]
    r = np.sqrt(6.0 / (a.input_dim + 64))
    assert np.all(np.abs(W1) <= r)
    assert np.all(a.views()[1] == 0.0)  # biases start at zero


def test_rollout_state_layout_matches_agent_state(cfg, env):
    params = AgentParams.init(3, 3, seed=9)
    log = env.rollout(params, 1, "greedy", 123)
    from sysadapt.status import sample_status
    traj = env.make_trajectory(1, 0)
    st = AgentState.initial(9)
    assert log.states[0][:8] == pytest.approx(st.h)
    assert log.states[0][11:20] == pytest.approx(st.prev_action_onehot)
    assert log.states[0][-1] == 0.0
