import numpy as np
import pytest

from sysadapt.agent import AgentParams
from sysadapt.config import ExperimentConfig
from sysadapt.harness import eval_logs, heldout_trajectories
from sysadapt.training import train_agent


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def env(cfg):
    return cfg.make_env()


@pytest.fixture(scope="session")
def trained_san(cfg, env):
    params = AgentParams.init(env.space.m, env.space.n, cfg.seed)
    return train_agent(env, params, cfg.reward, cfg.train.iters, (cfg.seed, 11)).params


@pytest.fixture(scope="session")
def trained_blind(cfg):
    blind_env = cfg.make_env(system_aware=False)
    params = AgentParams.init(blind_env.space.m, blind_env.space.n, cfg.seed)
    return train_agent(blind_env, params, cfg.reward, cfg.train.iters, (cfg.seed, 11)).params


@pytest.fixture(scope="session")
def san_eval_logs(cfg, env, trained_san):
    return eval_logs(env, trained_san, cfg)


@pytest.fixture(scope="session")
def random_eval_logs(cfg, env):
    uniform = AgentParams.zeros(env.space.m, env.space.n)
    return [env.rollout(uniform, cfg.eval.episode_len, "sample", ss, trajectory=traj)
            for _, ss, traj in heldout_trajectories(env, cfg)]


@pytest.fixture(scope="session")
def oracle_eval_logs(cfg, env):
    return [env.oracle_log(cfg.eval.episode_len, ss, trajectory=traj)
            for _, ss, traj in heldout_trajectories(env, cfg)]


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
