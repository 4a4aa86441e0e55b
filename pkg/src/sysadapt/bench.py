"""Benchmark the hot kernels under the numba JIT and the pure-numpy fallback.

    python -m sysadapt.bench            # runs both backends, prints a table
    SYSADAPT_NUMBA=0 python -m sysadapt.bench --single   # one backend only

The comparison spawns one subprocess per backend so each gets a clean
import with its own SYSADAPT_NUMBA setting.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _timeit(fn, min_time=0.3, max_reps=1000):
    fn()  # warm-up (JIT compilation happens here)
    reps, elapsed = 0, 0.0
    t0 = time.perf_counter()
    while elapsed < min_time and reps < max_reps:
        fn()
        reps += 1
        elapsed = time.perf_counter() - t0
    return elapsed / max(reps, 1)


def run_single() -> dict:
    import numpy as np

    from . import kernels
    from .agent import AgentParams
    from .config import ExperimentConfig
    from .training import train_agent

    cfg = ExperimentConfig()
    env = cfg.make_env()
    params = AgentParams.init(3, 3, cfg.seed)
    T = 1024
    traj = env.make_trajectory(T, 1)
    rng = np.random.default_rng(0)
    x = rng.normal(0, 0.3, params.input_dim)
    states = rng.normal(0, 0.3, (256, params.input_dim))
    actions = rng.integers(0, 9, 256)
    coeffs = rng.normal(0, 0.5, 256)
    targets = np.abs(rng.normal(0.04, 0.01, 256))
    mask = np.ones(256, dtype=bool)

    results = {
        "backend": "numba" if kernels.USE_NUMBA else "numpy",
        "forward_us": _timeit(lambda: kernels.forward(params.theta, x, 9, 64, 32)) * 1e6,
        "rollout_1024_ms": _timeit(lambda: env.rollout(params, T, "sample", 7, trajectory=traj)) * 1e3,
        "backward_256_ms": _timeit(lambda: kernels.backward_batch(
            params.theta, states, actions, coeffs, targets, mask, 0.03, 9, 64, 32)) * 1e3,
        "trajectory_4096_ms": _timeit(lambda: env.make_trajectory(4096, 3)) * 1e3,
    }
    t0 = time.perf_counter()  # kernels are warm from the timings above
    train_agent(env, params, cfg.reward, 20, 0)
    results["train_20_iters_s"] = time.perf_counter() - t0
    return results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--single", action="store_true",
                    help="benchmark only the current backend")
    ap.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    args = ap.parse_args(argv)

    if args.single:
        res = run_single()
        print(json.dumps(res, indent=1) if args.json else res)
        return 0

    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, SYSADAPT_NUMBA=flag)
        out = subprocess.run([sys.executable, "-m", "sysadapt.bench", "--single", "--json"],
                             env=env, capture_output=True, text=True)
        if out.returncode != 0:
            print(out.stderr, file=sys.stderr)
            return out.returncode
        rows.append(json.loads(out.stdout))

    keys = [k for k in rows[0] if k != "backend"]
    width = max(len(k) for k in keys) + 2
    print(f"{'kernel':<{width}} {rows[0]['backend']:>12} {rows[1]['backend']:>12} {'speedup':>9}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k:<{width}} {a:12.3f} {b:12.3f} {b / a:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
