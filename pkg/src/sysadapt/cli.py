"""Command-line harness.

Subcommands: train, eval, meta-train, adapt, baseline-suite, transfer-suite,
sweep, calibrate. Global flags: --config (JSON), --seed, --out, --backend.
Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 backend
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agent import AgentParams
from .config import ExperimentConfig, load_config
from .device import DelaySample, DeviceProfile, calibrate_profile
from .errors import BackendError, CalibrationError, ConfigError, NumericalDivergenceError
from .harness import (augmented_profiles, eval_logs, evaluate, run_baseline_suite,
                      run_sweep, run_transfer_suite, train_policy, write_episodes_csv)
from .training import MetaConfig, adapt_on_device, meta_train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_BACKEND = 4


def _common_flags(sub):
    sub.add_argument("--config", help="JSON experiment config; defaults apply when omitted")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--backend", choices=["modeled", "measured"], help="delay backend override")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.backend is not None:
        cfg.backend = args.backend
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_suite(out: Path, name: str, reports: dict, extra: dict | None = None) -> None:
    doc = {"suite": name, "reports": {k: r.to_dict() for k, r in reports.items()}}
    if extra:
        doc.update(extra)
    (out / "report.json").write_text(json.dumps(doc, indent=1) + "\n")


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    with open(out / "train_log.jsonl", "w") as sink:
        result = train_policy(cfg, log_sink=sink)
    result.params.save(out / "params")
    print(f"trained {cfg.train.iters} iterations; "
          f"final mean reward {result.history[-1]['mean_reward']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    params = AgentParams.load(args.params)
    env = cfg.make_env()
    report = evaluate(env, params, cfg)
    report.save(out / "report.json")
    write_episodes_csv(eval_logs(env, params, cfg), env.space, out / "episodes.csv")
    print(json.dumps(report.aggregate, indent=1))
    return EXIT_OK


def cmd_meta_train(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    sources = [cfg.profile_by_name(s) for s in cfg.transfer.sources]
    if args.params:
        params = AgentParams.load(args.params)
    else:
        params = train_policy(cfg, [cfg.make_env(p) for p in sources]).params
    meta_envs = [cfg.make_env(p) for p in augmented_profiles(sources, cfg.meta.restrict_fracs)]
    mcfg = MetaConfig(alpha=cfg.meta.alpha, beta=cfg.meta.beta,
                      inner_batch=cfg.meta.inner_batch,
                      episodes_per_meta_test=cfg.meta.episodes_per_meta_test,
                      episode_len=cfg.meta.episode_len)
    with open(out / "train_log.jsonl", "w") as sink:
        result = meta_train(params, meta_envs, mcfg, cfg.reward, cfg.meta.iters,
                            (cfg.seed, 13), log_sink=sink)
    result.params.save(out / "params")
    print(f"meta-trained {cfg.meta.iters} iterations over {len(meta_envs)} target profiles")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    params = AgentParams.load(args.params)
    env = cfg.make_env(cfg.profile_by_name(args.target or cfg.transfer.target))
    result = adapt_on_device(params, env, cfg.adapt.n_steps, (cfg.seed, 14),
                             chunk=cfg.adapt.chunk, lr=cfg.adapt.lr)
    result.params.save(out / "params")
    report = evaluate(env, result.params, cfg, extra_logs=result.logs,
                      extra_provenance={"adapt_steps": cfg.adapt.n_steps})
    report.save(out / "report.json")
    write_episodes_csv(result.logs + eval_logs(env, result.params, cfg),
                       env.space, out / "episodes.csv")
    print(json.dumps(report.aggregate, indent=1))
    return EXIT_OK


def cmd_baseline_suite(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    reports = run_baseline_suite(cfg)
    _save_suite(out, "baseline", reports)
    for name, rep in reports.items():
        print(name, json.dumps(rep.aggregate))
    return EXIT_OK


def cmd_transfer_suite(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    result = run_transfer_suite(cfg)
    _save_suite(out, "transfer", result["rows"], {"summary": result["summary"]})
    for name, rep in result["rows"].items():
        print(name, json.dumps(rep.aggregate))
    print("summary", json.dumps(result["summary"]))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    rows = run_sweep(cfg, args.param, values)
    doc = {"suite": "sweep", "param": args.param,
           "rows": [{"value": r["value"], "report": r["report"].to_dict()} for r in rows]}
    (out / "report.json").write_text(json.dumps(doc, indent=1) + "\n")
    for r in rows:
        print(args.param, r["value"], json.dumps(r["report"].aggregate))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    template = DeviceProfile.from_dict(json.loads(Path(args.template).read_text()))
    space = cfg.action_space()
    samples = []
    for row in json.loads(Path(args.samples).read_text()):
        samples.append(DelaySample(space.action(row["i"], row["j"]),
                                   row["load"], row["delay_s"]))
    result = calibrate_profile(samples, template)
    (out / "profile.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    print(json.dumps(result.to_dict()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sysadapt",
                                description="Load-aware adaptive inference control harness")
    subs = p.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("train", help="train the control policy on the configured device")
    _common_flags(sp)
    sp.set_defaults(fn=cmd_train)

    sp = subs.add_parser("eval", help="evaluate a checkpoint on the held-out trajectories")
    _common_flags(sp)
    sp.add_argument("--params", required=True, help="checkpoint path (without extension)")
    sp.set_defaults(fn=cmd_eval)

    sp = subs.add_parser("meta-train", help="meta-optimize across restricted source devices")
    _common_flags(sp)
    sp.add_argument("--params", help="initial checkpoint; trains from scratch when omitted")
    sp.set_defaults(fn=cmd_meta_train)

    sp = subs.add_parser("adapt", help="self-supervised fine-tune on the target device")
    _common_flags(sp)
    sp.add_argument("--params", required=True)
    sp.add_argument("--target", help="target device name (default: config transfer.target)")
    sp.set_defaults(fn=cmd_adapt)

    sp = subs.add_parser("baseline-suite", help="random / system-blind / full comparison")
    _common_flags(sp)
    sp.set_defaults(fn=cmd_baseline_suite)

    sp = subs.add_parser("transfer-suite", help="device-transfer four-row comparison")
    _common_flags(sp)
    sp.set_defaults(fn=cmd_transfer_suite)

    sp = subs.add_parser("sweep", help="retrain per reward-parameter value")
    _common_flags(sp)
    sp.add_argument("--param", required=True, choices=["d_b", "lambda_acc"])
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.set_defaults(fn=cmd_sweep)

    sp = subs.add_parser("calibrate", help="fit base_speed/overhead from measured samples")
    _common_flags(sp)
    sp.add_argument("--samples", required=True, help="JSON list of {i, j, load, delay_s}")
    sp.add_argument("--template", required=True, help="JSON profile holding fixed fields")
    sp.set_defaults(fn=cmd_calibrate)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
