"""Command line entry point: ``crowdrl {run,evaluate,sweep,analyze,search}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import analysis, harness
from .config import PRESETS, SWEEP_PRESETS, ConfigError, default_output_dir, load, preset
from .reward import RewardConfig


def _config(args):
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of a config file or --preset")
    cfg = load(args.config, args.set) if args.config else preset(args.preset, args.set)
    if getattr(args, "output_dir", None):
        cfg = replace(cfg, output_dir=args.output_dir)
    return cfg


def _progress(verbose):
    if not verbose:
        return None

    def show(row):
        print(f"iter {row['iteration']:4d}  reward {row['reward']:9.3f}  success {row['success_rate']:.2f}  "
              f"kl {row['approx_kl']:.4f}", file=sys.stderr, flush=True)

    return show


def cmd_run(args):
    cfg = _config(args)
    summary = harness.run(cfg, progress=_progress(args.verbose))
    for m in ("reward", "success_rate", "energy", "collisions"):
        s = summary["training"][m]
        print(f"{m}: {s['mean']:.4f} +- {s['sem']:.4f}")


def cmd_evaluate(args):
    cfg = _config(args)
    out = args.out or Path(cfg.output_dir) / f"{cfg.name}_eval.csv"
    episodes = harness.evaluate(args.checkpoint, cfg, args.episodes, args.action_mode, out, args.seed)
    if episodes:
        for m in ("reward", "success_rate", "energy", "collisions", "mean_speed"):
            mean, sem = harness.mean_sem([getattr(e, m) for e in episodes])
            print(f"{m}: {mean:.4f} +- {sem:.4f}")
    print(f"wrote {out}")


def cmd_sweep(args):
    cfg = _config(args)
    if args.sweep_preset:
        axis, values = SWEEP_PRESETS[args.sweep_preset]
    else:
        if not args.axis or not args.values:
            raise ConfigError("give --sweep-preset or both --axis and --values")
        axis, values = args.axis, [yaml.safe_load(v) for v in args.values.split(",")]
    table = harness.sweep(cfg, harness.SweepSpec(axis, tuple(values), args.seeds),
                          progress=_progress(args.verbose))
    for row in table:
        print(json.dumps(row))


def cmd_search(args):
    cfg = _config(args)
    ranked = harness.search(cfg, args.samples, seed=args.seed, n_iterations=args.iterations,
                            top_k=args.top_k, progress=_progress(args.verbose))
    for rank, r in enumerate(ranked, 1):
        print(rank, r["sample"], f"{r['score']:.4f}")


def cmd_analyze(args):
    reward = RewardConfig(c_g=args.c_g, c_p=args.c_p, c_v=args.c_v, c_e=args.c_e, c_t=args.c_t,
                          v_0=args.v_0, gamma=args.gamma)
    params = analysis.SimpleModelParams(reward, d=args.distance, t_max=args.t_max, dt=args.dt)
    out = args.out or Path(args.output_dir or default_output_dir()) / "analysis"
    summary = harness.analyze(params, out)
    for line in summary.lines():
        print(line)
    print(f"wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(p):
        p.add_argument("config", nargs="?", help="YAML experiment file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment instead of a file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a setting, e.g. reward.c_c=0.1 (repeatable)")
        p.add_argument("--output-dir", help="results root (default: $CROWDRL_OUTPUT_DIR or ./runs)")
        p.add_argument("-v", "--verbose", action="store_true", help="print per-iteration progress")

    p = sub.add_parser("run", help="train n_seeds runs and write logs, checkpoints and summary.json")
    experiment(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="roll out a checkpoint without learning")
    experiment(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--action-mode", choices=("mean", "sample"), default="mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path for per-episode metrics")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train one run group per value of a setting")
    experiment(p)
    p.add_argument("--sweep-preset", choices=sorted(SWEEP_PRESETS))
    p.add_argument("--axis", help="dotted setting, e.g. reward.c_c")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--seeds", type=int, default=3, help="seeds per value")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", help="random hyperparameter search")
    experiment(p)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--iterations", type=int, help="training iterations per sample")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="sampler seed")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("analyze", help="single-agent return model: curves, sweeps and optima")
    d = RewardConfig()
    for name in ("c_g", "c_p", "c_v", "c_e", "c_t", "v_0", "gamma"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=getattr(d, name))
    p.add_argument("--distance", type=float, default=8.0)
    p.add_argument("--t-max", type=int, default=200)
    p.add_argument("--dt", type=float, default=1.0 / 12.0)
    p.add_argument("--out", help="directory for the CSV files")
    p.add_argument("--output-dir", help="results root when --out is not given")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
