"""Experiment runner: multi-seed training, evaluation, sweeps, random search, analysis tables.

Every CSV written here starts with a ``# config_hash=... seed=...`` comment
line followed by a header row.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, ExperimentConfig, numeric_leaf
from .env import EnvConfig, run_episode
from .policy import ActorCritic
from .ppo import train
from .reward import EnergyModel, Metrics

FINAL_WINDOW = 10
SUMMARY_METRICS = ("reward", "goal", "progress", "speed", "collision", "urgency",
                   "energy", "success_rate", "collisions", "mean_speed")


def mean_sem(values) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt n) ignoring NaNs; sem is 0 for one value."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def write_csv(path, header, rows, config_hash: str, seed) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Comment lines and the data rows of a CSV written by this module."""
    comments, body = [], []
    for line in Path(path).read_text().splitlines():
        (comments if line.startswith("#") else body).append(line)
    return comments, list(csv.DictReader(body))


# ---------------------------------------------------------------------------
# run


@dataclass
class SeedResult:
    seed: int
    final: dict  # metric -> mean over the final training iterations
    evaluation: dict  # metric -> mean over evaluation episodes
    log_path: Path
    checkpoint: Path


def _seed_dir(out: Path, seed: int) -> Path:
    return out / f"seed_{seed}"


def run_seed(cfg: ExperimentConfig, seed: int, out: Path, progress=None) -> SeedResult:
    out = _seed_dir(out, seed)
    out.mkdir(parents=True, exist_ok=True)
    ppo = replace(cfg.ppo, seed=seed)
    comment = f"config_hash={cfg.hash} seed={seed}"
    net, log = train(
        cfg.env, ppo, cfg.n_iterations, arch=cfg.architecture(), log_path=out / "training_log.csv",
        log_comment=comment, checkpoint_dir=out, checkpoint_every=cfg.checkpoint_every, progress=progress,
    )
    checkpoint = out / "final.json"
    net.save(checkpoint, {"config": cfg.to_dict(), "config_hash": cfg.hash, "seed": seed,
                          "iterations": cfg.n_iterations})
    final = {m: log.final_mean(m, FINAL_WINDOW) for m in SUMMARY_METRICS}
    evaluation = {}
    if cfg.eval_episodes:
        episodes = evaluate_policy(net, cfg.env, cfg.eval_episodes, "mean", seed=10_000 + seed)
        evaluation = {m: mean_sem([getattr(e, m) for e in episodes])[0] for m in SUMMARY_METRICS}
    return SeedResult(seed, final, evaluation, out / "training_log.csv", checkpoint)


def summarize(cfg: ExperimentConfig, results: list[SeedResult]) -> dict:
    def block(key):
        out = {}
        for m in SUMMARY_METRICS:
            vals = [getattr(r, key).get(m, float("nan")) for r in results]
            mean, sem = mean_sem(vals)
            out[m] = {"mean": mean, "sem": sem, "values": vals}
        return out

    return {
        "name": cfg.name,
        "config_hash": cfg.hash,
        "seeds": [r.seed for r in results],
        "final_window": FINAL_WINDOW,
        "training": block("final"),
        "evaluation": block("evaluation") if cfg.eval_episodes else {},
    }


def run(cfg: ExperimentConfig, out_dir=None, progress=None) -> dict:
    """Train ``n_seeds`` runs (seeds ``ppo.seed + i``) and write ``summary.json``."""
    out = Path(out_dir or Path(cfg.output_dir) / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())
    results = [run_seed(cfg, cfg.ppo.seed + i, out, progress) for i in range(cfg.n_seeds)]
    summary = summarize(cfg, results)
    (out / "summary.json").write_text(json.dumps(_finite(summary), indent=2, sort_keys=True))
    return summary


def _finite(x):
    """JSON has no NaN; store missing values as null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# evaluate


def evaluate_policy(net: ActorCritic, env_cfg: EnvConfig, n_episodes: int, action_mode: str = "mean",
                    seed: int = 0) -> list[Metrics]:
    """Episodes with no learning; episode ``i`` uses scenario seed ``seed + i``."""
    if action_mode not in ("mean", "sample"):
        raise ValueError("action_mode must be 'mean' or 'sample'")
    rng = np.random.default_rng(seed)

    def policy(obs, active):
        actions = np.zeros((len(obs), 2))
        idx = np.flatnonzero(active)
        if len(idx):
            a, _, _ = net.act(obs.take(idx), rng, action_mode)
            actions[idx] = np.clip(a, -1.0, 1.0)
        return actions

    return [run_episode(env_cfg, policy, seed + i) for i in range(n_episodes)]


def evaluate(checkpoint, cfg: ExperimentConfig, n_episodes: int, action_mode: str = "mean",
             out_path=None, seed: int = 0) -> list[Metrics]:
    net, _ = ActorCritic.load(checkpoint)
    expected = cfg.architecture()
    if net.arch.param_shapes() != expected.param_shapes():
        raise ConfigError(f"checkpoint holds a {net.arch.variant} network but the configuration "
                          f"expects {expected.variant}")
    episodes = evaluate_policy(net, cfg.env, n_episodes, action_mode, seed)
    if out_path:
        header = ["episode", *Metrics.FIELDS]
        rows = [[i, *(m.as_dict()[f] for f in Metrics.FIELDS)] for i, m in enumerate(episodes)]
        if episodes:
            stats = [mean_sem([getattr(m, f) for m in episodes]) for f in Metrics.FIELDS]
            rows.append(["mean", *(s[0] for s in stats)])
            rows.append(["sem", *(s[1] for s in stats)])
        write_csv(out_path, header, rows, cfg.hash, seed)
    return episodes


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ("energy", "success_rate", "collisions", "reward")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    seeds: int = 1

    def validate(self, cfg: ExperimentConfig):
        numeric_leaf(cfg, self.axis)
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.seeds < 1:
            raise ConfigError("seeds per value must be >= 1")


def sweep(base: ExperimentConfig, spec: SweepSpec, out_dir=None, progress=None) -> list[dict]:
    """One multi-seed run per value; returns and writes the aggregate table."""
    spec.validate(base)
    out = Path(out_dir or Path(base.output_dir) / f"{base.name}_sweep")
    table = []
    for value in spec.values:
        cfg = replace(base.with_value(spec.axis, value), n_seeds=spec.seeds)
        summary = run(cfg, out / f"{spec.axis}={value}", progress)
        row = {"value": value}
        for m in SWEEP_COLUMNS:
            row[f"{m}_mean"] = summary["training"][m]["mean"]
            row[f"{m}_sem"] = summary["training"][m]["sem"]
        table.append(row)
    header = ["value"] + [f"{m}_{s}" for m in SWEEP_COLUMNS for s in ("mean", "sem")]
    write_csv(out / "sweep.csv", header, [[r[h] for h in header] for r in table], base.hash, base.ppo.seed)
    return table


# ---------------------------------------------------------------------------
# search

DEFAULT_RANGES = {
    "ppo.lr": ("log", 1e-4, 3e-3),
    "ppo.clip_eps": ("uniform", 0.1, 0.3),
    "ppo.entropy_coef": ("uniform", 0.0, 0.01),
    "network.width": ("choice", 32, 64, 128),
}


def sample_params(ranges: dict, rng) -> dict:
    out = {}
    for name, (kind, *args) in ranges.items():
        if kind == "log":
            lo, hi = args
            out[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        elif kind == "uniform":
            lo, hi = args
            out[name] = float(rng.uniform(lo, hi))
        elif kind == "choice":
            out[name] = args[int(rng.integers(len(args)))]
        else:
            raise ConfigError(f"unknown range kind {kind!r} for {name}")
    return out


def _apply_sample(cfg: ExperimentConfig, sample: dict) -> ExperimentConfig:
    for name, value in sample.items():
        if name == "network.width":
            net = cfg.network
            cfg = replace(cfg, network=replace(net, trunk=(value,) * len(net.trunk),
                                              psi=(value,) * len(net.psi), phi=(value,) * len(net.phi)))
        else:
            cfg = cfg.with_value(name, value)
    return cfg


def search(base: ExperimentConfig, n_samples: int, ranges: dict | None = None, seed: int = 0,
           n_iterations: int | None = None, top_k: int = 5, out_dir=None, progress=None) -> list[dict]:
    """Random search; ranked by mean episodic reward over the final iterations."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    ranges = ranges or DEFAULT_RANGES
    rng = np.random.default_rng(seed)
    out = Path(out_dir or Path(base.output_dir) / f"{base.name}_search")
    iterations = base.n_iterations if n_iterations is None else n_iterations
    rows = []
    for i in range(n_samples):
        sample = sample_params(ranges, rng)
        cfg = replace(_apply_sample(base, sample), n_iterations=iterations, n_seeds=1, eval_episodes=0,
                      name=f"sample_{i}")
        result = run_seed(cfg, cfg.ppo.seed, out / f"sample_{i}", progress)
        rows.append({"sample": i, **sample, "score": result.final["reward"], "config": cfg})
    ranked = sorted(rows, key=lambda r: -r["score"] if math.isfinite(r["score"]) else math.inf)
    names = list(ranges)
    header = ["rank", "sample", *names, "score"]
    with _open_with_comments(out / "search.csv", base.hash, seed,
                             f"score = mean episodic reward over the final {FINAL_WINDOW} iterations") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rank, r in enumerate(ranked, 1):
            writer.writerow([rank, r["sample"], *(r[n] for n in names), r["score"]])
    for rank, r in enumerate(ranked[:top_k], 1):
        (out / f"top_{rank}.yaml").write_text(r["config"].to_yaml())
    return ranked


def _open_with_comments(path: Path, config_hash, seed, note):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w", newline="")
    fh.write(f"# config_hash={config_hash} seed={seed}\n# {note}\n")
    return fh


# ---------------------------------------------------------------------------
# analyze


def analyze(params: analysis.SimpleModelParams, out_dir, model=None) -> analysis.AnalysisSummary:
    """Write the return-model curves and sweeps as CSV; return the located optima."""
    model = model or EnergyModel()
    out = Path(out_dir)
    tag = json.dumps({"d": params.d, "t_max": params.t_max, "dt": params.dt,
                      **_plain_reward(params)}, sort_keys=True)
    h = hashlib.sha256(tag.encode()).hexdigest()[:16]
    vs, ret, energy = analysis.reward_and_energy_curves(params, model)
    disc = analysis.discounted_energy_return(vs, params, model)
    trip = analysis.trip_energy(vs, params.d, model)
    write_csv(out / "return_curve.csv", ["v", "return", "neg_energy", "discounted_neg_energy", "trip_energy"],
              zip(vs, ret, energy, disc, trip), h, "none")
    exps, errs, best = analysis.exponent_sweep(params, model=model)
    write_csv(out / "exponent_sweep.csv", ["c_e", "mse"], zip(exps, errs), h, "none")
    cvs = np.round(np.arange(0.0, 0.3 + 1e-9, 1e-3), 10)
    lin = analysis.coefficient_sweep(params.with_reward(c_e=1.0), "c_v", cvs)
    quad = analysis.coefficient_sweep(params.with_reward(c_e=2.0), "c_v", cvs)
    write_csv(out / "cv_sweep.csv", ["c_v", "v_star_ce1", "v_star_ce2"],
              [(a[0], a[1], b[1]) for a, b in zip(lin, quad)], h, "none")
    gammas = [0.9, 0.95, 0.97, 0.99, 0.995, 0.999]
    g1 = analysis.coefficient_sweep(params.with_reward(c_e=1.0), "gamma", gammas)
    g2 = analysis.coefficient_sweep(params.with_reward(c_e=2.0), "gamma", gammas)
    write_csv(out / "gamma_sweep.csv", ["gamma", "v_star_ce1", "v_star_ce2"],
              [(a[0], a[1], b[1]) for a, b in zip(g1, g2)], h, "none")
    return analysis.summarize(params, model)


def _plain_reward(params):
    r = params.reward
    return {k: getattr(r, k) for k in ("c_g", "c_p", "c_v", "c_e", "c_c", "c_t", "v_0", "gamma")}
