"""PPO with GAE over many agents sharing one policy.

Every agent that is still heading for its goal contributes one transition per
decision step. A trajectory segment belongs to one (world, agent, episode)
triple; it ends with ``done`` when the agent reaches its goal, or is cut by
the time limit / the end of the rollout, in which case the critic's value of
the next observation is used as bootstrap.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import CrowdEnv, EnvConfig
from .perception import ObservationBatch
from .policy import ActorCritic, Architecture, PPOLoss, TrainBatch
from .reward import COMPONENTS, Metrics


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 256
    lr: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    steps_per_iteration: int = 128  # decision steps per world
    n_parallel_worlds: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.steps_per_iteration < 1 or self.n_parallel_worlds < 1:
            raise ValueError("steps_per_iteration and n_parallel_worlds must be >= 1")

    @property
    def loss(self) -> PPOLoss:
        return PPOLoss(self.clip_eps, self.value_coef, self.entropy_coef)


@dataclass
class Transition:
    world: int
    agent_id: int
    observation: object
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool


# ---------------------------------------------------------------------------
# Advantage estimation


def compute_gae(rewards, values, dones, bootstrap: float, gamma: float, lam: float):
    """Advantages and returns for one time-ordered segment.

    ``bootstrap`` is the value of the state after the last step; it is
    ignored when that step is ``done``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    n = rewards.shape[0]
    adv = np.zeros(n)
    next_value = float(bootstrap)
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class Rollout:
    obs: ObservationBatch
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    worlds: np.ndarray
    agents: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episodes: list = field(default_factory=list)  # Metrics of episodes that ended

    def __len__(self):
        return self.actions.shape[0]

    def transition(self, i: int) -> Transition:
        return Transition(int(self.worlds[i]), int(self.agents[i]), self.obs.observation(i), self.actions[i],
                          float(self.log_probs[i]), float(self.rewards[i]), float(self.values[i]),
                          bool(self.dones[i]))

    def batch(self) -> TrainBatch:
        return TrainBatch(self.obs, self.actions, self.log_probs, self.advantages, self.returns)


class RolloutCollector:
    """Steps a fixed set of worlds with one shared network.

    Worlds keep their state between calls, so an episode can span several
    rollouts.
    """

    def __init__(self, env_cfg: EnvConfig, n_worlds: int, seed: int):
        seeds = np.random.SeedSequence(seed).spawn(n_worlds + 1)
        self.envs = [CrowdEnv(env_cfg, seed=int(s.generate_state(1)[0])) for s in seeds[:n_worlds]]
        self.rng = np.random.default_rng(seeds[-1])
        self._next_segment = 0
        self._segment_ids = []
        for env in self.envs:
            env.reset()
            self._segment_ids.append(self._fresh_ids(env.world.n_agents))

    def _fresh_ids(self, n):
        ids = np.arange(self._next_segment, self._next_segment + n)
        self._next_segment += n
        return ids

    def collect(self, net: ActorCritic, steps: int, gamma: float, lam: float) -> Rollout:
        obs_parts, acts, logps, vals, rews, dones, worlds, agents, segs = ([] for _ in range(9))
        bootstrap = {}  # segment id -> value of the state after its last step
        episodes = []
        for _ in range(steps):
            batches, rows = [], []
            for w, env in enumerate(self.envs):
                active = np.flatnonzero(env.active)
                rows.append(active)
                batches.append(env.observation.take(active))
            joint = ObservationBatch.concatenate(batches)
            action, logp, value = net.act(joint, self.rng, "sample")
            start = 0
            truncated_obs, truncated_keys = [], []
            for w, env in enumerate(self.envs):
                active = rows[w]
                stop = start + len(active)
                full = np.zeros((env.world.n_agents, 2))
                full[active] = np.clip(action[start:stop], -1.0, 1.0)
                res = env.step(full)
                seg = self._segment_ids[w][active]
                done = res.newly_reached[active]
                obs_parts.append(batches[w])
                acts.append(action[start:stop])
                logps.append(logp[start:stop])
                vals.append(value[start:stop])
                rews.append(res.rewards[active])
                dones.append(done)
                worlds.append(np.full(len(active), w))
                agents.append(active)
                segs.append(seg)
                if res.terminal:
                    episodes.append(res.metrics)
                    cut = active[~done]
                    if len(cut):
                        truncated_obs.append(env.observation.take(cut))
                        truncated_keys.extend(self._segment_ids[w][cut])
                    env.reset()
                    self._segment_ids[w] = self._fresh_ids(env.world.n_agents)
                start = stop
            if truncated_obs:
                v = net.value(ObservationBatch.concatenate(truncated_obs))
                bootstrap.update(zip(truncated_keys, v))
        # Segments still running at the end of the rollout.
        tail_obs, tail_keys = [], []
        for w, env in enumerate(self.envs):
            active = np.flatnonzero(env.active)
            if len(active):
                tail_obs.append(env.observation.take(active))
                tail_keys.extend(self._segment_ids[w][active])
        if tail_obs:
            bootstrap.update(zip(tail_keys, net.value(ObservationBatch.concatenate(tail_obs))))

        rewards = np.concatenate(rews)
        values = np.concatenate(vals)
        done_arr = np.concatenate(dones)
        seg_arr = np.concatenate(segs)
        advantages = np.zeros_like(rewards)
        returns = np.zeros_like(rewards)
        order = np.argsort(seg_arr, kind="stable")  # time order is kept within a segment
        bounds = np.flatnonzero(np.diff(seg_arr[order])) + 1
        for idx in np.split(order, bounds):
            last = idx[-1]
            boot = 0.0 if done_arr[last] else float(bootstrap.get(seg_arr[last], 0.0))
            adv, ret = compute_gae(rewards[idx], values[idx], done_arr[idx], boot, gamma, lam)
            advantages[idx] = adv
            returns[idx] = ret
        return Rollout(
            obs=ObservationBatch.concatenate(obs_parts),
            actions=np.concatenate(acts),
            log_probs=np.concatenate(logps),
            values=values,
            rewards=rewards,
            dones=done_arr,
            worlds=np.concatenate(worlds),
            agents=np.concatenate(agents),
            advantages=advantages,
            returns=returns,
            episodes=episodes,
        )


def collect_rollouts(collector: RolloutCollector, net: ActorCritic, cfg: PpoConfig) -> Rollout:
    return collector.collect(net, cfg.steps_per_iteration, cfg.gamma, cfg.gae_lambda)


# ---------------------------------------------------------------------------
# Optimisation


class Adam:
    def __init__(self, params: dict, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def state(self):
        return self.t, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}

    def restore(self, state):
        self.t, self.m, self.v = state

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            if self.lr:
                params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict, max_norm: float, prefix: str = "") -> float:
    """Rescale the gradients whose names start with ``prefix`` to at most ``max_norm``."""
    group = [g for k, g in grads.items() if k.startswith(prefix)]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in group))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in group:
            g *= scale
    return norm


def ppo_update(net: ActorCritic, opt: Adam, batch: TrainBatch, cfg: PpoConfig, rng) -> dict:
    """Several epochs of minibatch PPO on ``batch``; parameters are updated in place.

    A non-finite loss restores the parameters and optimiser state from before
    the call and reports ``aborted = 1``.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    raw = batch.advantages
    adv_mean, adv_std = float(raw.mean()), float(raw.std())
    norm = TrainBatch(batch.obs, batch.actions, batch.old_log_probs,
                      (raw - adv_mean) / (adv_std + 1e-8), batch.returns)
    saved = {k: v.copy() for k, v in net.params.items()}
    saved_opt = opt.state()
    opt.lr = cfg.lr
    spec = cfg.loss
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = norm.take(perm[start:start + cfg.minibatch_size])
            loss, grads, stats = net.loss_and_grad(mb, spec)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                net.params.update(saved)
                opt.restore(saved_opt)
                return {"aborted": 1.0, "adv_mean": adv_mean, "adv_std": adv_std}
            # The critic's gradients are often orders of magnitude larger; clipping
            # the networks jointly would starve the policy.
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm, "pi.")
            clip_grad_norm(grads, cfg.max_grad_norm, "vf.")
            opt.step(net.params, grads)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in totals.items()}
    out.update(aborted=0.0, adv_mean=adv_mean, adv_std=adv_std)
    return out


# ---------------------------------------------------------------------------
# Training loop

LOG_COLUMNS = (
    "iteration", "transitions", "episodes", "reward", *COMPONENTS,
    "energy", "success_rate", "collisions", "mean_speed",
    "policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl", "adv_mean", "adv_std", "aborted",
)


class TrainingLog:
    """Per-iteration rows; episode metrics average the episodes that ended in that iteration."""

    def __init__(self, path=None, header_comment: str | None = None):
        self.rows: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            with self.path.open("w", newline="") as fh:
                if header_comment:
                    fh.write(f"# {header_comment}\n")
                csv.writer(fh).writerow(LOG_COLUMNS)

    def append(self, row: dict):
        row = {c: row.get(c, float("nan")) for c in LOG_COLUMNS}
        self.rows.append(row)
        if self.path:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow([row[c] for c in LOG_COLUMNS])

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def final_mean(self, name: str = "reward", window: int = 10) -> float:
        col = self.column(name)[-window:]
        col = col[np.isfinite(col)]
        return float(col.mean()) if col.size else float("nan")


def _episode_means(episodes: list[Metrics]) -> dict:
    if not episodes:
        return {}
    out = {}
    for name in Metrics.FIELDS:
        vals = np.array([getattr(m, name) for m in episodes], dtype=float)
        vals = vals[np.isfinite(vals)]
        out[name] = float(vals.mean()) if vals.size else float("nan")
    out.pop("length", None)
    return out


def train(env_cfg: EnvConfig, cfg: PpoConfig, n_iterations: int, arch: Architecture | None = None,
          log_path=None, log_comment: str | None = None, checkpoint_dir=None, checkpoint_every: int = 0,
          net: ActorCritic | None = None, progress=None):
    """Collect, estimate advantages, update; repeat ``n_iterations`` times."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    if net is None:
        arch = arch or Architecture.for_perception(env_cfg.perception, env_cfg.dynamics.v_max)
        net = ActorCritic(arch, seed=int(seeds[0].generate_state(1)[0]))
    log = TrainingLog(log_path, log_comment)
    if n_iterations <= 0:
        return net, log
    collector = RolloutCollector(env_cfg, cfg.n_parallel_worlds, int(seeds[1].generate_state(1)[0]))
    rng = np.random.default_rng(seeds[2])
    opt = Adam(net.params, cfg.lr)
    for it in range(1, n_iterations + 1):
        rollout = collect_rollouts(collector, net, cfg)
        stats = ppo_update(net, opt, rollout.batch(), cfg, rng)
        row = {"iteration": it, "transitions": len(rollout), "episodes": len(rollout.episodes),
               **_episode_means(rollout.episodes), **stats}
        log.append(row)
        if checkpoint_dir and checkpoint_every and it % checkpoint_every == 0:
            net.save(Path(checkpoint_dir) / f"checkpoint_{it:05d}.json", {"iteration": it})
        if progress:
            progress(log.rows[-1])
    return net, log
