"""Multi-agent environment: scenario + perception + dynamics + reward."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .perception import ObservationBatch, PerceptionConfig, observe
from .reward import COMPONENTS, EnergyModel, EpisodeLog, Metrics, RewardConfig, episode_metrics, world_rewards
from .scenarios import ScenarioConfig, build_scenario
from .sim import DynamicsConfig, WorldState, step


@dataclass(frozen=True)
class EnvConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    energy: EnergyModel = field(default_factory=EnergyModel)


@dataclass
class StepResult:
    rewards: np.ndarray  # (N,) totals
    components: dict
    newly_reached: np.ndarray
    controlled: np.ndarray  # agents that acted this step
    terminal: bool
    truncated: bool  # terminal because of the time limit
    metrics: Metrics | None  # set when the episode just ended


class CrowdEnv:
    """One simulated world with episode bookkeeping.

    Observation batches always cover every agent; callers use ``active`` to
    pick out the ones that still act.
    """

    def __init__(self, config: EnvConfig, seed: int = 0, record_actions: bool = False):
        self.config = config
        self._seeds = np.random.SeedSequence(seed)
        self.record_actions = record_actions
        self.world: WorldState | None = None
        self.log: EpisodeLog | None = None
        self._prev_rays = None
        self._current_rays = None
        self._obs: ObservationBatch | None = None
        self.episodes = 0

    def reset(self, seed: int | None = None) -> ObservationBatch:
        if seed is None:
            seed = int(self._seeds.spawn(1)[0].generate_state(1, dtype=np.uint64)[0])
        scen = replace(self.config.scenario, seed=seed)
        self.world = build_scenario(scen)
        self.log = EpisodeLog(self.world.n_agents, self.config.dynamics.decision_dt)
        self._prev_rays = None
        self._refresh_obs()
        return self._obs

    def _refresh_obs(self):
        self._obs, self._current_rays = observe(self.world, self.config.perception, self._prev_rays)

    @property
    def observation(self) -> ObservationBatch:
        return self._obs

    @property
    def active(self) -> np.ndarray:
        return ~self.world.reached

    def step(self, actions) -> StepResult:
        prev = self.world
        controlled = ~prev.reached
        self.world, events = step(prev, actions, self.config.dynamics)
        comps = world_rewards(prev, self.world, events, self.config.reward)
        total = sum(comps[c] for c in COMPONENTS)
        speeds = np.linalg.norm(self.world.velocities, axis=1)
        self.log.record(
            speeds=speeds,
            controlled=controlled,
            collisions=events.collision_counts,
            n_events=len(events.collisions),
            components=comps,
            reached=self.world.reached,
            actions=np.asarray(actions) if self.record_actions else None,
        )
        self._prev_rays = self._current_rays
        self._refresh_obs()
        terminal = self.world.terminal
        truncated = terminal and not bool(self.world.reached.all())
        metrics = None
        if terminal:
            metrics = episode_metrics(self.log, self.config.energy)
            self.episodes += 1
        return StepResult(total, comps, events.newly_reached, controlled, terminal, truncated, metrics)


def run_episode(config: EnvConfig, policy_fn, seed: int) -> Metrics:
    """Roll out one episode where ``policy_fn(obs_batch, active) -> (N, 2)`` acts."""
    env = CrowdEnv(config)
    obs = env.reset(seed)
    while True:
        actions = policy_fn(obs, env.active)
        res = env.step(actions)
        obs = env.observation
        if res.terminal:
            return res.metrics
