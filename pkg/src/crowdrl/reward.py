"""Per-step reward components, the walking-energy model and episode metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim import AgentState, StepEvents, WorldState

COMPONENTS = ("goal", "progress", "speed", "collision", "urgency")


@dataclass(frozen=True)
class RewardConfig:
    c_g: float = 10.0
    c_p: float = 1.0
    c_v: float = 0.75
    c_e: float = 1.0
    c_c: float = 0.05
    c_t: float = 0.005
    v_0: float = 1.33
    gamma: float = 0.99
    # Agents that already reached their goal earn nothing further.
    zero_after_goal: bool = True

    def __post_init__(self):
        if self.c_e <= 0:
            raise ValueError("c_e must be positive")
        if self.v_0 <= 0:
            raise ValueError("v_0 must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass(frozen=True)
class EnergyModel:
    """Metabolic cost per kilogram: ``e_s + e_w * v**2`` J/(kg s)."""

    e_s: float = 2.23
    e_w: float = 1.26

    @property
    def optimal_speed(self) -> float:
        return float(np.sqrt(self.e_s / self.e_w))

    def power(self, speed):
        return self.e_s + self.e_w * np.square(speed)


@dataclass
class StepRewardBreakdown:
    goal: float
    progress: float
    speed: float
    collision: float
    urgency: float

    @property
    def total(self) -> float:
        return self.goal + self.progress + self.speed + self.collision + self.urgency

    def as_list(self) -> list[float]:
        return [self.goal, self.progress, self.speed, self.collision, self.urgency]


def reward_arrays(prev_pos, prev_goal, prev_reached, cur_pos, cur_vel, cur_reached,
                  collisions, cfg: RewardConfig) -> dict[str, np.ndarray]:
    """Vectorised reward components for many agents over one decision step."""
    d_prev = np.linalg.norm(prev_pos - prev_goal, axis=-1)
    d_cur = np.linalg.norm(cur_pos - prev_goal, axis=-1)
    speed = np.linalg.norm(cur_vel, axis=-1)
    newly = cur_reached & ~prev_reached
    comps = {
        "goal": np.where(newly, cfg.c_g, 0.0),
        "progress": cfg.c_p * (d_prev - d_cur),
        "speed": -cfg.c_v * np.abs(speed - cfg.v_0) ** cfg.c_e,
        "collision": -cfg.c_c * np.asarray(collisions, dtype=float),
        "urgency": np.full(speed.shape, -cfg.c_t),
    }
    if cfg.zero_after_goal:
        done_before = np.asarray(prev_reached, dtype=bool)
        for name in COMPONENTS:
            comps[name] = np.where(done_before, 0.0, comps[name])
    return comps


def step_reward(prev: AgentState, cur: AgentState, collisions: int, cfg: RewardConfig) -> StepRewardBreakdown:
    """Reward of one agent for the step that took it from ``prev`` to ``cur``.

    ``collisions`` is the number of distinct collision events this agent took
    part in during the step. The goal bonus is paid when ``cur`` is reached
    and ``prev`` was not, so it can only happen once per episode.
    """
    comps = reward_arrays(
        prev.position[None], prev.goal[None], np.array([prev.reached_goal]),
        cur.position[None], cur.velocity[None], np.array([cur.reached_goal]),
        np.array([collisions]), cfg,
    )
    return StepRewardBreakdown(**{k: float(v[0]) for k, v in comps.items()})


def world_rewards(prev: WorldState, cur: WorldState, events: StepEvents, cfg: RewardConfig):
    return reward_arrays(
        prev.positions, prev.goals, prev.reached, cur.positions, cur.velocities, cur.reached,
        events.collision_counts, cfg,
    )


def energy_step(speed, dt: float, model: EnergyModel = EnergyModel()):
    """Energy (J/kg) spent moving at ``speed`` for ``dt`` seconds."""
    speed = np.asarray(speed, dtype=float)
    if np.any(speed < 0):
        raise ValueError("speed must be non-negative")
    out = model.power(speed) * dt
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Episode bookkeeping

MOVING_SPEED = 0.1  # m/s; slower active steps are turning/idling, not walking


@dataclass
class EpisodeLog:
    """Per-step, per-agent record of one episode.

    Each list holds one (n_agents,) array per decision step. ``controlled``
    marks agents that were still pursuing their goal at the start of the
    step (and therefore chose an action).
    """

    n_agents: int
    dt: float
    speeds: list = field(default_factory=list)
    controlled: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    collision_events: list = field(default_factory=list)  # unique events per step
    components: dict = field(default_factory=lambda: {c: [] for c in COMPONENTS})
    actions: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    reached: np.ndarray | None = None

    def record(self, *, speeds, controlled, collisions, n_events, components, reached,
               actions=None, observations=None):
        self.speeds.append(np.asarray(speeds, dtype=float))
        self.controlled.append(np.asarray(controlled, dtype=bool))
        self.collisions.append(np.asarray(collisions, dtype=int))
        self.collision_events.append(int(n_events))
        for c in COMPONENTS:
            self.components[c].append(np.asarray(components[c], dtype=float))
        if actions is not None:
            self.actions.append(np.asarray(actions, dtype=float))
        if observations is not None:
            self.observations.append(observations)
        self.reached = np.asarray(reached, dtype=bool).copy()

    @property
    def length(self) -> int:
        return len(self.speeds)


@dataclass
class Metrics:
    energy: float
    success_rate: float
    collisions: int
    mean_speed: float
    reward: float
    goal: float
    progress: float
    speed: float
    collision: float
    urgency: float
    length: int

    FIELDS = ("energy", "success_rate", "collisions", "mean_speed", "reward",
              "goal", "progress", "speed", "collision", "urgency", "length")

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


def episode_metrics(log: EpisodeLog, model: EnergyModel = EnergyModel()) -> Metrics:
    """Reward-independent metrics plus per-component undiscounted reward sums.

    Energy: every agent burns ``energy_step`` on every step until the episode
    ends, including steps after it reached its goal. Component sums and the
    total reward are means over agents. ``mean_speed`` averages the speed over
    controlled steps faster than ``MOVING_SPEED``.
    """
    n = log.n_agents
    if log.length == 0:
        sums = {c: 0.0 for c in COMPONENTS}
        return Metrics(0.0, 0.0, 0, float("nan"), 0.0, length=0, **sums)
    speeds = np.stack(log.speeds)  # (T, N)
    energy = energy_step(speeds, log.dt, model).sum(axis=0)
    controlled = np.stack(log.controlled)
    moving = controlled & (speeds > MOVING_SPEED)
    mean_speed = float(speeds[moving].mean()) if moving.any() else float("nan")
    sums = {c: float(np.stack(log.components[c]).sum(axis=0).mean()) for c in COMPONENTS}
    reached = log.reached if log.reached is not None else np.zeros(n, dtype=bool)
    return Metrics(
        energy=float(energy.mean()),
        success_rate=float(np.mean(reached)),
        collisions=int(sum(log.collision_events)),
        mean_speed=mean_speed,
        reward=float(sum(sums.values())),
        length=log.length,
        **sums,
    )
