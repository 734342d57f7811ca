"""Observation construction: reference frames, proprioception, rays and neighbours.

Layouts (all unnormalised, SI units):

* proprioception, 8 values: ``[px, py, gx, gy, cos(phi), sin(phi), vx, vy]``
  where ``g`` is the goal in the chosen frame (absolute, ``p_g - p`` or
  ``R_phi (p_g - p)``) and ``v`` is the own velocity (rotated by ``R_phi``
  in the egocentric frame only).
* neighbour feature, 5 values: ``[x, y, vx, vy, distance]`` with position
  and velocity in the chosen frame and the centre-to-centre distance.
* rays: ``n_rays`` entries in [0, 1], ``min(hit, range) / range``; with
  ``frame_stack == 2`` the previous decision step's rays come first.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, heading, ray_capsule_distance, ray_circle_distance, rotate_into
from .sim import AgentState, WorldState

PROPRIO_SIZE = 8
NEIGHBOR_FEATURES = 5


class PerceptionMode(str, enum.Enum):
    RAYCAST = "raycast"
    AGENT_PERCEPTION = "agent_perception"
    HYBRID = "hybrid"

    @property
    def uses_rays(self) -> bool:
        return self is not PerceptionMode.AGENT_PERCEPTION

    @property
    def uses_neighbors(self) -> bool:
        return self is not PerceptionMode.RAYCAST


class Frame(str, enum.Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"
    EGOCENTRIC = "egocentric"


@dataclass(frozen=True)
class PerceptionConfig:
    mode: PerceptionMode = PerceptionMode.AGENT_PERCEPTION
    frame: Frame = Frame.EGOCENTRIC
    n_rays: int = 20
    ray_range: float = 10.0
    k_neighbors: int = 10
    frame_stack: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", PerceptionMode(self.mode))
        object.__setattr__(self, "frame", Frame(self.frame))
        if self.n_rays < 3:
            raise ValueError("n_rays must be >= 3")
        if self.ray_range <= 0:
            raise ValueError("ray_range must be positive")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.frame_stack not in (1, 2):
            raise ValueError("frame_stack must be 1 or 2")

    @property
    def ray_size(self) -> int:
        return self.n_rays * self.frame_stack if self.mode.uses_rays else 0


@dataclass
class Observation:
    proprio: np.ndarray
    rays: np.ndarray | None
    neighbors: np.ndarray | None  # (n, NEIGHBOR_FEATURES), nearest first


@dataclass
class ObservationBatch:
    """Observations of many agents with neighbours padded to ``k``."""

    proprio: np.ndarray  # (B, 8)
    rays: np.ndarray | None  # (B, ray_size)
    neighbors: np.ndarray | None  # (B, K, 5)
    counts: np.ndarray | None  # (B,)

    def __len__(self):
        return self.proprio.shape[0]

    def take(self, idx) -> "ObservationBatch":
        return ObservationBatch(
            proprio=self.proprio[idx],
            rays=None if self.rays is None else self.rays[idx],
            neighbors=None if self.neighbors is None else self.neighbors[idx],
            counts=None if self.counts is None else self.counts[idx],
        )

    def observation(self, i: int) -> Observation:
        return Observation(
            proprio=self.proprio[i].copy(),
            rays=None if self.rays is None else self.rays[i].copy(),
            neighbors=None
            if self.neighbors is None
            else self.neighbors[i, : self.counts[i]].copy(),
        )

    @staticmethod
    def concatenate(batches) -> "ObservationBatch":
        batches = list(batches)
        first = batches[0]

        def cat(name):
            if getattr(first, name) is None:
                return None
            return np.concatenate([getattr(b, name) for b in batches], axis=0)

        return ObservationBatch(cat("proprio"), cat("rays"), cat("neighbors"), cat("counts"))

    @staticmethod
    def from_observations(observations, k: int) -> "ObservationBatch":
        observations = list(observations)
        proprio = np.stack([o.proprio for o in observations])
        rays = None
        if observations[0].rays is not None:
            rays = np.stack([o.rays for o in observations])
        neighbors = counts = None
        if observations[0].neighbors is not None:
            neighbors = np.zeros((len(observations), k, NEIGHBOR_FEATURES))
            counts = np.zeros(len(observations), dtype=int)
            for i, o in enumerate(observations):
                m = o.neighbors.shape[0]
                neighbors[i, :m] = o.neighbors
                counts[i] = m
        return ObservationBatch(proprio, rays, neighbors, counts)


# ---------------------------------------------------------------------------


def frame_transform(frame: Frame, agent: AgentState, point, is_velocity: bool = False) -> np.ndarray:
    """Express a world-frame point (or velocity) in the agent's observation frame."""
    return _transform(Frame(frame), agent.position, agent.orientation, np.asarray(point, float), is_velocity)


def _transform(frame: Frame, origin, angle, q, is_velocity):
    if frame is Frame.ABSOLUTE:
        return np.array(q, dtype=float)
    if frame is Frame.RELATIVE:
        return np.array(q, dtype=float) if is_velocity else q - origin
    return rotate_into(q if is_velocity else q - origin, angle)


def proprioception_arrays(world: WorldState, frame: Frame, idx=None) -> np.ndarray:
    idx = np.arange(world.n_agents) if idx is None else np.asarray(idx)
    p = world.positions[idx]
    g = world.goals[idx]
    phi = world.orientations[idx]
    v = world.velocities[idx]
    frame = Frame(frame)
    if frame is Frame.RELATIVE:
        g = g - p
    elif frame is Frame.EGOCENTRIC:
        g = rotate_into(g - p, phi)
        v = rotate_into(v, phi)
    return np.concatenate([p, g, np.cos(phi)[:, None], np.sin(phi)[:, None], v], axis=1)


def proprioception(agent: AgentState, frame: Frame) -> np.ndarray:
    world = WorldState.from_agents([agent])
    return proprioception_arrays(world, frame)[0]


def ray_angles(world: WorldState, cfg: PerceptionConfig, idx) -> np.ndarray:
    base = TWO_PI * np.arange(cfg.n_rays) / cfg.n_rays
    if cfg.frame is Frame.ABSOLUTE:
        return np.broadcast_to(base, (len(idx), cfg.n_rays))
    return world.orientations[idx][:, None] + base[None, :]


def raycast_arrays(world: WorldState, cfg: PerceptionConfig, idx=None, walls_only=False) -> np.ndarray:
    """Normalised ray readings for agents ``idx``: shape (len(idx), n_rays)."""
    idx = np.arange(world.n_agents) if idx is None else np.atleast_1d(np.asarray(idx))
    origins = world.positions[idx]
    dirs = heading(ray_angles(world, cfg, idx))
    packed = world.packed
    best = np.full(dirs.shape[:2], np.inf)
    if packed.wall_a.shape[0]:
        d = ray_capsule_distance(origins, dirs, packed.wall_a, packed.wall_b, packed.wall_half)
        best = np.minimum(best, d.min(axis=2))
    if not walls_only:
        n = world.n_agents
        if n > 1:
            others = np.array([[j for j in range(n) if j != i] for i in idx], dtype=int)
            d = ray_circle_distance(origins, dirs, world.positions[others], world.radii[others])
            best = np.minimum(best, d.min(axis=2))
        if packed.circle_centers.shape[0]:
            d = ray_circle_distance(origins, dirs, packed.circle_centers, packed.circle_radii[None, :])
            best = np.minimum(best, d.min(axis=2))
    return np.minimum(best, cfg.ray_range) / cfg.ray_range


def raycast(world: WorldState, agent_id: int, cfg: PerceptionConfig, targets: str = "all") -> np.ndarray:
    if targets not in ("all", "walls_only"):
        raise ValueError(f"unknown ray targets {targets!r}")
    return raycast_arrays(world, cfg, [agent_id], walls_only=targets == "walls_only")[0]


def neighbor_arrays(world: WorldState, cfg: PerceptionConfig, idx=None):
    """Padded neighbour features (len(idx), k, 5) and per-agent counts.

    Candidates are all other agents (reached ones included) and circle
    obstacles as zero-velocity bodies; walls are never listed here.
    """
    idx = np.arange(world.n_agents) if idx is None else np.atleast_1d(np.asarray(idx))
    packed = world.packed
    cand_pos = np.concatenate([world.positions, packed.circle_centers], axis=0)
    cand_vel = np.concatenate([world.velocities, np.zeros_like(packed.circle_centers)], axis=0)
    k = cfg.k_neighbors
    out = np.zeros((len(idx), k, NEIGHBOR_FEATURES))
    counts = np.zeros(len(idx), dtype=int)
    if cand_pos.shape[0] <= 1:
        return out, counts
    p = world.positions[idx]
    delta = cand_pos[None, :, :] - p[:, None, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    dist[np.arange(len(idx)), idx] = np.inf
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    m = min(k, cand_pos.shape[0] - 1)
    order = order[:, :m]
    rows = np.arange(len(idx))[:, None]
    rel = delta[rows, order]
    vel = cand_vel[order]
    d = dist[rows, order]
    if cfg.frame is Frame.ABSOLUTE:
        pos_feat = cand_pos[order]
    elif cfg.frame is Frame.RELATIVE:
        pos_feat = rel
    else:
        phi = world.orientations[idx][:, None]
        pos_feat = rotate_into(rel, phi)
        vel = rotate_into(vel, phi)
    out[:, :m, 0:2] = pos_feat
    out[:, :m, 2:4] = vel
    out[:, :m, 4] = d
    counts[:] = m
    return out, counts


def agent_perception(world: WorldState, agent_id: int, cfg: PerceptionConfig) -> np.ndarray:
    feats, counts = neighbor_arrays(world, cfg, [agent_id])
    return feats[0, : counts[0]]


def observe(world: WorldState, cfg: PerceptionConfig, prev_rays=None, idx=None):
    """Observations for agents ``idx`` (default: all) plus the current raw rays.

    ``prev_rays`` holds the previous step's rays for every agent in ``idx``
    and is only consulted when ``frame_stack == 2``; ``None`` means t = 0.
    """
    idx = np.arange(world.n_agents) if idx is None else np.atleast_1d(np.asarray(idx))
    proprio = proprioception_arrays(world, cfg.frame, idx)
    rays = current = None
    if cfg.mode.uses_rays:
        current = raycast_arrays(world, cfg, idx, walls_only=cfg.mode is PerceptionMode.HYBRID)
        rays = current
        if cfg.frame_stack == 2:
            prev = np.zeros_like(current) if prev_rays is None else prev_rays
            rays = np.concatenate([prev, current], axis=1)
    neighbors = counts = None
    if cfg.mode.uses_neighbors:
        neighbors, counts = neighbor_arrays(world, cfg, idx)
    return ObservationBatch(proprio, rays, neighbors, counts), current


def assemble(world: WorldState, agent_id: int, cfg: PerceptionConfig, prev_rays=None) -> Observation:
    prev = None if prev_rays is None else np.asarray(prev_rays, dtype=float)[None, :]
    batch, _ = observe(world, cfg, prev, [agent_id])
    return batch.observation(0)
