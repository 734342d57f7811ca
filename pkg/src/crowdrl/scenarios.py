"""Initial-state generators for the Circle, Corridor, Crossing and Random scenes."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .sim import AGENT_RADIUS, Bounds, CircleObstacle, WallSegment, WorldState

MAX_PLACEMENT_ATTEMPTS = 10_000
CORRIDOR_WIDTH = 4.0
CORRIDOR_LENGTH = 20.0
WALL_THICKNESS = 0.1
GRID_SPACING = 0.6


class ScenarioKind(str, enum.Enum):
    CIRCLE = "circle"
    CORRIDOR = "corridor"
    CROSSING = "crossing"
    RANDOM = "random"


class SpawnMode(str, enum.Enum):
    GRID = "grid"
    RANDOM = "random"


class ScenarioError(ValueError):
    """Raised when a scenario cannot be laid out (usually: too crowded)."""


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind = ScenarioKind.CIRCLE
    n_agents: int = 12
    circle_radius: float = 4.0
    corridor_width: float = CORRIDOR_WIDTH
    corridor_length: float = CORRIDOR_LENGTH
    spawn_mode: SpawnMode = SpawnMode.GRID
    position_noise: float = 0.5
    n_obstacles: int = 0
    obstacle_radius: float = AGENT_RADIUS
    random_extent: float = 9.0
    seed: int = 0
    t_max: int = 200
    goal_radius: float = 0.5
    agent_radius: float = AGENT_RADIUS
    # Scene-boundary walls around the 20x20 m square.
    boundary_walls: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "spawn_mode", SpawnMode(self.spawn_mode))
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.position_noise < 0 or self.n_obstacles < 0:
            raise ValueError("position_noise and n_obstacles must be non-negative")


class _Placer:
    """Rejection sampler that keeps bodies from overlapping at spawn."""

    def __init__(self, radius: float, circles=()):
        self.radius = radius
        self.centers: list[np.ndarray] = []
        self.radii: list[float] = []
        for c in circles:
            self.centers.append(np.asarray(c.center, dtype=float))
            self.radii.append(c.radius)

    def free(self, p: np.ndarray, radius: float | None = None) -> bool:
        r = self.radius if radius is None else radius
        for c, cr in zip(self.centers, self.radii):
            if np.hypot(*(p - c)) < r + cr:
                return False
        return True

    def add(self, p: np.ndarray, radius: float | None = None):
        self.centers.append(p)
        self.radii.append(self.radius if radius is None else radius)

    def sample(self, draw, what: str, radius: float | None = None) -> np.ndarray:
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            p = np.asarray(draw(), dtype=float)
            if self.free(p, radius):
                self.add(p, radius)
                return p
        raise ScenarioError(
            f"could not place {what} without overlap in {MAX_PLACEMENT_ATTEMPTS} attempts"
        )


def build_scenario(config: ScenarioConfig) -> WorldState:
    rng = np.random.default_rng(config.seed)
    bounds = Bounds()
    builder = {
        ScenarioKind.CIRCLE: _circle,
        ScenarioKind.CORRIDOR: _corridor,
        ScenarioKind.CROSSING: _crossing,
        ScenarioKind.RANDOM: _random,
    }[config.kind]
    positions, goals, obstacles, orientations = builder(config, rng)
    if config.boundary_walls:
        obstacles = list(obstacles) + bounds.walls(WALL_THICKNESS)
    n = config.n_agents
    return WorldState(
        positions=np.asarray(positions, dtype=float).reshape(n, 2),
        velocities=np.zeros((n, 2)),
        orientations=np.asarray(orientations, dtype=float),
        goals=np.asarray(goals, dtype=float).reshape(n, 2),
        radii=np.full(n, config.agent_radius),
        reached=np.zeros(n, dtype=bool),
        active=np.ones(n, dtype=bool),
        obstacles=tuple(obstacles),
        step_index=0,
        t_max=config.t_max,
        bounds=bounds,
        goal_radius=config.goal_radius,
    )


def _facing(positions, goals):
    d = np.asarray(goals) - np.asarray(positions)
    return np.arctan2(d[:, 1], d[:, 0])


def _circle(cfg: ScenarioConfig, rng):
    n, R, noise = cfg.n_agents, cfg.circle_radius, cfg.position_noise
    obstacles = _random_obstacles(cfg, rng, avoid_ring=R)
    starts, goals = _Placer(cfg.agent_radius, obstacles), _Placer(cfg.agent_radius, obstacles)
    pos, goal = [], []
    for i in range(n):
        angle = 2 * math.pi * i / n
        base = R * np.array([math.cos(angle), math.sin(angle)])
        pos.append(starts.sample(lambda: base + rng.uniform(-noise, noise, 2), f"agent {i}"))
        goal.append(goals.sample(lambda: -base + rng.uniform(-noise, noise, 2), f"goal {i}"))
    pos, goal = np.array(pos), np.array(goal)
    return pos, goal, obstacles, _facing(pos, goal)


def _random_obstacles(cfg: ScenarioConfig, rng, avoid_ring: float | None = None):
    """Immovable circles scattered uniformly, kept 1 m off ``avoid_ring`` if given."""
    obstacles = []
    placer = _Placer(cfg.obstacle_radius)
    ext = cfg.random_extent
    for k in range(cfg.n_obstacles):
        def draw():
            while True:
                p = rng.uniform(-ext, ext, 2)
                if avoid_ring is None or abs(np.hypot(*p) - avoid_ring) > 1.0:
                    return p

        c = placer.sample(draw, f"obstacle {k}", cfg.obstacle_radius + cfg.agent_radius)
        obstacles.append(CircleObstacle((float(c[0]), float(c[1])), cfg.obstacle_radius))
    return obstacles


def _corridor_walls(width, length, axis: str):
    h = width / 2 + WALL_THICKNESS / 2
    half = length / 2
    if axis == "x":
        return [
            WallSegment((-half, h), (half, h), WALL_THICKNESS),
            WallSegment((-half, -h), (half, -h), WALL_THICKNESS),
        ]
    return [
        WallSegment((h, -half), (h, half), WALL_THICKNESS),
        WallSegment((-h, -half), (-h, half), WALL_THICKNESS),
    ]


def _group_positions(cfg: ScenarioConfig, rng, count: int, placer: _Placer, what: str):
    """Spawn ``count`` agents at the negative-x end of an x-aligned corridor."""
    margin = 0.5
    half_w = cfg.corridor_width / 2 - cfg.agent_radius - 0.1
    x0 = -cfg.corridor_length / 2 + margin
    if cfg.spawn_mode is SpawnMode.GRID:
        cols = max(1, int(math.floor(2 * half_w / GRID_SPACING)) + 1)
        ys = np.linspace(-half_w, half_w, cols) if cols > 1 else np.zeros(1)
        out = []
        for k in range(count):
            row, col = divmod(k, cols)
            p = np.array([x0 + row * GRID_SPACING, ys[col]])
            if not placer.free(p):
                raise ScenarioError(f"grid slot for {what} {k} overlaps another body")
            placer.add(p)
            out.append(p)
        return np.array(out).reshape(count, 2)
    rows = max(1, math.ceil(count / max(1, int(2 * half_w / GRID_SPACING) + 1)))
    depth = max(2.0, rows * GRID_SPACING * 1.5)
    draw = lambda: np.array([rng.uniform(x0, x0 + depth), rng.uniform(-half_w, half_w)])
    return np.array([placer.sample(draw, f"{what} {k}") for k in range(count)]).reshape(count, 2)


def _corridor(cfg: ScenarioConfig, rng):
    n = cfg.n_agents
    n_a = (n + 1) // 2
    placer = _Placer(cfg.agent_radius)
    left = _group_positions(cfg, rng, n_a, placer, "left agent")
    # The right group is a freshly drawn left group rotated by 180 degrees.
    mirror = _Placer(cfg.agent_radius)
    right = -_group_positions(cfg, rng, n - n_a, mirror, "right agent")
    for k, p in enumerate(right):
        if not placer.free(p):
            raise ScenarioError(f"right agent {k} overlaps the left group")
        placer.add(p)
    pos = np.vstack([left, right])
    goal = pos * np.array([-1.0, 1.0])
    walls = _corridor_walls(cfg.corridor_width, cfg.corridor_length, "x")
    return pos, goal, walls, _facing(pos, goal)


def _crossing(cfg: ScenarioConfig, rng):
    n = cfg.n_agents
    n_a = (n + 1) // 2
    placer = _Placer(cfg.agent_radius)
    horizontal = _group_positions(cfg, rng, n_a, placer, "horizontal agent")
    vplacer = _Placer(cfg.agent_radius)
    vertical = _group_positions(cfg, rng, n - n_a, vplacer, "vertical agent")
    # Rotate the second group by +90 degrees: it starts at the bottom, heads up.
    vertical = np.stack([-vertical[:, 1], vertical[:, 0]], axis=1)
    for k, p in enumerate(vertical):
        if not placer.free(p):
            raise ScenarioError(f"vertical agent {k} overlaps the horizontal group")
        placer.add(p)
    pos = np.vstack([horizontal, vertical])
    goal = np.vstack([horizontal * np.array([-1.0, 1.0]), vertical * np.array([1.0, -1.0])])
    return pos, goal, _crossing_walls(cfg.corridor_width, cfg.corridor_length), _facing(pos, goal)


def _crossing_walls(width, length):
    """Outline of a plus-shaped pair of perpendicular corridors."""
    h = width / 2 + WALL_THICKNESS / 2
    half = length / 2
    walls = []
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            corner = (sx * h, sy * h)
            walls.append(WallSegment(corner, (sx * half, sy * h), WALL_THICKNESS))
            walls.append(WallSegment(corner, (sx * h, sy * half), WALL_THICKNESS))
    return walls


def _random(cfg: ScenarioConfig, rng):
    n, ext = cfg.n_agents, cfg.random_extent
    obstacles = _random_obstacles(cfg, rng)
    starts, goals = _Placer(cfg.agent_radius, obstacles), _Placer(cfg.agent_radius, obstacles)
    pos, goal = [], []
    for i in range(n):
        p = starts.sample(lambda: rng.uniform(-ext, ext, 2), f"agent {i}")
        # A goal already inside the reach radius would end the task at t=0.
        def draw_goal():
            while True:
                g = rng.uniform(-ext, ext, 2)
                if np.hypot(*(g - p)) >= 2 * cfg.goal_radius:
                    return g

        goal.append(goals.sample(draw_goal, f"goal {i}"))
        pos.append(p)
    orientations = rng.uniform(-math.pi, math.pi, n)
    return np.array(pos), np.array(goal), obstacles, orientations
