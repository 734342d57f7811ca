"""World state, the four locomotion models, collision handling and stepping."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k

AGENT_RADIUS = 0.2
DECISION_DT = 1.0 / 12.0
PHYSICS_SUBSTEPS = 10

# Residual overlap (m) below which two bodies count as touching, not colliding.
CONTACT_SLOP = _k.CONTACT_SLOP


class DynamicsModel(str, enum.Enum):
    CARTESIAN_VELOCITY = "cartesian_velocity"
    CARTESIAN_ACCELERATION = "cartesian_acceleration"
    POLAR_VELOCITY = "polar_velocity"
    POLAR_ACCELERATION = "polar_acceleration"

    @property
    def is_polar(self) -> bool:
        return self in (DynamicsModel.POLAR_VELOCITY, DynamicsModel.POLAR_ACCELERATION)


@dataclass(frozen=True)
class DynamicsConfig:
    model: DynamicsModel = DynamicsModel.POLAR_VELOCITY
    v_max: float = 2.0
    a_max: float = 2.0
    omega_max: float = 3.0
    decision_dt: float = DECISION_DT
    physics_substeps: int = PHYSICS_SUBSTEPS

    def __post_init__(self):
        object.__setattr__(self, "model", DynamicsModel(self.model))
        if self.v_max <= 0 or self.a_max <= 0 or self.omega_max <= 0:
            raise ValueError("v_max, a_max and omega_max must be positive")
        if self.decision_dt <= 0 or self.physics_substeps < 1:
            raise ValueError("decision_dt must be positive and physics_substeps >= 1")

    @property
    def damping(self) -> float:
        """Linear damping rate; chosen so the steady-state top speed is v_max."""
        return self.a_max / self.v_max

    @property
    def substep_dt(self) -> float:
        return self.decision_dt / self.physics_substeps


@dataclass
class AgentState:
    position: np.ndarray
    velocity: np.ndarray
    orientation: float
    goal: np.ndarray
    radius: float = AGENT_RADIUS
    reached_goal: bool = False
    active: bool = True

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        self.goal = np.asarray(self.goal, dtype=float).reshape(2)
        self.orientation = float(self.orientation)

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple[float, float]
    radius: float

    kind = "circle"


@dataclass(frozen=True)
class WallSegment:
    """A straight wall: the set of points within ``thickness / 2`` of the segment."""

    start: tuple[float, float]
    end: tuple[float, float]
    thickness: float = 0.1

    kind = "wall"


Obstacle = CircleObstacle | WallSegment


@dataclass(frozen=True)
class Bounds:
    xmin: float = -10.0
    xmax: float = 10.0
    ymin: float = -10.0
    ymax: float = 10.0

    def walls(self, thickness: float = 0.1) -> list[WallSegment]:
        """Four walls whose inner faces coincide with the rectangle edges."""
        h = thickness / 2
        x0, x1, y0, y1 = self.xmin - h, self.xmax + h, self.ymin - h, self.ymax + h
        return [
            WallSegment((x0, y0), (x1, y0), thickness),
            WallSegment((x1, y0), (x1, y1), thickness),
            WallSegment((x1, y1), (x0, y1), thickness),
            WallSegment((x0, y1), (x0, y0), thickness),
        ]


class _ObstacleArrays:
    """Packed numpy views of a static obstacle list."""

    def __init__(self, obstacles):
        circles = [o for o in obstacles if isinstance(o, CircleObstacle)]
        walls = [o for o in obstacles if isinstance(o, WallSegment)]
        self.circle_index = np.array(
            [i for i, o in enumerate(obstacles) if isinstance(o, CircleObstacle)], dtype=int
        )
        self.wall_index = np.array(
            [i for i, o in enumerate(obstacles) if isinstance(o, WallSegment)], dtype=int
        )
        self.circle_centers = np.array([c.center for c in circles], dtype=float).reshape(-1, 2)
        self.circle_radii = np.array([c.radius for c in circles], dtype=float)
        self.wall_a = np.array([w.start for w in walls], dtype=float).reshape(-1, 2)
        self.wall_b = np.array([w.end for w in walls], dtype=float).reshape(-1, 2)
        self.wall_half = np.array([w.thickness / 2 for w in walls], dtype=float)


@dataclass
class WorldState:
    """Full simulation state, stored as per-agent arrays.

    ``agents``/``agent(i)`` give the per-agent record view; the arrays are
    what the simulator and sensors operate on.
    """

    positions: np.ndarray
    velocities: np.ndarray
    orientations: np.ndarray
    goals: np.ndarray
    radii: np.ndarray
    reached: np.ndarray
    active: np.ndarray
    obstacles: tuple = ()
    step_index: int = 0
    t_max: int = 200
    bounds: Bounds = field(default_factory=Bounds)
    goal_radius: float = 0.5

    def __post_init__(self):
        self.obstacles = tuple(self.obstacles)
        self._packed = _ObstacleArrays(self.obstacles)

    @classmethod
    def from_agents(cls, agents, obstacles=(), **kwargs) -> "WorldState":
        n = len(agents)
        return cls(
            positions=np.array([a.position for a in agents], dtype=float).reshape(n, 2),
            velocities=np.array([a.velocity for a in agents], dtype=float).reshape(n, 2),
            orientations=np.array([a.orientation for a in agents], dtype=float),
            goals=np.array([a.goal for a in agents], dtype=float).reshape(n, 2),
            radii=np.array([a.radius for a in agents], dtype=float),
            reached=np.array([a.reached_goal for a in agents], dtype=bool),
            active=np.array([a.active for a in agents], dtype=bool),
            obstacles=obstacles,
            **kwargs,
        )

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def packed(self) -> _ObstacleArrays:
        return self._packed

    def agent(self, i: int) -> AgentState:
        return AgentState(
            position=self.positions[i].copy(),
            velocity=self.velocities[i].copy(),
            orientation=float(self.orientations[i]),
            goal=self.goals[i].copy(),
            radius=float(self.radii[i]),
            reached_goal=bool(self.reached[i]),
            active=bool(self.active[i]),
        )

    @property
    def agents(self) -> list[AgentState]:
        return [self.agent(i) for i in range(self.n_agents)]

    @property
    def terminal(self) -> bool:
        return self.step_index >= self.t_max or bool(self.reached.all())

    def copy(self) -> "WorldState":
        # Bypasses __post_init__ so the packed obstacle arrays are shared.
        new = object.__new__(WorldState)
        new.__dict__.update(self.__dict__)
        for name in ("positions", "velocities", "orientations", "goals", "radii", "reached", "active"):
            setattr(new, name, getattr(self, name).copy())
        return new


# ---------------------------------------------------------------------------
# Dynamics

MODEL_CODES = {
    DynamicsModel.CARTESIAN_VELOCITY: _k.CARTESIAN_VELOCITY,
    DynamicsModel.CARTESIAN_ACCELERATION: _k.CARTESIAN_ACCELERATION,
    DynamicsModel.POLAR_VELOCITY: _k.POLAR_VELOCITY,
    DynamicsModel.POLAR_ACCELERATION: _k.POLAR_ACCELERATION,
}


def integrate_arrays(positions, velocities, orientations, actions, cfg: DynamicsConfig, dt: float):
    """Advance many agents by ``dt`` under ``cfg.model``; returns new arrays.

    Cartesian models set the heading from the velocity, polar models steer
    the heading and move along it. Speeds never exceed ``cfg.v_max``.
    """
    pos = np.array(positions, dtype=float).reshape(-1, 2)
    vel = np.array(velocities, dtype=float).reshape(-1, 2)
    ori = np.array(orientations, dtype=float).reshape(-1)
    act = np.ascontiguousarray(actions, dtype=float).reshape(-1, 2)
    _k.integrate(pos, vel, ori, act, MODEL_CODES[cfg.model], cfg.v_max, cfg.a_max,
                 cfg.damping, cfg.omega_max, float(dt))
    return pos, vel, ori


def integrate_dynamics(agent: AgentState, action, cfg: DynamicsConfig, dt: float) -> AgentState:
    """Single-agent view of :func:`integrate_arrays`."""
    pos, vel, ori = integrate_arrays(
        agent.position[None], agent.velocity[None], [agent.orientation], np.reshape(action, (1, 2)), cfg, dt
    )
    return replace(agent, position=pos[0], velocity=vel[0], orientation=float(ori[0]))


# ---------------------------------------------------------------------------
# Collisions


@dataclass(frozen=True)
class CollisionEvent:
    """``other`` is an agent index, or an index into ``world.obstacles``."""

    agent: int
    other: int
    with_obstacle: bool = False


class _Contacts:
    def __init__(self, world: WorldState):
        n = world.n_agents
        packed = world.packed
        self.packed = packed
        self.agents = np.zeros((n, n), dtype=np.bool_)
        self.circles = np.zeros((n, packed.circle_centers.shape[0]), dtype=np.bool_)
        self.walls = np.zeros((n, packed.wall_a.shape[0]), dtype=np.bool_)

    def events(self) -> list[CollisionEvent]:
        out = [CollisionEvent(int(i), int(j)) for i, j in zip(*np.nonzero(self.agents))]
        for hits, index in ((self.circles, self.packed.circle_index), (self.walls, self.packed.wall_index)):
            out.extend(CollisionEvent(int(i), int(index[k]), True) for i, k in zip(*np.nonzero(hits)))
        out.sort(key=lambda e: (e.agent, e.with_obstacle, e.other))
        return out


def resolve_collisions(world: WorldState) -> tuple[WorldState, list[CollisionEvent]]:
    """Separate every overlapping pair; obstacles never move.

    Mobile pairs each move half the penetration depth along the line of
    centres and lose their approaching normal velocity; tangential velocity
    is kept.
    """
    out = world.copy()
    contacts = _Contacts(out)
    p = out.packed
    _k.project(out.positions, out.velocities, out.radii, p.circle_centers, p.circle_radii,
               p.wall_a, p.wall_b, p.wall_half, contacts.agents, contacts.circles, contacts.walls)
    return out, contacts.events()


# ---------------------------------------------------------------------------
# Stepping


@dataclass
class StepEvents:
    collision_counts: np.ndarray
    newly_reached: np.ndarray
    collisions: list[CollisionEvent]


def step(world: WorldState, joint_action, dyn: DynamicsConfig) -> tuple[WorldState, StepEvents]:
    """Advance one decision step.

    ``joint_action`` has one row per agent in the world; rows belonging to
    agents that already reached their goal are ignored (they receive zero
    action and move only as passive bodies). Collisions are reported once per
    colliding pair per decision step, however many substeps they last.
    """
    actions = np.asarray(joint_action, dtype=float)
    n = world.n_agents
    if actions.shape != (n, 2):
        raise ValueError(f"expected joint action of shape ({n}, 2), got {actions.shape}")
    actions = np.clip(actions, -1.0, 1.0)
    actions[world.reached] = 0.0

    out = world.copy()
    contacts = _Contacts(out)
    p = out.packed
    _k.physics_step(
        out.positions, out.velocities, out.orientations, actions, out.radii,
        p.circle_centers, p.circle_radii, p.wall_a, p.wall_b, p.wall_half,
        MODEL_CODES[dyn.model], dyn.v_max, dyn.a_max, dyn.damping, dyn.omega_max,
        dyn.substep_dt, dyn.physics_substeps, contacts.agents, contacts.circles, contacts.walls,
    )
    out.step_index = world.step_index + 1
    dist = np.linalg.norm(out.positions - out.goals, axis=1)
    newly = (~world.reached) & (dist < world.goal_radius)
    out.reached = world.reached | newly
    out.active = world.active & ~newly

    counts = contacts.agents.sum(axis=1) + contacts.agents.sum(axis=0)
    counts += contacts.circles.sum(axis=1) + contacts.walls.sum(axis=1)
    return out, StepEvents(collision_counts=counts.astype(int), newly_reached=newly,
                           collisions=contacts.events())
