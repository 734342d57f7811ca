"""Closed-form single-agent return model and the sweeps built on it.

An agent walks straight to a goal ``d`` metres away at constant speed ``v``.
It needs ``T = ceil(d / (v dt))`` decision steps, capped at ``t_max``; when
the cap binds it never arrives and no goal bonus is paid. Every step (0..T
inclusive) earns the shaped per-step reward, so

    R(v) = gamma**T * c_g * [arrived] + S(T) * (c_p v dt - c_v |v - v_0|**c_e - c_t)

with ``S(T) = sum_{i=0..T} gamma**i``. All functions accept scalar or array
speeds and evaluate whole grids at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .reward import EnergyModel, RewardConfig

# Guards ceil() against d/(v dt) landing a rounding error above an integer.
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class SimpleModelParams:
    reward: RewardConfig = field(default_factory=RewardConfig)
    d: float = 8.0
    t_max: int = 200
    dt: float = 1.0 / 12.0

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("d must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def with_reward(self, **changes) -> "SimpleModelParams":
        return replace(self, reward=replace(self.reward, **changes))


def speed_grid(lo: float = 0.0, hi: float = 2.0, step: float = 1e-3) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 12)


def trip_steps(v, p: SimpleModelParams):
    """Step count ``T`` and whether the goal is reached, per speed."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("speed must be non-negative")
    with np.errstate(divide="ignore"):
        raw = np.where(v > 0, p.d / (np.where(v > 0, v, 1.0) * p.dt), np.inf)
    steps = np.ceil(raw - _CEIL_EPS)
    reached = steps <= p.t_max
    return np.where(reached, steps, p.t_max), reached


def _discount_sum(steps, gamma):
    """sum_{i=0..T} gamma**i."""
    if gamma == 1.0:
        return steps + 1.0
    return (1.0 - gamma ** (steps + 1.0)) / (1.0 - gamma)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def simplified_return(v, p: SimpleModelParams = SimpleModelParams()):
    r = p.reward
    v = np.asarray(v, dtype=float)
    steps, reached = trip_steps(v, p)
    per_step = r.c_p * v * p.dt - r.c_v * np.abs(v - r.v_0) ** r.c_e - r.c_t
    goal = np.where(reached, r.gamma**steps * r.c_g, 0.0)
    return _out(goal + _discount_sum(steps, r.gamma) * per_step)


def discounted_energy_return(v, p: SimpleModelParams = SimpleModelParams(),
                             model: EnergyModel = EnergyModel(), gamma: float | None = None):
    """Negative discounted energy of the trip; agents that never arrive burn until ``t_max``."""
    gamma = p.reward.gamma if gamma is None else gamma
    v = np.asarray(v, dtype=float)
    steps, _ = trip_steps(v, p)
    return _out(-_discount_sum(steps, gamma) * model.power(v) * p.dt)


def trip_energy(v, d: float = 8.0, model: EnergyModel = EnergyModel()):
    """Energy of covering ``d`` at constant speed ``v`` with no step quantisation."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        return _out(np.where(v > 0, model.power(v) * d / np.where(v > 0, v, 1.0), np.inf))


def _argmax_low(values, grid):
    # np.argmax returns the first maximum, i.e. the lowest speed on ties.
    return float(grid[int(np.argmax(values))])


def optimal_velocity(p: SimpleModelParams = SimpleModelParams(), grid=(0.0, 2.0, 1e-3)) -> float:
    lo, hi, step = grid
    if step > 1e-3:
        raise ValueError("grid step must be at most 1e-3 m/s")
    vs = speed_grid(lo, hi, step)
    return _argmax_low(simplified_return(vs, p), vs)


def energy_optimal_velocity(p: SimpleModelParams = SimpleModelParams(), model: EnergyModel = EnergyModel(),
                            gamma: float | None = None, grid=(0.0, 2.0, 1e-3)) -> float:
    vs = speed_grid(*grid)
    return _argmax_low(discounted_energy_return(vs, p, model, gamma), vs)


def reward_and_energy_curves(p: SimpleModelParams, model: EnergyModel = EnergyModel(), grid=(0.0, 2.0, 1e-3)):
    """Speed grid, return curve and undiscounted negative trip energy (same step rule)."""
    vs = speed_grid(*grid)
    return vs, simplified_return(vs, p), discounted_energy_return(vs, p, model, gamma=1.0)


def normalized_mse(p: SimpleModelParams, c_e: float, v_range=(1.0, 2.0),
                   model: EnergyModel = EnergyModel(), normalize: str = "window",
                   grid=(0.0, 2.0, 1e-3)) -> float:
    """Mean squared gap between the min-max normalised return and energy curves.

    Both curves are compared on the open interval ``v_range``. ``normalize``
    picks the interval used for min-max scaling: ``"window"`` scales over
    ``v_range`` itself, ``"full"`` over the whole grid.
    """
    lo, hi = v_range
    if not 0 < lo < hi:
        raise ValueError("v_range must satisfy 0 < lo < hi")
    vs, ret, energy = reward_and_energy_curves(p.with_reward(c_e=c_e), model, grid)
    window = (vs > lo) & (vs < hi)
    if normalize == "window":
        scale = (vs >= lo) & (vs <= hi)
    elif normalize == "full":
        scale = np.ones_like(vs, dtype=bool)
    else:
        raise ValueError(f"unknown normalisation {normalize!r}")
    ret = (ret - ret[scale].min()) / _span(ret[scale])
    energy = (energy - energy[scale].min()) / _span(energy[scale])
    return float(np.mean((ret[window] - energy[window]) ** 2))


def _span(y):
    span = y.max() - y.min()
    if not np.isfinite(span) or span <= 0:
        raise ValueError("cannot normalise a flat curve")
    return span


def exponent_sweep(p: SimpleModelParams, exponents=None, **kwargs):
    """(c_e, mse) pairs and the minimising exponent."""
    exponents = np.round(np.arange(1.0, 3.0 + 1e-9, 0.01), 10) if exponents is None else np.asarray(exponents)
    errors = np.array([normalized_mse(p, c, **kwargs) for c in exponents])
    return exponents, errors, float(exponents[int(np.argmin(errors))])


SWEEP_AXES = ("c_v", "c_e", "gamma")


def coefficient_sweep(p: SimpleModelParams, axis: str, values, grid=(0.0, 2.0, 1e-3)):
    """Optimal velocity for every value of one reward coefficient."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("sweep needs a non-empty 1-D grid")
    return [(float(x), optimal_velocity(p.with_reward(**{axis: float(x)}), grid)) for x in values]


def velocity_threshold(p: SimpleModelParams, values=None, v_max: float = 2.0, grid=(0.0, 2.0, 1e-3)) -> float:
    """Smallest c_v at which the optimum drops from top speed towards ``v_0``.

    The switch is detected as the first sweep value whose optimum falls below
    the midpoint of ``v_max`` and ``v_0``.
    """
    values = np.round(np.arange(0.0, 0.3 + 1e-9, 1e-3), 10) if values is None else values
    midpoint = 0.5 * (v_max + p.reward.v_0)
    for c_v, v_star in coefficient_sweep(p, "c_v", values, grid):
        if v_star < midpoint:
            return c_v
    return float("nan")


@dataclass
class AnalysisSummary:
    best_exponent: float
    v_star_linear: float
    v_star_quadratic: float
    c_v_threshold: float
    energy_argmax: float

    def lines(self) -> list[str]:
        return [
            f"c_e* = {self.best_exponent:.2f}",
            f"v*(c_e=1) = {self.v_star_linear:.3f}",
            f"v*(c_e=2) = {self.v_star_quadratic:.3f}",
            f"c_v threshold (c_e=1) = {self.c_v_threshold:.3f}",
            f"argmax discounted energy = {self.energy_argmax:.3f}",
        ]


def summarize(p: SimpleModelParams = SimpleModelParams(), model: EnergyModel = EnergyModel()) -> AnalysisSummary:
    linear = p.with_reward(c_e=1.0)
    return AnalysisSummary(
        best_exponent=exponent_sweep(p, model=model)[2],
        v_star_linear=optimal_velocity(linear),
        v_star_quadratic=optimal_velocity(p.with_reward(c_e=2.0)),
        c_v_threshold=velocity_threshold(linear),
        energy_argmax=energy_optimal_velocity(p, model),
    )
