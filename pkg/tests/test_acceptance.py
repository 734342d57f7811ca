"""Acceptance gate. Each test records one PASS/FAIL line shown at the end of the run.

Criteria 1-7 are deterministic numerics. Criteria 8 and 9 train policies and
take several minutes; deselect them with ``-m "not slow"``.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from crowdrl import analysis as an
from crowdrl.config import PRESETS, preset
from crowdrl.env import EnvConfig, run_episode
from crowdrl.harness import evaluate_policy
from crowdrl.perception import PerceptionConfig, raycast
from crowdrl.policy import ActorCritic, Architecture, PPOLoss
from crowdrl.ppo import compute_gae, train
from crowdrl.reward import RewardConfig
from crowdrl.scenarios import ScenarioConfig, build_scenario
from crowdrl.sim import AgentState, CircleObstacle, DynamicsConfig, DynamicsModel, WorldState, step

from oracles import gae_brute_force, march_ray
from test_policy import fd_max_relative_error, perturbed_training_batch


def test_01_reward_analysis_golden_numbers(criterion):
    start = time.perf_counter()
    p = an.SimpleModelParams()
    _, _, best = an.exponent_sweep(p)
    v_quad = an.optimal_velocity(p.with_reward(c_e=2.0, gamma=0.99))
    threshold = an.velocity_threshold(p.with_reward(c_e=1.0))
    v_lin = an.optimal_velocity(p.with_reward(c_e=1.0, c_v=0.75))
    energy_argmax = an.energy_optimal_velocity(p, gamma=0.99)
    elapsed = time.perf_counter() - start
    checks = {
        "c_e*": abs(best - 1.92) <= 0.05,
        "v*(c_e=2)": abs(v_quad - 1.39) <= 0.02,
        "c_v threshold": abs(threshold - 0.09) <= 0.01 + 1e-12,
        "v*(c_e=1)": abs(v_lin - 1.33) <= 0.01,
        "energy argmax": energy_argmax == 0.0,
        "runtime": elapsed < 5.0,
    }
    detail = (f"c_e*={best:.2f} v*(2)={v_quad:.3f} c_v*={threshold:.3f} v*(1)={v_lin:.3f} "
              f"argmax E={energy_argmax:.3f} t={elapsed:.2f}s")
    assert criterion("1 reward-analysis golden numbers", all(checks.values()), detail), checks


def test_02_energy_model(criterion):
    vs = an.speed_grid(0.001, 2.0, 1e-4)
    v_opt = float(vs[np.argmin(an.trip_energy(vs))])
    base = EnvConfig(scenario=ScenarioConfig(kind="circle", n_agents=6, circle_radius=3, t_max=80))

    def policy(obs, active):
        goal = obs.proprio[:, 2:4]
        return goal / np.maximum(np.linalg.norm(goal, axis=1, keepdims=True), 1e-9)

    ref = run_episode(base, policy, seed=1)
    rng = np.random.default_rng(0)
    invariant = True
    for _ in range(10):
        r = RewardConfig(c_g=rng.uniform(0, 20), c_p=rng.uniform(0, 2), c_v=rng.uniform(0, 2),
                         c_e=rng.uniform(0.5, 3), c_c=rng.uniform(0, 20), c_t=rng.uniform(0, 0.1),
                         v_0=rng.uniform(0.5, 2), gamma=rng.uniform(0.9, 1))
        invariant &= run_episode(replace(base, reward=r), policy, seed=1).energy == ref.energy
    ok = abs(v_opt - 1.3304) <= 1e-3 and invariant
    assert criterion("2 energy model", ok, f"argmin={v_opt:.4f} invariant={invariant}")


def test_03_raycast_matches_brute_force_march(criterion):
    rng = np.random.default_rng(7)
    cfg = PerceptionConfig(mode="raycast", n_rays=10, ray_range=10.0)
    worst, n = 0.0, 0
    kinds = ("random", "corridor", "crossing", "circle")
    for w_i in range(100):
        kind = kinds[w_i % 4]
        world = build_scenario(ScenarioConfig(kind=kind, n_agents=int(rng.integers(2, 9)),
                                              n_obstacles=int(rng.integers(0, 4)), seed=w_i))
        world.orientations[:] = rng.uniform(-math.pi, math.pi, world.n_agents)
        i = int(rng.integers(world.n_agents))
        circles = [(tuple(world.positions[j]), world.radii[j]) for j in range(world.n_agents) if j != i]
        capsules = []
        for o in world.obstacles:
            if isinstance(o, CircleObstacle):
                circles.append((o.center, o.radius))
            else:
                capsules.append((o.start, o.end, o.thickness / 2))
        rays = raycast(world, i, cfg) * cfg.ray_range
        for k in range(cfg.n_rays):
            angle = world.orientations[i] + 2 * math.pi * k / cfg.n_rays
            want = march_ray(world.positions[i], angle, circles, capsules, cfg.ray_range)
            worst = max(worst, abs(rays[k] - want))
            n += 1
    assert criterion("3 raycast vs ray-march", n == 1000 and worst < 1e-3,
                     f"queries={n} max_err={worst:.2e} m")


def test_04_gradients_match_finite_differences(criterion):
    errors = {}
    for mode in ("raycast", "agent_perception", "hybrid"):
        rng = np.random.default_rng(11)
        net = ActorCritic(Architecture.for_perception(PerceptionConfig(mode=mode)), seed=2)
        batch = perturbed_training_batch(net, rng)
        errors[mode] = fd_max_relative_error(net, batch, PPOLoss(entropy_coef=0.01), rng)
    ok = max(errors.values()) < 1e-4
    detail = " ".join(f"{k}={v:.1e}" for k, v in errors.items())
    assert criterion("4 finite-difference gradients", ok, detail)


def test_05_gae_matches_brute_force(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        r, v = rng.standard_normal(10), rng.standard_normal(10)
        d = np.zeros(10)
        d[-1] = float(rng.random() < 0.5)
        boot = float(rng.standard_normal())
        adv, _ = compute_gae(r, v, d, boot, 0.99, 0.95)
        worst = max(worst, float(np.max(np.abs(adv - gae_brute_force(r, v, d, boot, 0.99, 0.95)))))
    assert criterion("5 GAE vs brute force", worst < 1e-10, f"max_abs_diff={worst:.1e}")


def test_06_permutation_invariance(criterion):
    rng = np.random.default_rng(6)
    net = ActorCritic(Architecture.for_perception(PerceptionConfig()), seed=0)
    x = rng.standard_normal((10, 5)) * 3
    ref = net.embed_neighbors(x)
    worst = 0.0
    for _ in range(100):
        out = net.embed_neighbors(x[rng.permutation(10)])
        worst = max(worst, float(np.max(np.abs(out - ref)) / np.max(np.abs(ref))))
    assert criterion("6 permutation invariance", worst <= 1e-6, f"max_rel_diff={worst:.1e}")


def test_07_dynamics(criterion):
    cfg = DynamicsConfig(model=DynamicsModel.CARTESIAN_ACCELERATION)
    walker = AgentState(np.array([-9.0, 0.0]), np.zeros(2), 0.0, np.array([100.0, 0.0]))
    world = WorldState.from_agents([walker], bounds=None, t_max=10_000)
    n_steps = int(round(5.0 / cfg.damping / cfg.decision_dt))
    for _ in range(n_steps):
        world, _ = step(world, [[1.0, 0.0]], cfg)
    speed = float(np.linalg.norm(world.velocities[0]))
    damping_ok = abs(speed - cfg.v_max) <= 0.01 * cfg.v_max

    rng = np.random.default_rng(8)
    worst = 0.0
    for model in DynamicsModel:
        dyn = DynamicsConfig(model=model)
        w = build_scenario(ScenarioConfig(kind="circle", n_agents=12, circle_radius=3.0, t_max=10_000))
        for _ in range(10_000):
            w, _ = step(w, rng.uniform(-1, 1, (12, 2)), dyn)
            worst = max(worst, float(np.linalg.norm(w.velocities, axis=1).max()))
            if w.reached.all():
                w = build_scenario(ScenarioConfig(kind="circle", n_agents=12, circle_radius=3.0, t_max=10_000))
    cap_ok = worst <= 2.0 + 1e-9
    assert criterion("7 dynamics", damping_ok and cap_ok,
                     f"speed after 5/lambda={speed:.4f} max speed over 4x10000 steps={worst:.6f}")


# -- training ----------------------------------------------------------------------------

N_EVAL = 30


def _train_random1(seed, c_e):
    cfg = preset("random1", [f"reward.c_e={c_e}"])
    assert cfg.perception.mode.value == "agent_perception"
    assert cfg.dynamics.model is DynamicsModel.POLAR_VELOCITY and cfg.perception.frame.value == "egocentric"
    net, _ = train(cfg.env, replace(cfg.ppo, seed=seed), cfg.n_iterations, arch=cfg.architecture())
    episodes = evaluate_policy(net, cfg.env, N_EVAL, "mean", seed=10_000 + seed)
    success = float(np.mean([e.success_rate for e in episodes]))
    speeds = np.array([e.mean_speed for e in episodes])
    return success, float(np.nanmean(speeds))


@pytest.mark.slow
def test_08_single_agent_training(criterion):
    succ, speeds = [], []
    for seed in range(3):
        succ.append(_train_random1(seed, 1.0)[0])
        if sum(s >= 0.9 for s in succ) >= 2:
            break
    for seed in range(3):
        speeds.append(_train_random1(seed, 2.0)[1])
        if sum(1.2 <= v <= 1.6 for v in speeds) >= 2:
            break
    nav_ok = sum(s >= 0.9 for s in succ) >= 2
    speed_ok = sum(1.2 <= v <= 1.6 for v in speeds) >= 2
    detail = (f"success(c_e=1)={[round(s, 2) for s in succ]} "
              f"speed(c_e=2)={[round(v, 3) for v in speeds]} m/s")
    assert criterion("8 desk-scale single-agent training", nav_ok and speed_ok, detail)


def _circle6_final(mode, c_c, seed):
    cfg = preset("circle6", [f"perception.mode={mode}", f"reward.c_c={c_c}"])
    _, log = train(cfg.env, replace(cfg.ppo, seed=seed), cfg.n_iterations, arch=cfg.architecture())
    return log.final_mean("success_rate"), log.final_mean("reward")


@pytest.mark.slow
def test_09_circle6_trends(criterion):
    seeds = range(3)
    ap = [_circle6_final("agent_perception", 0.05, s) for s in seeds]
    harsh = [_circle6_final("agent_perception", 20.0, s) for s in seeds]
    rays = [_circle6_final("raycast", 0.05, s) for s in seeds]
    succ_ap, succ_harsh = np.mean([a[0] for a in ap]), np.mean([h[0] for h in harsh])
    rew_ap, rew_rays = np.mean([a[1] for a in ap]), np.mean([r[1] for r in rays])
    ok = succ_harsh < succ_ap and rew_ap >= rew_rays
    detail = (f"success c_c=20 {succ_harsh:.2f} vs c_c=0.05 {succ_ap:.2f}; "
              f"reward AP {rew_ap:.2f} vs raycast {rew_rays:.2f}")
    assert criterion("9 circle-6 trends", ok, detail)


def test_10_full_scale_configs_ship_but_are_not_run(criterion):
    full_size = {"circle30": 30, "corridor50": 50, "crossing50": 50, "random20": 20}
    ok = True
    for name, n in full_size.items():
        cfg = preset(name)
        ok &= cfg.scenario.n_agents == n and cfg.n_iterations == 1000
    desk = [k for k in PRESETS if k not in full_size]
    ok &= all(preset(k).n_iterations <= 200 for k in desk)
    assert criterion("10 full-scale configs shipped, excluded from the test run", ok,
                     f"full-size presets: {', '.join(full_size)}")
