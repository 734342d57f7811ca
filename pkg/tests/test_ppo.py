import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdrl.env import EnvConfig
from crowdrl.perception import ObservationBatch, PerceptionConfig
from crowdrl.policy import ActorCritic, Architecture, TrainBatch, log_prob_and_entropy
from crowdrl.ppo import (
    Adam,
    PpoConfig,
    RolloutCollector,
    TrainingLog,
    clip_grad_norm,
    compute_gae,
    ppo_update,
    train,
)
from crowdrl.scenarios import ScenarioConfig

from oracles import gae_brute_force


# -- GAE ------------------------------------------------------------------------


def test_gae_matches_brute_force_on_random_episodes(rng):
    worst = 0.0
    for _ in range(100):
        r = rng.standard_normal(10)
        v = rng.standard_normal(10)
        d = np.zeros(10)
        d[-1] = rng.random() < 0.5
        boot = rng.standard_normal()
        adv, ret = compute_gae(r, v, d, boot, 0.99, 0.95)
        want = gae_brute_force(r, v, d, boot, 0.99, 0.95)
        worst = max(worst, np.max(np.abs(adv - want)))
        np.testing.assert_allclose(ret, adv + v)
    assert worst < 1e-10


def test_gae_lambda_zero_is_td_error(rng):
    r, v = rng.standard_normal(6), rng.standard_normal(6)
    adv, _ = compute_gae(r, v, np.zeros(6), 0.4, 0.9, 0.0)
    nxt = np.append(v[1:], 0.4)
    np.testing.assert_allclose(adv, r + 0.9 * nxt - v)


def test_gae_lambda_one_zero_values_is_discounted_return():
    r = np.array([1.0, 2.0, 3.0])
    adv, _ = compute_gae(r, np.zeros(3), np.array([0, 0, 1.0]), 99.0, 0.5, 1.0)
    np.testing.assert_allclose(adv, [1 + 0.5 * 2 + 0.25 * 3, 2 + 0.5 * 3, 3])


def test_gae_done_ignores_bootstrap():
    a, _ = compute_gae([1.0], [0.0], [1.0], 123.0, 0.99, 0.95)
    assert a[0] == 1.0


@settings(max_examples=30)
@given(st.integers(1, 20), st.floats(0.5, 1.0), st.floats(0, 1), st.integers(0, 10_000))
def test_gae_property_matches_brute_force(n, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.standard_normal(n), rng.standard_normal(n)
    d = (rng.random(n) < 0.2).astype(float)
    adv, _ = compute_gae(r, v, d, 0.3, gamma, lam)
    np.testing.assert_allclose(adv, gae_brute_force(r, v, d, 0.3, gamma, lam), atol=1e-9)


# -- optimiser ------------------------------------------------------------------


def _net(mode="hybrid", seed=0):
    arch = Architecture.for_perception(PerceptionConfig(mode=mode), trunk=(16, 16), psi=(8,), phi=(8,))
    return ActorCritic(arch, seed=seed)


def _batch(net, rng, n=64, adv=None):
    arch = net.arch
    obs = ObservationBatch(
        rng.standard_normal((n, 8)),
        rng.random((n, arch.ray_size)) if arch.ray_size else None,
        rng.standard_normal((n, 10, 5)) if arch.use_neighbors else None,
        rng.integers(0, 11, n) if arch.use_neighbors else None,
    )
    out = net.forward(obs)
    actions = out.action_mean + rng.standard_normal((n, 2)) * out.action_std
    logp, _ = log_prob_and_entropy(out.action_mean, out.action_std, actions)
    adv = rng.standard_normal(n) if adv is None else adv
    return TrainBatch(obs, actions, logp, adv, rng.standard_normal(n))


def test_zero_learning_rate_leaves_parameters_bitwise(rng):
    net = _net()
    before = {k: v.copy() for k, v in net.params.items()}
    stats = ppo_update(net, Adam(net.params, 0.0), _batch(net, rng), PpoConfig(lr=0.0, minibatch_size=16), rng)
    for k in before:
        np.testing.assert_array_equal(before[k], net.params[k])
    assert all(np.isfinite(v) for v in stats.values())


def test_non_finite_loss_restores_parameters(rng):
    net = _net()
    batch = _batch(net, rng)
    batch.returns[3] = np.nan
    before = {k: v.copy() for k, v in net.params.items()}
    opt = Adam(net.params, 1e-3)
    stats = ppo_update(net, opt, batch, PpoConfig(lr=1e-3, minibatch_size=8), rng)
    assert stats["aborted"] == 1.0
    assert opt.t == 0
    for k in before:
        np.testing.assert_array_equal(before[k], net.params[k])


def test_update_changes_parameters_and_reports_stats(rng):
    net = _net()
    before = net.params["pi.head.w"].copy()
    stats = ppo_update(net, Adam(net.params), _batch(net, rng), PpoConfig(minibatch_size=16), rng)
    assert not np.array_equal(before, net.params["pi.head.w"])
    for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "adv_mean", "adv_std"):
        assert np.isfinite(stats[key])
    assert stats["aborted"] == 0.0


def test_empty_batch_rejected(rng):
    net = _net()
    b = _batch(net, rng, n=4)
    with pytest.raises(ValueError):
        ppo_update(net, Adam(net.params), b.take(np.arange(0)), PpoConfig(), rng)


def test_clip_grad_norm_only_touches_prefix():
    g = {"pi.a": np.array([3.0, 4.0]), "vf.a": np.array([30.0, 40.0])}
    assert clip_grad_norm(g, 1.0, "pi.") == pytest.approx(5.0)
    np.testing.assert_allclose(g["pi.a"], [0.6, 0.8])
    np.testing.assert_allclose(g["vf.a"], [30, 40])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 1000))
def test_advantage_normalisation_keeps_ranking(scale, shift, seed):
    rng = np.random.default_rng(seed)
    adv = rng.standard_normal(32)
    norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    transformed = scale * adv + shift
    norm2 = (transformed - transformed.mean()) / (transformed.std() + 1e-8)
    assert np.argmax(norm) == np.argmax(norm2)
    np.testing.assert_allclose(norm, norm2, atol=1e-6)


def test_bandit_converges_to_target():
    """One agent, one step, reward = -|a - (0.5, 0.5)|."""
    arch = Architecture(ray_size=0, use_neighbors=False, trunk=(16,), proprio_scale=(1.0,) * 8)
    net = ActorCritic(arch, seed=0)
    cfg = PpoConfig(lr=3e-3, minibatch_size=64, epochs=4)
    opt = Adam(net.params, cfg.lr)
    rng = np.random.default_rng(0)
    target = np.array([0.5, 0.5])
    n = 128
    obs = ObservationBatch(np.zeros((n, 8)), None, None, None)
    for _ in range(200):
        actions, logp, values = net.act(obs, rng, "sample")
        rewards = -np.linalg.norm(np.clip(actions, -1, 1) - target, axis=1)
        ppo_update(net, opt, TrainBatch(obs, actions, logp, rewards - values, rewards), cfg, rng)
    mean = net.forward(obs.take([0])).action_mean[0]
    assert np.all(np.abs(mean - target) <= 0.05), mean


# -- rollouts and training --------------------------------------------------------


SMALL = EnvConfig(scenario=ScenarioConfig(kind="circle", n_agents=6, circle_radius=3, t_max=40))


def test_rollout_size_bounds():
    net = ActorCritic(Architecture.for_perception(SMALL.perception), seed=0)
    roll = RolloutCollector(SMALL, 2, seed=0).collect(net, 128, 0.99, 0.95)
    assert 0 < len(roll) <= 2 * 6 * 128
    # time limit 40 forces resets; every world contributed after its reset
    assert len(roll.episodes) >= 2 * 3
    assert set(np.unique(roll.worlds)) == {0, 1}
    assert np.all(np.isfinite(roll.advantages))
    np.testing.assert_allclose(roll.returns, roll.advantages + roll.values)
    t = roll.transition(0)
    assert t.world == 0 and t.observation.proprio.shape == (8,)


def test_all_reached_world_resets_and_continues():
    cfg = EnvConfig(scenario=ScenarioConfig(kind="random", n_agents=1, t_max=200))
    net = ActorCritic(Architecture.for_perception(cfg.perception), seed=0)
    collector = RolloutCollector(cfg, 1, seed=0)
    env = collector.envs[0]
    env.world.goals[0] = env.world.positions[0] + 0.05  # reached on the first step
    roll = collector.collect(net, 5, 0.99, 0.95)
    assert roll.dones[0] and len(roll) == 5
    assert roll.episodes[0].success_rate == 1.0


def test_reached_agents_generate_no_transitions():
    net = ActorCritic(Architecture.for_perception(SMALL.perception), seed=0)
    collector = RolloutCollector(SMALL, 1, seed=0)
    collector.envs[0].world.reached[:3] = True
    roll = collector.collect(net, 1, 0.99, 0.95)
    assert set(roll.agents) == {3, 4, 5}


def test_zero_iterations_returns_initial_network(tmp_path):
    net, log = train(SMALL, PpoConfig(seed=3), 0, log_path=tmp_path / "log.csv")
    fresh, _ = train(SMALL, PpoConfig(seed=3), 0)
    assert len(log) == 0
    for k in net.params:
        np.testing.assert_array_equal(net.params[k], fresh.params[k])


def test_training_is_deterministic_single_world(tmp_path):
    cfg = PpoConfig(n_parallel_worlds=1, steps_per_iteration=32, minibatch_size=64, seed=5)
    _, a = train(SMALL, cfg, 2, log_path=tmp_path / "a.csv")
    _, b = train(SMALL, cfg, 2, log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    np.testing.assert_array_equal(a.column("reward"), b.column("reward"))
    np.testing.assert_array_equal(a.column("value_loss"), b.column("value_loss"))


def test_training_writes_checkpoints_and_log(tmp_path):
    cfg = PpoConfig(n_parallel_worlds=2, steps_per_iteration=50, minibatch_size=64)
    seen = []
    net, log = train(SMALL, cfg, 2, log_path=tmp_path / "log.csv", log_comment="config_hash=x seed=0",
                     checkpoint_dir=tmp_path, checkpoint_every=1, progress=seen.append)
    assert len(log) == 2 and len(seen) == 2
    assert (tmp_path / "checkpoint_00002.json").exists()
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=x seed=0" and lines[1].startswith("iteration,")
    assert len(lines) == 4
    row = log.rows[-1]
    assert row["episodes"] >= 2 and np.isfinite(row["success_rate"]) and row["aborted"] == 0


def test_final_mean_window():
    log = TrainingLog()
    for i in range(15):
        log.append({"iteration": i, "reward": float(i)})
    assert log.final_mean("reward", 10) == pytest.approx(np.mean(np.arange(5, 15)))
    assert np.isnan(TrainingLog().final_mean())


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(gamma=0)
    with pytest.raises(ValueError):
        PpoConfig(gae_lambda=1.5)
    with pytest.raises(ValueError):
        PpoConfig(clip_eps=0)
    assert replace(PpoConfig(), lr=0.0).lr == 0.0
