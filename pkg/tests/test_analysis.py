import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdrl import analysis as an
from crowdrl.reward import EnergyModel, RewardConfig

from oracles import scalar_return

P = an.SimpleModelParams()


@pytest.mark.parametrize("v", [0.0, 0.3, 0.48, 1.0, 1.33, 1.7, 2.0])
@pytest.mark.parametrize("c_e", [1.0, 2.0])
@pytest.mark.parametrize("gamma", [0.9, 0.99, 1.0])
def test_return_matches_explicit_sum(v, c_e, gamma):
    p = P.with_reward(c_e=c_e, gamma=gamma)
    assert an.simplified_return(v, p) == pytest.approx(scalar_return(v, c_e=c_e, gamma=gamma), rel=1e-12)


def test_vectorised_matches_scalar():
    vs = an.speed_grid(0, 2, 0.01)
    batch = an.simplified_return(vs, P)
    np.testing.assert_allclose(batch, [scalar_return(v) for v in vs], rtol=1e-12)


def test_trip_steps():
    steps, reached = an.trip_steps(np.array([0.0, 1.0, 2.0, 0.3]), P)
    np.testing.assert_array_equal(steps, [200, 96, 48, 200])
    np.testing.assert_array_equal(reached, [False, True, True, False])


def test_grid_resolution_enforced():
    with pytest.raises(ValueError):
        an.optimal_velocity(P, grid=(0, 2, 0.01))


def test_speed_grid_endpoints():
    g = an.speed_grid()
    assert g[0] == 0.0 and g[-1] == 2.0 and len(g) == 2001


# -- golden values (independent scalar oracle, frozen) ------------------------


def _oracle_argmax(**kw):
    vs = an.speed_grid()
    return float(vs[int(np.argmax([scalar_return(v, **kw) for v in vs]))])


def test_optimum_linear_exponent():
    assert an.optimal_velocity(P.with_reward(c_e=1.0)) == pytest.approx(1.330, abs=1e-3)
    assert an.optimal_velocity(P.with_reward(c_e=1.0)) == _oracle_argmax(c_e=1.0)


def test_optimum_quadratic_exponent():
    v = an.optimal_velocity(P.with_reward(c_e=2.0))
    assert v == pytest.approx(1.386, abs=1e-3)
    assert v == _oracle_argmax(c_e=2.0)


def test_low_speed_weight_goes_full_speed():
    assert an.optimal_velocity(P.with_reward(c_v=0.04)) == pytest.approx(1.999, abs=1e-3)


def test_velocity_threshold_value():
    assert an.velocity_threshold(P.with_reward(c_e=1.0)) == pytest.approx(0.081, abs=1e-3)


def test_discount_sweep_linear_stays_at_preferred_speed():
    for v_gamma, v_star in an.coefficient_sweep(P, "gamma", [0.95, 0.99]):
        assert v_star == pytest.approx(1.33, abs=1e-3)


def test_discounted_energy_prefers_standing_still():
    assert an.energy_optimal_velocity(P) == 0.0


def test_trip_energy_minimum_is_metabolic_optimum():
    vs = an.speed_grid(0.001, 2.0)
    assert vs[np.argmin(an.trip_energy(vs))] == pytest.approx(EnergyModel().optimal_speed, abs=1e-3)
    assert an.trip_energy(0.0) == math.inf


def test_best_exponent_and_mse():
    exps, errs, best = an.exponent_sweep(P)
    assert best == pytest.approx(1.92, abs=0.01)
    assert an.normalized_mse(P, 2.0) == pytest.approx(0.00965, rel=1e-2)
    assert an.normalized_mse(P, 1.0) == pytest.approx(0.0665, rel=1e-2)
    assert errs.min() == an.normalized_mse(P, best)


def test_full_range_normalisation_variant():
    _, _, best = an.exponent_sweep(P, normalize="full")
    assert best == pytest.approx(1.32, abs=0.01)


def test_mse_validates_inputs():
    with pytest.raises(ValueError):
        an.normalized_mse(P, 1.0, v_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        an.normalized_mse(P, 1.0, normalize="zscore")


def test_summary_lines():
    lines = an.summarize(P).lines()
    assert lines[0] == "c_e* = 1.92"
    assert len(lines) == 5


# -- properties ---------------------------------------------------------------


rewards = st.builds(
    RewardConfig,
    c_g=st.floats(0, 20), c_p=st.floats(0, 3), c_v=st.floats(0, 2), c_e=st.floats(0.5, 3),
    c_t=st.floats(0, 0.05), v_0=st.floats(0.5, 1.9), gamma=st.floats(0.8, 1.0),
)


@settings(max_examples=25)
@given(rewards, st.floats(0.1, 10))
def test_optimum_invariant_to_positive_scaling(r, k):
    base = an.SimpleModelParams(r)
    scaled = an.SimpleModelParams(RewardConfig(
        c_g=k * r.c_g, c_p=k * r.c_p, c_v=k * r.c_v, c_e=r.c_e, c_t=k * r.c_t, v_0=r.v_0, gamma=r.gamma))
    vs = an.speed_grid(0, 2, 0.01)
    np.testing.assert_allclose(an.simplified_return(vs, scaled), k * an.simplified_return(vs, base),
                               rtol=1e-9, atol=1e-9)


@settings(max_examples=25)
@given(st.floats(0, 20), st.floats(0.01, 3), st.floats(0.9, 1.0))
def test_without_speed_and_urgency_terms_faster_is_never_worse_at_fixed_step_count(c_g, c_p, gamma):
    """Only goal and progress remain. At a fixed trip length faster is never worse.

    Across a drop in step count the return can fall by at most one step of progress,
    because every counted step pays the full ``c_p v dt``.
    """
    p = an.SimpleModelParams(RewardConfig(c_g=c_g, c_p=c_p, c_v=0, c_t=0, gamma=gamma))
    vs = an.speed_grid(0.34, 2.0, 0.001)
    ret = an.simplified_return(vs, p)
    steps, _ = an.trip_steps(vs, p)
    same = steps[1:] == steps[:-1]
    diff = np.diff(ret)
    assert np.all(diff[same] >= -1e-9)
    assert np.all(diff[~same] >= -c_p * vs[1:][~same] * p.dt - 1e-9)


@settings(max_examples=25)
@given(rewards)
def test_undiscounted_closed_form(r):
    r = RewardConfig(c_g=r.c_g, c_p=r.c_p, c_v=r.c_v, c_e=r.c_e, c_t=r.c_t, v_0=r.v_0, gamma=1.0)
    p = an.SimpleModelParams(r)
    for v in (0.5, 1.0, 1.5, 2.0):
        steps = math.ceil(8 / (v / 12) - 1e-12)
        expected = r.c_g + (steps + 1) * (r.c_p * v / 12 - r.c_v * abs(v - r.v_0) ** r.c_e - r.c_t)
        assert an.simplified_return(v, p) == pytest.approx(expected, rel=1e-9, abs=1e-9)


@settings(max_examples=25)
@given(st.floats(0.01, 2.0))
def test_return_continuous_between_step_changes(v):
    """Within a fixed step count the return moves by at most its Lipschitz bound."""
    eps = 1e-7
    a, b = an.simplified_return(v, P), an.simplified_return(v + eps, P)
    sa, _ = an.trip_steps(v, P)
    sb, _ = an.trip_steps(v + eps, P)
    if sa == sb:
        assert abs(a - b) < 1e-3


def test_sweep_rejects_unknown_axis():
    with pytest.raises(ValueError):
        an.coefficient_sweep(P, "c_g", [1.0])
    with pytest.raises(ValueError):
        an.coefficient_sweep(P, "c_v", [])


@given(st.floats(0.48, 2.0))
def test_undiscounted_energy_closed_form(v):
    steps = math.ceil(8 / (v / 12) - 1e-9)
    expected = -(steps + 1) / 12 * (2.23 + 1.26 * v * v)
    assert an.discounted_energy_return(v, P, gamma=1.0) == pytest.approx(expected, rel=1e-9)


def test_quadratic_transition_is_more_gradual():
    values = np.round(np.arange(0.0, 0.3 + 1e-9, 0.005), 10)
    top, v_0 = 2.0, 1.33

    def intermediate(c_e):
        optima = [v for _, v in an.coefficient_sweep(P.with_reward(c_e=c_e), "c_v", values)]
        return sum(v_0 + 0.01 < v < top - 0.01 for v in optima)

    assert intermediate(2.0) > intermediate(1.0)


def test_lower_discount_raises_quadratic_optimum():
    sweep = dict(an.coefficient_sweep(P.with_reward(c_e=2.0), "gamma", [0.95, 0.99, 0.999]))
    assert sweep[0.95] > sweep[0.99] > sweep[0.999]
    linear = {v for _, v in an.coefficient_sweep(P.with_reward(c_e=1.0), "gamma", [0.9, 0.95, 0.99, 0.999])}
    assert linear == {1.33}
