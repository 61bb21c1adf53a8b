import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metagvf.checks import echo_fixed_point_error, echo_value_table
from metagvf.core import ConfigurationError, Rng
from metagvf.envs import MonsoonWorld
from metagvf.gvf import (BitCascade, ConstantDiscount, CoverageError, EchoDiscount,
                         EventCumulant, GvfSpec, HistoryAggregation, ObsAggregation,
                         PredictionState, SoftEchoDiscount, aggregate, bit_cascade,
                         echo_expert_pair, gvf_state, gvf_update, importance_ratio,
                         log_transform, make_representation, predict, scale_for_aggregate,
                         spec_from_config)


# -- representations -------------------------------------------------------------

def test_identity_representation():
    obs = np.array([0.3, 1.0])
    assert np.array_equal(gvf_state(obs, make_representation("identity", 2, 2)), obs)


def test_unknown_representation_is_fatal():
    with pytest.raises(ConfigurationError):
        make_representation("tiles", 2, 2)


def test_obs_aggregation_one_hot():
    r = ObsAggregation((0,))
    assert np.array_equal(r.observe(np.array([1.0, 1.0])), [0.0, 1.0])
    assert np.array_equal(r.observe(np.array([0.0, 1.0])), [1.0, 0.0])


def test_history_is_blank_until_full_then_one_hot():
    r = HistoryAggregation(num_actions=2, length=2)
    assert not r.observe(np.array([0.0, 1.0])).any()
    assert not r.observe(np.array([1.0, 1.0]), 1).any()
    s = r.observe(np.array([0.0, 1.0]), 0)
    # pairs (water, grew)=3 then (no-water, no growth)=0 -> code 3*4+0
    assert s.sum() == 1.0 and s[12] == 1.0


def test_history_identifies_phase_under_any_behaviour():
    # any two-step history seen on Monsoon maps to a single next phase
    rng = Rng(0)
    env = MonsoonWorld()
    env.reset()
    r = HistoryAggregation(2)
    seen = {}
    for _ in range(2000):
        a = int(rng.integers(2))
        s = r.observe(env.step(a).observation, a)
        if s.any():
            seen.setdefault(int(s.argmax()), set()).add(env.phase)
    assert seen and all(len(p) == 1 for p in seen.values())


def test_bit_cascade_examples():
    assert not bit_cascade([0, 0, 0]).any()
    s = bit_cascade([0, 0, 1])
    assert s[0] == 1.0 and s[:8].sum() == 1.0 and s[8] == 1.0
    s = bit_cascade([0, 1, 1, 0, 0])
    assert s[3] == 1.0 and s[:8].sum() == 1.0 and s[8] == 0.0


def test_bit_cascade_tracks_frost_hollow_onsets():
    bc = BitCascade(period=8, hazard_index=7)
    obs = np.zeros(9)
    for t in range(40):
        obs[7] = 1.0 if t % 8 in (6, 7) else 0.0
        s = bc.observe(obs)
        if t >= 6:
            assert s[(t - 6) % 8] == 1.0 and s[:8].sum() == 1.0


# -- prediction and learning --------------------------------------------------------

def test_predict_examples():
    ps = PredictionState.zeros(3)
    assert predict(ps, np.array([1.0, 2.0, 3.0])) == 0.0
    ps.nu[1] = 1.0
    assert predict(ps, np.array([0.0, 0.9, 0.0])) == 0.9


def test_predict_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        predict(PredictionState.zeros(3), np.ones(2))


def test_terminal_one_step_update():
    ps = PredictionState.zeros(3)
    s = np.array([0.0, 1.0, 0.5])
    delta, rho = gvf_update(ps, 0.1, 0.0, s, np.ones(3), 1.0, 0.9, 0.0, 1.0)
    assert delta == 1.0 and rho == 1.0
    assert np.allclose(ps.nu, 0.1 * s)


def test_zero_ratio_cuts_the_trace():
    ps = PredictionState.zeros(2)
    ps.nu[...] = [0.4, -0.2]
    ps.trace[...] = [1.0, 1.0]
    before = ps.nu.copy()
    gvf_update(ps, 0.1, 0.9, np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0, 0.9, 0.9,
               importance_ratio(0.0, 0.5))
    assert not ps.trace.any()
    assert np.array_equal(ps.nu, before)


def test_zero_behaviour_probability_is_a_coverage_error():
    with pytest.raises(CoverageError):
        importance_ratio(1.0, 0.0)


def test_chain_matches_bellman_solution():
    # 5-state deterministic ring, tabular features, per-state cumulants
    n, gamma = 5, 0.8
    c = np.array([1.0, 0.0, 0.5, -1.0, 2.0])
    P = np.roll(np.eye(n), 1, axis=1)
    v_star = np.linalg.solve(np.eye(n) - gamma * P, P @ c)
    ps = PredictionState.zeros(n)
    eye = np.eye(n)
    for t in range(20000):
        i, j = t % n, (t + 1) % n
        gvf_update(ps, 0.5, 0.0, eye[i], eye[j], c[j], gamma, gamma, 1.0)
    assert np.abs(ps.nu - v_star).max() < 1e-6


def test_echo_table_is_powers_of_gamma():
    env = MonsoonWorld()
    assert echo_value_table(env, water=True) == {0: 1.0, 1: 1.0, 2: 0.81, 3: 0.9}
    assert echo_value_table(env, water=False) == {0: 0.81, 1: 0.9, 2: 1.0, 3: 1.0}


def test_echo_gvfs_reach_analytic_fixed_point():
    assert echo_fixed_point_error(steps=50_000) < 1e-3


def test_echo_expert_pair_policies():
    water, no_water = echo_expert_pair()
    assert np.array_equal(water.policy(), [0.0, 1.0])
    assert np.array_equal(no_water.policy(), [1.0, 0.0])


# -- question components ------------------------------------------------------------

def test_discounts():
    assert EchoDiscount(0.9)(1.0) == 0.0 and EchoDiscount(0.9)(0.0) == 0.9
    assert ConstantDiscount(0.9)(1.0) == 0.9


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_soft_echo_agrees_with_echo_on_binary_cumulants(c):
    assert SoftEchoDiscount(0.9)(c) == EchoDiscount(0.9)(c)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99))
def test_soft_echo_gradient_matches_finite_difference(c):
    d = SoftEchoDiscount(0.9)
    h = 1e-6
    assert d.grad(c) == pytest.approx((d(c + h) - d(c - h)) / (2 * h), rel=1e-6)


def test_spec_config_round_trip():
    spec = GvfSpec(EventCumulant("reward"), SoftEchoDiscount(0.8), None, 0.5, 0.05)
    again = spec_from_config(spec.to_config())
    assert again.to_config() == spec.to_config()


def test_spec_config_rejects_unknown_kinds():
    with pytest.raises(ConfigurationError):
        spec_from_config({"cumulant": {"kind": "magic"}, "discount": {"kind": "echo"}})


# -- feature transforms -----------------------------------------------------------

def test_log_transform_examples():
    assert log_transform([1.0])[0] == 0.0
    assert log_transform([0.9**3], 0.9, 4)[0] == pytest.approx(0.75)
    assert log_transform([0.9**12], 0.9, 10)[0] == 1.0
    assert log_transform([0.0])[0] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 9), st.integers(1, 10))
def test_log_transform_is_monotone_in_time_to_event(k1, gap):
    k2 = min(k1 + gap, 10)
    if k1 < k2:
        assert log_transform([0.9**k1])[0] < log_transform([0.9**k2])[0]


def test_aggregate_examples():
    assert aggregate([0.0, 0.0])[0] == 1.0
    assert aggregate([3.2, 5.0])[53] == 1.0
    assert aggregate([9.9, 9.9])[108] == 1.0


def test_aggregate_rejects_out_of_range():
    with pytest.raises(ConfigurationError):
        aggregate([0.0, 11.0])
    with pytest.raises(ConfigurationError):
        aggregate([1.0])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_aggregate_is_pure_and_one_hot(a, b):
    v = scale_for_aggregate([a, b])
    s1, s2 = aggregate(v), aggregate(v)
    assert np.array_equal(s1, s2)
    assert s1.sum() == 1.0 and set(np.unique(s1)) <= {0.0, 1.0}
