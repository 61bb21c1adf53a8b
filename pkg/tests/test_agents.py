import numpy as np
import pytest

from metagvf.agents import (Agent, AgentConfig, DqnControl, LinearControl, ReplayBuffer,
                            act_epsilon_greedy, behaviour_probs, build_agent_state,
                            q_learning_step, run_step)
from metagvf.core import ConfigurationError, Rng
from metagvf.envs import FrostHollow, make_env


def _agent(env_id="monsoon", seed=0, **kw):
    cfg = AgentConfig(**kw)
    env = make_env(env_id)
    agent = Agent(cfg, env_id, env, Rng(seed))
    agent.start(env.reset())
    return agent, env


def _greedy_reward(agent, env, steps):
    return np.mean([run_step(agent, env, 0.0).reward for _ in range(steps)])


# -- action selection ----------------------------------------------------------

def test_greedy_picks_argmax_and_breaks_ties_low():
    rng = Rng(0)
    assert act_epsilon_greedy(np.array([1.0, 2.0]), 0.0, rng) == 1
    assert act_epsilon_greedy(np.array([3.0, 3.0]), 0.0, rng) == 0


def test_full_exploration_is_uniform():
    rng = Rng(1)
    n = 10_000
    counts = np.bincount([act_epsilon_greedy(np.array([0.0, 5.0, 1.0]), 1.0, rng)
                          for _ in range(n)], minlength=3)
    chi2 = float(((counts - n / 3) ** 2 / (n / 3)).sum())
    # 99.9th percentile of chi-square with 2 degrees of freedom
    assert chi2 < 13.82


def test_behaviour_probs_match_selection_rule():
    assert np.allclose(behaviour_probs(np.array([0.0, 1.0, 0.5]), 0.3), [0.1, 0.8, 0.1])


# -- agent-state ----------------------------------------------------------------

def test_agent_state_builders():
    obs = np.array([1.0, 1.0])
    assert np.array_equal(build_agent_state(obs, np.array([]), "concat-lin"), [1, 1, 1])
    assert np.array_equal(build_agent_state(obs, np.array([0.5]), "concat-lin"), [1, 1, 0.5, 1])
    assert np.array_equal(build_agent_state(obs, np.array([0.5]), "concat-network"), [1, 1, 0.5])
    s = build_agent_state(obs, np.array([1.0, 1.0]), "agg")
    assert s.shape == (112,) and s[2] == 1.0 and s[2:].sum() == 1.0
    with pytest.raises(ConfigurationError):
        build_agent_state(obs, np.array([]), "conv")


# -- control learners -------------------------------------------------------------

def test_first_td_error_is_the_reward():
    c = LinearControl(2, 3, 0.1, 0.9)
    assert q_learning_step(c, np.ones(3), 0, 1.0, np.ones(3)) == 1.0


def test_tabular_q_learning_matches_value_iteration():
    # two states, two actions: action 0 stays, action 1 switches; reward for
    # switching out of state 0 only
    gamma = 0.9
    nxt = np.array([[0, 1], [1, 0]])
    rew = np.array([[0.0, 1.0], [0.0, 0.0]])
    q_star = np.zeros((2, 2))
    for _ in range(2000):
        q_star = rew + gamma * q_star[nxt].max(axis=2)
    c = LinearControl(2, 2, 0.5, gamma)
    eye = np.eye(2)
    for _ in range(3000):
        for s in range(2):
            for a in range(2):
                c.update(eye[s], a, rew[s, a], eye[nxt[s, a]])
    assert np.abs(c.q.weights.T - q_star).max() < 1e-6


def test_replay_refuses_early_sampling():
    buf = ReplayBuffer(100, 2, 4, 10, Rng(0))
    for i in range(9):
        buf.add(np.zeros(2), 0, 0.0, np.zeros(2))
    assert not buf.ready
    with pytest.raises(RuntimeError):
        buf.sample()
    buf.add(np.zeros(2), 0, 0.0, np.zeros(2))
    assert buf.sample()[0].shape == (4, 2)


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(3, 1, 1, 1, Rng(0))
    for i in range(5):
        buf.add(np.array([i]), 0, float(i), np.array([i]))
    assert len(buf) == 3 and sorted(buf.r) == [2.0, 3.0, 4.0]


def test_dqn_td_error_uses_target_network():
    cfg = AgentConfig(control="network", hidden=(4,), min_history=32, target_sync=10**9)
    c = DqnControl(2, 3, cfg, Rng(0))
    s = np.array([0.1, 0.2, 0.3])
    for w in c.online.weights:
        w += 1.0
    expected = 0.5 + cfg.gamma_q * c.target.values(s).max() - c.online.values(s)[1]
    assert c.td_error(s, 1, 0.5, s) == pytest.approx(expected)
    assert c.target.values(s).max() != pytest.approx(c.online.values(s).max())


def test_dqn_trains_only_after_min_history_and_syncs_target():
    cfg = AgentConfig(control="network", hidden=(4,), min_history=50, batch_size=8,
                      target_sync=60)
    c = DqnControl(2, 3, cfg, Rng(1))
    w0 = c.online.weights[0].copy()
    s = np.ones(3)
    for _ in range(49):
        c.update(s, 0, 1.0, s)
    assert np.array_equal(c.online.weights[0], w0)
    c.update(s, 0, 1.0, s)
    assert not np.array_equal(c.online.weights[0], w0)
    assert not np.array_equal(c.target.weights[0], c.online.weights[0])
    for _ in range(10):
        c.update(s, 0, 1.0, s)
    assert np.array_equal(c.target.weights[0], c.online.weights[0])


# -- the full agent -------------------------------------------------------------------

def test_step_order_is_act_meta_gvf_control():
    agent, env = _agent(variant="mgd", epsilon=0.5)
    agent.events = []
    run_step(agent, env, 0.5)
    assert agent.events == ["act", "meta", "gvf", "control"]


def test_step_order_without_meta():
    agent, env = _agent(variant="expert")
    agent.events = []
    run_step(agent, env, 0.1)
    assert agent.events == ["act", "gvf", "control"]


def test_disabled_meta_learning_matches_fixed_questions():
    kw = dict(epsilon=0.5, alpha_q=1e-2, alpha_c=0.0, alpha_pi=0.0, omega_c_init=[2.0, -1.0],
              omega_pi_init=[0.3, -0.3])
    a, env_a = _agent(variant="mgd", seed=4, **kw)
    b, env_b = _agent(variant="fixed", seed=4, **kw)
    for _ in range(2000):
        la, lb = run_step(a, env_a, 0.5), run_step(b, env_b, 0.5)
        assert (la.action, la.reward, la.delta) == (lb.action, lb.reward, lb.delta)
        assert np.array_equal(la.v, lb.v)
    assert np.array_equal(a.control.q.weights, b.control.q.weights)


def test_meta_weights_move_when_enabled():
    agent, env = _agent(variant="mgd", epsilon=0.5, alpha_q=1e-2)
    w0 = agent.omega_c()[0].copy()
    for _ in range(500):
        run_step(agent, env, 0.5)
    assert not np.array_equal(agent.omega_c()[0], w0)


@pytest.mark.parametrize("variant", ["obs", "expert", "mgd"])
def test_same_seed_same_trajectory(variant):
    runs = []
    for _ in range(2):
        agent, env = _agent(variant=variant, seed=9, epsilon=0.3)
        runs.append([(l.action, l.delta) for l in (run_step(agent, env, 0.3) for _ in range(500))])
    assert runs[0] == runs[1]


def test_oracle_solves_monsoon_within_20k_steps():
    agent, env = _agent(variant="oracle", epsilon=0.1, alpha_q=0.01)
    for _ in range(20_000):
        run_step(agent, env, 0.1)
    assert _greedy_reward(agent, env, 100) == 1.0


def test_observation_only_agent_is_a_coin_toss():
    agent, env = _agent(variant="obs", epsilon=0.1, alpha_q=0.01)
    for _ in range(20_000):
        run_step(agent, env, 0.1)
    assert 0.4 <= _greedy_reward(agent, env, 1000) <= 0.6


def test_expert_agent_solves_monsoon():
    agent, env = _agent(variant="expert", phi="agg", epsilon=0.1, alpha_q=0.01)
    for _ in range(20_000):
        run_step(agent, env, 0.1)
    assert _greedy_reward(agent, env, 100) == 1.0


def test_oracle_needs_monsoon():
    with pytest.raises(ConfigurationError):
        _agent("frosthollow", variant="oracle")


def test_meta_learning_rejects_aggregated_state():
    with pytest.raises(ConfigurationError):
        _agent(variant="mgd", phi="agg")


def test_unknown_settings_are_rejected():
    with pytest.raises(ConfigurationError):
        AgentConfig.from_dict({"variant": "obs", "learning_rate": 0.1})
    with pytest.raises(ConfigurationError):
        AgentConfig(variant="actor-critic")
    with pytest.raises(ConfigurationError):
        AgentConfig(epsilon=1.5)


def test_epsilon_schedule():
    cfg = AgentConfig(epsilon=0.01, epsilon_start=1.0, epsilon_decay_steps=100)
    assert cfg.epsilon_at(0) == 1.0
    assert cfg.epsilon_at(50) == pytest.approx(0.505)
    assert cfg.epsilon_at(100) == 0.01 and cfg.epsilon_at(10**6) == 0.01


def test_frost_hollow_network_agent_runs():
    agent, env = _agent("frosthollow", variant="mgd", control="network", hidden=(8,),
                        min_history=32, epsilon=1.0, alpha_c=0.001, alpha_v=0.001,
                        gvf_repr="bit-cascade", num_gvfs=1, cumulant_activation="linear",
                        omega_c_init=0.0, phi="concat-network")
    assert agent.state_dim == FrostHollow().obs_dim + 1
    for _ in range(200):
        log = run_step(agent, env, 1.0)
        assert np.isfinite(log.delta)
    assert agent.omega_c()[0].shape == (9,)
    assert agent.omega_pi() == []


def test_q_init_scale_draws_from_a_separate_stream():
    env = make_env("monsoon")
    plain = Agent(AgentConfig(variant="obs"), "monsoon", env, Rng(4))
    noisy = Agent(AgentConfig(variant="obs", q_init_scale=0.05), "monsoon", env, Rng(4))
    assert not plain.control.q.weights.any()
    w = noisy.control.q.weights
    assert w.std() > 0 and np.abs(w).max() < 0.05 * 6
    # the agent's own stream is untouched by the init
    assert plain.rng.random() == noisy.rng.random()
    again = Agent(AgentConfig(variant="obs", q_init_scale=0.05), "monsoon", env, Rng(4))
    np.testing.assert_array_equal(w, again.control.q.weights)


@pytest.mark.parametrize("bad", [dict(q_init_scale=-0.1), dict(meta_discount="echo"),
                                 dict(meta_discount=None)])
def test_more_config_errors(bad):
    with pytest.raises(ConfigurationError):
        AgentConfig(**bad)


def test_monsoon_meta_questions_use_the_chosen_discount():
    from metagvf.gvf import ConstantDiscount, SoftEchoDiscount
    env = make_env("monsoon")
    for kind, cls in (("constant", ConstantDiscount), ("soft-echo", SoftEchoDiscount)):
        agent = Agent(AgentConfig(variant="mgd", meta_discount=kind), "monsoon", env, Rng(0))
        assert all(type(u.spec.discount) is cls for u in agent.units)


def test_dqn_values_track_training():
    cfg = AgentConfig(variant="obs", control="network", hidden=(8,), batch_size=4, min_history=4,
                      alpha_q=0.05)
    c = DqnControl(3, 5, cfg, Rng(2))
    s = np.ones(5)
    q0 = c.values(s).copy()
    for k in range(6):
        c.update(s, k % 3, 1.0, s)
    np.testing.assert_array_equal(c.values(s), c.online.values(s))
    assert not np.array_equal(q0, c.values(s))
    np.testing.assert_array_equal(c.dq_ds(s, 1), c.online.input_grad(s, 1))
