import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpg import tinymdp
from rpg.episodes import ClampStats, Episode, ReplayBuffer, compute_returns
from rpg.gradcheck import random_episode, randomize
from rpg.learners import (MethodConfig, TrainState, average_return_baseline, train_step, update_b1, update_b2,
                          update_m1, update_policy_offpolicy, update_value_offpolicy)
from rpg.nets import PolicyNetwork, ValueNetwork
from rpg.nn_core import ConfigurationError, OptimizerState

from oracles import Tabular, expected_offpolicy_value, expected_reinforce, expected_value_regression

GAMMA = 0.9


def random_problem(seed):
    rng = np.random.default_rng(seed)
    mdp = tinymdp.TinyMDP.random(rng)
    oracle = Tabular(mdp.initial, mdp.transition, mdp.reward)
    return rng, mdp, oracle


def lstm_pair(seed, obs_dim=4, n_actions=3, hidden=6):
    rng = np.random.default_rng(seed)
    pol = PolicyNetwork(obs_dim, n_actions, body="lstm", hidden=hidden)
    val = ValueNetwork(obs_dim, body="lstm", hidden=hidden)
    randomize(pol.params, rng, 0.4)
    randomize(val.params, rng, 0.4)
    return rng, pol, val


def on_policy_copy(ep, policy):
    """The same trajectory, relabelled as if generated by ``policy``."""
    return Episode(ep.observations, ep.actions, policy.action_probs(ep), ep.rewards, ep.masks)


# ------------------------------------------------------------------------ B1

def test_b1_zero_rewards_zero_gradient():
    rng, pol, _ = lstm_pair(0)
    ep = random_episode(4, 3, 5, rng)
    ep.rewards[:] = 0.0
    assert update_b1(pol, [ep], GAMMA).norm() == 0.0


def test_b1_single_step_closed_form():
    pol = PolicyNetwork(2, 3, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([0.5, 0.0, -0.5])
    ep = Episode(np.zeros((1, 2)), [2], [0.3], [4.0])
    p = pol.distributions(np.zeros((1, 2)))[0]
    assert np.allclose(update_b1(pol, [ep], GAMMA)["head/b"], 4.0 * (np.eye(3)[2] - p), atol=1e-14)


def test_b1_equals_naive_accumulation():
    rng, pol, _ = lstm_pair(1)
    eps = [random_episode(4, 3, int(rng.integers(1, 7)), rng) for _ in range(3)]
    naive = np.zeros(pol.params.size)
    for ep in eps:
        G = compute_returns(ep, GAMMA)
        for t in range(len(ep)):
            c = np.zeros(len(ep))
            c[t] = G[t]
            naive += pol.log_prob_gradients(ep, c).flat()
    assert np.max(np.abs(update_b1(pol, eps, GAMMA).flat() - naive)) <= 1e-10


def test_b1_expectation_matches_closed_form_oracle():
    rng, mdp, oracle = random_problem(2)
    logits = rng.normal(size=(4, 2))
    pol = tinymdp.tabular_policy(logits)
    lib = tinymdp.expectation(tinymdp.enumerate_episodes(mdp, pol), lambda ep: update_b1(pol, [ep], GAMMA))
    ref = expected_reinforce(oracle, logits, GAMMA)
    assert np.max(np.abs(lib[:8] - ref.ravel())) <= 1e-12


# ------------------------------------------------------------------------ B2

def b2_window(weights, g0):
    """One-step episodes under a uniform 2-action policy with chosen importance weights."""
    pol = tinymdp.tabular_policy()
    eps = [Episode(tinymdp.encode(0, 0)[None], [0], [0.5 / w], [g]) for w, g in zip(weights, g0)]
    return pol, eps


@pytest.mark.parametrize("weights,g0,b", [([1.0], [1.0], 1.0), ([1.0, 1.0], [0.0, 1.0], 0.5),
                                          ([1.0, 3.0], [0.0, 1.0], 0.75)])
def test_b2_baseline_examples(weights, g0, b):
    pol, eps = b2_window(weights, g0)
    assert average_return_baseline(pol, eps, GAMMA) == pytest.approx(b, abs=1e-15)


def test_b2_zero_weights_fall_back_to_zero(caplog):
    pol = tinymdp.tabular_policy(np.array([[0.0, -800.0]] * 4))
    ep = Episode(tinymdp.encode(0, 0)[None], [1], [0.5], [3.0])
    with caplog.at_level(logging.WARNING):
        assert average_return_baseline(pol, [ep], GAMMA) == 0.0
    assert "falling back" in caplog.text


def test_b2_uses_recent_window_and_subtracts_baseline():
    rng, pol, _ = lstm_pair(3)
    buf = ReplayBuffer(10)
    old = [on_policy_copy(random_episode(4, 3, 3, rng), pol) for _ in range(5)]
    buf.extend(old)
    new = old[-1]
    grad, b = update_b2(pol, [new], buf, GAMMA, window=2)
    expected_b = np.mean([compute_returns(e, GAMMA)[0] for e in old[-2:]])
    assert b == pytest.approx(expected_b, rel=1e-12)
    direct = pol.log_prob_gradients(new, compute_returns(new, GAMMA) - b)
    assert np.array_equal(grad.flat(), direct.flat())


@settings(max_examples=25)
@given(st.floats(-50, 50), st.integers(0, 10_000))
def test_constant_baseline_is_unbiased(b, seed):
    rng, mdp, oracle = random_problem(seed)
    logits = rng.normal(size=(4, 2))
    pol = tinymdp.tabular_policy(logits)
    pairs = tinymdp.enumerate_episodes(mdp, pol)
    plain = tinymdp.expectation(pairs, lambda ep: update_b1(pol, [ep], GAMMA))
    based = tinymdp.expectation(pairs, lambda ep: pol.log_prob_gradients(ep, tinymdp.returns_of(ep, GAMMA) - b))
    assert np.max(np.abs(plain - based)) <= 1e-10
    assert np.max(np.abs(based[:8] - expected_reinforce(oracle, logits, GAMMA, b).ravel())) <= 1e-10


# ------------------------------------------------------------------------ M1

def test_m1_oracle_value_gives_zero_policy_gradient():
    pol = PolicyNetwork(3, 2, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([0.3, -0.3])
    val = ValueNetwork(3, body="feedforward", hidden=())
    val.params["head/b"] = np.array([2.5])
    ep = Episode(np.zeros((1, 3)), [1], [0.4], [2.5])
    d_theta, d_w = update_m1(pol, val, [ep], GAMMA)
    assert d_theta.norm() == 0.0 and d_w.norm() == 0.0


def test_m1_zero_value_reduces_to_b1():
    rng, pol, _ = lstm_pair(4)
    val = ValueNetwork(4, body="lstm", hidden=6)
    eps = [random_episode(4, 3, 4, rng) for _ in range(2)]
    assert np.array_equal(update_m1(pol, val, eps, GAMMA)[0].flat(), update_b1(pol, eps, GAMMA).flat())


def test_m1_value_direction_reduces_squared_error():
    rng, pol, val = lstm_pair(5)
    for _ in range(10):
        ep = random_episode(4, 3, int(rng.integers(1, 8)), rng)
        G = compute_returns(ep, GAMMA)

        def loss():
            return float(np.sum((G - val.values(ep.observations)) ** 2))
        before = loss()
        _, d_w = update_m1(pol, val, [ep], GAMMA)
        x0 = val.params.flat()
        val.params.set_flat(x0 + 1e-4 * d_w.flat())
        after = loss()
        val.params.set_flat(x0)
        assert after < before


def test_m1_value_expectation_matches_oracle():
    rng, mdp, oracle = random_problem(6)
    logits, table = rng.normal(size=(4, 2)), rng.normal(size=4)
    pol, val = tinymdp.tabular_policy(logits), tinymdp.tabular_value(table)
    lib = tinymdp.expectation(tinymdp.enumerate_episodes(mdp, pol), lambda ep: update_m1(pol, val, [ep], GAMMA)[1])
    assert np.max(np.abs(lib[:4] - expected_value_regression(oracle, logits, table, GAMMA))) <= 1e-12


# ------------------------------------------------------- off-policy value step

def test_offpolicy_value_on_policy_episode_equals_on_policy_update():
    rng, pol, val = lstm_pair(7)
    for _ in range(5):
        ep = on_policy_copy(random_episode(4, 3, int(rng.integers(1, 8)), rng), pol)
        off = update_value_offpolicy(val, ep, pol, GAMMA)
        on = update_m1(pol, val, [ep], GAMMA)[1]
        assert np.array_equal(off.flat(), on.flat())


def test_offpolicy_value_forbidden_action_regresses_toward_zero():
    pol = PolicyNetwork(2, 2, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([0.0, -800.0])     # pi(1) underflows to exactly 0
    val = ValueNetwork(2, body="feedforward", hidden=())
    val.params["head/b"] = np.array([1.5])
    ep = Episode(np.zeros((3, 2)), [0, 1, 0], [0.5, 0.5, 0.5], [1.0, 2.0, 3.0])
    rho = pol.action_probs(ep) / 0.5
    assert rho[1] == 0.0
    prefix = np.array([1.0, rho[0], 0.0])
    got = update_value_offpolicy(val, ep, pol, GAMMA)
    expected = val.weighted_gradients(val.forward(ep.observations), -prefix * 1.5)
    assert np.allclose(got.flat(), expected.flat(), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_offpolicy_value_expectation_equals_on_policy(seed):
    rng, mdp, oracle = random_problem(100 + seed)
    pi_logits, mu_logits, table = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.normal(size=4) * 3
    pi, mu, val = tinymdp.tabular_policy(pi_logits), tinymdp.tabular_policy(mu_logits), tinymdp.tabular_value(table)
    off = tinymdp.expectation(tinymdp.enumerate_episodes(mdp, mu),
                              lambda ep: update_value_offpolicy(val, ep, pi, GAMMA))
    on = tinymdp.expectation(tinymdp.enumerate_episodes(mdp, pi), lambda ep: update_m1(pi, val, [ep], GAMMA)[1])
    assert np.max(np.abs(off - on)) <= 1e-10
    assert np.max(np.abs(off[:4] - expected_offpolicy_value(oracle, pi_logits, mu_logits, table, GAMMA))) <= 1e-12


def test_double_counted_prefix_would_be_biased():
    """Weighting the full-product target by the prefix again breaks the expectation identity."""
    rng, mdp, _ = random_problem(42)
    pi = tinymdp.tabular_policy(rng.normal(size=(4, 2)))
    mu = tinymdp.tabular_policy(rng.normal(size=(4, 2)))
    val = tinymdp.tabular_value(rng.normal(size=4))

    def literal(ep):
        rho = pi.action_probs(ep) / ep.behavior_probs
        prefix = np.concatenate([[1.0], np.cumprod(rho)[:-1]])
        v = val.values(ep.observations)
        return val.weighted_gradients(val.forward(ep.observations),
                                      prefix * (np.prod(rho) * compute_returns(ep, GAMMA) - v))
    off = tinymdp.expectation(tinymdp.enumerate_episodes(mdp, mu), literal)
    on = tinymdp.expectation(tinymdp.enumerate_episodes(mdp, pi), lambda ep: update_m1(pi, val, [ep], GAMMA)[1])
    assert np.max(np.abs(off - on)) > 1e-3


def test_clamped_products_are_counted():
    pol = PolicyNetwork(2, 2, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([30.0, 0.0])
    val = ValueNetwork(2, body="feedforward", hidden=())
    ep = Episode(np.zeros((8, 2)), [0] * 8, [1e-2] * 8, [1.0] * 8)
    stats = ClampStats()
    update_value_offpolicy(val, ep, pol, GAMMA, stats)
    assert stats.events > 0 and stats.products == 9


# ------------------------------------------------------ off-policy policy step

def test_offpolicy_policy_single_step_matches_b1():
    pol = PolicyNetwork(2, 3, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([0.1, 0.7, -0.2])
    val = ValueNetwork(2, body="feedforward", hidden=())
    ep = on_policy_copy(Episode(np.zeros((1, 2)), [1], [0.5], [2.0]), pol)
    assert np.allclose(update_policy_offpolicy(pol, val, ep, 1.0).flat(), update_b1(pol, [ep], 1.0).flat(),
                       atol=1e-15)


def test_offpolicy_policy_bellman_consistent_value_gives_zero():
    pol = PolicyNetwork(3, 2, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([0.2, -0.1])
    val = ValueNetwork(3, body="feedforward", hidden=())
    val.params["head/W"] = np.array([[1.0], [0.0], [0.0]])
    # V(h_t) = obs[t, 0]; rewards chosen so r_t + gamma V(h_{t+1}) = V(h_t), V(h_T) = 0.
    v = np.array([3.0, 2.0, 1.0])
    obs = np.zeros((3, 3))
    obs[:, 0] = v
    r = v - GAMMA * np.append(v[1:], 0.0)
    ep = Episode(obs, [0, 1, 0], [0.4, 0.6, 0.4], r)
    assert np.allclose(update_policy_offpolicy(pol, val, ep, GAMMA).flat(), 0.0, atol=1e-14)


def test_offpolicy_policy_zero_ratios_give_zero():
    pol = PolicyNetwork(2, 2, body="feedforward", hidden=())
    pol.params["head/b"] = np.array([0.0, -800.0])
    val = ValueNetwork(2, body="feedforward", hidden=())
    ep = Episode(np.zeros((2, 2)), [1, 1], [0.5, 0.5], [1.0, 1.0])
    assert update_policy_offpolicy(pol, val, ep, GAMMA).norm() == 0.0


def test_offpolicy_policy_on_policy_expectation_with_exact_values():
    rng, mdp, _ = random_problem(9)
    pol = tinymdp.tabular_policy(rng.normal(size=(4, 2)))
    val = tinymdp.tabular_value(tinymdp.exact_values(mdp, pol, GAMMA))
    pairs = tinymdp.enumerate_episodes(mdp, pol)
    td = tinymdp.expectation(pairs, lambda ep: update_policy_offpolicy(pol, val, ep, GAMMA))
    mc = tinymdp.expectation(pairs, lambda ep: update_b1(pol, [ep], GAMMA))
    assert np.max(np.abs(td - mc)) <= 1e-12


# ------------------------------------------------------------------ train_step

def make_state(seed, history, method="M3"):
    rng = np.random.default_rng(seed)
    pol = PolicyNetwork(4, 3, body="lstm", hidden=6)
    pol.init_params(rng)
    val = ValueNetwork(4, body="lstm", hidden=6)
    val.init_params(rng)
    buf = ReplayBuffer(20)
    buf.extend(history)
    return TrainState(pol, OptimizerState.adadelta(pol.params), buf, np.random.default_rng(seed + 1),
                      val, OptimizerState.adadelta(val.params))


def snapshot(state):
    return (state.policy.params.flat().tobytes(), state.value.params.flat().tobytes(),
            state.rng.bit_generator.state["state"]["state"])


@pytest.mark.parametrize("method,v,p", [("M2", 0, 3), ("M3", 0, 0)])
def test_replay_free_methods_reduce_to_m1(method, v, p):
    rng = np.random.default_rng(10)
    history = [random_episode(4, 3, 5, rng) for _ in range(6)]
    batches = [[random_episode(4, 3, int(rng.integers(1, 6)), rng)] for _ in range(4)]
    ref, other = make_state(3, history), make_state(3, history)
    for b in batches:
        train_step(MethodConfig("M1", GAMMA, 1, 5, 3), ref, b)
        train_step(MethodConfig(method, GAMMA, 1, v, p), other, b)
    assert snapshot(ref) == snapshot(other)


def test_offpolicy_updates_reproduce_on_policy_bitwise():
    rng, pol, val = lstm_pair(11)
    eps = [on_policy_copy(random_episode(4, 3, int(rng.integers(1, 7)), rng), pol) for _ in range(4)]
    for ep in eps:
        assert update_value_offpolicy(val, ep, pol, GAMMA).flat().tobytes() == \
            update_m1(pol, val, [ep], GAMMA)[1].flat().tobytes()
        v = val.values(ep.observations)
        td = ep.rewards + GAMMA * np.append(v[1:], 0.0) - v
        assert update_policy_offpolicy(pol, val, ep, GAMMA).flat().tobytes() == \
            pol.log_prob_gradients(ep, td).flat().tobytes()
    # With every stored mu equal to pi all weights are exactly 1, so the B2 baseline is the plain mean.
    b = average_return_baseline(pol, eps, GAMMA)
    assert b == pytest.approx(np.mean([compute_returns(e, GAMMA)[0] for e in eps]), rel=1e-12)


def test_train_step_stores_batch_and_reports():
    rng = np.random.default_rng(12)
    st_ = make_state(4, [])
    ep = random_episode(4, 3, 4, rng)
    rep = train_step(MethodConfig("M3", GAMMA, 1, 5, 3), st_, [ep])
    assert list(st_.buffer)[-1] is ep
    assert rep.policy_steps == 4 and rep.value_steps == 6
    assert np.isfinite(rep.policy_grad_norm) and np.isfinite(rep.value_grad_norm)


def test_train_step_rejects_wrong_batch_and_missing_value():
    rng = np.random.default_rng(13)
    st_ = make_state(5, [])
    with pytest.raises(ConfigurationError):
        train_step(MethodConfig("B1", GAMMA, 2), st_, [random_episode(4, 3, 2, rng)])
    st_.value = None
    with pytest.raises(ConfigurationError):
        train_step(MethodConfig("M1", GAMMA, 1), st_, [random_episode(4, 3, 2, rng)])


@pytest.mark.parametrize("kw", [dict(method="B9"), dict(gamma=1.5), dict(batch_size=0),
                                dict(value_replay_steps=-1), dict(baseline_window=0)])
def test_method_config_validation(kw):
    with pytest.raises(ConfigurationError):
        MethodConfig(**kw)
