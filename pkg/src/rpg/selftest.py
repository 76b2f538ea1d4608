"""Quick invariant and oracle suite behind ``rpg selftest``.

Each check returns ``(name, passed, detail)``.  The pytest suite covers the
same ground more thoroughly; this one is meant to run in a few seconds on an
installed copy.
"""
from __future__ import annotations

import numpy as np

from . import gradcheck, tinymdp
from .env_dialog import DialogEnv
from .env_lander import LanderConfig, bang_bang_controller, optimal_hover_check
from .episodes import ReplayBuffer
from .learners import (MethodConfig, TrainState, train_step, update_b1, update_m1,
                       update_value_offpolicy)
from .nets import PolicyNetwork, ValueNetwork
from .nn_core import OptimizerState, load_params, save_params

GRAD_TOL = 1e-4
EXPECT_TOL = 1e-10

ARCHITECTURES = {
    "lstm": dict(body="lstm", hidden=32),
    "feedforward": dict(body="feedforward", hidden=(16, 16), activation="relu"),
}


def check_gradients(episodes: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for name, kw in ARCHITECTURES.items():
        pol = PolicyNetwork(6, 4, **kw)
        val = ValueNetwork(6, **kw)
        worst = 0.0
        for _ in range(episodes):
            gradcheck.randomize(pol.params, rng)
            gradcheck.randomize(val.params, rng)
            ep = gradcheck.random_episode(6, 4, int(rng.integers(1, 8)), rng, masked=True)
            c = rng.normal(size=len(ep))
            worst = max(worst, gradcheck.check_log_prob(pol, ep, c, rng, n_coords=8, n_dirs=1),
                        gradcheck.check_value(val, ep, c, rng, n_coords=8, n_dirs=1))
        out.append((f"gradient {name}", worst < GRAD_TOL, f"max rel err {worst:.2e}"))
    return out


def check_expectations(seed: int = 0):
    rng = np.random.default_rng(seed)
    mdp = tinymdp.TinyMDP.random(rng)
    gamma = 0.9
    pi = tinymdp.tabular_policy(rng.normal(size=(4, 2)))
    mu = tinymdp.tabular_policy(rng.normal(size=(4, 2)))
    val = tinymdp.tabular_value(rng.normal(size=4))
    on = tinymdp.enumerate_episodes(mdp, pi)
    off = tinymdp.enumerate_episodes(mdp, mu)

    def on_value(ep):
        return update_m1(pi, val, [ep], gamma)[1]

    w_on = tinymdp.expectation(on, on_value)
    w_off = tinymdp.expectation(off, lambda ep: update_value_offpolicy(val, ep, pi, gamma))
    err_v = float(np.max(np.abs(w_on - w_off)))

    g2 = tinymdp.expectation(on, lambda ep: update_b1(pi, [ep], gamma))
    b = 1.7
    g3 = tinymdp.expectation(on, lambda ep: pi.log_prob_gradients(ep, tinymdp.returns_of(ep, gamma) - b))
    err_b = float(np.max(np.abs(g2 - g3)))
    return [("off-policy value expectation", err_v <= EXPECT_TOL, f"max abs diff {err_v:.1e}"),
            ("constant baseline unbiased", err_b <= EXPECT_TOL, f"max abs diff {err_b:.1e}")]


def _fresh_state(seed: int, method: str, episodes):
    rng = np.random.default_rng(seed)
    pol = PolicyNetwork(6, 3, "lstm", 8)
    pol.init_params(rng)
    val = ValueNetwork(6, "lstm", 8)
    val.init_params(rng)
    buf = ReplayBuffer(50)
    buf.extend(episodes)
    return TrainState(pol, OptimizerState.adadelta(pol.params), buf, np.random.default_rng(seed + 1),
                      val, OptimizerState.adadelta(val.params))


def check_reductions(seed: int = 0):
    rng = np.random.default_rng(seed)
    history = [gradcheck.random_episode(6, 3, 5, rng) for _ in range(4)]
    batch = [gradcheck.random_episode(6, 3, 4, rng)]
    results = {}
    for label, method, v, p in (("M1", "M1", 5, 3), ("M2/0", "M2", 0, 3), ("M3/0/0", "M3", 0, 0)):
        st = _fresh_state(seed, method, history)
        train_step(MethodConfig(method, 0.9, 1, v, p), st, batch)
        results[label] = np.concatenate([st.policy.params.flat(), st.value.params.flat()])
    same = all(np.array_equal(results["M1"], results[k]) for k in ("M2/0", "M3/0/0"))
    return [("replay-free reductions match M1", same, "bitwise" if same else "differ")]


def check_checkpoint(seed: int = 0):
    rng = np.random.default_rng(seed)
    pol = PolicyNetwork(5, 4, "feedforward", (16, 16), "relu")
    pol.init_params(rng)
    gradcheck.randomize(pol.params, rng, scale=10.0)
    back = load_params(save_params(pol.params))
    a, b = pol.params.flat(), back.flat()
    err = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
    return [("checkpoint round trip", err <= 1e-15 and back.names() == pol.params.names(), f"max rel err {err:.1e}")]


def check_environments(seed: int = 0, dialogs: int = 500):
    rng = np.random.default_rng(seed)
    env = DialogEnv()
    lengths, rewards = [], set()
    for _ in range(dialogs):
        env.reset(rng)
        done, t = False, 0
        while not done:
            a = int(rng.choice(np.flatnonzero(env.action_mask())))
            _, r, done = env.step(a, rng)
            rewards.add(r)
            t += 1
        lengths.append(t)
    lengths = np.array(lengths)
    within = float(np.mean((lengths >= 3) & (lengths <= 10)))
    cfg = LanderConfig()
    hover = optimal_hover_check(lambda o: bang_bang_controller(o, cfg), 200, cfg, rng)
    return [("dialog lengths", bool(within >= 0.99 and lengths.max() <= 10), f"{within:.3f} within [3, 10]"),
            ("dialog rewards", rewards <= {0.0, 1.0}, f"{sorted(rewards)}"),
            ("lander controller", hover.landing_rate >= 0.9, f"landing rate {hover.landing_rate:.2f}")]


def run_all(seed: int = 0):
    results = []
    for fn in (check_gradients, check_expectations, check_reductions, check_checkpoint, check_environments):
        results.extend(fn(seed=seed))
    return results
