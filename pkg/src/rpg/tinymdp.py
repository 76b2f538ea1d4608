"""Exhaustively enumerable 2-state, 2-action, horizon-2 MDP.

Policies and value functions are tabular over (timestep, state), expressed as
feed-forward networks with no hidden layer on a one-hot (t, s) encoding, so
the library's own update rules can be evaluated on every possible episode
and weighted by its exact probability.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .episodes import Episode, compute_returns
from .nets import PolicyNetwork, ValueNetwork
from .nn_core import GradientSet, softmax

N_STATES = 2
N_ACTIONS = 2
HORIZON = 2
OBS_DIM = HORIZON * N_STATES


@dataclass
class TinyMDP:
    initial: np.ndarray       # (S,)
    transition: np.ndarray    # (S, A, S)
    reward: np.ndarray        # (S, A)

    @classmethod
    def default(cls) -> "TinyMDP":
        return cls(initial=np.array([0.7, 0.3]),
                   transition=np.array([[[0.9, 0.1], [0.2, 0.8]],
                                        [[0.6, 0.4], [0.3, 0.7]]]),
                   reward=np.array([[1.0, 0.5], [2.0, 3.0]]))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "TinyMDP":
        return cls(initial=rng.dirichlet(np.ones(N_STATES)),
                   transition=rng.dirichlet(np.ones(N_STATES), size=(N_STATES, N_ACTIONS)),
                   reward=rng.uniform(-1.0, 3.0, size=(N_STATES, N_ACTIONS)))


def encode(t: int, s: int) -> np.ndarray:
    o = np.zeros(OBS_DIM)
    o[t * N_STATES + s] = 1.0
    return o


def tabular_policy(logits: np.ndarray | None = None) -> PolicyNetwork:
    """Softmax policy with logits[t * S + s, a]."""
    net = PolicyNetwork(OBS_DIM, N_ACTIONS, body="feedforward", hidden=())
    if logits is not None:
        net.params["head/W"] = np.asarray(logits, dtype=np.float64).reshape(OBS_DIM, N_ACTIONS)
    return net


def tabular_value(table: np.ndarray | None = None) -> ValueNetwork:
    net = ValueNetwork(OBS_DIM, body="feedforward", hidden=())
    if table is not None:
        net.params["head/W"] = np.asarray(table, dtype=np.float64).reshape(OBS_DIM, 1)
    return net


def policy_table(policy: PolicyNetwork) -> np.ndarray:
    """(H, S, A) action probabilities."""
    probs = softmax(policy.params["head/W"] + policy.params["head/b"])
    return probs.reshape(HORIZON, N_STATES, N_ACTIONS)


def enumerate_episodes(mdp: TinyMDP, behavior: PolicyNetwork) -> list[tuple[Episode, float]]:
    """Every possible episode with its probability under ``behavior``.

    Stored behavior probabilities are those of ``behavior``.
    """
    pt = policy_table(behavior)
    out = []
    for s0, a0, s1, a1 in itertools.product(range(N_STATES), range(N_ACTIONS), range(N_STATES), range(N_ACTIONS)):
        p = (mdp.initial[s0] * pt[0, s0, a0] * mdp.transition[s0, a0, s1] * pt[1, s1, a1])
        ep = Episode(observations=np.stack([encode(0, s0), encode(1, s1)]),
                     actions=[a0, a1],
                     behavior_probs=[pt[0, s0, a0], pt[1, s1, a1]],
                     rewards=[mdp.reward[s0, a0], mdp.reward[s1, a1]])
        out.append((ep, float(p)))
    return out


def sample_episode(mdp: TinyMDP, behavior: PolicyNetwork, rng: np.random.Generator) -> Episode:
    pt = policy_table(behavior)
    s = int(rng.choice(N_STATES, p=mdp.initial))
    obs, acts, mus, rews = [], [], [], []
    for t in range(HORIZON):
        a = int(rng.choice(N_ACTIONS, p=pt[t, s]))
        obs.append(encode(t, s))
        acts.append(a)
        mus.append(pt[t, s, a])
        rews.append(mdp.reward[s, a])
        s = int(rng.choice(N_STATES, p=mdp.transition[s, a]))
    return Episode(np.stack(obs), acts, mus, rews)


def exact_values(mdp: TinyMDP, policy: PolicyNetwork, gamma: float) -> np.ndarray:
    """V^pi(t, s) by backward induction, as a flat (H * S,) table."""
    pt = policy_table(policy)
    V = np.zeros((HORIZON + 1, N_STATES))
    for t in range(HORIZON - 1, -1, -1):
        q = mdp.reward + gamma * mdp.transition @ V[t + 1]   # (S, A)
        V[t] = np.sum(pt[t] * q, axis=1)
    return V[:HORIZON].ravel()


def expectation(pairs, fn) -> np.ndarray:
    """Sum of p * flat(fn(episode)) over enumerated (episode, p) pairs."""
    total = None
    for ep, p in pairs:
        g = fn(ep)
        v = p * (g.flat() if isinstance(g, GradientSet) else np.asarray(g, dtype=np.float64))
        total = v if total is None else total + v
    return total


def returns_of(ep: Episode, gamma: float) -> np.ndarray:
    return compute_returns(ep, gamma)
