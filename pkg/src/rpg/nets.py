"""Policy and value networks over the nn_core substrate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import Episode
from .nn_core import ConfigurationError, GradientSet, Network, ParameterSet, Trace, softmax


@dataclass
class PolicyTrace:
    trace: Trace
    probs: np.ndarray  # (T, A)


class PolicyNetwork:
    """pi_theta(a | h): body plus a softmax head over ``n_actions``."""

    def __init__(self, obs_dim: int, n_actions: int, body: str = "lstm",
                 hidden=32, activation: str = "relu", params: ParameterSet | None = None):
        self.net = Network(obs_dim, n_actions, body, hidden, activation, params)
        self.n_actions = n_actions

    @property
    def params(self) -> ParameterSet:
        return self.net.params

    @params.setter
    def params(self, value: ParameterSet) -> None:
        self.net.params = value

    @property
    def recurrent(self) -> bool:
        return self.net.recurrent

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        return self.net.init_params(rng)

    def clone(self) -> "PolicyNetwork":
        out = PolicyNetwork.__new__(PolicyNetwork)
        out.net = self.net.clone()
        out.n_actions = self.n_actions
        return out

    def forward(self, observations: np.ndarray, masks: np.ndarray | None = None) -> PolicyTrace:
        trace = self.net.forward_sequence(observations)
        return PolicyTrace(trace, softmax(trace.outputs, masks))

    def distributions(self, observations: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
        return self.forward(observations, masks).probs

    def action_probs(self, episode: Episode, ptrace: PolicyTrace | None = None) -> np.ndarray:
        """pi(a_t | h_t) of the actions actually taken in ``episode``."""
        if ptrace is None:
            ptrace = self.forward(episode.observations, episode.masks)
        return ptrace.probs[np.arange(len(episode)), episode.actions]

    def log_prob_gradients(self, episode: Episode, coeffs: np.ndarray,
                           ptrace: PolicyTrace | None = None) -> GradientSet:
        """sum_t coeffs[t] * grad log pi(a_t | h_t), in a single backward pass."""
        if ptrace is None:
            ptrace = self.forward(episode.observations, episode.masks)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (len(episode),):
            raise ConfigurationError("one coefficient per timestep required")
        d = -ptrace.probs * coeffs[:, None]
        d[np.arange(len(episode)), episode.actions] += coeffs
        return self.net.backward(ptrace.trace, d)

    # -- rollout interface ----------------------------------------------
    def initial_state(self, batch: int = 1):
        return self.net.initial_state(batch)

    def step(self, state, obs: np.ndarray, mask: np.ndarray | None = None, fused=None):
        """Advance a row-batch of histories by one observation; returns (state, probs)."""
        state, logits = self.net.step(state, obs, fused)
        return state, softmax(logits, mask)


class ValueNetwork:
    """V_hat(h, w): same body options as the policy, single linear output."""

    def __init__(self, obs_dim: int, body: str = "lstm", hidden=32,
                 activation: str = "relu", params: ParameterSet | None = None):
        self.net = Network(obs_dim, 1, body, hidden, activation, params)

    @property
    def params(self) -> ParameterSet:
        return self.net.params

    @params.setter
    def params(self, value: ParameterSet) -> None:
        self.net.params = value

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        return self.net.init_params(rng)

    def clone(self) -> "ValueNetwork":
        out = ValueNetwork.__new__(ValueNetwork)
        out.net = self.net.clone()
        return out

    def forward(self, observations: np.ndarray) -> Trace:
        return self.net.forward_sequence(observations)

    def values(self, observations: np.ndarray) -> np.ndarray:
        return self.forward(observations).outputs[:, 0]

    def weighted_gradients(self, trace: Trace, coeffs: np.ndarray) -> GradientSet:
        """sum_t coeffs[t] * grad V_hat(h_t)."""
        return self.net.backward(trace, np.asarray(coeffs, dtype=np.float64)[:, None])


def policy_forward(net: PolicyNetwork, observations, masks=None) -> np.ndarray:
    return net.distributions(np.asarray(observations, dtype=np.float64), masks)


def value_forward(net: ValueNetwork, observations) -> np.ndarray:
    return net.values(np.asarray(observations, dtype=np.float64))


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Draw an action index; also return its probability (the behavior prob)."""
    p = np.asarray(probs, dtype=np.float64)
    a = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    a = min(a, len(p) - 1)
    while p[a] == 0.0:  # guard against landing on a zero-width bin at the top end
        a -= 1
    return a, float(p[a])


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of :func:`sample_action` for (B, A) probability batches."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))[:, None] * cdf[:, -1:]
    a = np.minimum((cdf <= u).sum(axis=1), probs.shape[1] - 1)
    # Zero-probability entries have zero-width bins and are never selected
    # except through the top-end clamp; walk back to the last positive one.
    mu = probs[np.arange(len(a)), a]
    while np.any(mu == 0.0):
        bad = mu == 0.0
        a[bad] -= 1
        mu = probs[np.arange(len(a)), a]
    return a, mu
