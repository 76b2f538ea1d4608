"""Policy-gradient update rules and the per-batch training step.

All update functions return *ascent* directions (``delta``) for the policy and
the value-regression direction for the value net; the optimizer is handed
``-delta`` so that its descent step moves along ``delta``.

Methods:

* ``B1``: REINFORCE, no baseline.
* ``B2``: REINFORCE with an importance-weighted average-return baseline over
  a window of recent episodes.
* ``M1``: per-timestep value-network baseline, value net regressed on returns.
* ``M2``: M1 plus importance-corrected replay steps for the value net.
* ``M3``: M2 plus importance-corrected TD replay steps for the policy net.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .episodes import (ClampStats, Episode, ReplayBuffer, clamp_product, compute_returns,
                       episode_weight, importance_ratio)
from .nets import PolicyNetwork, ValueNetwork
from .nn_core import ConfigurationError, GradientSet, OptimizerState, optimizer_step

log = logging.getLogger(__name__)

METHODS = ("B1", "B2", "M1", "M2", "M3")


@dataclass
class MethodConfig:
    method: str = "M3"
    gamma: float = 0.95
    batch_size: int = 1
    value_replay_steps: int = 5
    policy_replay_steps: int = 3
    baseline_window: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.value_replay_steps < 0 or self.policy_replay_steps < 0:
            raise ConfigurationError("replay step counts must be >= 0")
        if self.baseline_window < 1:
            raise ConfigurationError("baseline_window must be >= 1")

    @property
    def uses_value(self) -> bool:
        return self.method in ("M1", "M2", "M3")


@dataclass
class UpdateReport:
    policy_grad_norm: float = 0.0
    value_grad_norm: float = 0.0
    baseline: float | None = None
    clamp_events: int = 0
    policy_steps: int = 0
    value_steps: int = 0
    wall_time: float = 0.0


@dataclass
class TrainState:
    policy: PolicyNetwork
    policy_opt: OptimizerState
    buffer: ReplayBuffer
    rng: np.random.Generator
    value: ValueNetwork | None = None
    value_opt: OptimizerState | None = None
    clamp: ClampStats = field(default_factory=ClampStats)


def _accumulate(total: GradientSet | None, g: GradientSet) -> GradientSet:
    return g if total is None else total.iadd_scaled(g)


# ------------------------------------------------------------ update rules

def update_b1(policy: PolicyNetwork, episodes: list[Episode], gamma: float) -> GradientSet:
    """sum over episodes and t of grad log pi(a_t|h_t) * G_t."""
    total = None
    for ep in episodes:
        total = _accumulate(total, policy.log_prob_gradients(ep, compute_returns(ep, gamma)))
    return total


def average_return_baseline(policy: PolicyNetwork, window: list[Episode], gamma: float,
                            stats: ClampStats | None = None) -> float:
    """Importance-weighted mean of G_0 over ``window`` with the current policy as target."""
    num = den = 0.0
    for ep in window:
        w = episode_weight(ep, policy.action_probs(ep), stats)
        num += w * compute_returns(ep, gamma)[0]
        den += w
    if den == 0.0:
        log.warning("all baseline weights are zero; falling back to b = 0")
        return 0.0
    return num / den


def update_b2(policy: PolicyNetwork, episodes: list[Episode], buffer: ReplayBuffer,
              gamma: float, window: int, stats: ClampStats | None = None) -> tuple[GradientSet, float]:
    if len(buffer) == 0:
        raise ValueError("baseline window is empty")
    b = average_return_baseline(policy, buffer.recent(window), gamma, stats)
    total = None
    for ep in episodes:
        total = _accumulate(total, policy.log_prob_gradients(ep, compute_returns(ep, gamma) - b))
    return total, b


def update_m1(policy: PolicyNetwork, value: ValueNetwork, episodes: list[Episode],
              gamma: float) -> tuple[GradientSet, GradientSet]:
    """Value-baselined policy direction and value regression direction, both at the current w."""
    d_theta = d_w = None
    for ep in episodes:
        vtrace = value.forward(ep.observations)
        adv = compute_returns(ep, gamma) - vtrace.outputs[:, 0]
        d_theta = _accumulate(d_theta, policy.log_prob_gradients(ep, adv))
        d_w = _accumulate(d_w, value.weighted_gradients(vtrace, adv))
    return d_theta, d_w


def update_value_offpolicy(value: ValueNetwork, episode: Episode, policy: PolicyNetwork,
                           gamma: float, stats: ClampStats | None = None) -> GradientSet:
    """Importance-corrected value regression on an episode from an earlier policy.

    coefficient_t = prod_{i<t} rho_i * (prod_{j>=t} rho_j * G_t - V_hat(h_t))
                  = prod_all rho * G_t - prod_{i<t} rho_i * V_hat(h_t)

    whose expectation under the behavior policy equals the on-policy
    coefficient G_t - V_hat(h_t) under the current policy.
    """
    rho = importance_ratio(policy.action_probs(episode), episode.behavior_probs)
    prefix = np.concatenate([[1.0], np.cumprod(rho)[:-1]])
    prefix = clamp_product(prefix, stats)
    full = clamp_product(float(np.prod(rho)), stats)
    vtrace = value.forward(episode.observations)
    coeffs = full * compute_returns(episode, gamma) - prefix * vtrace.outputs[:, 0]
    return value.weighted_gradients(vtrace, coeffs)


def update_policy_offpolicy(policy: PolicyNetwork, value: ValueNetwork, episode: Episode,
                            gamma: float, stats: ClampStats | None = None) -> GradientSet:
    """sum_t rho_t grad log pi(a_t|h_t) (r_t + gamma V_hat(h_{t+1}) - V_hat(h_t)), V_hat(h_T) = 0."""
    ptrace = policy.forward(episode.observations, episode.masks)
    rho = importance_ratio(policy.action_probs(episode, ptrace), episode.behavior_probs)
    rho = clamp_product(rho, stats)
    v = value.values(episode.observations)
    v_next = np.append(v[1:], 0.0)
    td = episode.rewards + gamma * v_next - v
    return policy.log_prob_gradients(episode, rho * td, ptrace)


# ------------------------------------------------------------ training step

def _ascend(params, delta: GradientSet, opt: OptimizerState) -> None:
    optimizer_step(params, delta.scaled(-1.0), opt)


def train_step(cfg: MethodConfig, state: TrainState, new_episodes: list[Episode]) -> UpdateReport:
    """Store the new on-policy batch, then apply the configured method's updates."""
    if len(new_episodes) != cfg.batch_size:
        raise ConfigurationError(f"expected {cfg.batch_size} new episodes, got {len(new_episodes)}")
    if cfg.uses_value and state.value is None:
        raise ConfigurationError(f"method {cfg.method} needs a value network")
    t0 = time.perf_counter()
    clamp_before = state.clamp.events
    rep = UpdateReport()
    policy, value = state.policy, state.value
    state.buffer.extend(new_episodes)
    m = cfg.method

    if m == "B1":
        d_theta = update_b1(policy, new_episodes, cfg.gamma)
        _ascend(policy.params, d_theta, state.policy_opt)
        rep.policy_grad_norm, rep.policy_steps = d_theta.norm(), 1
    elif m == "B2":
        d_theta, rep.baseline = update_b2(policy, new_episodes, state.buffer, cfg.gamma,
                                          cfg.baseline_window, state.clamp)
        _ascend(policy.params, d_theta, state.policy_opt)
        rep.policy_grad_norm, rep.policy_steps = d_theta.norm(), 1
    else:
        # Both on-policy directions use the pre-update value weights.
        d_theta, d_w = update_m1(policy, value, new_episodes, cfg.gamma)
        rep.policy_grad_norm, rep.value_grad_norm = d_theta.norm(), d_w.norm()
        if m == "M1" or m == "M2":
            _ascend(policy.params, d_theta, state.policy_opt)
            _ascend(value.params, d_w, state.value_opt)
            rep.policy_steps = rep.value_steps = 1
        if m == "M2" or m == "M3":
            if m == "M3":
                _ascend(value.params, d_w, state.value_opt)
                rep.value_steps = 1
            for _ in range(cfg.value_replay_steps):
                total = None
                for ep in state.buffer.sample(cfg.batch_size, state.rng):
                    total = _accumulate(total, update_value_offpolicy(value, ep, policy, cfg.gamma, state.clamp))
                _ascend(value.params, total, state.value_opt)
                rep.value_steps += 1
        if m == "M3":
            _ascend(policy.params, d_theta, state.policy_opt)
            rep.policy_steps = 1
            for _ in range(cfg.policy_replay_steps):
                total = None
                for ep in state.buffer.sample(cfg.batch_size, state.rng):
                    total = _accumulate(total, update_policy_offpolicy(policy, value, ep, cfg.gamma, state.clamp))
                _ascend(policy.params, total, state.policy_opt)
                rep.policy_steps += 1

    rep.clamp_events = state.clamp.events - clamp_before
    rep.wall_time = time.perf_counter() - t0
    return rep
