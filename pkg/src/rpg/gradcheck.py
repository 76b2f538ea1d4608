"""Central finite-difference checks of the hand-written backward passes."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .episodes import Episode
from .nets import PolicyNetwork, ValueNetwork
from .nn_core import GradientSet, Network, ParameterSet

FD_STEP = 1e-5
# Entries whose analytic and numeric magnitudes are both below REL_FLOOR * max(1, |f|)
# are compared absolutely. At FD_STEP the central difference carries roughly
# 1e-11 * |f| of rounding noise, so smaller entries cannot be resolved relatively.
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f: Callable[[], float], params: ParameterSet, coords: np.ndarray,
                     step: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f`` with respect to the given flat coordinates."""
    x0 = params.flat()
    out = np.empty(len(coords))
    try:
        for j, k in enumerate(coords):
            x = x0.copy()
            x[k] = x0[k] + step
            params.set_flat(x)
            up = f()
            x[k] = x0[k] - step
            params.set_flat(x)
            down = f()
            out[j] = (up - down) / (2.0 * step)
    finally:
        params.set_flat(x0)
    return out


def directional_check(f: Callable[[], float], grads: GradientSet, params: ParameterSet,
                      direction: np.ndarray, step: float = FD_STEP, floor: float = REL_FLOOR) -> float:
    """Relative error of grad . v against a central difference along v."""
    x0 = params.flat()
    try:
        params.set_flat(x0 + step * direction)
        up = f()
        params.set_flat(x0 - step * direction)
        down = f()
    finally:
        params.set_flat(x0)
    numeric = (up - down) / (2.0 * step)
    return float(relative_error(grads.flat() @ direction, numeric, floor))


def check(f: Callable[[], float], grads: GradientSet, params: ParameterSet, rng: np.random.Generator,
          n_coords: int | None = 24, n_dirs: int = 2, step: float = FD_STEP) -> float:
    """Max relative error over sampled coordinates and random directions.

    ``n_coords=None`` checks every coordinate.
    """
    size = params.size
    floor = REL_FLOOR * max(1.0, abs(f()))
    coords = np.arange(size) if n_coords is None or n_coords >= size else rng.choice(size, n_coords, replace=False)
    worst = float(np.max(relative_error(grads.flat()[coords], numeric_gradient(f, params, coords, step), floor)))
    for _ in range(n_dirs):
        v = rng.normal(size=size)
        worst = max(worst, directional_check(f, grads, params, v / np.linalg.norm(v), step, floor))
    return worst


def check_network(net: Network, obs: np.ndarray, upstream: np.ndarray, rng: np.random.Generator, **kw) -> float:
    """Checks backward() for the scalar sum(upstream * outputs)."""
    grads = net.backward(net.forward_sequence(obs), upstream)
    return check(lambda: float(np.sum(upstream * net.forward_sequence(obs).outputs)), grads, net.params, rng, **kw)


def check_log_prob(policy: PolicyNetwork, episode: Episode, coeffs: np.ndarray,
                   rng: np.random.Generator, **kw) -> float:
    """Checks sum_t c_t grad log pi(a_t|h_t)."""
    grads = policy.log_prob_gradients(episode, coeffs)

    def f():
        return float(np.sum(coeffs * np.log(policy.action_probs(episode))))
    return check(f, grads, policy.params, rng, **kw)


def check_value(value: ValueNetwork, episode: Episode, coeffs: np.ndarray,
                rng: np.random.Generator, **kw) -> float:
    """Checks sum_t c_t grad V_hat(h_t)."""
    grads = value.weighted_gradients(value.forward(episode.observations), coeffs)
    return check(lambda: float(np.sum(coeffs * value.values(episode.observations))), grads, value.params, rng, **kw)


def random_episode(obs_dim: int, n_actions: int, length: int, rng: np.random.Generator,
                   masked: bool = False) -> Episode:
    """Synthetic episode with Gaussian observations and arbitrary actions."""
    masks = None
    actions = rng.integers(n_actions, size=length)
    if masked:
        masks = rng.random((length, n_actions)) < 0.7
        masks[np.arange(length), actions] = True
    return Episode(rng.normal(size=(length, obs_dim)), actions, rng.uniform(0.05, 1.0, length),
                   rng.normal(size=length), masks)


def randomize(params: ParameterSet, rng: np.random.Generator, scale: float = 0.3) -> None:
    params.set_flat(rng.normal(scale=scale, size=params.size))
