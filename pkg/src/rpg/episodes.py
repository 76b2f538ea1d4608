"""Trajectories, discounted returns, importance ratios and the replay window."""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

RATIO_PRODUCT_MIN = 1e-6
RATIO_PRODUCT_MAX = 1e6

_episode_ids = itertools.count()


class InvalidEpisodeError(ValueError):
    pass


@dataclass(eq=False)
class Episode:
    """One finished trajectory.

    ``rewards[t]`` is the reward received after taking ``actions[t]``.
    ``masks`` (optional, shape (T, A)) records which actions were available
    at each step; target probabilities must be computed under the same masks.
    """

    observations: np.ndarray
    actions: np.ndarray
    behavior_probs: np.ndarray
    rewards: np.ndarray
    masks: np.ndarray | None = None
    terminal: bool = True
    id: int = field(default_factory=lambda: next(_episode_ids))

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.behavior_probs = np.asarray(self.behavior_probs, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
        T = len(self.actions)
        if T < 1:
            raise InvalidEpisodeError("episode must have at least one step")
        if not (len(self.observations) == len(self.behavior_probs) == len(self.rewards) == T):
            raise InvalidEpisodeError("per-step arrays have different lengths")
        if self.masks is not None and len(self.masks) != T:
            raise InvalidEpisodeError("mask array length differs from episode length")
        if not np.all((self.behavior_probs > 0) & (self.behavior_probs <= 1)):
            raise InvalidEpisodeError("behavior probabilities must lie in (0, 1]")
        if not np.isfinite(self.rewards).all():
            raise InvalidEpisodeError("non-finite reward")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def compute_returns(rewards: np.ndarray | Episode, gamma: float) -> np.ndarray:
    """Discounted returns G_t = r_{t+1} + gamma * G_{t+1}, by backward recursion."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {gamma}")
    r = rewards.rewards if isinstance(rewards, Episode) else np.asarray(rewards, dtype=np.float64)
    G = np.empty(len(r))
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        G[t] = acc
    return G


def importance_ratio(target_prob, behavior_prob):
    """pi(a|h) / mu(a|h); scalar or elementwise."""
    mu = np.asarray(behavior_prob, dtype=np.float64)
    if np.any(mu <= 0):
        raise InvalidEpisodeError("behavior probability of a taken action is zero")
    rho = np.asarray(target_prob, dtype=np.float64) / mu
    return float(rho) if rho.ndim == 0 else rho


@dataclass
class ClampStats:
    """Counts how often an importance-ratio product hit the clamp."""

    events: int = 0
    products: int = 0

    @property
    def rate(self) -> float:
        return self.events / self.products if self.products else 0.0


def clamp_product(value: np.ndarray | float, stats: ClampStats | None = None):
    """Clamp positive ratio products to [1e-6, 1e6]; exact zeros pass through."""
    v = np.asarray(value, dtype=np.float64)
    clipped = np.where(v > 0, np.clip(v, RATIO_PRODUCT_MIN, RATIO_PRODUCT_MAX), 0.0)
    if stats is not None:
        stats.products += v.size
        stats.events += int(np.count_nonzero(clipped != v))
    return float(clipped) if clipped.ndim == 0 else clipped


def episode_weight(episode: Episode, target_probs: np.ndarray, stats: ClampStats | None = None) -> float:
    """w(d): product of per-step ratios of the current policy to the stored behavior policy.

    ``target_probs[t]`` is pi(a_t | h_t) for the taken action.
    """
    rho = importance_ratio(target_probs, episode.behavior_probs)
    return clamp_product(float(np.prod(rho)), stats)


class ReplayBuffer:
    """FIFO window of the most recent episodes."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._episodes: deque[Episode] = deque(maxlen=self.capacity)

    def store(self, episode: Episode) -> None:
        self._episodes.append(episode)

    def extend(self, episodes: Iterable[Episode]) -> None:
        for e in episodes:
            self.store(e)

    def sample(self, k: int, rng: np.random.Generator) -> list[Episode]:
        """Uniform sampling with replacement."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._episodes:
            raise IndexError("cannot sample from an empty replay buffer")
        idx = rng.integers(len(self._episodes), size=k)
        return [self._episodes[i] for i in idx]

    def recent(self, n: int) -> list[Episode]:
        n = min(n, len(self._episodes))
        return list(itertools.islice(self._episodes, len(self._episodes) - n, None))

    def __len__(self) -> int:
        return len(self._episodes)

    def __iter__(self):
        return iter(self._episodes)


def store_episode(buffer: ReplayBuffer, episode: Episode) -> ReplayBuffer:
    buffer.store(episode)
    return buffer


def sample_episodes(buffer: ReplayBuffer, k: int, rng: np.random.Generator) -> list[Episode]:
    return buffer.sample(k, rng)


def write_episode_log(episodes: Sequence[Episode], fh: TextIO) -> None:
    """Tab-separated debug log: id, T, total reward, then a_t mu_t r_t per step."""
    for ep in episodes:
        fields = [str(ep.id), str(len(ep)), repr(ep.total_reward)]
        for a, mu, r in zip(ep.actions, ep.behavior_probs, ep.rewards):
            fields += [str(int(a)), repr(float(mu)), repr(float(r))]
        fh.write("\t".join(fields) + "\n")
