"""A small fully observable landing task.

Point-mass lander with a main engine (up) and two side engines, integrated
with semi-implicit Euler: velocity first, then position.  Episodes end on
touchdown (+100 if slow and near the pad, -100 otherwise) or at the step cap
(-100).  Firing costs reward and fuel; firing with an empty tank does nothing.

:class:`LanderBatch` steps many independent landers at once (used for
rollouts); :class:`LanderEnv` is the single-episode interface.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigFileError, coerce, load_kv

NOOP, MAIN, LEFT, RIGHT = range(4)
ACTIONS = ("noop", "main", "left", "right")
OBS_DIM = 5
N_ACTIONS = 4


class LanderUsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class LanderConfig:
    gravity: float = 0.05
    main_thrust: float = 0.12
    side_thrust: float = 0.04
    main_cost: float = 0.3
    side_cost: float = 0.03
    main_fuel: float = 1.0
    side_fuel: float = 0.5
    safe_speed: float = 0.5
    safe_offset: float = 0.5
    step_cap: int = 500
    initial_altitude: float = 10.0
    initial_velocity: float = 0.0
    initial_fuel: float = 60.0
    initial_offset_range: float = 2.0
    ceiling: float = 20.0
    lateral_limit: float = 4.0
    landing_reward: float = 100.0
    crash_reward: float = -100.0

    def __post_init__(self):
        for f in fields(self):
            if f.name != "crash_reward" and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    @property
    def min_return(self) -> float:
        return self.crash_reward - max(self.main_cost, self.side_cost) * self.step_cap

    @property
    def max_return(self) -> float:
        return self.landing_reward


def load_lander_config(path: str | Path) -> LanderConfig:
    defaults = LanderConfig()
    values = {}
    for key, value in load_kv(path).items():
        if not hasattr(defaults, key):
            raise ConfigFileError(f"unknown lander config key {key!r}")
        values[key] = coerce(value, getattr(defaults, key), key)
    return LanderConfig(**values)


@dataclass
class LanderState:
    altitude: np.ndarray
    velocity: np.ndarray
    fuel: np.ndarray
    offset: np.ndarray
    lateral_velocity: np.ndarray


class LanderBatch:
    obs_dim = OBS_DIM
    n_actions = N_ACTIONS

    def __init__(self, n: int, config: LanderConfig | None = None):
        self.n = n
        self.cfg = config or LanderConfig()
        self.done = np.ones(n, dtype=bool)
        self.landed = np.zeros(n, dtype=bool)
        self.steps = np.zeros(n, dtype=np.int64)
        self.state: LanderState | None = None

    def observe(self) -> np.ndarray:
        s, c = self.state, self.cfg
        return np.stack([s.altitude / c.initial_altitude,
                         s.velocity,
                         s.fuel / max(c.initial_fuel, 1e-12),
                         s.offset / max(c.initial_offset_range, 1e-12),
                         s.lateral_velocity], axis=1)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        c, n = self.cfg, self.n
        self.state = LanderState(
            altitude=np.full(n, c.initial_altitude),
            velocity=np.full(n, c.initial_velocity),
            fuel=np.full(n, c.initial_fuel),
            offset=rng.uniform(-c.initial_offset_range, c.initial_offset_range, n),
            lateral_velocity=np.zeros(n))
        self.done = np.zeros(n, dtype=bool)
        self.landed = np.zeros(n, dtype=bool)
        self.steps = np.zeros(n, dtype=np.int64)
        return self.observe()

    def step(self, actions: np.ndarray, rng: np.random.Generator | None = None):
        """Advance every lander that is still flying; finished ones are left untouched."""
        actions = np.asarray(actions, dtype=np.int64)
        c, s = self.cfg, self.state
        active = ~self.done
        main = active & (actions == MAIN) & (s.fuel >= c.main_fuel)
        left = active & (actions == LEFT) & (s.fuel >= c.side_fuel)
        right = active & (actions == RIGHT) & (s.fuel >= c.side_fuel)
        side = left | right

        s.fuel = s.fuel - np.where(main, c.main_fuel, 0.0) - np.where(side, c.side_fuel, 0.0)
        s.velocity = np.where(active, s.velocity + np.where(main, c.main_thrust, 0.0) - c.gravity, s.velocity)
        s.altitude = np.where(active, s.altitude + s.velocity, s.altitude)
        s.lateral_velocity = s.lateral_velocity + np.where(right, c.side_thrust, 0.0) - np.where(left, c.side_thrust, 0.0)
        s.offset = np.where(active, s.offset + s.lateral_velocity, s.offset)

        reward = -np.where(main, c.main_cost, 0.0) - np.where(side, c.side_cost, 0.0)
        self.steps = self.steps + active
        touched = active & (s.altitude <= 0.0)
        safe = touched & (np.abs(s.velocity) <= c.safe_speed) & (np.abs(s.offset) <= c.safe_offset)
        away = active & ~touched & ((s.altitude > c.ceiling) | (np.abs(s.offset) > c.lateral_limit))
        timeout = active & ~touched & ((self.steps >= c.step_cap) | away)
        reward = reward + np.where(safe, c.landing_reward, 0.0) \
            + np.where((touched & ~safe) | timeout, c.crash_reward, 0.0)
        s.altitude = np.where(touched, 0.0, s.altitude)
        newly_done = touched | timeout
        self.landed = self.landed | safe
        self.done = self.done | newly_done
        return self.observe(), np.where(active, reward, 0.0), newly_done

    def action_mask(self) -> None:
        return None


class LanderEnv:
    """Single lander: ``reset(rng)`` / ``step(action, rng)``."""

    obs_dim = OBS_DIM
    n_actions = N_ACTIONS

    def __init__(self, config: LanderConfig | None = None):
        self.batch = LanderBatch(1, config)

    @property
    def cfg(self) -> LanderConfig:
        return self.batch.cfg

    @property
    def done(self) -> bool:
        return bool(self.batch.done[0])

    @property
    def state(self) -> dict[str, float]:
        s = self.batch.state
        return {f.name: float(getattr(s, f.name)[0]) for f in fields(s)}

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.batch.reset(rng)[0]

    def step(self, action: int, rng: np.random.Generator | None = None):
        if self.done:
            raise LanderUsageError("step() called on a finished episode; call reset()")
        obs, r, d = self.batch.step(np.array([action]), rng)
        return obs[0], float(r[0]), bool(d[0])

    def action_mask(self) -> None:
        return None


def reset(env: LanderEnv, rng: np.random.Generator) -> np.ndarray:
    return env.reset(rng)


def step(env: LanderEnv, action: int, rng: np.random.Generator | None = None):
    return env.step(action, rng)


def bang_bang_controller(obs: np.ndarray, config: LanderConfig | None = None) -> np.ndarray:
    """Reference controller: brake when falling faster than 0.4, else steer toward the pad.

    Works on a single observation or a (B, 5) batch.
    """
    c = config or LanderConfig()
    o = np.atleast_2d(obs)
    velocity = o[:, 1]
    offset = o[:, 3] * c.initial_offset_range
    lat_v = o[:, 4]
    target_lat_v = np.clip(-0.1 * offset, -0.15, 0.15)
    a = np.full(len(o), NOOP)
    a = np.where(lat_v > target_lat_v + 0.02, LEFT, a)
    a = np.where(lat_v < target_lat_v - 0.02, RIGHT, a)
    a = np.where(velocity < -0.4, MAIN, a)
    return a if np.ndim(obs) == 2 else int(a[0])


@dataclass
class HoverReport:
    landing_rate: float
    mean_return: float
    mean_length: float
    returns: np.ndarray


def optimal_hover_check(policy, episodes: int = 100, config: LanderConfig | None = None,
                        rng: np.random.Generator | None = None) -> HoverReport:
    """Roll out ``policy`` (a batch observation -> action array callable) and summarize."""
    rng = rng if rng is not None else np.random.default_rng(0)
    env = LanderBatch(episodes, config)
    obs = env.reset(rng)
    returns = np.zeros(episodes)
    while not env.done.all():
        obs, r, _ = env.step(np.asarray(policy(obs)), rng)
        returns += r
    return HoverReport(float(env.landed.mean()), float(returns.mean()), float(env.steps.mean()), returns)
