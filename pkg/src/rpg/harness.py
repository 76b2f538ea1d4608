"""Multi-seed training runs, periodic frozen-policy evaluation and curve aggregation."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import ConfigFileError, coerce, load_kv
from .env_dialog import DialogEnv, load_dialog_config
from .env_lander import LanderBatch, LanderConfig, load_lander_config
from .episodes import ClampStats, Episode, ReplayBuffer
from .learners import METHODS, MethodConfig, TrainState, train_step
from .nets import PolicyNetwork, ValueNetwork, sample_actions
from .nn_core import ConfigurationError, NumericError, OptimizerState, lstm_fused

log = logging.getLogger(__name__)

TASKS = ("dialog", "lander")

TASK_DEFAULTS = {
    "dialog": dict(episodes=2000, eval_interval=10, eval_episodes=300, gamma=0.95, batch_size=1,
                   buffer_capacity=1000, body="lstm", hidden=(32,), activation="tanh",
                   optimizer="adadelta", lr=1.0, rho=0.95, eps=1e-6),
    "lander": dict(episodes=3000, eval_interval=100, eval_episodes=100, gamma=0.99, batch_size=10,
                   buffer_capacity=200, body="feedforward", hidden=(16, 16), activation="relu",
                   optimizer="adam", lr=0.005, rho=0.95, eps=1e-8),
}


@dataclass
class ExperimentConfig:
    task: str = "dialog"
    method: str = "M3"
    runs: int = 20
    episodes: int = 2000
    eval_interval: int = 10
    eval_episodes: int = 300
    seed: int = 0
    gamma: float = 0.95
    batch_size: int = 1
    value_replay_steps: int = 5
    policy_replay_steps: int = 3
    baseline_window: int = 10
    buffer_capacity: int = 1000
    body: str = "lstm"
    hidden: tuple = (32,)
    activation: str = "tanh"
    optimizer: str = "adadelta"
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6
    env_config: str = ""

    @classmethod
    def for_task(cls, task: str, **overrides) -> "ExperimentConfig":
        if task not in TASKS:
            raise ConfigurationError(f"unknown task {task!r}; expected one of {TASKS}")
        values = dict(TASK_DEFAULTS[task], task=task)
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if self.eval_interval < self.batch_size or self.eval_interval % self.batch_size:
            raise ConfigurationError("eval_interval must be a positive multiple of batch_size")
        if self.episodes % self.batch_size:
            raise ConfigurationError("episodes must be a multiple of batch_size")
        if self.eval_episodes < 1:
            raise ConfigurationError("eval_episodes must be >= 1")
        if self.optimizer not in ("adadelta", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        self.method_config()

    def method_config(self) -> MethodConfig:
        return MethodConfig(self.method, self.gamma, self.batch_size, self.value_replay_steps,
                            self.policy_replay_steps, self.baseline_window)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        cfg = replace(self, **kw)
        cfg.validate()
        return cfg


def load_experiment_config(path: str | Path, base: ExperimentConfig) -> ExperimentConfig:
    """Apply a flat ``key = value`` file on top of ``base``; unknown keys are errors."""
    names = {f.name for f in fields(ExperimentConfig)}
    kw = {}
    for key, value in load_kv(path).items():
        if key not in names:
            raise ConfigFileError(f"unknown config key {key!r}")
        kw[key] = coerce(value, getattr(base, key), key)
    return base.with_overrides(**kw)


# -------------------------------------------------------------- environments

class DialogBatch:
    """Several independent dialogs stepped in lockstep."""

    obs_dim = DialogEnv.obs_dim
    n_actions = DialogEnv.n_actions

    def __init__(self, n: int, directory=None, user=None):
        self.envs = [DialogEnv(directory, user) for _ in range(n)]
        self.n = n
        self.done = np.ones(n, dtype=bool)

    def reset(self, rng) -> np.ndarray:
        self.done = np.zeros(self.n, dtype=bool)
        return np.stack([e.reset(rng) for e in self.envs])

    def action_mask(self) -> np.ndarray:
        return np.stack([e.action_mask() for e in self.envs])

    def step(self, actions, rng):
        obs = np.zeros((self.n, self.envs[0].obs_dim))
        rewards = np.zeros(self.n)
        finished = np.zeros(self.n, dtype=bool)
        for i, e in enumerate(self.envs):
            if self.done[i]:
                continue
            obs[i], rewards[i], finished[i] = e.step(int(actions[i]), rng)
        self.done |= finished
        return obs, rewards, finished


def make_env_factory(cfg: ExperimentConfig):
    """Returns ``make(n)`` giving a batch of ``n`` environments; batches are reused per size."""
    if cfg.task == "dialog":
        directory, user = load_dialog_config(cfg.env_config) if cfg.env_config else (None, None)
        build = lambda n: DialogBatch(n, directory, user)  # noqa: E731
    else:
        lander_cfg = load_lander_config(cfg.env_config) if cfg.env_config else LanderConfig()
        build = lambda n: LanderBatch(n, lander_cfg)  # noqa: E731
    cache: dict[int, object] = {}

    def make(n: int):
        if n not in cache:
            cache[n] = build(n)
        return cache[n]
    return make


def rollout(policy: PolicyNetwork, venv, env_rng: np.random.Generator,
            act_rng: np.random.Generator, record: bool = True):
    """Run every environment in ``venv`` to termination under ``policy``.

    Returns a list of :class:`Episode` when ``record`` is true, otherwise the
    array of undiscounted returns.
    """
    obs = venv.reset(env_rng)
    n = len(obs)
    state = policy.initial_state(n)
    fused = lstm_fused(policy.params) if policy.recurrent else None
    returns = np.zeros(n)
    active = np.ones(n, dtype=bool)
    if record:
        o_log, a_log, mu_log, r_log, m_log = ([[] for _ in range(n)] for _ in range(5))
    while active.any():
        mask = venv.action_mask()
        state, probs = policy.step(state, obs, mask, fused)
        actions, mu = sample_actions(probs, act_rng)
        next_obs, rewards, finished = venv.step(actions, env_rng)
        returns += np.where(active, rewards, 0.0)
        if record:
            for i in np.flatnonzero(active):
                o_log[i].append(obs[i])
                a_log[i].append(actions[i])
                mu_log[i].append(mu[i])
                r_log[i].append(rewards[i])
                if mask is not None:
                    m_log[i].append(mask[i])
        active &= ~finished
        obs = next_obs
    if not record:
        return returns
    return [Episode(np.array(o_log[i]), a_log[i], mu_log[i], r_log[i],
                    np.array(m_log[i]) if m_log[i] else None) for i in range(n)]


# ----------------------------------------------------------------- training

@dataclass
class RunResult:
    seed: int
    episodes: list[int]
    metrics: list[float]
    diverged: bool = False
    clamp_events: int = 0
    clamp_products: int = 0
    policy_params: object = None


def build_networks(cfg: ExperimentConfig, obs_dim: int, n_actions: int, rng: np.random.Generator):
    hidden = cfg.hidden[0] if cfg.body == "lstm" else cfg.hidden
    policy = PolicyNetwork(obs_dim, n_actions, cfg.body, hidden, cfg.activation)
    policy.init_params(rng)
    value = None
    if cfg.method_config().uses_value:
        value = ValueNetwork(obs_dim, cfg.body, hidden, cfg.activation)
        value.init_params(rng)
    return policy, value


def make_optimizer(cfg: ExperimentConfig, params) -> OptimizerState:
    if cfg.optimizer == "adadelta":
        return OptimizerState.adadelta(params, cfg.lr, cfg.rho, cfg.eps)
    return OptimizerState.adam(params, cfg.lr, eps=cfg.eps)


def evaluation_rng(seed: int, point: int) -> np.random.Generator:
    # Keyed on (seed, point) only, so evaluation never touches training streams.
    return np.random.default_rng([seed, 0x5EED, point])


def evaluate(policy: PolicyNetwork, make_env, episodes: int, rng: np.random.Generator) -> float:
    frozen = policy.clone()
    returns = rollout(frozen, make_env(episodes), rng, rng, record=False)
    return float(np.mean(returns))


def run_training(cfg: ExperimentConfig, seed: int) -> RunResult:
    """One independent training run; evaluates the frozen policy every ``eval_interval`` episodes."""
    cfg.validate()
    make_env = make_env_factory(cfg)
    init_ss, env_ss, act_ss, replay_ss = np.random.SeedSequence(seed).spawn(4)
    env_rng, act_rng = np.random.default_rng(env_ss), np.random.default_rng(act_ss)
    probe = make_env(1)
    policy, value = build_networks(cfg, probe.obs_dim, probe.n_actions, np.random.default_rng(init_ss))
    mcfg = cfg.method_config()
    state = TrainState(policy, make_optimizer(cfg, policy.params), ReplayBuffer(cfg.buffer_capacity),
                       np.random.default_rng(replay_ss), value,
                       make_optimizer(cfg, value.params) if value is not None else None, ClampStats())
    result = RunResult(seed, [], [])

    def record(consumed: int) -> None:
        k = len(result.episodes)
        result.episodes.append(consumed)
        result.metrics.append(evaluate(policy, make_env, cfg.eval_episodes, evaluation_rng(seed, k)))

    record(0)
    consumed = 0
    train_env = make_env(cfg.batch_size)
    while consumed < cfg.episodes:
        batch = rollout(policy, train_env, env_rng, act_rng)
        try:
            train_step(mcfg, state, batch)
        except NumericError as exc:
            log.warning("run seed=%d diverged after %d episodes: %s", seed, consumed, exc)
            result.diverged = True
            break
        consumed += cfg.batch_size
        if consumed % cfg.eval_interval == 0:
            record(consumed)
    result.clamp_events = state.clamp.events
    result.clamp_products = state.clamp.products
    result.policy_params = policy.params
    return result


# -------------------------------------------------------------- aggregation

@dataclass
class LearningCurve:
    episodes: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    n_runs: int

    def rows(self):
        for e, m, v in zip(self.episodes, self.mean, self.variance):
            yield int(e), float(m), float(v), self.n_runs


def aggregate(series: list[tuple[list[int], list[float]]]) -> LearningCurve:
    """Pointwise mean and population variance across runs sharing one episode grid."""
    if not series:
        return LearningCurve(np.zeros(0, int), np.zeros(0), np.zeros(0), 0)
    grid = list(series[0][0])
    for eps, _ in series:
        if list(eps) != grid:
            raise ValueError("runs were evaluated at different episode counts")
    m = np.array([s for _, s in series], dtype=np.float64)
    return LearningCurve(np.array(grid), m.mean(axis=0), m.var(axis=0), len(series))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult]
    curve: LearningCurve
    diverged: int = 0

    def run_matrix(self) -> np.ndarray:
        """(n_kept_runs, n_points) metric matrix of the non-diverged runs."""
        return np.array([r.metrics for r in self.runs if not r.diverged])


def _run_one(args):
    cfg, seed = args
    return run_training(cfg, seed)


def run_experiment(cfg: ExperimentConfig, parallel: int = 1, out: str | Path | None = None) -> ExperimentResult:
    cfg.validate()
    jobs = [(cfg, cfg.seed + k) for k in range(cfg.runs)]
    if parallel > 1:
        with ProcessPoolExecutor(parallel) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(j) for j in jobs]
    kept = [r for r in runs if not r.diverged]
    result = ExperimentResult(cfg, runs, aggregate([(r.episodes, r.metrics) for r in kept]),
                              len(runs) - len(kept))
    if out is not None:
        write_outputs(result, out)
    return result


# ---------------------------------------------------------------------- CSV

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def raw_rows(result: ExperimentResult):
    for k, r in enumerate(result.runs):
        if r.diverged:
            continue
        for e, m in zip(r.episodes, r.metrics):
            yield k, e, m


def write_raw_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "episodes", "metric"])
        for run, e, m in rows:
            w.writerow([run, e, _fmt(m)])


def write_curve_csv(curve: LearningCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episodes", "mean", "variance", "n_runs"])
        for e, m, v, n in curve.rows():
            w.writerow([e, _fmt(m), _fmt(v), n])


def read_raw_csv(path: str | Path) -> dict[str, list[tuple[int, float]]]:
    """Map run label -> [(episodes, metric), ...] in file order."""
    runs: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["run", "episodes", "metric"]:
            raise ValueError(f"{path}: expected header run,episodes,metric")
        for row in reader:
            runs.setdefault(row["run"], []).append((int(row["episodes"]), float(row["metric"])))
    return runs


def read_curve_csv(path: str | Path) -> LearningCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    n = int(rows[0]["n_runs"]) if rows else 0
    return LearningCurve(np.array([int(r["episodes"]) for r in rows]),
                         np.array([float(r["mean"]) for r in rows]),
                         np.array([float(r["variance"]) for r in rows]), n)


def curve_from_raw(paths: list[str | Path]) -> LearningCurve:
    series = []
    for i, p in enumerate(paths):
        for _, pts in read_raw_csv(p).items():
            series.append(([e for e, _ in pts], [m for _, m in pts]))
    return aggregate(series)


def output_stem(cfg: ExperimentConfig) -> str:
    return f"{cfg.task}_{cfg.method}"


def write_outputs(result: ExperimentResult, out: str | Path) -> dict[str, Path]:
    from .nn_core import save_params

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stem = output_stem(result.config)
    paths = {"raw": out / f"{stem}_raw.csv", "curve": out / f"{stem}_curve.csv"}
    write_raw_csv(raw_rows(result), paths["raw"])
    write_curve_csv(result.curve, paths["curve"])
    for k, r in enumerate(result.runs):
        if not r.diverged and r.policy_params is not None:
            (out / f"{stem}_run{k}_policy.ckpt").write_bytes(save_params(r.policy_params))
    with open(out / f"{stem}_config.txt", "w") as fh:
        for key, value in asdict(result.config).items():
            if isinstance(value, tuple):
                value = " ".join(map(str, value))
            fh.write(f"{key} = {value}\n")
    return paths
