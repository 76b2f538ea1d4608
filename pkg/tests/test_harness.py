import csv

import numpy as np
import pytest

import rpg.harness as harness
from rpg.config import ConfigFileError
from rpg.harness import (ExperimentConfig, aggregate, curve_from_raw, load_experiment_config, read_curve_csv,
                         read_raw_csv, run_experiment, run_training)
from rpg.nn_core import ConfigurationError, NumericError


def small(task="dialog", **kw):
    base = dict(runs=2, episodes=20, eval_interval=10, eval_episodes=5) if task == "dialog" else \
        dict(runs=2, episodes=40, eval_interval=20, eval_episodes=5)
    base.update(kw)
    return ExperimentConfig.for_task(task, **base)


def test_zero_episodes_gives_only_initial_point():
    r = run_training(small(episodes=0), seed=0)
    assert r.episodes == [0] and len(r.metrics) == 1


@pytest.mark.parametrize("task,method", [("dialog", "M3"), ("lander", "B2")])
def test_same_seed_same_series(task, method):
    cfg = small(task, method=method)
    a, b = run_training(cfg, 3), run_training(cfg, 3)
    assert a.metrics == b.metrics
    assert a.policy_params.flat().tobytes() == b.policy_params.flat().tobytes()


@pytest.mark.parametrize("task", ["dialog", "lander"])
def test_evaluation_does_not_touch_training(task):
    a = run_training(small(task, eval_episodes=1), 5)
    b = run_training(small(task, eval_episodes=1000), 5)
    assert a.episodes == b.episodes
    assert a.policy_params.flat().tobytes() == b.policy_params.flat().tobytes()


def test_episode_counts_are_batch_multiples():
    r = run_training(small("lander"), 1)
    assert r.episodes == [0, 20, 40]
    assert all(e % 10 == 0 for e in r.episodes)


def test_single_run_has_zero_variance():
    res = run_experiment(small(runs=1))
    assert np.all(res.curve.variance == 0.0) and res.curve.n_runs == 1


def test_aggregate_closed_form():
    series = [([0, 10, 20], [1.0, 2.0, 3.0]), ([0, 10, 20], [3.0, 2.0, 0.0]),
              ([0, 10, 20], [2.0, 2.0, 6.0])]
    c = aggregate(series)
    assert c.episodes.tolist() == [0, 10, 20]
    assert c.mean.tolist() == [2.0, 2.0, 3.0]
    assert c.variance.tolist() == [2 / 3, 0.0, 6.0]


def test_aggregate_constant_runs():
    c = aggregate([([0, 5], [0.25, 0.25])] * 7)
    assert c.mean.tolist() == [0.25, 0.25] and c.variance.tolist() == [0.0, 0.0]


def test_aggregate_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        aggregate([([0, 10], [1.0, 1.0]), ([0, 20], [1.0, 1.0])])


def test_csv_outputs_and_recomputation(tmp_path):
    res = run_experiment(small(runs=3, episodes=30), out=tmp_path)
    raw, curve = tmp_path / "dialog_M3_raw.csv", tmp_path / "dialog_M3_curve.csv"
    with open(raw) as fh:
        assert next(csv.reader(fh)) == ["run", "episodes", "metric"]
    with open(curve) as fh:
        assert next(csv.reader(fh)) == ["episodes", "mean", "variance", "n_runs"]
    runs = read_raw_csv(raw)
    m = np.array([[v for _, v in pts] for pts in runs.values()])
    naive_mean = m.sum(axis=0) / len(m)
    naive_var = ((m - naive_mean) ** 2).sum(axis=0) / len(m)
    written = read_curve_csv(curve)
    assert np.max(np.abs(written.mean - naive_mean)) <= 1e-12
    assert np.max(np.abs(written.variance - naive_var)) <= 1e-12
    assert np.array_equal(curve_from_raw([raw]).mean, written.mean)
    assert (tmp_path / "dialog_M3_run0_policy.ckpt").exists()
    assert res.curve.n_runs == 3


def test_diverged_runs_are_excluded(monkeypatch):
    real = harness.train_step
    calls = {"n": 0}

    def flaky(cfg, state, batch):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericError("injected")
        return real(cfg, state, batch)
    monkeypatch.setattr(harness, "train_step", flaky)
    res = run_experiment(small(runs=2, method="B1"))
    assert res.diverged == 1 and res.curve.n_runs == 1
    assert res.runs[0].diverged and not res.runs[1].diverged


@pytest.mark.parametrize("kw", [dict(runs=0), dict(eval_interval=15, batch_size=10),
                                dict(method="M9"), dict(optimizer="sgd"), dict(episodes=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.for_task("lander", **kw)


def test_unknown_task():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.for_task("bogus")


def test_task_defaults():
    d, l = ExperimentConfig.for_task("dialog"), ExperimentConfig.for_task("lander")
    assert (d.eval_interval, d.batch_size, d.gamma, d.optimizer, d.lr, d.body, d.hidden) == \
        (10, 1, 0.95, "adadelta", 1.0, "lstm", (32,))
    assert (l.batch_size, l.gamma, l.optimizer, l.lr, l.hidden, l.activation) == \
        (10, 0.99, "adam", 0.005, (16, 16), "relu")
    assert (l.value_replay_steps, l.policy_replay_steps) == (5, 3)
    assert (d.runs, d.episodes, l.episodes) == (20, 2000, 3000)


def test_experiment_config_file(tmp_path):
    p = tmp_path / "exp.txt"
    p.write_text("gamma = 0.9\nhidden = 8\nvalue_replay_steps = 2\n")
    cfg = load_experiment_config(p, ExperimentConfig.for_task("dialog"))
    assert (cfg.gamma, cfg.hidden, cfg.value_replay_steps) == (0.9, (8,), 2)
    p.write_text("learning_rate = 3\n")
    with pytest.raises(ConfigFileError):
        load_experiment_config(p, ExperimentConfig.for_task("dialog"))


def test_parallel_matches_serial():
    cfg = small(runs=2, method="M2")
    a, b = run_experiment(cfg), run_experiment(cfg, parallel=2)
    assert np.array_equal(a.run_matrix(), b.run_matrix())
