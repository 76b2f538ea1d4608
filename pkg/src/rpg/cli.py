"""Command line entry point: ``rpg {train,eval,selftest,curves}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric
failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigFileError
from .harness import (TASKS, ExperimentConfig, build_networks, curve_from_raw, evaluate, evaluation_rng,
                      load_experiment_config, make_env_factory, run_experiment, write_curve_csv)
from .learners import METHODS
from .nn_core import CheckpointError, ConfigurationError, NumericError, load_params

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

FULL_EVAL_PROTOCOL = dict(eval_interval=10, eval_episodes=1000)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=TASKS, default="dialog")
    p.add_argument("--method", choices=METHODS, default="M3")
    p.add_argument("--runs", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat key = value file overriding task defaults")
    p.add_argument("--paper-protocol", action="store_true",
                   help="evaluate every 10 episodes with 1000 evaluation episodes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rpg", description="Replay-augmented policy gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="run a multi-seed experiment and write CSVs")
    _experiment_flags(train)
    train.add_argument("--out", default="results")
    train.add_argument("--parallel", type=int, default=1)

    ev = sub.add_parser("eval", help="evaluate a saved policy checkpoint")
    _experiment_flags(ev)
    ev.add_argument("--checkpoint", required=True)

    st = sub.add_parser("selftest", help="run the gradient and oracle checks")
    st.add_argument("--seed", type=int, default=0)

    cv = sub.add_parser("curves", help="merge raw per-run CSVs into one aggregate curve CSV")
    cv.add_argument("raw", nargs="+")
    cv.add_argument("--out", default="curve.csv")
    return parser


def experiment_config(args) -> ExperimentConfig:
    overrides = dict(runs=args.runs, episodes=args.episodes, eval_interval=args.eval_interval,
                     eval_episodes=args.eval_episodes, seed=args.seed)
    cfg = ExperimentConfig.for_task(args.task, method=args.method)
    if args.config:
        cfg = load_experiment_config(args.config, cfg)
    if args.paper_protocol:
        cfg = cfg.with_overrides(**FULL_EVAL_PROTOCOL)
    return cfg.with_overrides(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> int:
    cfg = experiment_config(args)
    result = run_experiment(cfg, parallel=args.parallel, out=args.out)
    last = result.curve.mean[-1] if len(result.curve.mean) else float("nan")
    print(f"{cfg.task} {cfg.method}: {cfg.runs} runs, {result.diverged} diverged, final mean {last:.4f}")
    print(f"wrote {Path(args.out).resolve()}")
    if result.diverged == cfg.runs:
        print("every run diverged", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = experiment_config(args)
    make_env = make_env_factory(cfg)
    probe = make_env(1)
    policy, _ = build_networks(cfg, probe.obs_dim, probe.n_actions, np.random.default_rng(0))
    params = load_params(Path(args.checkpoint).read_bytes())
    if params.shapes() != policy.params.shapes():
        raise CheckpointError(f"{args.checkpoint}: parameter shapes do not match the {cfg.task} policy")
    policy.params = params
    metric = evaluate(policy, make_env, cfg.eval_episodes, evaluation_rng(cfg.seed, 0))
    label = "success rate" if cfg.task == "dialog" else "mean return"
    print(f"{label} over {cfg.eval_episodes} episodes: {metric:.6f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(seed=args.seed)
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(p for _, p, _ in results) else EXIT_RUNTIME


def cmd_curves(args) -> int:
    curve = curve_from_raw(args.raw)
    write_curve_csv(curve, args.out)
    print(f"wrote {args.out} ({len(curve.episodes)} points, {curve.n_runs} runs)")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "selftest": cmd_selftest, "curves": cmd_curves}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, ConfigFileError, CheckpointError, FileNotFoundError) as exc:
        print(f"rpg: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, RuntimeError, ValueError) as exc:
        print(f"rpg: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
