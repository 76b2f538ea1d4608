"""Train every method on one task and print the comparison summary.

    python scripts/run_grid.py dialog --runs 20 --out results/dialog
    python scripts/run_grid.py lander --runs 4 --episodes 1000
"""
import argparse
from pathlib import Path

from rpg.analysis import summarize_grid
from rpg.harness import ExperimentConfig, run_experiment
from rpg.learners import METHODS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("task", choices=("dialog", "lander"))
    ap.add_argument("--runs", type=int)
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--parallel", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    overrides = {k: v for k, v in (("runs", args.runs), ("episodes", args.episodes)) if v is not None}
    out = Path(args.out)
    grid = {}
    for method in METHODS:
        cfg = ExperimentConfig.for_task(args.task, method=method, seed=args.seed, **overrides)
        result = run_experiment(cfg, parallel=args.parallel, out=out)
        grid[method] = (result.run_matrix(), result.curve.episodes)
        print(f"{method}: final mean {result.curve.mean[-1]:.4g} ({result.diverged} diverged)", flush=True)
    print("\n".join(summarize_grid(grid).lines()))


if __name__ == "__main__":
    main()
