"""Print the method comparison for raw CSVs already written by `rpg train` or run_grid.py.

    python scripts/summarize.py results/dialog
"""
import sys
from pathlib import Path

import numpy as np

from rpg.analysis import summarize_grid
from rpg.harness import read_raw_csv
from rpg.learners import METHODS


def load(directory: Path, task: str):
    grid = {}
    for m in METHODS:
        path = directory / f"{task}_{m}_raw.csv"
        if not path.exists():
            continue
        runs = read_raw_csv(path)
        episodes = np.array([e for e, _ in next(iter(runs.values()))])
        grid[m] = (np.array([[v for _, v in pts] for pts in runs.values()]), episodes)
    return grid


def main():
    directory = Path(sys.argv[1] if len(sys.argv) > 1 else "results")
    for task in ("dialog", "lander"):
        grid = load(directory, task)
        if len(grid) == len(METHODS):
            print(f"== {task}")
            print("\n".join(summarize_grid(grid).lines()))
        elif grid:
            print(f"== {task}: only {sorted(grid)} present, need all five methods")


if __name__ == "__main__":
    main()
