"""Summary statistics over per-run learning curves: area, time-to-threshold, ordering, late variance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def area_under_curve(episodes: np.ndarray, mean: np.ndarray) -> float:
    """Trapezoidal area of the mean curve divided by the episode span (a time-averaged metric)."""
    episodes, mean = np.asarray(episodes, float), np.asarray(mean, float)
    span = episodes[-1] - episodes[0]
    if span <= 0:
        return float(mean[0])
    return float(np.sum((mean[1:] + mean[:-1]) * np.diff(episodes)) / (2 * span))


def final_quarter(n_points: int) -> slice:
    return slice(n_points - max(1, n_points // 4), n_points)


def asymptote(runs: np.ndarray) -> float:
    """Mean metric over the last quarter of evaluation points, pooled over runs."""
    runs = np.atleast_2d(runs)
    return float(runs[:, final_quarter(runs.shape[1])].mean())


def episodes_to_reach(episodes: np.ndarray, runs: np.ndarray, threshold: float) -> np.ndarray:
    """First evaluated episode count at which each run's metric reaches threshold.

    Runs that never get there are charged one interval past the end, so they sort last
    and a median over mostly-failing runs stays finite.
    """
    episodes = np.asarray(episodes)
    never = episodes[-1] + (episodes[-1] - episodes[-2] if len(episodes) > 1 else 1)
    hit = np.atleast_2d(runs) >= threshold
    return np.where(hit.any(axis=1), episodes[np.argmax(hit, axis=1)], never)


def late_variance(runs: np.ndarray) -> float:
    """Across-run variance averaged over the final quarter of evaluation points."""
    runs = np.atleast_2d(runs)
    return float(runs.var(axis=0)[final_quarter(runs.shape[1])].mean())


def adjacent_inversions(values: list[float]) -> int:
    """Count positions where a sequence expected to be non-increasing goes up."""
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


@dataclass
class OrderingReport:
    auc: dict[str, float]
    chain: list[float]
    inversions: int

    @property
    def holds(self) -> bool:
        return self.inversions <= 1


def method_ordering(aucs: dict[str, float]) -> OrderingReport:
    """Check AUC(M3) >= AUC(M2) >= AUC(M1) >= max(AUC(B1), AUC(B2))."""
    chain = [aucs["M3"], aucs["M2"], aucs["M1"], max(aucs["B1"], aucs["B2"])]
    return OrderingReport(dict(aucs), chain, adjacent_inversions(chain))


@dataclass
class GridSummary:
    threshold: float
    median_to_threshold: dict[str, float]
    auc: dict[str, float]
    late_variance: dict[str, float]
    ordering: OrderingReport

    def lines(self) -> list[str]:
        out = [f"threshold {self.threshold:.4g} (90% of B1 asymptote)"]
        for m in self.auc:
            out.append(f"{m}: auc {self.auc[m]:.4g}  median episodes to threshold "
                       f"{self.median_to_threshold[m]:.0f}  late variance {self.late_variance[m]:.4g}")
        out.append(f"ordering chain {[round(x, 4) for x in self.ordering.chain]} "
                   f"inversions {self.ordering.inversions}")
        return out


def summarize_grid(grid: dict[str, tuple[np.ndarray, np.ndarray]], fraction: float = 0.9) -> GridSummary:
    """grid maps method name to (run_matrix, episodes).

    The threshold is fraction times B1's asymptote. For negative-valued metrics that would
    sit above the asymptote, so the threshold is taken as the asymptote shifted by the same
    relative margin toward worse values instead.
    """
    b1 = asymptote(grid["B1"][0])
    threshold = fraction * b1 if b1 >= 0 else b1 * (2 - fraction)
    med, auc, var = {}, {}, {}
    for m, (runs, episodes) in grid.items():
        med[m] = float(np.median(episodes_to_reach(episodes, runs, threshold)))
        auc[m] = area_under_curve(episodes, np.atleast_2d(runs).mean(axis=0))
        var[m] = late_variance(runs)
    return GridSummary(threshold, med, auc, var, method_ordering(auc))
