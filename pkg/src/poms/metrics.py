"""Coverage curves, multi-seed summaries and rank-based comparisons."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NoCurves
from .numkit import RankTestResult, mann_whitney_u


@dataclass
class CoverageCurve:
    points: list  # [(cumulative evals, coverage)]
    seed: int | None = None
    variant: str | None = None
    env: str | None = None

    def __post_init__(self):
        self.points = [(int(e), float(c)) for e, c in self.points]
        evals = [e for e, _ in self.points]
        if any(b <= a for a, b in zip(evals, evals[1:])):
            raise ValueError("curve evaluations must be strictly increasing")
        cov = [c for _, c in self.points]
        if any(b < a for a, b in zip(cov, cov[1:])):
            raise ValueError("coverage must be non-decreasing")

    @property
    def evals(self) -> np.ndarray:
        return np.array([e for e, _ in self.points], dtype=np.int64)

    @property
    def values(self) -> np.ndarray:
        return np.array([c for _, c in self.points], dtype=np.float64)

    @property
    def final(self) -> float:
        return self.points[-1][1]

    def at(self, checkpoints) -> np.ndarray:
        """Step-function resampling: value at the last recorded point ``<= e``
        (0 before the first point, last value carried forward)."""
        checkpoints = np.asarray(checkpoints)
        idx = np.searchsorted(self.evals, checkpoints, side="right") - 1
        vals = self.values
        return np.where(idx >= 0, vals[np.clip(idx, 0, None)], 0.0)


@dataclass
class SeedSummary:
    checkpoints: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    variant: str | None = None
    n_curves: int = field(default=0)


def summarise(curves: Sequence[CoverageCurve], checkpoints=None) -> SeedSummary:
    """Per-checkpoint median and interquartile range across seeds.

    Curves are resampled onto ``checkpoints`` (default: union of all their
    evaluation counts) by step interpolation; percentiles use linear
    interpolation between closest ranks.
    """
    curves = list(curves)
    if not curves:
        raise NoCurves("need at least one coverage curve")
    if checkpoints is None:
        checkpoints = np.unique(np.concatenate([c.evals for c in curves]))
    checkpoints = np.asarray(checkpoints)
    grid = np.stack([c.at(checkpoints) for c in curves])
    q25, med, q75 = np.percentile(grid, [25, 50, 75], axis=0)
    return SeedSummary(checkpoints, med, q25, q75, curves[0].variant, len(curves))


def compare(final_a: Sequence[float], final_b: Sequence[float]) -> RankTestResult:
    """One-sided Mann-Whitney test that ``final_a`` tends to exceed ``final_b``."""
    if len(final_a) != len(final_b):
        raise ValueError("compared samples must have equal length (one value per seed)")
    return mann_whitney_u(final_a, final_b, alternative="greater")


def max_p(results: Sequence[RankTestResult]) -> float:
    """Most conservative p-value across several pairwise comparisons."""
    return max(r.p_value for r in results)
