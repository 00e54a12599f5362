"""Streaming moments, normal confidence intervals and inverse relative efficiency."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np


@dataclass
class RunningMoments:
    """Mergeable count / mean / sum of squared deviations, plus a cost total."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    cost_sum: float = 0.0

    def update(self, value: float, cost: float = 0.0) -> "RunningMoments":
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)
        self.cost_sum += cost
        return self

    def update_batch(self, values, costs=None) -> "RunningMoments":
        """Fold in an array of values (two-pass within the batch, then merge)."""
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return self
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value in batch")
        mean = float(values.mean())
        other = RunningMoments(
            count=int(values.size),
            mean=mean,
            m2=float(np.sum((values - mean) ** 2)),
            cost_sum=float(np.sum(costs)) if costs is not None else 0.0,
        )
        merged = self.merge(other)
        self.count, self.mean, self.m2, self.cost_sum = merged.count, merged.mean, merged.m2, merged.cost_sum
        return self

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        """Chan et al. pairwise combination; neither input is modified."""
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2, self.cost_sum)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2, other.cost_sum)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningMoments(n, mean, m2, self.cost_sum + other.cost_sum)

    def variance(self) -> float | None:
        """Unbiased sample variance, or ``None`` with fewer than two values."""
        if self.count < 2:
            return None
        return self.m2 / (self.count - 1)

    def stderr(self) -> float | None:
        v = self.variance()
        return None if v is None else math.sqrt(v / self.count)

    @property
    def mean_cost(self) -> float:
        return self.cost_sum / self.count if self.count else 0.0


def mean_square_deviation(acc: RunningMoments, truth: float) -> float:
    """Average of ``(Z - truth)^2`` over the stream (divisor ``count``)."""
    if acc.count < 2:
        raise ValueError("need at least two values")
    return acc.m2 / acc.count + (acc.mean - truth) ** 2


def ire(acc: RunningMoments, truth: float) -> float:
    """Average cost times average squared deviation from ``truth``."""
    return acc.mean_cost * mean_square_deviation(acc, truth)


def normal_ci(acc: RunningMoments, level: float = 0.95) -> tuple[float, float]:
    if acc.count < 30:
        raise ValueError("normal interval needs at least 30 values")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + level / 2)
    half = z * math.sqrt(acc.variance() / acc.count)
    return acc.mean - half, acc.mean + half
