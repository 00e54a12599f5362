"""Probability distributions over levels: an explicit head plus a geometric tail.

Levels are 1-based.  With head ``(p_1, ..., p_m)``, tail mass ``P`` and rate
``gamma``, the tail probabilities are

    p_i = P * (1 - 2**-gamma) * 2**(-gamma * (i - m - 1)),   i > m,

so that they sum to ``P`` and ``tail_prob(m + k) = P * 2**(-gamma * (k - 1))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

NORMALIZATION_TOL = 1e-12

# tail probabilities below this are indistinguishable from 0 next to 1.0
_TABLE_EPS = 1e-17


@dataclass(frozen=True)
class LevelDistribution:
    """Immutable distribution ``(p_i)_{i>=1}`` over levels.

    Head entries may be zero when built directly (e.g. residual or pooled
    distributions); :func:`make_geometric_tail` enforces the stricter rules for
    user-facing construction.
    """

    head: tuple[float, ...]
    gamma: float = 1.5
    tail_mass: float = 0.0
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        head = tuple(float(p) for p in self.head)
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "tail_mass", float(self.tail_mass))
        if any(p < 0 or not math.isfinite(p) for p in head):
            raise ValueError("head probabilities must be finite and non-negative")
        if not 0.0 <= self.tail_mass < 1.0 + NORMALIZATION_TOL:
            raise ValueError(f"tail_mass must lie in [0, 1), got {self.tail_mass}")
        if self.tail_mass > 0 and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        total = sum(head) + self.tail_mass
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        if not head and self.tail_mass == 0:
            raise ValueError("empty distribution")
        object.__setattr__(self, "_cdf", self._build_cdf())

    @property
    def m(self) -> int:
        """Length of the explicit head."""
        return len(self.head)

    @property
    def finite(self) -> bool:
        return self.tail_mass == 0.0

    @property
    def support_max(self) -> int | None:
        """Largest level with positive mass, or ``None`` for an infinite tail."""
        if not self.finite:
            return None
        nz = [i for i, p in enumerate(self.head, start=1) if p > 0]
        return nz[-1]

    # -- queries ------------------------------------------------------------

    def pmf(self, i: int) -> float:
        _check_level(i)
        m = self.m
        if i <= m:
            return self.head[i - 1]
        if self.finite:
            return 0.0
        r = 2.0 ** -self.gamma
        return self.tail_mass * (1.0 - r) * r ** (i - m - 1)

    def tail_prob(self, i: int) -> float:
        """``sum_{j>=i} p_j`` in closed form."""
        _check_level(i)
        m = self.m
        if i > m:
            if self.finite:
                return 0.0
            return self.tail_mass * 2.0 ** (-self.gamma * (i - m - 1))
        return self._head_tails[i - 1]

    def cdf(self, k: int) -> float:
        """``F(k) = sum_{i<=k} p_i``, defined as ``1 - tail_prob(k + 1)``."""
        if k <= 0:
            return 0.0
        return 1.0 - self.tail_prob(k + 1)

    def inverse_cdf(self, u: float) -> int:
        """``min{k : F(k) >= u}`` for ``0 < u < 1``."""
        if not 0.0 < u < 1.0:
            raise ValueError(f"u must lie in (0, 1), got {u}")
        m = self.m
        if m and u <= self.cdf(m):
            return int(np.searchsorted(self._cdf[:m], u, side="left")) + 1
        # tail: 1 - P 2^{-gamma (k-m)} >= u  <=>  k >= m + log2(P / (1-u)) / gamma
        x = math.log2(self.tail_mass / (1.0 - u)) / self.gamma
        k = max(m + 1, m + math.ceil(x))
        while k > m + 1 and self.cdf(k - 1) >= u:
            k -= 1
        while self.cdf(k) < u:
            k += 1
        return k

    # -- tables -------------------------------------------------------------

    @cached_property
    def _head_tails(self) -> tuple[float, ...]:
        acc = self.tail_mass
        out = []
        for p in reversed(self.head):
            acc = acc + p
            out.append(acc)
        return tuple(reversed(out))

    def _build_cdf(self) -> np.ndarray:
        m = self.m
        if self.finite:
            size = self.support_max
        else:
            extra = math.log2(self.tail_mass / _TABLE_EPS) / self.gamma if self.tail_mass > _TABLE_EPS else 0
            size = m + max(1, math.ceil(extra) + 1)
        table = np.array([self.cdf(k) for k in range(1, size + 1)], dtype=np.float64)
        table[-1] = 1.0
        table.setflags(write=False)
        return table

    @property
    def cdf_table(self) -> np.ndarray:
        """``F(1), ..., F(K)`` with ``F(K) == 1.0``; levels beyond ``K`` carry
        less than ``1e-17`` mass and are never produced by the samplers."""
        return self._cdf

    @property
    def pmf_table(self) -> np.ndarray:
        return np.diff(self._cdf, prepend=0.0)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return {"head": list(self.head), "gamma": self.gamma, "tail_mass": self.tail_mass}

    @classmethod
    def from_dict(cls, d: dict) -> "LevelDistribution":
        return cls(head=tuple(d["head"]), gamma=d.get("gamma", 1.5), tail_mass=d.get("tail_mass", 0.0))


def _check_level(i: int) -> None:
    if i < 1:
        raise ValueError(f"levels start at 1, got {i}")


def make_geometric_tail(head, gamma: float = 1.5) -> LevelDistribution:
    """Head probabilities followed by a geometric tail carrying the rest.

    >>> make_geometric_tail([0.5], 1.0).pmf(3)
    0.125
    """
    head = [float(p) for p in head]
    if any(p < 0 for p in head):
        raise ValueError("negative head probability")
    s = math.fsum(head)
    if s > 1.0 + NORMALIZATION_TOL:
        raise ValueError(f"head sums to {s} > 1")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    tail = max(0.0, 1.0 - s)
    if tail <= NORMALIZATION_TOL:
        tail = 0.0
        head = [p / s for p in head]
    elif any(p == 0 for p in head):
        raise ValueError("zero head probability in front of a positive tail")
    return LevelDistribution(head=tuple(head), gamma=gamma, tail_mass=tail)


def finite_distribution(probs) -> LevelDistribution:
    """Finite-support distribution, renormalised to absorb rounding."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0) or probs.sum() <= 0:
        raise ValueError("need a non-empty vector of non-negative probabilities")
    return LevelDistribution(head=tuple(probs / probs.sum()), tail_mass=0.0)
