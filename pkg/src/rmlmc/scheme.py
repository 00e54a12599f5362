"""Level draws under the i.i.d., stratified, systematic and residual schemes.

Single-allocation functions (``draw_iid`` and friends) return a
:class:`LevelAllocation`.  :func:`draw_counts` produces a whole matrix of
allocations at once (one row per replication) and is what the estimator
engine uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rmlmc import kernels
from rmlmc.dist import LevelDistribution

SCHEMES = ("iid", "str", "sys", "res")
_STRATA_BLOCK = 1 << 21  # uniforms held in memory at once by draw_counts


@dataclass(frozen=True)
class LevelAllocation:
    """Realised counts ``N_i`` (dense, ``counts[i-1]``) and optional draws."""

    n: int
    counts: np.ndarray
    draws: np.ndarray | None = None

    def count(self, i: int) -> int:
        return int(self.counts[i - 1]) if 1 <= i <= self.counts.size else 0

    def as_dict(self) -> dict[int, int]:
        """Sparse ``level -> N_i`` map over levels with ``N_i > 0``."""
        return {i + 1: int(c) for i, c in enumerate(self.counts) if c}

    @property
    def max_level(self) -> int:
        nz = np.flatnonzero(self.counts)
        return int(nz[-1]) + 1 if nz.size else 0


def _levels_to_alloc(n, levels, K):
    counts = np.bincount(levels - 1, minlength=K).astype(np.int64)
    return LevelAllocation(n=n, counts=counts, draws=levels)


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    return int(n)


def draw_iid(dist: LevelDistribution, n: int, rng: np.random.Generator) -> LevelAllocation:
    """``R^(j) = F^{-1}(U^(j))`` for ``n`` independent uniforms, in draw order."""
    n = _check_n(n)
    cdf = dist.cdf_table
    u = rng.random(n)
    levels = np.minimum(np.searchsorted(cdf, u, side="left"), cdf.size - 1) + 1
    return _levels_to_alloc(n, levels.astype(np.int64), cdf.size)


def draw_stratified(dist: LevelDistribution, n: int, rng: np.random.Generator) -> LevelAllocation:
    """One uniform per stratum ``((j-1)/n, j/n)``, mapped by a single CDF sweep."""
    n = _check_n(n)
    cdf = np.ascontiguousarray(dist.cdf_table)
    levels = kernels.sweep_levels(rng.random(n), cdf)
    return _levels_to_alloc(n, levels, cdf.size)


def draw_systematic(dist: LevelDistribution, n: int, rng: np.random.Generator) -> LevelAllocation:
    """Stratified sweep with the same offset ``U / n`` in every stratum."""
    n = _check_n(n)
    cdf = np.ascontiguousarray(dist.cdf_table)
    levels = kernels.sweep_levels(np.full(n, rng.random()), cdf)
    return _levels_to_alloc(n, levels, cdf.size)


@dataclass(frozen=True)
class ResidualSplit:
    base: np.ndarray  # n_i = floor(n p_i), dense from level 1
    r: int
    pstar: LevelDistribution | None


def _base_levels(dist: LevelDistribution, n: int) -> int:
    """Number of leading levels that can have ``n p_i >= 1``."""
    m = dist.m
    if dist.finite:
        return m
    r = 2.0 ** -dist.gamma
    first = n * dist.tail_mass * (1.0 - r)
    if first < 1.0:
        return m
    # n P (1-r) r^k >= 1  <=>  k <= log(first) / (gamma log 2)
    return m + 1 + int(math.floor(math.log2(first) / dist.gamma + 1e-12))


def residual_decomposition(dist: LevelDistribution, n: int) -> ResidualSplit:
    """Base counts ``floor(n p_i)``, residual size ``r`` and residual law ``p*``."""
    n = _check_n(n)
    K = _base_levels(dist, n)
    np_i = np.array([n * dist.pmf(i) for i in range(1, K + 1)])
    base = np.floor(np_i).astype(np.int64)
    r = n - int(base.sum())
    if r <= 0:
        return ResidualSplit(base=base, r=0, pstar=None)
    frac = np.maximum(np_i - base, 0.0)
    tail = n * dist.tail_prob(K + 1) if not dist.finite else 0.0
    total = math.fsum(frac) + tail
    head = tuple(frac / total)
    tail_mass = tail / total
    if tail_mass == 0.0 or dist.finite:
        pstar = LevelDistribution(head=head, tail_mass=0.0)
    else:
        pstar = LevelDistribution(head=head, gamma=dist.gamma, tail_mass=max(0.0, 1.0 - math.fsum(head)))
    return ResidualSplit(base=base, r=r, pstar=pstar)


def draw_residual(dist: LevelDistribution, n: int, rng: np.random.Generator) -> LevelAllocation:
    """``N_i = floor(n p_i) + N*_i`` with ``N*`` multinomial over the remainder."""
    counts = draw_counts(dist, n, "res", rng, 1)[0]
    return LevelAllocation(n=_check_n(n), counts=counts)


def cumulative_counts(alloc: LevelAllocation) -> dict[int, int]:
    """``N~_i = sum_{k>=i} N_k`` on levels ``1..max_level``."""
    tails = np.cumsum(alloc.counts[::-1])[::-1]
    return {i + 1: int(t) for i, t in enumerate(tails[: max(alloc.max_level, 1)])}


def cumulative_matrix(counts: np.ndarray) -> np.ndarray:
    """Row-wise reverse cumulative sums of a counts matrix."""
    return np.cumsum(counts[:, ::-1], axis=1)[:, ::-1]


_DRAWS = {"iid": draw_iid, "str": draw_stratified, "sys": draw_systematic, "res": draw_residual}


def draw(dist: LevelDistribution, n: int, scheme: str, rng: np.random.Generator) -> LevelAllocation:
    try:
        return _DRAWS[scheme](dist, n, rng)
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}") from None


def _pad(mat, K):
    if mat.shape[1] >= K:
        return mat
    out = np.zeros((mat.shape[0], K), dtype=np.int64)
    out[:, : mat.shape[1]] = mat
    return out


def draw_counts(dist: LevelDistribution, n: int, scheme: str, rng: np.random.Generator,
                reps: int) -> np.ndarray:
    """``reps`` independent allocations as an int64 matrix ``(reps, K)``."""
    n = _check_n(n)
    cdf = np.ascontiguousarray(dist.cdf_table)
    if scheme == "iid":
        return rng.multinomial(n, dist.pmf_table, size=reps).astype(np.int64)
    if scheme == "str":
        # row chunks draw the same stream as one (reps, n) block
        step = max(1, _STRATA_BLOCK // n)
        parts = [kernels.sweep_counts(rng.random((min(step, reps - s), n)), cdf)
                 for s in range(0, reps, step)]
        return np.concatenate(parts) if parts else np.zeros((0, cdf.size), dtype=np.int64)
    if scheme == "sys":
        return kernels.sweep_counts_shared(rng.random(reps), n, cdf)
    if scheme == "res":
        split = residual_decomposition(dist, n)
        if split.pstar is None:
            return np.tile(split.base, (reps, 1))
        extra = rng.multinomial(split.r, split.pstar.pmf_table, size=reps).astype(np.int64)
        K = max(split.base.size, extra.shape[1])
        out = _pad(extra, K)
        out[:, : split.base.size] += split.base
        return out
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
