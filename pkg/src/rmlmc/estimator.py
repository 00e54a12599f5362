"""Randomised multilevel estimators and their exact variance.

Every estimator here has the form

    Z = sum_i w_i * sum_{j <= N_i} Delta_i^(j),     w_i = 1 / E N_i,

where ``N_i`` counts the level-``i`` differences.  The single-term family
takes ``N_i`` from the level draws directly.  The sum families use the
cumulative counts ``N~_i = #{j : R^(j) >= i}`` instead, with independent
differences per level (``isum``) or whole coupled paths per draw (``csum``).

:func:`simulate` evaluates many replications at once: it draws a matrix of
allocations and then samples each level in one vectorised call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rmlmc.dist import LevelDistribution
from rmlmc.level_diff import LevelSampler, SampleFault
from rmlmc.scheme import SCHEMES, cumulative_matrix, draw_counts, residual_decomposition

FAMILIES = ("single", "isum", "csum")
ESTIMATOR_SCHEMES = SCHEMES + ("mlmc", "poisson", "hybrid", "cond-res")
_SINGLE_ONLY = ("hybrid", "cond-res")

# Poisson levels are kept while their expected count is above this
POISSON_CUTOFF = 1e-12
# target number of level draws generated per replication chunk
_DRAWS_PER_CHUNK = 1 << 21
_MAX_CHUNK_REPS = 1 << 16


@dataclass(frozen=True)
class HybridSplit:
    """Deterministic counts ``n_1..n_m`` plus ``r`` draws from ``tail``.

    ``tail`` is a distribution over offsets: its level ``k`` stands for
    level ``m + k`` of the chain.
    """

    fixed: tuple[int, ...]
    r: int
    tail: LevelDistribution

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(int(c) for c in self.fixed))
        if not self.fixed or min(self.fixed) < 1:
            raise ValueError("hybrid needs m >= 1 fixed counts, each at least 1")
        if int(self.r) < 1:
            raise ValueError("hybrid needs r >= 1 tail draws")

    @property
    def m(self) -> int:
        return len(self.fixed)


@dataclass(frozen=True)
class EstimatorSpec:
    family: str
    scheme: str
    dist: LevelDistribution
    n: int
    hybrid: HybridSplit | None = None
    fixed_draws: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.scheme not in ESTIMATOR_SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {ESTIMATOR_SCHEMES}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        if self.scheme in _SINGLE_ONLY and self.family != "single":
            raise ValueError(f"scheme {self.scheme!r} is defined for the single-term family only")
        if self.scheme == "hybrid" and self.hybrid is None:
            raise ValueError("scheme 'hybrid' needs a HybridSplit")
        if self.scheme == "cond-res":
            if self.n < 2:
                raise ValueError("cond-res needs n >= 2")
            if self.fixed_draws is None or len(self.fixed_draws) != self.n - 1:
                raise ValueError("cond-res needs n - 1 fixed draws")
            if min(self.fixed_draws) < 1:
                raise ValueError("fixed draws must be levels >= 1")
            object.__setattr__(self, "fixed_draws", tuple(int(r) for r in self.fixed_draws))


@dataclass(frozen=True)
class EstimatorOutput:
    estimate: float
    cost: float
    max_level: int
    n: int


@dataclass
class EstimatorBatch:
    """Many independent realisations; faulted rows carry ``nan`` estimates."""

    estimates: np.ndarray
    costs: np.ndarray
    max_levels: np.ndarray
    faulted: np.ndarray
    n: int
    audit: dict = field(default_factory=dict)

    def __len__(self):
        return self.estimates.size

    def output(self, k: int = 0) -> EstimatorOutput:
        if self.faulted[k]:
            raise SampleFault(f"replication {k} hit a non-finite level difference")
        return EstimatorOutput(float(self.estimates[k]), float(self.costs[k]),
                               int(self.max_levels[k]), self.n)

    @classmethod
    def concat(cls, batches) -> "EstimatorBatch":
        batches = list(batches)
        audit = dict(batches[0].audit) if batches else {}
        return cls(np.concatenate([b.estimates for b in batches]),
                   np.concatenate([b.costs for b in batches]),
                   np.concatenate([b.max_levels for b in batches]),
                   np.concatenate([b.faulted for b in batches]),
                   batches[0].n if batches else 0, audit)


# -- allocations -------------------------------------------------------------------

def _pmf(dist, K):
    return np.array([dist.pmf(i) for i in range(1, K + 1)])


def _tails(dist, K):
    return np.array([dist.tail_prob(i) for i in range(1, K + 1)])


def _inverse(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    np.divide(1.0, x, out=out, where=x > 0)
    return out


def mlmc_counts(dist: LevelDistribution, n: int, family: str = "single") -> np.ndarray:
    """Idealised MLMC counts: ``floor(n p_i)`` or, for sums, ``floor(n p~_i)``."""
    if family == "single":
        base = residual_decomposition(dist, n).base
        if not base.any():
            raise ValueError(f"n = {n} leaves every level empty")
        return base
    hat = []
    i = 1
    while True:
        c = math.floor(n * dist.tail_prob(i))
        if c < 1:
            break
        hat.append(c)
        i += 1
    return np.array(hat, dtype=np.int64)


def poisson_truncation(dist: LevelDistribution, n: int) -> tuple[int, float]:
    """Number of Poisson levels kept and the expected count discarded beyond them."""
    K = 1
    while n * dist.tail_prob(K + 1) > POISSON_CUTOFF:
        K += 1
    return K, n * dist.tail_prob(K + 1)


def _allocate(spec: EstimatorSpec, rng, reps):
    """Counts matrix ``(reps, K)`` and the per-level weights ``1 / E N_i``.

    For the sum families the counts are draws per top level ``R`` and the
    weights refer to the cumulative counts.
    """
    d, n, sc, fam = spec.dist, spec.n, spec.scheme, spec.family
    summed = fam != "single"
    if sc in SCHEMES:
        counts = draw_counts(d, n, sc, rng, reps)
        K = counts.shape[1]
        return counts, _inverse(n * (_tails(d, K) if summed else _pmf(d, K)))
    if sc == "mlmc":
        c = mlmc_counts(d, n, fam)
        if summed:
            counts = c - np.append(c[1:], 0)
        else:
            counts = c
        return np.tile(counts, (reps, 1)), _inverse(c)
    if sc == "poisson":
        K, _ = poisson_truncation(d, n)
        lam = n * _pmf(d, K)
        counts = rng.poisson(lam, size=(reps, K)).astype(np.int64)
        mean = np.cumsum(lam[::-1])[::-1] if summed else lam
        return counts, _inverse(mean)
    if sc == "cond-res":
        fixed = np.bincount(np.asarray(spec.fixed_draws) - 1)
        last = draw_counts(d, 1, "iid", rng, reps)
        K = max(fixed.size, last.shape[1])
        counts = np.zeros((reps, K), dtype=np.int64)
        counts[:, : last.shape[1]] = last
        counts[:, : fixed.size] += fixed
        cond = _pmf(d, K)
        cond[: fixed.size] += fixed
        return counts, _inverse(cond)
    if sc == "hybrid":
        h = spec.hybrid
        tail = draw_counts(h.tail, h.r, "iid", rng, reps)
        m = h.m
        counts = np.zeros((reps, m + tail.shape[1]), dtype=np.int64)
        counts[:, :m] = h.fixed
        counts[:, m:] = tail
        w = np.concatenate([1.0 / np.asarray(h.fixed, dtype=float),
                            _inverse(h.r * _pmf(h.tail, tail.shape[1]))])
        return counts, w
    raise ValueError(f"unknown scheme {sc!r}")


def _chunk_reps(spec: EstimatorSpec) -> int:
    draws = spec.n if spec.scheme != "hybrid" else spec.hybrid.r
    return max(1, min(_MAX_CHUNK_REPS, _DRAWS_PER_CHUNK // draws))


# -- evaluation --------------------------------------------------------------------

def _evaluate(family, counts, weights, sampler: LevelSampler, rng):
    reps, K = counts.shape
    est = np.zeros(reps)
    cost = np.zeros(reps)
    bad = np.zeros(reps, dtype=bool)
    rows = np.arange(reps)
    per_level = cumulative_matrix(counts) if family == "isum" else counts
    for i in range(1, K + 1):
        col = per_level[:, i - 1]
        total = int(col.sum())
        if total == 0:
            continue
        if family == "csum":
            vals = sampler.sample_paths(i, total, rng) @ weights[:i]
            unit = sampler.path_cost(i)
        else:
            vals = sampler.sample_delta(i, total, rng) * weights[i - 1]
            unit = sampler.level_cost(i)
        owner = np.repeat(rows, col)
        finite = np.isfinite(vals)
        if not finite.all():
            bad[np.unique(owner[~finite])] = True
            vals = np.where(finite, vals, 0.0)
        est += np.bincount(owner, weights=vals, minlength=reps)
        cost += col * unit
    nz = counts > 0
    top = np.where(nz.any(axis=1), K - np.argmax(nz[:, ::-1], axis=1), 0)
    est[bad] = np.nan
    return est, cost, top, bad


def simulate(spec: EstimatorSpec, sampler: LevelSampler, rng: np.random.Generator,
             reps: int = 1) -> EstimatorBatch:
    """``reps`` independent realisations of the estimator described by ``spec``."""
    if reps < 1:
        raise ValueError("reps must be positive")
    chunk = _chunk_reps(spec)
    parts = []
    for start in range(0, reps, chunk):
        k = min(chunk, reps - start)
        counts, weights = _allocate(spec, rng, k)
        parts.append(_evaluate(spec.family, counts, weights, sampler, rng))
    est, cost, top, bad = (np.concatenate(x) for x in zip(*parts))
    audit = {}
    if spec.scheme == "poisson":
        audit["poisson_discarded_mass"] = poisson_truncation(spec.dist, spec.n)[1]
    return EstimatorBatch(est, cost, top.astype(np.int64), bad, spec.n, audit)


# -- single-realisation entry points ------------------------------------------------

def _require(spec, families=None, schemes=None):
    if families and spec.family not in families:
        raise ValueError(f"family {spec.family!r} not accepted here; expected {families}")
    if schemes and spec.scheme not in schemes:
        raise ValueError(f"scheme {spec.scheme!r} not accepted here; expected {schemes}")


def single_term(spec: EstimatorSpec, sampler: LevelSampler, rng) -> EstimatorOutput:
    """``Z = sum_i (n p_i)^{-1} sum_{j <= N_i} Delta_i^(j)``."""
    _require(spec, families=("single",))
    return simulate(spec, sampler, rng).output()


def sum_estimator(spec: EstimatorSpec, sampler: LevelSampler, rng) -> EstimatorOutput:
    """``Z = sum_i (n p~_i)^{-1} sum_j Delta_i^(j) 1{R^(j) >= i}``."""
    _require(spec, families=("isum", "csum"))
    return simulate(spec, sampler, rng).output()


def mlmc_idealized(spec: EstimatorSpec, sampler: LevelSampler, rng) -> EstimatorOutput:
    """Deterministic allocation ``floor(n p_i)`` (or ``floor(n p~_i)`` for sums)."""
    _require(spec, schemes=("mlmc",))
    return simulate(spec, sampler, rng).output()


def hybrid(spec: EstimatorSpec, sampler: LevelSampler, rng) -> EstimatorOutput:
    """MLMC on levels ``1..m`` plus an unbiased single-term tail."""
    _require(spec, families=("single",), schemes=("hybrid",))
    return simulate(spec, sampler, rng).output()


def poisson_levels(dist: LevelDistribution, n: int, sampler: LevelSampler, rng,
                   family: str = "single") -> EstimatorOutput:
    """Independent ``N_i ~ Poisson(n p_i)``."""
    spec = EstimatorSpec(family, "poisson", dist, n)
    return simulate(spec, sampler, rng).output()


def conditioned_residual_demo(dist: LevelDistribution, n: int, fixed_draws, sampler: LevelSampler,
                              rng) -> EstimatorOutput:
    """Last draw random, the first ``n - 1`` given; weights ``1 / (p_i + #fixed at i)``."""
    spec = EstimatorSpec("single", "cond-res", dist, n, fixed_draws=tuple(fixed_draws))
    return simulate(spec, sampler, rng).output()


# -- exact variance -----------------------------------------------------------------

@dataclass(frozen=True)
class CountMoments:
    """``E N_i``, ``E min(N_i, N_k)`` and ``cov(N_i, N_k)`` on levels ``1..M``.

    Off-diagonal minima that are not available are ``nan``; they are only
    needed where the level differences are correlated.
    """

    mean: np.ndarray
    min: np.ndarray
    cov: np.ndarray


def general_variance(delta_mean, delta_cov, counts: CountMoments) -> float:
    """``v_{0,m} = sum_{i,k} [cov(D_i,D_k) E(N_i ^ N_k) + E D_i E D_k cov(N_i,N_k)] / (E N_i E N_k)``."""
    mu = np.asarray(delta_mean, dtype=float)
    C = np.atleast_2d(np.asarray(delta_cov, dtype=float))
    EN, Emin, covN = (np.asarray(x, dtype=float) for x in (counts.mean, counts.min, counts.cov))
    M = mu.size
    if C.shape != (M, M) or EN.shape != (M,) or Emin.shape != (M, M) or covN.shape != (M, M):
        raise ValueError("moment tables must all cover the same levels")
    if not np.allclose(np.diag(Emin), EN, rtol=1e-12, atol=0.0):
        raise ValueError("E min(N_i, N_i) must equal E N_i")
    if np.any(EN <= 0):
        raise ValueError("every level up to m needs E N_i > 0")
    needed = C != 0
    if np.any(np.isnan(Emin[needed])):
        raise ValueError("E min(N_i, N_k) missing for correlated levels")
    first = np.where(needed, C * np.nan_to_num(Emin), 0.0)
    total = (first + np.outer(mu, mu) * covN) / np.outer(EN, EN)
    return float(total.sum())


def _count_moments_all(dist, n, scheme, K):
    p = _pmf(dist, K)
    if scheme == "iid":
        return n * p, n * (np.diag(p) - np.outer(p, p))
    if scheme == "poisson":
        return n * p, np.diag(n * p)
    if scheme == "res":
        split = residual_decomposition(dist, n)
        base = np.zeros(K)
        k = min(K, split.base.size)
        base[:k] = split.base[:k]
        if split.pstar is None:
            return base, np.zeros((K, K))
        ps = _pmf(split.pstar, K)
        return base + split.r * ps, split.r * (np.diag(ps) - np.outer(ps, ps))
    if scheme == "mlmc":
        base = np.zeros(K)
        c = mlmc_counts(dist, n, "single")
        base[: min(K, c.size)] = c[:K]
        return base, np.zeros((K, K))
    raise ValueError(f"no closed-form count moments for scheme {scheme!r}")


def count_moments(dist: LevelDistribution, n: int, scheme: str, m: int,
                  family: str = "single") -> CountMoments:
    """Count moments on levels ``1..m`` for the schemes where they are explicit."""
    if family == "single":
        mean, cov = _count_moments_all(dist, n, scheme, m)
        Emin = np.full((m, m), np.nan)
        if scheme == "mlmc":
            Emin = np.minimum.outer(mean, mean)
        np.fill_diagonal(Emin, mean)
        return CountMoments(mean, Emin, cov)
    if family not in ("isum", "csum"):
        raise ValueError(f"unknown family {family!r}")
    if scheme == "mlmc":
        hat = np.zeros(m)
        c = mlmc_counts(dist, n, family)
        hat[: min(m, c.size)] = c[:m]
        return CountMoments(hat, np.minimum.outer(hat, hat), np.zeros((m, m)))
    # cumulative counts need every level that carries mass
    K = max(m, dist.cdf_table.size)
    if scheme == "poisson":
        K = max(m, poisson_truncation(dist, n)[0])
    mean, cov = _count_moments_all(dist, n, scheme, K)
    U = np.triu(np.ones((K, K)))
    cmean = (U @ mean)[:m]
    ccov = (U @ cov @ U.T)[:m, :m]
    if scheme == "iid":
        pt = _tails(dist, m)
        cmean = n * pt
        ccov = n * (pt[np.maximum.outer(np.arange(m), np.arange(m))] - np.outer(pt, pt))
    idx = np.maximum.outer(np.arange(m), np.arange(m))
    return CountMoments(cmean, cmean[idx], ccov)
