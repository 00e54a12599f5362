"""Gaussian test chains with closed-form moments, and exact scheme variances.

An :class:`AnalyticChain` has finite support ``M``.  In ``independent`` mode
``Delta_i = a_i + b_i xi_i``; in ``partial`` mode ``Y_i = sum_{j<=i} delta_j``
with independent ``delta_j ~ N(a_j, b_j^2)`` and ``Y = Y_M``.  In both modes
the differences along one coupled path are independent Gaussians, which is
what makes every estimator moment available in closed form.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from rmlmc.dist import LevelDistribution
from rmlmc.level_diff import LevelSampler

MAX_LEVELS = 32
MODES = ("independent", "partial")


class AnalyticChain(LevelSampler):
    """Gaussian level differences with means ``a`` and standard deviations ``b``."""

    def __init__(self, a, b, mode: str = "independent", costs=None):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim != 1 or a.shape != b.shape or not 1 <= a.size <= MAX_LEVELS:
            raise ValueError(f"a and b must be equal-length vectors with 1..{MAX_LEVELS} entries")
        if np.any(b < 0):
            raise ValueError("standard deviations must be non-negative")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.a, self.b, self.mode = a, b, mode
        self.M = a.size
        self.costs = np.ones(self.M) if costs is None else np.asarray(costs, dtype=float)
        if self.costs.shape != a.shape or np.any(self.costs <= 0):
            raise ValueError("costs must be positive, one per level")
        self.truth = float(a.sum())

    def _cost(self, i):
        return float(self.costs[min(i, self.M) - 1])

    def level_cost(self, i):
        return self._cost(i)

    def path_cost(self, R):
        return float(sum(self._cost(i) for i in range(1, R + 1)))

    def levels_cost(self, levels):
        top = max((l for l in levels if l >= 1), default=0)
        return self.path_cost(top) if top else 0.0

    def _deltas(self, R, size, rng):
        k = min(R, self.M)
        out = np.zeros((size, R))
        out[:, :k] = self.a[:k] + self.b[:k] * rng.standard_normal((size, k))
        return out

    def sample_delta(self, i, size, rng):
        if i > self.M:
            return np.zeros(size)
        return self.a[i - 1] + self.b[i - 1] * rng.standard_normal(size)

    def sample_paths(self, R, size, rng):
        return self._deltas(R, size, rng)

    def sample_levels(self, levels, size, rng):
        levels = list(levels)
        top = max(levels) if levels else 0
        Y = np.zeros((size, len(levels)))
        if top < 1:
            return Y
        cum = np.cumsum(self._deltas(top, size, rng), axis=1)
        for j, l in enumerate(levels):
            if l >= 1:
                Y[:, j] = cum[:, l - 1]
        return Y

    # closed-form level moments
    def second_moments(self) -> np.ndarray:
        """``E Delta_i^2`` for ``i = 1..M``."""
        return self.a ** 2 + self.b ** 2

    def tail_means(self) -> np.ndarray:
        """``E Y - E Y_{i-1} = sum_{j>=i} a_j`` for ``i = 1..M+1``."""
        return np.append(np.cumsum(self.a[::-1])[::-1], 0.0)

    def tail_sq(self) -> np.ndarray:
        """``E (Y - Y_{i-1})^2`` for ``i = 1..M+1`` (partial-sum mode)."""
        var = np.append(np.cumsum((self.b ** 2)[::-1])[::-1], 0.0)
        return self.tail_means() ** 2 + var


class DeterministicChain(LevelSampler):
    """``Delta_i = ratio**i`` with no randomness; ``E Y = ratio / (1 - ratio)``."""

    def __init__(self, ratio: float = 0.5, cost: float = 1.0):
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        self.ratio, self.cost = float(ratio), float(cost)
        self.truth = self.ratio / (1.0 - self.ratio)

    def level_cost(self, i):
        return self.cost

    def path_cost(self, R):
        return self.cost * R

    def levels_cost(self, levels):
        top = max((l for l in levels if l >= 1), default=0)
        return self.cost * top

    def sample_delta(self, i, size, rng):
        return np.full(size, self.ratio ** i)

    def sample_paths(self, R, size, rng):
        return np.tile(self.ratio ** np.arange(1, R + 1), (size, 1))

    def sample_levels(self, levels, size, rng):
        r = self.ratio
        row = [r * (1 - r ** l) / (1 - r) if l >= 1 else 0.0 for l in levels]
        return np.tile(np.array(row, dtype=float), (size, 1))


def random_chain(rng: np.random.Generator, M: int | None = None, mode: str = "independent",
                 max_levels: int = 8) -> AnalyticChain:
    """A chain with decaying random means and deviations, for property tests."""
    M = int(rng.integers(1, max_levels + 1)) if M is None else M
    decay = 2.0 ** -np.arange(M)
    a = rng.normal(size=M) * decay
    b = rng.uniform(0.1, 1.0, size=M) * decay
    return AnalyticChain(a, b, mode=mode, costs=2.0 ** np.arange(M))


# -- exact estimator moments -----------------------------------------------------

def _restricted(chain: AnalyticChain, dist: LevelDistribution) -> np.ndarray:
    """``p_1..p_M`` renormalised onto the chain's support."""
    p = np.array([dist.pmf(i) for i in range(1, chain.M + 1)])
    if np.any(p <= 0):
        raise ValueError("distribution puts zero mass on a level inside the chain's support")
    return p / p.sum()


def _restricted_tails(chain, dist):
    p = _restricted(chain, dist)
    return np.cumsum(p[::-1])[::-1]


def exact_mean(chain: AnalyticChain) -> float:
    return float(np.sum(chain.a))


def exact_single_term_moments(chain: AnalyticChain, dist: LevelDistribution):
    """``(E Z, E Z^2, var Z)`` for one single-term draw."""
    p = _restricted(chain, dist)
    ez = exact_mean(chain)
    ez2 = float(np.sum(chain.second_moments() / p))
    return ez, ez2, ez2 - ez * ez


def exact_sum_moments(chain: AnalyticChain, dist: LevelDistribution, case: str = "independent"):
    """``(E Z, E Z^2, var Z)`` for one sum-estimator draw."""
    pt = _restricted_tails(chain, dist)
    ez = exact_mean(chain)
    if case == "coupled":
        if chain.mode != "partial":
            raise ValueError("the coupled formula needs a partial-sum chain")
        sq = chain.tail_sq()
        ez2 = float(np.sum((sq[:-1] - sq[1:]) / pt))
    elif case == "independent":
        tm = chain.tail_means()
        ez2 = float(np.sum((chain.b ** 2 + tm[:-1] ** 2 - tm[1:] ** 2) / pt))
    else:
        raise ValueError("case must be 'coupled' or 'independent'")
    return ez, ez2, ez2 - ez * ez


def exact_sigma_infty(chain: AnalyticChain, dist: LevelDistribution, family: str = "single") -> float:
    """Limit of ``n var`` under stratified or residual allocation."""
    var = chain.b ** 2
    if family == "single":
        return float(np.sum(var / _restricted(chain, dist)))
    if family in ("isum", "csum"):
        if family == "csum" and chain.mode != "partial":
            raise ValueError("the coupled sum needs a partial-sum chain")
        return float(np.sum(var / _restricted_tails(chain, dist)))
    raise ValueError(f"unknown family {family!r}")


# -- brute-force enumeration -------------------------------------------------------

BRUTE_MAX_LEVELS = 4
BRUTE_MAX_N = 4


def _multinomial_outcomes(n, p):
    """All count vectors of ``n`` draws over ``len(p)`` cells with probabilities."""
    M = len(p)
    for cells in itertools.combinations_with_replacement(range(M), n):
        counts = np.bincount(cells, minlength=M)
        coef = math.factorial(n)
        prob = 1.0
        for k, c in enumerate(counts):
            coef //= math.factorial(int(c))
            prob *= p[k] ** int(c)
        yield counts, coef * prob


def _interval_level_probs(lo, hi, F):
    """Probability that ``F^{-1}(U)`` equals each level for ``U ~ U(lo, hi)``."""
    edges = np.concatenate([[0.0], F])
    left = np.maximum(edges[:-1], lo)
    right = np.minimum(edges[1:], hi)
    return np.maximum(right - left, 0.0) / (hi - lo)


def allocation_outcomes(scheme: str, p: np.ndarray, n: int):
    """Exact law of the count vector ``(N_1..N_M)`` as ``(counts, prob)`` pairs."""
    p = np.asarray(p, dtype=float)
    M = p.size
    F = np.cumsum(p)
    F[-1] = 1.0
    out: dict[tuple, float] = {}

    def add(counts, prob):
        if prob > 0:
            key = tuple(int(c) for c in counts)
            out[key] = out.get(key, 0.0) + prob

    if scheme == "iid":
        for counts, prob in _multinomial_outcomes(n, p):
            add(counts, prob)
    elif scheme == "res":
        base = np.floor(n * p).astype(int)
        r = n - int(base.sum())
        if r == 0:
            add(base, 1.0)
        else:
            pstar = (n * p - base) / r
            pstar /= pstar.sum()
            for counts, prob in _multinomial_outcomes(r, pstar):
                add(base + counts, prob)
    elif scheme == "str":
        probs = [_interval_level_probs(j / n, (j + 1) / n, F) for j in range(n)]
        for levels in itertools.product(range(M), repeat=n):
            prob = math.prod(probs[j][levels[j]] for j in range(n))
            add(np.bincount(levels, minlength=M), prob)
    elif scheme == "sys":
        # allocation is piecewise constant in the shared offset U ~ U(0, 1/n)
        cuts = {0.0, 1.0 / n}
        for j in range(n):
            for f in F[:-1]:
                c = f - j / n
                if 0.0 < c < 1.0 / n:
                    cuts.add(c)
        cuts = sorted(cuts)
        for lo, hi in zip(cuts, cuts[1:]):
            mid = 0.5 * (lo + hi)
            u = (np.arange(n) + n * mid) / n
            levels = np.searchsorted(F, u, side="left")
            add(np.bincount(levels, minlength=M), (hi - lo) * n)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return list(out.items())


def brute_force_scheme_variance(chain: AnalyticChain, scheme: str, dist: LevelDistribution,
                                n: int, family: str = "single") -> float:
    """Exact ``var Z`` by enumerating every allocation of a small instance.

    Conditional on the counts the estimator is Gaussian, so
    ``var Z = E var(Z | N) + var E(Z | N)`` is a finite sum.
    """
    if chain.M > BRUTE_MAX_LEVELS or n > BRUTE_MAX_N:
        raise ValueError(f"enumeration limited to M <= {BRUTE_MAX_LEVELS} and n <= {BRUTE_MAX_N}")
    p = _restricted(chain, dist)
    pt = np.cumsum(p[::-1])[::-1]
    a, var = chain.a, chain.b ** 2
    if family == "single":
        w = 1.0 / (n * p)
    elif family in ("isum", "csum"):
        w = 1.0 / (n * pt)
    else:
        raise ValueError(f"unknown family {family!r}")
    m1 = m2 = ev = 0.0
    for counts, prob in allocation_outcomes(scheme, p, n):
        c = np.asarray(counts, dtype=float)
        if family != "single":
            c = np.cumsum(c[::-1])[::-1]
        mean = float(np.sum(w * c * a))
        m1 += prob * mean
        m2 += prob * mean * mean
        ev += prob * float(np.sum(w * w * c * var))
    return ev + m2 - m1 * m1


__all__ = [
    "AnalyticChain",
    "DeterministicChain",
    "random_chain",
    "exact_mean",
    "exact_single_term_moments",
    "exact_sum_moments",
    "exact_sigma_infty",
    "allocation_outcomes",
    "brute_force_scheme_variance",
]
