"""Exact self-consistency checks of the oracle layer, run by ``rmlmc oracle-check``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from rmlmc import kernels
from rmlmc.analytic import (AnalyticChain, allocation_outcomes, brute_force_scheme_variance,
                            exact_sigma_infty, exact_single_term_moments, exact_sum_moments,
                            random_chain)
from rmlmc.dist import finite_distribution
from rmlmc.estimator import count_moments, general_variance
from rmlmc.tune import (PilotTable, optimal_coupled_sum, optimal_single_term, pav,
                        single_term_objective)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_dist(rng, M):
    return finite_distribution(rng.uniform(0.05, 1.0, size=M))


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def check_general_variance(rng, trials=50, tol=1e-10):
    worst = 0.0
    for _ in range(trials):
        chain = random_chain(rng)
        M = chain.M
        d = _random_dist(rng, M)
        n = int(rng.integers(1, 1000))
        p = np.array([d.pmf(i) for i in range(1, M + 1)])
        cov = np.diag(chain.b ** 2)
        ey = chain.truth
        single = (np.sum(chain.second_moments() / p) - ey ** 2) / n
        poisson = np.sum(chain.second_moments() / p) / n
        summed = exact_sum_moments(chain, d, "independent")[2] / n
        for scheme, family, ref in (("iid", "single", single), ("poisson", "single", poisson),
                                    ("iid", "isum", summed)):
            got = general_variance(chain.a, cov, count_moments(d, n, scheme, M, family))
            worst = max(worst, _rel(got, ref))
    return CheckResult("general_variance closed forms", worst < tol, f"max rel err {worst:.2e}")


def check_scheme_ordering(rng, trials=100):
    bad = 0
    for _ in range(trials):
        M = int(rng.integers(1, 4))
        n = int(rng.integers(1, 5))
        chain = random_chain(rng, M=M)
        d = _random_dist(rng, M)
        v = {s: brute_force_scheme_variance(chain, s, d, n) for s in ("iid", "str", "sys", "res")}
        one = exact_single_term_moments(chain, d)[2]
        slack = 1e-12 * max(1.0, one)
        bad += v["str"] > v["iid"] + slack
        bad += v["res"] > v["iid"] + slack
        bad += v["sys"] > one + slack
        bad += abs(v["iid"] - one / n) > slack
    return CheckResult("variance ordering by enumeration", bool(bad == 0), f"{bad} violations")


def check_residual_limit(rng, n=10_000):
    i = np.arange(1, 13)
    chain = AnalyticChain(2.0 ** -i, 2.0 ** (-0.75 * i))
    d = finite_distribution(2.0 ** (-0.9 * i))
    v = general_variance(chain.a, np.diag(chain.b ** 2), count_moments(d, n, "res", 12))
    s = exact_sigma_infty(chain, d)
    err = abs(n * v - s) / s
    return CheckResult("residual n var -> sigma_inf^2", err < 0.05, f"rel gap {err:.3e}")


def check_single_term_tuning(rng, trials=5, grid=100):
    worst = 0.0
    for _ in range(trials):
        var = rng.uniform(0.1, 2.0, size=3)
        cost = rng.uniform(0.5, 4.0, size=3)
        p = np.array(optimal_single_term(PilotTable.from_arrays(var, cost), gamma=None).head)
        ours = single_term_objective(var, cost, p)
        g = (np.arange(grid) + 0.5) / grid
        best = np.inf
        for x, y in itertools.product(g, g):
            if x + y < 1:
                best = min(best, single_term_objective(var, cost, [x, y, 1 - x - y]))
        worst = max(worst, ours / best - 1)
    return CheckResult("single-term optimum vs grid", worst <= 1e-3, f"max gap {worst:.2e}")


def _direct_objective(v, kappa, J):
    """Product objective of ``J`` recomputed from scratch, for cross-checking."""
    prev = 0
    vd, kj = [], []
    for j in J:
        vd.append(max(v[prev] - v[j], 0.0))
        kj.append(kappa[j - 1])
        prev = j
    q = pav(np.sqrt(np.array(vd) / np.array(kj)))
    q = q / q[0]
    return sum(d / x for d, x in zip(vd, q) if d > 0) * float(np.dot(q, kj))


def check_coupled_search(rng, trials=20):
    bad = 0
    instances = [(np.array([2.0, 1.0, 0.0]), np.array([1.0, 4.0]))]
    for _ in range(trials):
        m = int(rng.integers(1, 7))
        v = np.sort(rng.uniform(0, 1, size=m + 1))[::-1]
        v[-1] = 0.0
        instances.append((v, rng.uniform(0.5, 2.0, size=m) * 2.0 ** np.arange(m)))
    for v, kappa in instances:
        m = kappa.size
        t = PilotTable.from_arrays(np.ones(m), kappa, var_to_ref=v)
        plan = optimal_coupled_sum(t, m, gamma=None)
        best_obj, best_J = min((_direct_objective(v, kappa, J + (m,)), J + (m,))
                               for k in range(m) for J in itertools.combinations(range(1, m), k))
        bad += plan.J != best_J or abs(plan.objective - best_obj) > 1e-12 * best_obj
    return CheckResult("coupled-sum exhaustive search", bool(bad == 0), f"{bad} mismatches")


def check_sweep(rng, trials=100):
    bad = 0
    for _ in range(trials):
        d = _random_dist(rng, int(rng.integers(1, 8)))
        n = int(rng.integers(1, 500))
        u = rng.random(n)
        fast = kernels.sweep_levels(u, np.ascontiguousarray(d.cdf_table))
        naive = [d.inverse_cdf(x) if 0 < x < 1 else 1 for x in (np.arange(n) + u) / n]
        bad += not np.array_equal(fast, naive)
    return CheckResult("stratified sweep vs per-draw inverse", bad == 0, f"{bad} mismatches")


def check_stratified_enumeration(rng, trials=20, cells=1000):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 5))
        d = _random_dist(rng, 3)
        p = np.array(d.head)
        exact = dict(allocation_outcomes("str", p, n))
        # each stratum discretised into equal cells, mapped through the inverse CDF
        u = (np.arange(cells) + 0.5) / cells
        per = [np.bincount(np.searchsorted(np.cumsum(p)[:-1], (j + u) / n, side="left"),
                           minlength=3) / cells for j in range(n)]
        approx = {}
        for levels in itertools.product(range(3), repeat=n):
            pr = np.prod([per[j][levels[j]] for j in range(n)])
            if pr > 0:
                key = tuple(np.bincount(levels, minlength=3))
                approx[key] = approx.get(key, 0.0) + pr
        keys = set(exact) | set(approx)
        worst = max(worst, max(abs(exact.get(k, 0) - approx.get(k, 0)) for k in keys))
    return CheckResult("stratified law vs discretised strata", bool(worst < 8 / cells),
                       f"max prob gap {worst:.2e}")


CHECKS = (check_general_variance, check_scheme_ordering, check_residual_limit,
          check_single_term_tuning, check_coupled_search, check_sweep, check_stratified_enumeration)


def run_oracle_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check(rng) for check in CHECKS]
