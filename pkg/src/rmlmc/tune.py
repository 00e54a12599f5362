"""Pilot estimation of level variances and costs, and near-optimal level laws.

All three optimisers minimise a variance-times-cost product.  Such a product
does not change when every cost is multiplied by the same constant, so only
relative costs matter.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from rmlmc.dist import LevelDistribution, make_geometric_tail
from rmlmc.level_diff import LevelSampler
from rmlmc.stats import RunningMoments

DEFAULT_GAMMA = 1.5
DEFAULT_REF_MESH = 13
DESK_REF_MESH = 10
MAX_SUBSEQUENCE_LEVEL = 16
# automatic head length: the shortest head within this factor of the best
HEAD_TOLERANCE = 1.01
# zero-variance levels keep this fraction of the largest weight
_BETA_FLOOR = 1e-9

CSV_COLUMNS = ("level", "count", "mean", "var", "cost", "var_to_ref", "path_cost")


@dataclass
class PilotTable:
    """Per-level pilot estimates for levels ``1..m``.

    ``var_to_ref[i]`` estimates ``var(Y_ref - Y_i)`` for ``i = 0..m`` (so entry
    0 is ``var(Y_ref)``) and is only present after a coupled pilot.
    ``path_cost[i-1]`` is the extra cost of carrying a coupled path from level
    ``i - 1`` to level ``i``.
    """

    count: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    cost: np.ndarray
    path_cost: np.ndarray
    var_to_ref: np.ndarray | None = None
    ref_level: int | None = None
    ref_count: int = 0
    ref_mean: float = float("nan")

    @property
    def m(self) -> int:
        return self.var.size

    @classmethod
    def from_arrays(cls, var, cost, var_to_ref=None, path_cost=None, mean=None, count=None):
        var = np.asarray(var, dtype=float)
        cost = np.asarray(cost, dtype=float)
        m = var.size
        return cls(
            count=np.full(m, 0 if count is None else count, dtype=np.int64),
            mean=np.zeros(m) if mean is None else np.asarray(mean, dtype=float),
            var=var,
            cost=cost,
            path_cost=cost.copy() if path_cost is None else np.asarray(path_cost, dtype=float),
            var_to_ref=None if var_to_ref is None else np.asarray(var_to_ref, dtype=float),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            if self.var_to_ref is not None:
                w.writerow([0, self.ref_count, repr(self.ref_mean), repr(float(self.var_to_ref[0])),
                            repr(float(self.ref_level or 0)), repr(float(self.var_to_ref[0])), repr(0.0)])
            for i in range(self.m):
                vr = "" if self.var_to_ref is None else repr(float(self.var_to_ref[i + 1]))
                w.writerow([i + 1, int(self.count[i]), repr(float(self.mean[i])), repr(float(self.var[i])),
                            repr(float(self.cost[i])), vr, repr(float(self.path_cost[i]))])

    @classmethod
    def from_csv(cls, path) -> "PilotTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ref = [r for r in rows if int(r["level"]) == 0]
        body = sorted((r for r in rows if int(r["level"]) > 0), key=lambda r: int(r["level"]))
        t = cls(
            count=np.array([int(r["count"]) for r in body], dtype=np.int64),
            mean=np.array([float(r["mean"]) for r in body]),
            var=np.array([float(r["var"]) for r in body]),
            cost=np.array([float(r["cost"]) for r in body]),
            path_cost=np.array([float(r["path_cost"]) for r in body]),
        )
        if ref:
            t.var_to_ref = np.array([float(ref[0]["var_to_ref"])] + [float(r["var_to_ref"]) for r in body])
            t.ref_level = int(float(ref[0]["cost"]))
            t.ref_count = int(ref[0]["count"])
            t.ref_mean = float(ref[0]["mean"])
        return t


def run_pilot(sampler: LevelSampler, m_pilot: int, n_pilot: int, rng: np.random.Generator,
              ref_mesh: int | None = None) -> PilotTable:
    """Sample ``n_pilot`` differences per level; optionally coupled paths to a reference.

    With ``ref_mesh`` set, ``n_pilot`` coupled paths are run to the level whose
    mesh has ``2**ref_mesh`` steps and ``var(Y_ref - Y_i)`` is recorded.
    """
    if m_pilot < 2:
        raise ValueError("m_pilot must be at least 2")
    if n_pilot < 100:
        raise ValueError("n_pilot must be at least 100")
    count = np.zeros(m_pilot, dtype=np.int64)
    mean = np.full(m_pilot, np.nan)
    var = np.full(m_pilot, np.nan)
    for i in range(1, m_pilot + 1):
        vals = sampler.sample_delta(i, n_pilot, rng)
        vals = vals[np.isfinite(vals)]
        if vals.size < 2:
            warnings.warn(f"pilot level {i}: every sample faulted; level excluded")
            continue
        acc = RunningMoments().update_batch(vals)
        count[i - 1], mean[i - 1], var[i - 1] = acc.count, acc.mean, acc.variance()
    cost = np.array([sampler.level_cost(i) for i in range(1, m_pilot + 1)])
    path_cost = np.array([sampler.marginal_path_cost(i) for i in range(1, m_pilot + 1)])
    table = PilotTable(count, mean, var, cost, path_cost)
    if ref_mesh is not None:
        L = ref_mesh + 1
        if L <= m_pilot:
            raise ValueError("the reference level must lie above the pilot levels")
        Y = sampler.sample_levels(list(range(1, m_pilot + 1)) + [L], n_pilot, rng)
        Y = Y[np.all(np.isfinite(Y), axis=1)]
        ref = Y[:, -1]
        table.var_to_ref = np.array([np.var(ref, ddof=1)] +
                                    [np.var(ref - Y[:, i], ddof=1) for i in range(m_pilot)])
        table.ref_level = L
        table.ref_count = int(ref.size)
        table.ref_mean = float(ref.mean())
    return table


def pav(y, w=None) -> np.ndarray:
    """Least-squares non-increasing fit by pooling adjacent violators."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] < vals[-1]:
            v, wt, s = vals.pop(), wts.pop(), sizes.pop()
            tot = wts[-1] + wt
            vals[-1] = (vals[-1] * wts[-1] + v * wt) / tot
            wts[-1] = tot
            sizes[-1] += s
    return np.repeat(vals, sizes)


def _betas(pilot: PilotTable) -> np.ndarray:
    var = np.nan_to_num(pilot.var, nan=0.0)
    if np.any(var < 0):
        raise ValueError("negative pilot variance")
    if np.count_nonzero(var > 0) < 1:
        raise ValueError("every pilot variance is zero: nothing to optimise")
    # costs relative to level 1, so that power-of-two rescaling is exact
    beta = np.sqrt(var / (pilot.cost / pilot.cost[0]))
    return np.maximum(beta, _BETA_FLOOR * beta.max())


def single_term_objective(var, cost, p) -> float:
    """``(sum var_i / p_i) (sum p_i kappa_i)`` over the given levels."""
    var, cost, p = (np.asarray(x, dtype=float) for x in (var, cost, p))
    return float(np.sum(var / p) * np.sum(p * cost))


def _pick_head(candidates):
    """Shortest head whose objective is within tolerance of the best."""
    best = min(obj for obj, _ in candidates)
    for obj, dist in candidates:
        if obj <= HEAD_TOLERANCE * best:
            return dist


def optimal_single_term(pilot: PilotTable, gamma: float | None = DEFAULT_GAMMA,
                        m: int | None = None) -> LevelDistribution:
    """``p_i`` proportional to ``sqrt(var_i / kappa_i)`` with a geometric tail.

    The tail mass is the pilot's weight above the head plus a geometric
    continuation of the last pilot level.  ``gamma=None`` gives finite support
    on the pilot levels.  With ``m=None`` the head length is chosen
    automatically.
    """
    beta = _betas(pilot)
    L = beta.size
    var = np.nan_to_num(pilot.var, nan=0.0)
    if gamma is None:
        return LevelDistribution(head=tuple(beta / beta.sum()), tail_mass=0.0)
    r = 2.0 ** -gamma
    cont = beta[-1] * r / (1.0 - r)
    heads = range(1, L + 1) if m is None else [m]
    candidates = []
    for k in heads:
        if not 1 <= k <= L:
            raise ValueError(f"head length must lie in 1..{L}")
        tail = beta[k:].sum() + cont
        total = beta[:k].sum() + tail
        dist = make_geometric_tail(beta[:k] / total, gamma)
        p = np.array([dist.pmf(i) for i in range(1, L + 1)])
        candidates.append((single_term_objective(var, pilot.cost, p), dist))
    return _pick_head(candidates)


def optimal_independent_sum(pilot: PilotTable, gamma: float | None = DEFAULT_GAMMA,
                            m: int | None = None) -> LevelDistribution:
    """Tail probabilities ``p~_i`` proportional to ``sqrt(var_i / kappa_i)``, made non-increasing."""
    pooled = pav(_betas(pilot))
    pt = pooled / pooled[0]
    L = pt.size
    var = np.nan_to_num(pilot.var, nan=0.0)
    if gamma is None:
        return LevelDistribution(head=tuple(pt - np.append(pt[1:], 0.0)), tail_mass=0.0)
    r = 2.0 ** -gamma
    heads = range(1, L + 1) if m is None else [m]
    candidates = []
    for k in heads:
        if not 1 <= k <= L:
            raise ValueError(f"head length must lie in 1..{L}")
        P = pt[k] if k < L else pt[-1] * r
        head = pt[:k] - np.append(pt[1:k], P)
        dist = LevelDistribution(head=tuple(head), gamma=gamma, tail_mass=1.0 - math.fsum(head))
        tails = np.array([dist.tail_prob(i) for i in range(1, L + 1)])
        candidates.append((single_term_objective(var, pilot.cost, tails), dist))
    return _pick_head(candidates)


@dataclass(frozen=True)
class CoupledSumPlan:
    """Best subsequence ``J`` ending at ``m``, its law over ``J``-indexed levels."""

    J: tuple[int, ...]
    dist: LevelDistribution
    objective: float
    floored: tuple[int, ...] = ()


def coupled_sum_objective(v, path_cost, J):
    """Objective and tail probabilities of the subsequence ``J``.

    ``v[i]`` is ``var(Y_ref - Y_i)`` for ``i = 0..m`` and ``path_cost[i-1]`` the
    marginal cost of level ``i``.
    """
    v = np.asarray(v, dtype=float)
    prev = (0,) + tuple(J[:-1])
    raw = np.array([v[a] - v[b] for a, b in zip(prev, J)])
    floored = tuple(k + 1 for k, d in enumerate(raw) if d < 0)
    vd = np.maximum(raw, 0.0)
    kappa = np.array([path_cost[j - 1] for j in J], dtype=float)
    raw_q = np.sqrt(vd / (kappa / path_cost[0]))
    if raw_q.max() <= 0:
        return float("nan"), raw_q, floored
    # levels with no variance keep a tiny probability so the sum stays unbiased
    q = pav(np.maximum(raw_q, _BETA_FLOOR * raw_q.max()))
    q = q / q[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(vd > 0, vd / q, 0.0)
    return float(terms.sum() * np.sum(q * kappa)), q, floored


def optimal_coupled_sum(pilot: PilotTable, m: int = 6,
                        gamma: float | None = DEFAULT_GAMMA) -> CoupledSumPlan:
    """Exhaustive search over subsequences ``J`` of ``1..m`` that end at ``m``."""
    if pilot.var_to_ref is None:
        raise ValueError("coupled-sum tuning needs a pilot with var_to_ref")
    if not 1 <= m <= min(MAX_SUBSEQUENCE_LEVEL, pilot.m):
        raise ValueError(f"m must lie in 1..{min(MAX_SUBSEQUENCE_LEVEL, pilot.m)}")
    v = pilot.var_to_ref[: m + 1]
    cands = [tuple(sorted(s)) + (m,) for k in range(m) for s in itertools.combinations(range(1, m), k)]
    best = None
    for J in sorted(cands):
        obj, q, floored = coupled_sum_objective(v, pilot.path_cost, J)
        if math.isnan(obj):
            continue
        if best is None or obj < best[0]:
            best = (obj, J, q, floored)
    if best is None or best[0] == 0:
        raise ValueError("degenerate coupled-sum objective: no variance to allocate")
    obj, J, q, floored = best
    if floored:
        warnings.warn(f"negative variance differences floored at zero on J-positions {floored}")
    return CoupledSumPlan(J=J, dist=_dist_from_tails(q, gamma), objective=obj, floored=floored)


def _dist_from_tails(q, gamma):
    q = np.asarray(q, dtype=float)
    if gamma is None:
        return LevelDistribution(head=tuple(q - np.append(q[1:], 0.0)), tail_mass=0.0)
    P = q[-1] * 2.0 ** -gamma
    head = q - np.append(q[1:], P)
    return LevelDistribution(head=tuple(head), gamma=gamma, tail_mass=1.0 - math.fsum(head))
