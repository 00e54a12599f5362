"""Level-difference samplers for the SDE models and the sampler interface.

Level ``i`` means the Milstein approximation on the dyadic mesh with
``2**(i-1)`` steps over ``[0, T]``, and ``Y_0 = 0``.  Cost is counted in
Milstein steps: evaluating ``Y_l`` costs ``2**(l-1)``.

All sampling goes through a streaming kernel that draws the finest
increments in blocks and sums them pairwise into every coarser mesh that is
requested, so arbitrarily deep levels run in bounded memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from rmlmc import kernels

MODEL_KINDS = ("gbm", "cir", "heston", "modgbm")
_KIND_CODE = {"gbm": 0, "cir": 1, "modgbm": 2}

# doubles per generated block of increments, and rows per kernel call
_ELEM_BLOCK = 1 << 18
_ROW_BLOCK = 1 << 17


class SampleFault(ArithmeticError):
    """A simulated value overflowed or turned into NaN."""


@dataclass(frozen=True)
class DeltaSample:
    level: int
    value: float
    cost: float


# -- Brownian grids -----------------------------------------------------------

@dataclass(frozen=True)
class BrownianGrid:
    """Brownian increments on the mesh with ``2**level`` steps over ``[0, T]``.

    ``increments`` may carry leading batch dimensions; the last axis is time.
    """

    level: int
    increments: np.ndarray
    T: float = 1.0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.shape[-1] != 1 << self.level:
            raise ValueError(f"level {self.level} needs {1 << self.level} increments, got {inc.shape[-1]}")
        object.__setattr__(self, "increments", inc)

    @classmethod
    def sample(cls, level: int, rng: np.random.Generator, size=(), T: float = 1.0) -> "BrownianGrid":
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        inc = rng.standard_normal(shape + (1 << level,)) * math.sqrt(T / (1 << level))
        return cls(level, inc, T)

    @property
    def dt(self) -> float:
        return self.T / (1 << self.level)

    def coarsen(self) -> "BrownianGrid":
        if self.level < 1:
            raise ValueError("cannot coarsen a level-0 grid")
        inc = self.increments
        return BrownianGrid(self.level - 1, inc[..., 0::2] + inc[..., 1::2], self.T)


def swap_pairs(increments: np.ndarray) -> np.ndarray:
    """Swap each consecutive pair of increments (the antithetic reordering)."""
    inc = np.asarray(increments)
    out = np.empty_like(inc)
    out[..., 0::2] = inc[..., 1::2]
    out[..., 1::2] = inc[..., 0::2]
    return out


# -- models -------------------------------------------------------------------

@dataclass(frozen=True)
class SdeModel:
    """One of the four test diffusions with its payoff and reference value.

    The payoff is ``discount * (x - strike)_+``, or the identity when
    ``strike`` is ``None``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    x0: float = 1.0
    v0: float = 0.04
    strike: float | None = None
    discount: float = 1.0
    truth: float | None = None
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.kind!r}; expected one of {MODEL_KINDS}")
        p = self.params
        for key in ("kappa", "theta"):
            if key in p and not p[key] > 0:
                raise ValueError(f"{key} must be positive")
        if "sigma" in p and p["sigma"] < 0:
            raise ValueError("sigma must be non-negative")
        if "rho" in p and not -1.0 <= p["rho"] <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    def kernel_params(self) -> np.ndarray:
        p = self.params
        order = {
            "gbm": ("mu", "sigma"),
            "cir": ("kappa", "theta", "sigma"),
            "modgbm": ("sigma",),
            "heston": ("mu", "kappa", "theta", "sigma", "rho"),
        }[self.kind]
        return np.array([float(p[k]) for k in order])

    def payoff(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.strike is None:
            return x
        return self.discount * np.maximum(x - self.strike, 0.0)

    def with_params(self, **changes) -> "SdeModel":
        params = dict(self.params)
        top = {k: changes.pop(k) for k in list(changes) if k in ("x0", "v0", "strike", "discount", "truth", "T")}
        params.update(changes)
        return replace(self, params=params, **top)


def model_catalog() -> dict[str, SdeModel]:
    """The four benchmark models with their reference expectations."""
    disc = math.exp(-0.05)
    return {
        "gbm": SdeModel("gbm", {"mu": 0.05, "sigma": 0.2}, x0=1.0, strike=1.0, discount=disc,
                        truth=0.104505836),
        "cir": SdeModel("cir", {"kappa": 5.0, "theta": 0.04, "sigma": 0.25}, x0=0.04, strike=0.03,
                        discount=disc, truth=0.01142686),
        "heston": SdeModel("heston", {"mu": 0.05, "kappa": 5.0, "theta": 0.04, "sigma": 0.25, "rho": -0.5},
                           x0=1.0, v0=0.04, strike=1.0, discount=disc, truth=0.10459672),
        "modgbm": SdeModel("modgbm", {"sigma": 0.1}, x0=1.0, strike=None, truth=1.395612139),
    }


# -- single-path helpers ------------------------------------------------------

def _rows(increments):
    inc = np.asarray(increments, dtype=np.float64)
    return np.ascontiguousarray(inc.reshape(-1, inc.shape[-1])), inc.shape[:-1]


def milstein_terminal(model: SdeModel, grid: BrownianGrid):
    """Terminal state of the scalar Milstein recursion driven by ``grid``."""
    if model.kind == "heston":
        raise ValueError("heston is bivariate; use heston_terminal or antithetic_delta")
    dW, shape = _rows(grid.increments)
    slot = np.full(grid.level + 1, -1, dtype=np.int64)
    slot[grid.level] = 0
    x = np.full((dW.shape[0], 1), model.x0)
    acc = np.zeros((dW.shape[0], max(grid.level, 1)))
    kernels.scalar_advance(_KIND_CODE[model.kind], model.kernel_params(), dW, grid.level, 0,
                           slot, acc, x, grid.T)
    out = x[:, 0].reshape(shape)
    if not np.all(np.isfinite(out)):
        raise SampleFault(f"non-finite {model.kind} terminal state")
    return out if shape else float(out)


def heston_terminal(model: SdeModel, grid1: BrownianGrid, grid2: BrownianGrid):
    """Truncated Milstein terminal ``(S, V)`` for independent drivers ``W1, W2``."""
    if grid1.level != grid2.level:
        raise ValueError("driver grids must share a level")
    dW1, shape = _rows(grid1.increments)
    dW2, _ = _rows(grid2.increments)
    L = grid1.level
    slot = np.full(L + 1, -1, dtype=np.int64)
    slot[L] = 0
    rows = dW1.shape[0]
    s = np.full((rows, 1), model.x0)
    v = np.full((rows, 1), model.v0)
    acc = np.zeros((rows, max(L, 1)))
    kernels.heston_advance(model.kernel_params(), dW1, dW2, L, 0, slot, acc, acc.copy(), s, v,
                           False, np.zeros((rows, 4)), grid1.T)
    S, V = s[:, 0].reshape(shape), v[:, 0].reshape(shape)
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(V))):
        raise SampleFault("non-finite heston terminal state")
    return (S, V) if shape else (float(S), float(V))


# -- sampler interface --------------------------------------------------------

class LevelSampler:
    """Source of level differences for the estimators.

    Subclasses implement :meth:`sample_levels` (values ``Y_l`` for several
    levels along one coupled path) and :meth:`levels_cost`.  Returned arrays
    may contain non-finite entries; the estimator engine treats those as
    sample faults.
    """

    truth: float | None = None

    def levels_cost(self, levels) -> float:
        raise NotImplementedError

    def sample_levels(self, levels, size: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def level_cost(self, i: int) -> float:
        """Cost of one coupled ``Delta_i = Y_i - Y_{i-1}``."""
        return self.levels_cost([i - 1, i] if i > 1 else [i])

    def path_cost(self, R: int) -> float:
        """Cost of ``Delta_1..Delta_R`` taken from a single path."""
        return self.levels_cost(range(1, R + 1))

    def marginal_path_cost(self, i: int) -> float:
        return self.path_cost(i) - (self.path_cost(i - 1) if i > 1 else 0.0)

    def sample_delta(self, i: int, size: int, rng: np.random.Generator) -> np.ndarray:
        if i == 1:
            return self.sample_levels([1], size, rng)[:, 0]
        Y = self.sample_levels([i - 1, i], size, rng)
        return Y[:, 1] - Y[:, 0]

    def sample_paths(self, R: int, size: int, rng: np.random.Generator) -> np.ndarray:
        """``(size, R)`` matrix of ``Delta_1..Delta_R``, one path per row."""
        Y = self.sample_levels(range(1, R + 1), size, rng)
        return np.diff(Y, axis=1, prepend=0.0)


class SdeSampler(LevelSampler):
    """Milstein level differences for an :class:`SdeModel`.

    With ``antithetic`` (the default for heston) single differences use the
    antithetic truncated scheme; coupled whole-path draws always use the
    plain scheme.
    """

    def __init__(self, model: SdeModel, antithetic: bool | None = None):
        self.model = model
        self.truth = model.truth
        self.antithetic = (model.kind == "heston") if antithetic is None else bool(antithetic)
        if self.antithetic and model.kind != "heston":
            raise ValueError("the antithetic scheme is implemented for heston only")
        self._params = model.kernel_params()

    def levels_cost(self, levels) -> float:
        return float(sum(1 << (l - 1) for l in set(levels) if l >= 1))

    def level_cost(self, i: int) -> float:
        if self.antithetic and i > 1:
            return float(2 * (1 << (i - 1)) + (1 << (i - 2)))
        return super().level_cost(i)

    def _run(self, meshes, size, rng, antithetic=False):
        """Terminal states on each mesh of ``meshes`` (sorted mesh exponents)."""
        m = self.model
        f = meshes[-1]
        slot = np.full(f + 1, -1, dtype=np.int64)
        for col, mesh in enumerate(meshes):
            slot[mesh] = col
        nsteps = 1 << f
        sd = math.sqrt(m.T / nsteps)
        out = np.empty((size, len(meshes)))
        anti_out = np.empty(size) if antithetic else None
        heston = m.kind == "heston"
        for start in range(0, size, _ROW_BLOCK):
            rows = min(_ROW_BLOCK, size - start)
            chunk = max(1, min(nsteps, _ELEM_BLOCK // rows))
            x = np.full((rows, len(meshes)), m.x0)
            acc = np.zeros((rows, max(f, 1)))
            if heston:
                v = np.full((rows, len(meshes)), m.v0)
                acc2 = np.zeros_like(acc)
                anti = np.zeros((rows, 4))
                anti[:, 0], anti[:, 1] = m.x0, m.v0
            for step0 in range(0, nsteps, chunk):
                c = min(chunk, nsteps - step0)
                if heston:
                    dW1 = rng.standard_normal((rows, c))
                    dW1 *= sd
                    dW2 = rng.standard_normal((rows, c))
                    dW2 *= sd
                    kernels.heston_advance(self._params, dW1, dW2, f, step0, slot, acc, acc2,
                                           x, v, antithetic, anti, m.T)
                else:
                    dW = rng.standard_normal((rows, c))
                    dW *= sd
                    kernels.scalar_advance(_KIND_CODE[m.kind], self._params, dW, f, step0,
                                           slot, acc, x, m.T)
            out[start:start + rows] = x
            if antithetic:
                anti_out[start:start + rows] = anti[:, 0]
        return out, anti_out

    def sample_levels(self, levels, size, rng):
        levels = list(levels)
        meshes = sorted({l - 1 for l in levels if l >= 1})
        Y = np.zeros((size, len(levels)))
        if not meshes or size == 0:
            return Y
        X, _ = self._run(meshes, size, rng)
        col = {mesh: k for k, mesh in enumerate(meshes)}
        vals = self.model.payoff(X)
        for j, l in enumerate(levels):
            if l >= 1:
                Y[:, j] = vals[:, col[l - 1]]
        return Y

    def sample_delta(self, i, size, rng):
        if not self.antithetic or i == 1:
            return super().sample_delta(i, size, rng)
        if size == 0:
            return np.zeros(0)
        X, anti = self._run([i - 2, i - 1], size, rng, antithetic=True)
        f = self.model.payoff
        return 0.5 * (f(X[:, 1]) + f(anti)) - f(X[:, 0])


class SubsequenceSampler(LevelSampler):
    """Re-index a sampler along an increasing level subsequence ``J``.

    Index ``k <= len(J)`` maps to level ``J[k-1]``; beyond that the levels
    continue consecutively from ``J[-1]``.
    """

    def __init__(self, base: LevelSampler, J):
        J = tuple(int(j) for j in J)
        if not J or any(b <= a for a, b in zip(J, J[1:])) or J[0] < 1:
            raise ValueError(f"J must be a strictly increasing sequence of levels, got {J}")
        self.base = base
        self.J = J
        self.truth = base.truth

    def level_of(self, k: int) -> int:
        if k <= 0:
            return 0
        if k <= len(self.J):
            return self.J[k - 1]
        return self.J[-1] + (k - len(self.J))

    def levels_cost(self, levels):
        return self.base.levels_cost([self.level_of(k) for k in levels])

    def sample_levels(self, levels, size, rng):
        return self.base.sample_levels([self.level_of(k) for k in levels], size, rng)


# -- scalar convenience wrappers ------------------------------------------------

def _one(values, i, cost):
    v = float(values[0])
    if not math.isfinite(v):
        raise SampleFault(f"non-finite level-{i} difference")
    return DeltaSample(level=i, value=v, cost=cost)


def sample_delta_coupled(model: SdeModel, i: int, rng: np.random.Generator) -> DeltaSample:
    """One ``Delta_i = f(fine) - f(coarse)`` from a shared Brownian path (plain scheme)."""
    if i < 1:
        raise ValueError("levels start at 1")
    s = SdeSampler(model, antithetic=False)
    return _one(s.sample_delta(i, 1, rng), i, s.level_cost(i))


def antithetic_delta(model: SdeModel, i: int, rng: np.random.Generator) -> DeltaSample:
    """Antithetic truncated Milstein difference for heston."""
    if model.kind != "heston":
        raise ValueError("antithetic_delta requires the heston model")
    if i < 1:
        raise ValueError("levels start at 1")
    s = SdeSampler(model, antithetic=True)
    return _one(s.sample_delta(i, 1, rng), i, s.level_cost(i))


def sample_path_deltas(model_or_sampler, R: int, rng: np.random.Generator,
                       coupling: str = "coupled") -> list[DeltaSample]:
    """``Delta_1..Delta_R`` from one path (coupled) or fresh paths per level."""
    if R < 1:
        raise ValueError("R must be at least 1")
    s = model_or_sampler
    if isinstance(s, SdeModel):
        s = SdeSampler(s, antithetic=False)
    if coupling == "coupled":
        vals = s.sample_paths(R, 1, rng)[0]
        costs = [s.marginal_path_cost(i) for i in range(1, R + 1)]
        return [_one(vals[i - 1:i], i, costs[i - 1]) for i in range(1, R + 1)]
    if coupling == "independent":
        return [_one(s.sample_delta(i, 1, rng), i, s.level_cost(i)) for i in range(1, R + 1)]
    raise ValueError(f"coupling must be 'coupled' or 'independent', got {coupling!r}")
