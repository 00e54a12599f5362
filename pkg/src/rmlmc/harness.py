"""Replication experiments: tuned distributions, seeded blocks, IRE reports.

Replications are grouped into fixed-size blocks.  Block ``b`` of cell
``(model, family, scheme, n)`` draws from its own stream seeded by
``(seed, crc32(cell), b)``, and block results are merged in block order, so
a report depends only on the configuration and never on how many worker
processes computed it.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from rmlmc.analytic import AnalyticChain, DeterministicChain
from rmlmc.dist import LevelDistribution, make_geometric_tail
from rmlmc.estimator import ESTIMATOR_SCHEMES, FAMILIES, EstimatorSpec, HybridSplit, simulate
from rmlmc.level_diff import LevelSampler, SdeSampler, SubsequenceSampler, model_catalog
from rmlmc.stats import RunningMoments, ire
from rmlmc.tune import (DESK_REF_MESH, optimal_coupled_sum, optimal_independent_sum,
                        optimal_single_term, run_pilot)

MODELS = ("gbm", "cir", "heston", "modgbm", "det", "gauss")
REPORT_COLUMNS = ("model", "family", "scheme", "n", "reps", "mean", "stderr", "mean_cost",
                  "ire", "truth", "faults", "seconds")
WORKERS_ENV = "RMLMC_WORKERS"
MAX_FAULT_FRACTION = 1e-3


class ExperimentError(RuntimeError):
    pass


def gauss_chain() -> AnalyticChain:
    """Ten-level partial-sum Gaussian chain used as the ``gauss`` model."""
    i = np.arange(1, 11)
    return AnalyticChain(2.0 ** -i, 2.0 ** (-0.75 * i), mode="partial", costs=2.0 ** (i - 1))


def make_sampler(model: str, truth: float | None = None) -> LevelSampler:
    if model == "det":
        s = DeterministicChain()
    elif model == "gauss":
        s = gauss_chain()
    else:
        cat = model_catalog()
        if model not in cat:
            raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
        s = SdeSampler(cat[model])
    if truth is not None:
        s.truth = float(truth)
    return s


def _as_tuple(x, cast=str):
    if isinstance(x, (list, tuple)):
        return tuple(cast(v) for v in x)
    if isinstance(x, str) and "," in x:
        return tuple(cast(v) for v in x.split(","))
    return (cast(x),)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    family: tuple[str, ...]
    scheme: tuple[str, ...]
    n: tuple[int, ...]
    reps: int
    seed: int = 0
    dist: dict | None = None  # explicit distribution record; tuned when absent
    subsequence: tuple[int, ...] | None = None  # csum levels for an explicit dist
    pilot_levels: int = 10
    pilot_samples: int = 20000
    ref_mesh: int = DESK_REF_MESH
    gamma: float = 1.5
    head: int | None = None
    csum_m: int = 6
    truth: float | None = None
    block_reps: int = 100
    workers: int | None = None
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", _as_tuple(self.family))
        object.__setattr__(self, "scheme", _as_tuple(self.scheme))
        object.__setattr__(self, "n", _as_tuple(self.n, int))
        if self.subsequence is not None:
            object.__setattr__(self, "subsequence", _as_tuple(self.subsequence, int))
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        for f in self.family:
            if f not in FAMILIES:
                raise ValueError(f"unknown family {f!r}; expected one of {FAMILIES}")
        for s in self.scheme:
            if s not in ESTIMATOR_SCHEMES or s == "cond-res":
                raise ValueError(f"scheme {s!r} cannot be run by the harness")
            if s == "hybrid" and any(f != "single" for f in self.family):
                raise ValueError("hybrid runs with the single family only")
        if not self.n or min(self.n) < 1:
            raise ValueError("n values must be positive")
        if self.reps < 2:
            raise ValueError("need at least two replications")
        if self.block_reps < 1:
            raise ValueError("block_reps must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class ReportRow:
    model: str
    family: str
    scheme: str
    n: int
    reps: int
    mean: float
    stderr: float
    mean_cost: float
    ire: float
    truth: float
    faults: int
    seconds: float


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)


# -- distributions per family ---------------------------------------------------------

def block_stream(seed: int, key: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, zlib.crc32(key.encode()), index])
    return np.random.Generator(np.random.PCG64(ss))


def plan_distributions(config: ExperimentConfig, sampler: LevelSampler):
    """``family -> (dist, sampler)`` from the explicit record or a pilot run."""
    out = {}
    if config.dist is not None:
        dist = LevelDistribution.from_dict(config.dist)
        for fam in config.family:
            s = sampler
            if fam == "csum" and config.subsequence:
                s = SubsequenceSampler(sampler, config.subsequence)
            out[fam] = (dist, s)
        return out
    if config.model == "det":
        dist = make_geometric_tail([0.5], 1.0)
        return {fam: (dist, sampler) for fam in config.family}
    coupled = "csum" in config.family
    pilot = run_pilot(sampler, config.pilot_levels, config.pilot_samples,
                      block_stream(config.seed, f"pilot/{config.model}", 0),
                      ref_mesh=config.ref_mesh if coupled else None)
    for fam in config.family:
        if fam == "single":
            out[fam] = (optimal_single_term(pilot, config.gamma, config.head), sampler)
        elif fam == "isum":
            out[fam] = (optimal_independent_sum(pilot, config.gamma, config.head), sampler)
        else:
            plan = optimal_coupled_sum(pilot, config.csum_m, config.gamma)
            out[fam] = (plan.dist, SubsequenceSampler(sampler, plan.J))
    return out


def hybrid_split(dist: LevelDistribution, n: int) -> HybridSplit:
    """MLMC counts ``floor(n p_i)`` on the head, single-term draws for the rest."""
    if dist.finite:
        raise ValueError("hybrid needs a distribution with a tail")
    fixed = [math.floor(n * p) for p in dist.head]
    if not fixed or min(fixed) < 1:
        raise ValueError(f"n = {n} is too small for a hybrid split of this head")
    r = max(1, n - sum(fixed))
    tail = LevelDistribution(head=(), gamma=dist.gamma, tail_mass=1.0)
    return HybridSplit(tuple(fixed), r, tail)


def cell_spec(family, scheme, dist, n) -> EstimatorSpec:
    if scheme == "hybrid":
        return EstimatorSpec(family, scheme, dist, n, hybrid=hybrid_split(dist, n))
    return EstimatorSpec(family, scheme, dist, n)


# -- execution ------------------------------------------------------------------------

def _run_block(args):
    spec, sampler, seed, key, index, reps = args
    batch = simulate(spec, sampler, block_stream(seed, key, index), reps)
    ok = ~batch.faulted
    acc = RunningMoments().update_batch(batch.estimates[ok], batch.costs[ok])
    return acc, int(batch.faulted.sum())


def _workers(config):
    if config.workers is not None:
        return max(1, int(config.workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    sampler = make_sampler(config.model, config.truth)
    plans = plan_distributions(config, sampler)
    truth = sampler.truth if sampler.truth is not None else float("nan")
    workers = _workers(config)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    report = ExperimentReport()
    try:
        for fam in config.family:
            dist, smp = plans[fam]
            for scheme in config.scheme:
                for n in config.n:
                    key = f"{config.model}/{fam}/{scheme}/{n}"
                    spec = cell_spec(fam, scheme, dist, n)
                    tasks = [(spec, smp, config.seed, key, b, min(config.block_reps, config.reps - start))
                             for b, start in enumerate(range(0, config.reps, config.block_reps))]
                    t0 = time.perf_counter()
                    results = list(pool.map(_run_block, tasks)) if pool else [_run_block(t) for t in tasks]
                    seconds = time.perf_counter() - t0 if config.timing else 0.0
                    acc = RunningMoments()
                    faults = 0
                    for a, f in results:
                        acc = acc.merge(a)
                        faults += f
                    if faults > MAX_FAULT_FRACTION * config.reps:
                        raise ExperimentError(
                            f"cell {key}: {faults} of {config.reps} replications faulted")
                    report.rows.append(ReportRow(
                        model=config.model, family=fam, scheme=scheme, n=n, reps=acc.count,
                        mean=acc.mean, stderr=acc.stderr() if acc.count > 1 else float("nan"), mean_cost=acc.mean_cost,
                        ire=ire(acc, truth), truth=truth, faults=faults, seconds=seconds))
    finally:
        if pool:
            pool.shutdown()
    return report


# -- serialisation --------------------------------------------------------------------

_INT_COLUMNS = {"n", "reps", "faults"}
_STR_COLUMNS = {"model", "family", "scheme"}


def _cell(name, value):
    if name in _STR_COLUMNS or name in _INT_COLUMNS:
        return str(value)
    return repr(float(value))


def emit_report(report: ExperimentReport, fmt: str = "csv", path=None) -> str:
    """Serialise to CSV (one row per cell) or JSON; write to ``path`` if given."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report.rows:
            w.writerow([_cell(c, getattr(row, c)) for c in REPORT_COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps({"columns": list(REPORT_COLUMNS),
                           "rows": [asdict(r) for r in report.rows]}, indent=1) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _typed(name, value):
    if name in _STR_COLUMNS:
        return str(value)
    if name in _INT_COLUMNS:
        return int(value)
    return float(value)


def parse_report(text: str) -> ExperimentReport:
    """Inverse of :func:`emit_report` for either format."""
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return ExperimentReport([ReportRow(**{k: _typed(k, r[k]) for k in REPORT_COLUMNS})
                                 for r in data["rows"]])
    rows = list(csv.DictReader(io.StringIO(text)))
    return ExperimentReport([ReportRow(**{k: _typed(k, r[k]) for k in REPORT_COLUMNS}) for r in rows])
