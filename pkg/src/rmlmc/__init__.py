"""Randomized multilevel Monte Carlo estimators with stratified level allocation."""

from rmlmc.analytic import AnalyticChain, DeterministicChain, brute_force_scheme_variance
from rmlmc.dist import LevelDistribution, finite_distribution, make_geometric_tail
from rmlmc.estimator import (CountMoments, EstimatorBatch, EstimatorSpec, count_moments,
                             general_variance, simulate)
from rmlmc.harness import ExperimentConfig, emit_report, parse_report, run_experiment
from rmlmc.kernels import BACKEND
from rmlmc.level_diff import SdeModel, SdeSampler, SubsequenceSampler, model_catalog
from rmlmc.scheme import LevelAllocation, draw, draw_counts
from rmlmc.stats import RunningMoments, ire
from rmlmc.tune import (PilotTable, optimal_coupled_sum, optimal_independent_sum,
                        optimal_single_term, run_pilot)

__version__ = "0.1.0"

__all__ = [
    "AnalyticChain", "DeterministicChain", "brute_force_scheme_variance",
    "LevelDistribution", "finite_distribution", "make_geometric_tail",
    "CountMoments", "EstimatorBatch", "EstimatorSpec", "count_moments", "general_variance", "simulate",
    "ExperimentConfig", "emit_report", "parse_report", "run_experiment",
    "BACKEND",
    "SdeModel", "SdeSampler", "SubsequenceSampler", "model_catalog",
    "LevelAllocation", "draw", "draw_counts",
    "RunningMoments", "ire",
    "PilotTable", "optimal_coupled_sum", "optimal_independent_sum", "optimal_single_term", "run_pilot",
]
