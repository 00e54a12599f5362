import math

import numpy as np
import pytest

from rmlmc.analytic import AnalyticChain, DeterministicChain
from rmlmc.level_diff import SdeSampler, model_catalog
from rmlmc.tune import (PilotTable, coupled_sum_objective, optimal_coupled_sum,
                        optimal_independent_sum, optimal_single_term, pav, run_pilot,
                        single_term_objective)


def test_deterministic_pilot_has_zero_variance(rng):
    t = run_pilot(DeterministicChain(), 5, 200, rng)
    assert np.all(t.var == 0)


def test_pilot_variances_match_chain(rng):
    c = AnalyticChain([0.3, 0.2, 0.1, 0.05], [1.0, 0.5, 0.25, 0.125])
    t = run_pilot(c, 4, 20_000, rng)
    sd = np.sqrt(2 / (t.count - 1)) * c.b ** 2
    assert np.all(np.abs(t.var - c.b ** 2) <= 4 * sd)


def test_gbm_pilot_costs(rng):
    t = run_pilot(SdeSampler(model_catalog()["gbm"]), 5, 200, rng)
    assert list(t.cost) == [1, 3, 6, 12, 24]
    assert list(t.path_cost) == [1, 2, 4, 8, 16]


def test_pilot_validation(rng):
    with pytest.raises(ValueError):
        run_pilot(DeterministicChain(), 1, 200, rng)
    with pytest.raises(ValueError):
        run_pilot(DeterministicChain(), 3, 50, rng)
    with pytest.raises(ValueError):
        run_pilot(SdeSampler(model_catalog()["gbm"]), 4, 200, rng, ref_mesh=2)


def test_pilot_csv_round_trip(tmp_path, rng):
    c = AnalyticChain([0.3, 0.2, 0.1, 0.05, 0.02], [1.0, 0.5, 0.25, 0.1, 0.05], mode="partial")
    t = run_pilot(c, 3, 500, rng, ref_mesh=3)
    t.to_csv(tmp_path / "p.csv")
    u = PilotTable.from_csv(tmp_path / "p.csv")
    for name in ("count", "mean", "var", "cost", "path_cost", "var_to_ref"):
        assert np.array_equal(getattr(t, name), getattr(u, name))
    assert (u.ref_level, u.ref_count, u.ref_mean) == (t.ref_level, t.ref_count, t.ref_mean)


def test_proportional_rule():
    d = optimal_single_term(PilotTable.from_arrays([4, 1], [1, 4]), gamma=None)
    assert np.allclose(d.head, [0.8, 0.2]) and d.finite
    d = optimal_single_term(PilotTable.from_arrays([1, 1, 1], [1, 1, 1]), gamma=None)
    assert np.allclose(d.head, [1 / 3] * 3)


@pytest.mark.slow
def test_gbm_head_is_one_level(rng):
    t = run_pilot(SdeSampler(model_catalog()["gbm"]), 8, 20_000, rng)
    assert optimal_single_term(t).pmf(1) > 0.9


def test_automatic_head_is_normalised(rng):
    t = PilotTable.from_arrays(2.0 ** -(1.5 * np.arange(1, 9)), 2.0 ** np.arange(8))
    for fn in (optimal_single_term, optimal_independent_sum):
        d = fn(t)
        assert sum(d.head) + d.tail_mass == pytest.approx(1.0, abs=1e-12)
        assert all(p >= 0 for p in d.head)
        assert fn(t, m=3).m == 3


def test_pav():
    assert np.array_equal(pav([3.0, 2.0, 2.0, 1.0]), [3.0, 2.0, 2.0, 1.0])
    assert np.allclose(pav([0.5, 0.7, 0.3]), [0.6, 0.6, 0.3])
    y = np.random.default_rng(0).random(30)
    assert np.all(np.diff(pav(y)) <= 1e-15)


def test_pooled_sum_distribution():
    d = optimal_independent_sum(PilotTable.from_arrays([0.25, 0.49, 0.09], [1, 1, 1]), gamma=None)
    assert np.allclose([d.tail_prob(i) for i in (1, 2, 3)], [1.0, 1.0, 0.5])
    assert all(p >= 0 for p in d.head) and sum(d.head) == pytest.approx(1.0)


def test_coupled_two_level_hand_case():
    v, kappa = np.array([2.0, 1.0, 0.0]), np.array([1.0, 4.0])
    assert coupled_sum_objective(v, kappa, (2,))[0] == pytest.approx(8.0)
    assert coupled_sum_objective(v, kappa, (1, 2))[0] == pytest.approx(9.0)
    plan = optimal_coupled_sum(PilotTable.from_arrays([1, 1], kappa, var_to_ref=v), 2, gamma=None)
    assert plan.J == (2,) and plan.objective == pytest.approx(8.0)


def test_coupled_no_skipping_when_variance_decays_fast():
    # flat marginal costs would make the top level free, so costs double here
    m = 6
    v = 16.0 ** -np.arange(m + 1)
    v[-1] = 0.0
    cost = 2.0 ** np.arange(m)
    plan = optimal_coupled_sum(PilotTable.from_arrays(np.ones(m), cost, var_to_ref=v), m, gamma=None)
    assert plan.J == tuple(range(1, m + 1))


def test_coupled_single_level():
    plan = optimal_coupled_sum(PilotTable.from_arrays([1.0], [1.0], var_to_ref=[1.0, 0.0]), 1, gamma=None)
    assert plan.J == (1,) and plan.dist.head == (1.0,)


def test_coupled_negative_differences_are_floored():
    v = np.array([1.0, 0.4, 0.5])
    t = PilotTable.from_arrays(np.ones(2), [1.0, 10.0], var_to_ref=v)
    with pytest.warns(UserWarning):
        plan = optimal_coupled_sum(t, 2, gamma=None)
    assert plan.J == (1, 2) and plan.floored == (2,)
    assert plan.objective == pytest.approx(0.6 * (1 + 10e-9), rel=1e-6)
    assert plan.dist.pmf(2) > 0


def test_coupled_rejects_degenerate():
    t = PilotTable.from_arrays(np.ones(2), np.ones(2), var_to_ref=np.zeros(3))
    with pytest.raises(ValueError):
        optimal_coupled_sum(t, 2)
    with pytest.raises(ValueError):
        optimal_coupled_sum(PilotTable.from_arrays(np.ones(2), np.ones(2)), 2)


def test_coupled_tail_continues_geometrically():
    v = np.array([1.0, 0.5, 0.2, 0.0])
    plan = optimal_coupled_sum(PilotTable.from_arrays(np.ones(3), [1, 2, 4], var_to_ref=v), 3, gamma=1.5)
    K = len(plan.dist.head)
    q = [plan.dist.tail_prob(K + k) for k in range(4)]
    assert np.allclose(np.array(q[1:]) / q[:-1], 2 ** -1.5)


@pytest.mark.parametrize("c", [0.25, 2.0, 8.0, 1024.0, 2.0 ** -7])
def test_cost_scale_invariance(c, rng):
    var = rng.uniform(0.01, 1, 6)
    cost = 2.0 ** np.arange(6)
    v = np.append(np.sort(rng.uniform(0, 1, 6))[::-1], 0.0)
    a = PilotTable.from_arrays(var, cost, var_to_ref=v)
    b = PilotTable.from_arrays(var, c * cost, var_to_ref=v)
    assert optimal_single_term(a) == optimal_single_term(b)
    assert optimal_independent_sum(a) == optimal_independent_sum(b)
    pa, pb = optimal_coupled_sum(a, 6), optimal_coupled_sum(b, 6)
    assert pa.J == pb.J and pa.dist == pb.dist


def test_sum_never_beats_single_term(rng):
    for _ in range(50):
        var = rng.uniform(0.01, 1, 5)
        cost = rng.uniform(0.5, 20, 5)
        t = PilotTable.from_arrays(var, cost)
        ps = np.array(optimal_single_term(t, gamma=None).head)
        di = optimal_independent_sum(t, gamma=None)
        pt = np.array([di.tail_prob(i) for i in range(1, 6)])
        assert single_term_objective(var, cost, ps) <= single_term_objective(var, cost, pt) * (1 + 1e-12)
