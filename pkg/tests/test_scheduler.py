import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ehsched._validation import SizeLimitError, UnsupportedConfigurationError
from ehsched.bandwidth import fit_bandwidth_slots
from ehsched.model import Allocation, Instance, check_feasible, objective
from ehsched.scheduler import (MAX_ITERATIONS, TOLERANCE, OptimalScheduler, block_gaps, solve,
                               solve_energy, solve_general_stub)
from ehsched.verify import grid_oracle, kkt_residual, reference_solve
from ehsched.waterfill import solve_ep

from conftest import random_instance


def test_single_link():
    inst = Instance.point_to_point([[1.0, 0.5, 2.0]], [[2.0, 3.0, 6.0]], 10.0, 20.0)
    res = solve(inst, polish=False)
    assert res.trace.iterations == 2 and res.trace.reason == TOLERANCE
    np.testing.assert_array_equal(res.allocation.a, 1.0)
    p, _ = solve_ep(np.ones(3), inst.H[0], res.discharge.E_eff[0], 10.0, 20.0)
    np.testing.assert_allclose(res.allocation.p[0], p)


def test_identical_transmitters_split_evenly(rng):
    H = np.tile(rng.exponential(1.0, 2), (2, 1))
    E = np.tile(np.cumsum(rng.uniform(0, 4, 2)), (2, 1))
    inst = Instance.point_to_point(H, E, 10.0, 20.0)
    res = solve(inst)
    np.testing.assert_allclose(res.allocation.a, 0.5, atol=1e-9)
    np.testing.assert_allclose(res.allocation.p[0], res.allocation.p[1], atol=1e-9)
    assert kkt_residual(inst, res.discharge, res.allocation).max_residual <= 1e-6


def test_matches_reference(rng):
    inst = random_instance(rng, N=3, K=6)
    res = solve(inst)
    ref = reference_solve(inst, 0.0, plan=res.discharge)
    assert objective(inst, res.allocation) == pytest.approx(ref.objective, rel=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_trace_monotone_and_bounded(seed):
    inst = random_instance(np.random.default_rng(seed), N=4, K=20)
    res = solve(inst, polish=False, delta=1e-6, criterion="absolute", max_iters=30)
    assert res.trace.is_monotone(1e-9)
    bound = np.log1p(inst.P[:, None] * inst.H).sum()
    assert max(res.trace.values) <= bound
    assert res.trace.initial_value <= res.trace.values[0] + 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_pairwise_optimality_at_exit(seed):
    inst = random_instance(np.random.default_rng(seed), N=3, K=10)
    res = solve(inst, polish=False, min_eps=0.01, delta=1e-10, max_iters=400)
    energy, bandwidth = block_gaps(inst, res.discharge, res.allocation, res.eps)
    assert energy.max() < 1e-3 and bandwidth.max() < 1e-3


def test_warm_start_terminates_at_once(rng):
    inst = random_instance(rng, N=3, K=8)
    first = solve(inst)
    again = solve(inst, warm_start=first)
    assert again.trace.iterations == 1
    assert objective(inst, again.allocation) == pytest.approx(objective(inst, first.allocation), abs=1e-9)


def test_validate_flag_checks_each_iterate(rng):
    inst = random_instance(rng, N=3, K=8)
    res = solve(inst, validate=True, polish=False)
    assert check_feasible(inst, res.discharge, res.allocation, res.eps) == []


def test_iteration_cap(rng):
    inst = random_instance(rng, N=4, K=30)
    res = solve(inst, delta=1e-15, criterion="absolute", max_iters=3, polish=False)
    assert res.trace.reason == MAX_ITERATIONS and res.trace.iterations == 3


def test_floor_schedule(rng):
    inst = random_instance(rng, N=2, K=5)
    res = solve(inst, eps0=0.2, delta=1e-12, criterion="absolute", max_iters=4, polish=False)
    np.testing.assert_allclose(res.trace.eps, 0.2 / np.arange(1, 5))


@pytest.mark.parametrize("kw", [{"eps0": 0.0}, {"delta": -1.0}, {"eps0": 0.6}, {"max_iters": 0},
                                {"criterion": "bogus"}])
def test_bad_parameters(rng, kw):
    with pytest.raises(ValueError):
        solve(random_instance(rng, N=2, K=3), **kw)


def multi_receiver():
    return Instance(((0, 1),), [[1.0, 0.4], [0.3, 1.5]], [[1.0, 2.0]], [5.0], [5.0], [2.0, 1.0])


def test_general_instance_routes_to_reference():
    inst = multi_receiver()
    with pytest.raises(UnsupportedConfigurationError):
        solve(inst)
    out = solve_general_stub(inst)
    assert out["quality"] == "reference-quality, small instances only"
    assert kkt_residual(inst, out["discharge"], out["allocation"]).max_residual <= 1e-4


def test_general_stub_size_cap(rng):
    with pytest.raises(SizeLimitError):
        solve_general_stub(random_instance(rng, N=4, K=200))


def test_stub_agrees_on_point_to_point(rng):
    inst = random_instance(rng, N=2, K=4)
    out = solve_general_stub(inst)
    assert out["objective"] == pytest.approx(objective(inst, solve(inst).allocation), rel=1e-3)


def test_floored_problem_beats_grid(rng):
    inst = Instance.point_to_point(rng.exponential(1.0, (2, 2)), [[0.5, 1.0], [1.0, 1.5]], 2.0, 1.0)
    res = solve(inst, min_eps=0.05, delta=1e-12, max_iters=500)
    best, _ = grid_oracle(inst, 0.05, 0.05)
    assert objective(inst, res.allocation) >= best - 1e-9


def test_estimator_api(rng):
    inst = random_instance(rng, N=3, K=6)
    est = OptimalScheduler(delta=1e-4)
    with pytest.raises(NotFittedError):
        est.predict(inst)
    est.fit(inst)
    assert est.score(inst) == pytest.approx(est.objective_)
    assert est.n_iter_ >= 1 and est.eps_ == 0.0
    assert clone(est).get_params()["delta"] == 1e-4


def test_solve_energy_with_uniform_shares(rng):
    inst = random_instance(rng, N=2, K=4)
    from ehsched.discharge import greedy_discharge
    plan = greedy_discharge(inst)
    p, profiles = solve_energy(inst, plan, np.full((2, 4), 0.5))
    assert len(profiles) == 2
    assert check_feasible(inst, plan, Allocation(p, np.full((2, 4), 0.5))) == []
