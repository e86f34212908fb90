import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehsched.discharge import (band_is_reachable, discharge_is_minimal, greedy_discharge,
                               greedy_trace, min_total_discharge)
from ehsched.model import DischargePlan, Instance
from ehsched.verify import discharge_grid_min


def one(harvest, P, B_max):
    return Instance.point_to_point(np.ones((1, len(harvest))), np.cumsum([harvest], axis=1), P, B_max)


def test_no_waste_when_battery_absorbs():
    use, D, B = greedy_trace([3.0, 6.0, 0.0], 2.0, 5.0)
    np.testing.assert_array_equal(D, [0, 0, 0])
    np.testing.assert_array_equal(B, [1, 5, 3])
    np.testing.assert_array_equal(use, [2, 2, 2])


def test_overflow_is_discharged():
    use, D, B = greedy_trace([10.0], 2.0, 5.0)
    assert (use[0], D[0], B[0]) == (2.0, 3.0, 5.0)


def test_zero_harvest():
    plan = greedy_discharge(one([0.0, 0.0], 1.0, 1.0))
    assert not plan.D.any() and not plan.E_eff.any()


def test_minimality_examples():
    inst = one([10.0], 2.0, 5.0)
    plan = greedy_discharge(inst)
    assert discharge_is_minimal(inst, plan)
    assert discharge_grid_min([10.0], 2.0, 5.0, 0.5) == 3.0
    worse = DischargePlan.from_discharge(inst, plan.D + 1.0)
    assert not discharge_is_minimal(inst, worse)
    empty = one([0.0, 0.0], 1.0, 1.0)
    assert discharge_is_minimal(empty, greedy_discharge(empty))


harvests = st.lists(st.floats(0, 20, allow_nan=False), min_size=1, max_size=12)


@given(harvests, st.floats(0.1, 10), st.floats(0, 15))
def test_band_nonempty_after_discharge(h, P, B_max):
    plan = greedy_discharge(one(h, P, B_max))
    assert band_is_reachable(plan.E_eff[0], P, B_max)
    k = np.arange(1, len(h) + 1)
    assert np.all(plan.E_eff[0] - B_max <= np.minimum(k * P, plan.E_eff[0]) + 1e-9)


@given(harvests, st.floats(0.1, 10), st.floats(0, 15))
def test_discharge_idempotent(h, P, B_max):
    inst = one(h, P, B_max)
    plan = greedy_discharge(inst)
    again = greedy_discharge(inst.replace(E=plan.E_eff))
    np.testing.assert_allclose(again.D, 0.0, atol=1e-9)


@given(harvests, st.floats(0.1, 10), st.floats(0, 15))
def test_waste_only_on_overflow(h, P, B_max):
    use, D, B = greedy_trace(h, P, B_max)
    prev = np.concatenate([[0.0], B[:-1]])
    over = prev + np.asarray(h) - np.minimum(P, prev + np.asarray(h)) > B_max
    assert np.all((D > 0) <= over)


@given(harvests, st.floats(0.1, 10), st.floats(0, 15))
def test_greedy_matches_lp_minimum(h, P, B_max):
    _, D, _ = greedy_trace(h, P, B_max)
    assert D.sum() == pytest.approx(min_total_discharge(h, P, B_max), abs=1e-6)
