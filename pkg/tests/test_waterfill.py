import itertools
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehsched._validation import InfeasibleError
from ehsched.discharge import greedy_discharge
from ehsched.model import Instance
from ehsched.waterfill import (BDP, BFP, SegmentProfile, segment_water_level, solve_ep,
                               verify_theorem3)


def rate(p, a, H):
    return float(np.sum(a * np.log1p(np.asarray(p) * H / a)))


def grid_best(a, H, E_eff, P, B_max, step):
    """Exhaustive search over cumulative-energy grid paths."""
    K = len(H)
    best = -np.inf
    levels = np.arange(0, E_eff[-1] + step / 2, step)
    for path in itertools.product(levels, repeat=K):
        cum = np.asarray(path)
        if np.any(np.diff(cum) < -1e-12):
            continue
        if np.any(cum > E_eff + 1e-9) or np.any(cum < E_eff - B_max - 1e-9):
            continue
        p = np.diff(np.concatenate([[0.0], cum]))
        if np.any(p > P + 1e-9):
            continue
        best = max(best, rate(p, a, H))
    return best


def test_segment_level_uncapped():
    w, p = segment_water_level([1, 1], [1, 1 / 3], np.inf, 2.0)
    assert w == pytest.approx(3.0)
    np.testing.assert_allclose(p, [2.0, 0.0], atol=1e-12)


def test_segment_level_empty_target():
    w, p = segment_water_level([1, 1], [1.0, 0.5], 5.0, 0.0)
    assert w <= 1.0 + 1e-12
    assert not p.any()


def test_segment_level_all_capped_reports_smallest():
    w, p = segment_water_level([1.0], [1.0], 2.0, 2.0)
    assert w == pytest.approx(3.0)
    np.testing.assert_allclose(p, [2.0])


def test_segment_level_rejects_infeasible_target():
    with pytest.raises(InfeasibleError):
        segment_water_level([1, 1], [1, 1], 1.0, 2.5)
    with pytest.raises(InfeasibleError):
        segment_water_level([1, 1], [0, 0], 1.0, 1.0)


def test_causality_caps_each_slot():
    p, prof = solve_ep([1, 1], [1, 1], [1.0, 2.0], 10.0, 10.0)
    np.testing.assert_allclose(p, [1.0, 1.0], atol=1e-9)
    assert [k for _, k in prof.boundaries][0] == BDP
    # grid over p1 in [0, 1], p2 in [0, 2 - p1] at 1e-3
    p1 = np.arange(0, 1001) * 1e-3
    p2 = np.arange(0, 2001) * 1e-3
    X, Y = np.meshgrid(p1, p2)
    vals = np.where(X + Y <= 2 + 1e-12, np.log1p(X) + np.log1p(Y), -np.inf)
    assert vals.max() <= rate(p, 1, 1) + 1e-12
    assert vals.max() == pytest.approx(2 * np.log(2))


def test_zero_budget():
    p, _ = solve_ep([1, 1, 1], [1, 2, 3], [0, 0, 0], 5.0, 5.0)
    assert not p.any()


def test_single_slot_cap():
    p, _ = solve_ep([1.0], [1.0], [5.0], 2.0, 10.0)
    np.testing.assert_allclose(p, [2.0])


def test_profile_json_round_trip():
    _, prof = solve_ep([1, 1], [1, 1], [1.0, 2.0], 10.0, 10.0)
    assert SegmentProfile.from_dict(prof.to_dict()) == prof


def instances(max_K=8):
    return st.tuples(st.integers(0, 2**32 - 1), st.integers(1, max_K))


def draw_ep(seed, K, P=None, B_max=None):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.05, 1.0, K)
    H = rng.exponential(1.0, K)
    P = rng.choice([1.0, 3.0, 10.0]) if P is None else P
    B_max = rng.choice([0.5, 2.0, 20.0]) if B_max is None else B_max
    harvest = rng.exponential(rng.choice([0.5, 2.0, 8.0]), K)
    inst = Instance.point_to_point(H[None], np.cumsum(harvest)[None], P, B_max)
    return a, H, greedy_discharge(inst).E_eff[0], P, B_max


@given(instances(40))
def test_water_level_structure(args):
    a, H, E, P, B = draw_ep(*args)
    p, prof = solve_ep(a, H, E, P, B)
    assert verify_theorem3(p, prof, a, H, E, P, B)


@given(instances(3))
def test_grid_dominance(args):
    seed, K = args
    rng = np.random.default_rng(seed)
    a, H = rng.uniform(0.05, 1.0, K), rng.exponential(1.0, K)
    P, B = rng.choice([1.0, 2.0, 10.0]), rng.choice([0.5, 1.0, 10.0])
    harvest = rng.integers(0, 13, K) / 4
    E = greedy_discharge(Instance.point_to_point(H[None], np.cumsum(harvest)[None], P, B)).E_eff[0]
    p, _ = solve_ep(a, H, E, P, B)
    assert rate(p, a, H) >= grid_best(a, H, E, P, B, 0.25) - 1e-9


def test_perturbed_level_fails_check(rng):
    a, H, E, P, B = draw_ep(7, 12, P=10.0, B_max=20.0)
    p, prof = solve_ep(a, H, E, P, B)
    levels = list(prof.water_levels)
    i = int(np.argmax(np.isfinite(levels)))
    levels[i] *= 1.1
    assert not verify_theorem3(p, SegmentProfile(prof.boundaries, tuple(levels)), a, H, E, P, B)


def test_overflowing_constant_level_fails_check():
    # one segment with a constant level while the battery would overflow
    a, H, E = np.ones(3), np.ones(3), np.array([5.0, 5.0, 5.0])
    p = np.array([0.0, 0.0, 5.0])
    prof = SegmentProfile(((2, "horizon-end"),), (1.0,))
    assert not verify_theorem3(p, prof, a, H, E, 10.0, 2.0)


@given(instances(12))
def test_uniqueness_under_relabelling(args):
    a, H, E, P, B = draw_ep(*args)
    p1, _ = solve_ep(a, H, E, P, B)
    p2, _ = solve_ep(a.copy(), H.copy(), E.copy(), P, B)
    np.testing.assert_allclose(p1, p2, atol=1e-6)


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 5.0))
def test_uncapped_single_segment_scaling(seed, c):
    rng = np.random.default_rng(seed)
    K = 5
    H = rng.exponential(1.0, K)
    a = np.ones(K)
    E = np.concatenate([np.full(K - 1, 0.0), [0.0]]) + 1e3  # all energy up front
    p, prof = solve_ep(a, H, E, np.inf, 1e9)
    # one level throughout; an idle trailing slot may add a boundary where the battery is already empty
    assert len(set(prof.water_levels)) == 1
    q, _ = solve_ep(a, H, c * E, np.inf, 1e9 * c)
    # linear only in the fill target beyond the inverse-gain floor
    assert q.sum() == pytest.approx(c * p.sum(), rel=1e-9)


def test_runtime_growth_is_polynomial():
    rng = np.random.default_rng(1)

    def median_time(K):
        ts = []
        for _ in range(15):
            a, H, E, P, B = draw_ep(int(rng.integers(2**31)), K, P=3.0, B_max=2.0)
            t = time.perf_counter()
            solve_ep(a, H, E, P, B)
            ts.append(time.perf_counter() - t)
        return np.median(ts)

    median_time(40)
    assert median_time(160) / median_time(80) <= 5.0


def test_zero_gain_slot_absorbs_forced_energy():
    # slot 2 has no rate; the battery must still shed the surplus there, not overflow at slot 3
    H = np.array([1.0, 0.0, 1.0])
    inst = Instance.point_to_point(H[None], np.cumsum([3.0, 6.0, 3.0])[None], 5.0, 1.0)
    E = greedy_discharge(inst).E_eff[0]
    p, prof = solve_ep(np.ones(3), H, E, 5.0, 1.0)
    battery = E - np.cumsum(p)
    assert battery.min() >= -1e-9 and battery.max() <= 1.0 + 1e-9
    assert p[1] > 0
    assert verify_theorem3(p, prof, np.ones(3), H, E, 5.0, 1.0)


@pytest.mark.parametrize("seed", range(8))
def test_zero_gains_match_convex_solver(seed):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(seed)
    K = 8
    a = rng.uniform(0.05, 1.0, K)
    H = rng.exponential(1.0, K) * (rng.random(K) > 0.3)
    P, B_max = 3.0, 2.0
    inst = Instance.point_to_point(H[None], np.cumsum(rng.exponential(4.0, K))[None], P, B_max)
    E = greedy_discharge(inst).E_eff[0]
    p, prof = solve_ep(a, H, E, P, B_max)
    assert verify_theorem3(p, prof, a, H, E, P, B_max)
    x = cp.Variable(K)
    c = cp.cumsum(x)
    prob = cp.Problem(cp.Maximize(cp.sum(cp.multiply(a, cp.log(1 + cp.multiply(x, H / a))))),
                      [x >= 0, x <= P, c <= E, c >= E - B_max])
    prob.solve()
    assert rate(p, a, H) >= prob.value - 1e-6
