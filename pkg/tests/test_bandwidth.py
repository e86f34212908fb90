import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from ehsched.bandwidth import (BandwidthFitter, DegenerateSlotError, fit_bandwidth,
                               fit_bandwidth_slots, verify_theorem4)
from ehsched.verify import slot_grid_oracle


def test_one_pass_example():
    a = fit_bandwidth([4.0, 1.0, 0.0], 0.05)
    np.testing.assert_allclose(a, [0.76, 0.19, 0.05], atol=1e-15)
    best, _ = slot_grid_oracle(np.array([4.0, 1.0, 0.0]), 0.05, 1e-3)
    from ehsched.model import slot_rates
    assert slot_rates([4.0, 1.0, 0.0], a, 1.0).sum() >= best - 1e-12


def test_weak_link_gets_floored():
    a, states = fit_bandwidth([10.0, 0.1], 0.2, return_states=True)
    assert states[0].a[1] == pytest.approx(0.0099, abs=1e-4)
    np.testing.assert_allclose(a, [0.8, 0.2])
    best, at = slot_grid_oracle(np.array([10.0, 0.1]), 0.2, 1e-3)
    np.testing.assert_allclose(at, [0.8, 0.2], atol=1e-9)


@pytest.mark.parametrize("c", [1e-6, 1.0, 1e6])
def test_symmetric_links(c):
    np.testing.assert_allclose(fit_bandwidth([c, c], 0.1), [0.5, 0.5])


def test_idle_slot_is_degenerate():
    with pytest.raises(DegenerateSlotError):
        fit_bandwidth([0.0, 0.0], 0.1)
    np.testing.assert_allclose(fit_bandwidth_slots(np.zeros((4, 2)), 0.1), 0.25)


def test_optimality_check_rejects_bad_shares():
    assert not verify_theorem4([10.0, 0.1], 0.2, [0.5, 0.5])
    assert not verify_theorem4([1.0, 1.0], 0.1, [0.9, 0.1])
    assert verify_theorem4([10.0, 0.1], 0.2, fit_bandwidth([10.0, 0.1], 0.2))


vectors = st.integers(1, 64).flatmap(
    lambda n: st.tuples(st.lists(st.floats(0, 100), min_size=n, max_size=n),
                        st.floats(0, 1.0 / n)))


@given(vectors)
def test_fitting_properties(args):
    pH, eps = np.array(args[0]), args[1]
    if pH.sum() <= 0:
        return
    a, states = fit_bandwidth(pH, eps, return_states=True)
    assert len(states) <= pH.size
    assert abs(a.sum() - 1.0) <= 1e-12
    assert verify_theorem4(pH, eps, a, tol=1e-9)
    ratios = [s.ratio for s in states]
    assert all(r1 >= r2 - 1e-15 * abs(r1) for r1, r2 in zip(ratios, ratios[1:]))
    moved = [set(s.floored) for s in states]
    assert all(x <= y for x, y in zip(moved, moved[1:]))
    for s in states:
        fl = list(s.floored)
        assert np.all(eps >= s.ratio * pH[fl] - 1e-12)


@given(st.lists(st.floats(1e-3, 100), min_size=1, max_size=10))
def test_vanishing_floor_gives_proportional_shares(pH):
    pH = np.array(pH)
    np.testing.assert_allclose(fit_bandwidth(pH, 1e-12), pH / pH.sum(), atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 12))
def test_slot_batch_matches_single(seed, N, K):
    rng = np.random.default_rng(seed)
    pH = rng.exponential(1.0, (N, K)) * (rng.random((N, K)) < 0.7)
    eps = rng.uniform(0, 1.0 / N)
    batch = fit_bandwidth_slots(pH, eps)
    for k in range(K):
        if pH[:, k].sum() > 0:
            np.testing.assert_allclose(batch[:, k], fit_bandwidth(pH[:, k], eps), atol=1e-12)


def test_eps_too_large():
    with pytest.raises(ValueError):
        fit_bandwidth([1.0, 1.0, 1.0], 0.5)


def test_fitter_estimator():
    X = np.array([[4.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    fitter = clone(BandwidthFitter(eps=0.05)).fit(X)
    out = fitter.transform(X)
    np.testing.assert_allclose(out[0], [0.76, 0.19, 0.05])
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert fitter.get_params() == {"eps": 0.05}
