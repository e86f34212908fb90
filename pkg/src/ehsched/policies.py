"""Causal adaptive water-filling and the heuristic baselines."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import exp1
from sklearn.base import BaseEstimator

from ._validation import UnsupportedConfigurationError
from .bandwidth import fit_bandwidth_slots
from .discharge import greedy_discharge, greedy_trace
from .model import Allocation, Instance, objective
from .scheduler import solve_energy

__all__ = [
    "CausalState",
    "StepResult",
    "causal_step",
    "coupled_allocation",
    "init_causal",
    "truncated_inverse_gain_mean",
    "run_causal",
    "greedy_policy",
    "tdma_greedy_policy",
    "equal_bandwidth_policy",
    "CausalWaterFilling",
    "GreedyPolicy",
    "TDMAGreedyPolicy",
    "EqualBandwidthPolicy",
    "POLICIES",
]

DAMPING = 0.5
MAX_INNER = 200
FIXED_POINT_TOL = 1e-8
H_MIN = 0.05


@dataclass(frozen=True)
class CausalState:
    """Water level ``w``, battery ``B`` and adjustment factor ``c``, one entry per transmitter."""

    w: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("w", "B", "c"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.w <= 0):
            raise ValueError("water levels must be positive")
        if np.any(self.B < 0):
            raise ValueError("battery levels must be nonnegative")
        if np.any(self.c < 1):
            raise ValueError("adjustment factor must be at least 1")


class StepResult(NamedTuple):
    p: np.ndarray
    a: np.ndarray
    state: CausalState
    converged: bool
    iterations: int


def truncated_inverse_gain_mean(h_min: float = H_MIN) -> float:
    """``E[1/max(H, h_min)]`` for ``H ~ Exp(1)``; the untruncated mean diverges."""
    return float((1.0 - np.exp(-h_min)) / h_min + exp1(h_min))


def init_causal(mean_harvest, mean_inv_gain, P, N: int, w0=None, c=None) -> CausalState:
    """Starting state: ``w0 = N E[harvest] + E[1/H]`` and ``c = 1 + P/w0``.

    Either value can be overridden; the battery starts empty.
    """
    P = np.atleast_1d(np.asarray(P, dtype=float))
    if w0 is None:
        w0 = N * np.asarray(mean_harvest, dtype=float) + np.asarray(mean_inv_gain, dtype=float)
    w0 = np.broadcast_to(np.asarray(w0, dtype=float), P.shape).copy()
    if c is None:
        c = 1.0 + P / w0
    c = np.broadcast_to(np.asarray(c, dtype=float), P.shape).copy()
    return CausalState(w0, np.zeros_like(P), c)


def _energy(a, fill, excess, cap):
    return np.minimum(cap, np.maximum(a * fill, excess))


def _shares(p, H):
    x = p * H
    tot = x.sum()
    return x / tot if tot > 0 else np.full(p.size, 1.0 / p.size)


def coupled_allocation(fill, H, excess, cap):
    """Exact solution of ``p = min(cap, max(a*fill, excess))``, ``a = pH / sum(pH)``.

    With ``S = sum(pH)`` a link spends ``cap`` when ``fill*H > S`` and only
    ``clip(excess, 0, cap)`` when ``fill*H < S``; at equality it takes the
    value that balances the sum.  ``S`` is the root of a decreasing step
    function, found by scanning thresholds from the top.
    """
    fill, H, excess, cap = (np.asarray(v, dtype=float) for v in (fill, H, excess, cap))
    lo = np.clip(excess, 0.0, cap)
    hi = cap
    t = fill * H
    order = np.argsort(-t, kind="stable")
    p = lo.copy()
    S = float((lo * H).sum())
    for j in order:
        if t[j] <= 0 or S >= t[j]:
            break
        top = S + (hi[j] - lo[j]) * H[j]
        if top >= t[j]:
            # link j partly spends so that the total sits on its threshold
            p[j] = lo[j] + (t[j] - S) / H[j]
            S = t[j]
            break
        p[j] = hi[j]
        S = top
    return p, _shares(p, H)


def _damped(fill, H, excess, cap):
    N = fill.size
    a = np.full(N, 1.0 / N)
    for it in range(1, MAX_INNER + 1):
        target = _shares(_energy(a, fill, excess, cap), H)
        if np.max(np.abs(target - a)) <= FIXED_POINT_TOL:
            p = _energy(target, fill, excess, cap)
            return p, _shares(p, H), True, it
        a = DAMPING * a + (1.0 - DAMPING) * target
    a = np.full(N, 1.0 / N)
    return _energy(a, fill, excess, cap), a, False, MAX_INNER


def causal_step(state: CausalState, harvest, H, P, B_max, tol: float = 1e-9,
                method: str = "exact", full_battery: str = "lower") -> StepResult:
    """Allocate one slot from the current battery and gains only.

    With ``full_battery="lower"`` the water level drops by ``c`` after a
    full battery and rises by ``c`` after an empty one; ``"raise"`` does the
    reverse.  Energies and shares then solve the coupled system
    ``p = min(P, max(a [w - 1/H]^+, B + harvest - B_max))`` (never more than
    the stored energy) and ``a = pH / sum(pH)``.  ``method="exact"`` solves
    it in closed form; ``"damped"`` iterates from equal shares with damping
    0.5 and falls back to equal shares after 200 rounds.
    """
    harvest = np.atleast_1d(np.asarray(harvest, dtype=float))
    H = np.atleast_1d(np.asarray(H, dtype=float))
    P = np.broadcast_to(np.asarray(P, dtype=float), harvest.shape)
    B_max = np.broadcast_to(np.asarray(B_max, dtype=float), harvest.shape)
    if np.any(harvest < 0):
        raise ValueError("harvest must be nonnegative")
    if full_battery == "lower":
        on_full, on_empty = state.w / state.c, state.w * state.c
    elif full_battery == "raise":
        on_full, on_empty = state.w * state.c, state.w / state.c
    else:
        raise ValueError(f"unknown full_battery rule {full_battery!r}")
    w = np.where(state.B >= B_max - tol, on_full, np.where(state.B <= tol, on_empty, state.w))
    with np.errstate(divide="ignore"):
        fill = np.where(H > 0, np.maximum(w - 1.0 / H, 0.0), 0.0)
    stored = state.B + harvest
    excess = stored - B_max
    cap = np.minimum(P, stored)
    if method == "exact":
        p, a = coupled_allocation(fill, H, excess, cap)
        converged, it = True, 1
    elif method == "damped":
        p, a, converged, it = _damped(fill, H, excess, cap)
    else:
        raise ValueError(f"unknown method {method!r}")
    B = np.clip(stored - p, 0.0, B_max)
    return StepResult(p, a, replace(state, w=w, B=B), converged, it)


def _need_p2p(instance: Instance):
    if not instance.is_point_to_point:
        raise UnsupportedConfigurationError("policies assume one receiver per transmitter")


def run_causal(instance: Instance, state: Optional[CausalState] = None, w0=None, c=None,
               method: str = "exact", full_battery: str = "lower"):
    """Play the causal policy over the realized harvest and gains.

    Returns ``(Allocation, info)`` where ``info`` holds the water-level and
    battery traces and the number of slots whose fixed point fell back.
    """
    _need_p2p(instance)
    N, K = instance.N, instance.K
    if state is None:
        mean_h = instance.harvest.mean(axis=1)
        state = init_causal(mean_h, truncated_inverse_gain_mean(), instance.P, N, w0=w0, c=c)
    p = np.zeros((N, K))
    a = np.zeros((N, K))
    levels = np.zeros((N, K))
    battery = np.zeros((N, K))
    fallbacks = 0
    for k in range(K):
        step = causal_step(state, instance.harvest[:, k], instance.H[:, k], instance.P,
                           instance.B_max, method=method, full_battery=full_battery)
        p[:, k], a[:, k], state = step.p, step.a, step.state
        levels[:, k], battery[:, k] = state.w, state.B
        fallbacks += not step.converged
    return Allocation(p, a), {"water_level": levels, "battery": battery, "fallbacks": fallbacks}


def greedy_policy(instance: Instance) -> Allocation:
    """Spend as much as possible every slot; fit bandwidth with no floor."""
    _need_p2p(instance)
    p = np.vstack([greedy_trace(instance.harvest[n], instance.P[n], instance.B_max[n])[0]
                   for n in range(instance.N)])
    return Allocation(p, fit_bandwidth_slots(p * instance.H, 0.0))


def tdma_greedy_policy(instance: Instance) -> Allocation:
    """Greedy energy; the whole band goes to the largest ``pH`` (lowest index on ties)."""
    _need_p2p(instance)
    p = greedy_policy(instance).p
    a = np.zeros_like(p)
    a[np.argmax(p * instance.H, axis=0), np.arange(instance.K)] = 1.0
    return Allocation(p, a)


def equal_bandwidth_policy(instance: Instance) -> Allocation:
    """Equal shares with per-transmitter optimal water-filling."""
    _need_p2p(instance)
    a = np.full((instance.M, instance.K), 1.0 / instance.M)
    p, _ = solve_energy(instance, greedy_discharge(instance), a)
    return Allocation(p, a)


class _Policy(BaseEstimator):
    def _run(self, instance):
        raise NotImplementedError

    def fit(self, instance: Instance, y=None):
        self.allocation_ = self._run(instance)
        self.objective_ = objective(instance, self.allocation_)
        return self

    def predict(self, instance: Optional[Instance] = None) -> Allocation:
        if not hasattr(self, "allocation_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit first")
        return self.allocation_

    def score(self, instance: Instance, y=None) -> float:
        return objective(instance, self.predict(instance))


class CausalWaterFilling(_Policy):
    """Adaptive water-filling on causal information.

    ``w0`` and ``c`` default to the statistics-based initializer.
    """

    def __init__(self, w0=None, c=None, method="exact", full_battery="lower"):
        self.w0 = w0
        self.c = c
        self.method = method
        self.full_battery = full_battery

    def _run(self, instance):
        alloc, info = run_causal(instance, w0=self.w0, c=self.c, method=self.method,
                                 full_battery=self.full_battery)
        self.water_level_ = info["water_level"]
        self.battery_ = info["battery"]
        self.fallbacks_ = info["fallbacks"]
        return alloc


class GreedyPolicy(_Policy):
    def _run(self, instance):
        return greedy_policy(instance)


class TDMAGreedyPolicy(_Policy):
    def _run(self, instance):
        return tdma_greedy_policy(instance)


class EqualBandwidthPolicy(_Policy):
    def _run(self, instance):
        return equal_bandwidth_policy(instance)


POLICIES = {
    "causal": CausalWaterFilling,
    "greedy": GreedyPolicy,
    "tdma": TDMAGreedyPolicy,
    "equal": EqualBandwidthPolicy,
}
