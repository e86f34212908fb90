"""Greedy first-stage discharge: waste only what max-power operation cannot store."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from ._validation import DEFAULT_TOL
from .model import DischargePlan, Instance

__all__ = ["greedy_discharge", "greedy_trace", "discharge_is_minimal", "min_total_discharge",
           "band_is_reachable"]


def greedy_trace(harvest, P: float, B_max: float):
    """Replay max-power operation for one transmitter.

    Returns ``(consumption, discharge, battery)``, each of length K.  Harvest
    of slot k is usable within slot k.
    """
    harvest = np.asarray(harvest, dtype=float)
    K = harvest.size
    use = np.empty(K)
    D = np.empty(K)
    B = np.empty(K)
    level = 0.0
    for k in range(K):
        avail = level + harvest[k]
        use[k] = min(P, avail)
        D[k] = max(avail - use[k] - B_max, 0.0)
        level = avail - use[k] - D[k]
        B[k] = level
    return use, D, B


def greedy_discharge(instance: Instance) -> DischargePlan:
    """Minimal-waste discharge plan for every transmitter."""
    D = np.zeros((instance.N, instance.K))
    for n in range(instance.N):
        _, D[n], _ = greedy_trace(instance.harvest[n], instance.P[n], instance.B_max[n])
    return DischargePlan.from_discharge(instance, D)


def band_is_reachable(E_eff, P: float, B_max: float, tol: float = DEFAULT_TOL) -> bool:
    """Whether some consumption path with per-slot use in ``[0, P]`` stays in the band.

    Propagates the interval of reachable cumulative consumption forward,
    which is exact because each step adds an interval.
    """
    lo = hi = 0.0
    for e in np.asarray(E_eff, dtype=float):
        lo = max(lo, e - B_max)
        hi = min(hi + P, e)
        if lo > hi + tol:
            return False
    return True


def min_total_discharge(harvest, P: float, B_max: float) -> float:
    """Smallest total waste over all feasible (p, D) plans, by linear programming."""
    harvest = np.asarray(harvest, dtype=float)
    K = harvest.size
    E = np.cumsum(harvest)
    tri = np.tril(np.ones((K, K)))
    # x = [p_1..p_K, D_1..D_K]; battery_k = E_k - tri@p - tri@D in [0, B_max]
    A = np.block([[tri, tri], [-tri, -tri]])
    b = np.concatenate([E, B_max - E])
    c = np.concatenate([np.zeros(K), np.ones(K)])
    bounds = [(0.0, P)] * K + [(0.0, None)] * K
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"discharge LP failed: {res.message}")
    return float(res.fun)


def discharge_is_minimal(instance: Instance, plan: DischargePlan, tol: float = 1e-7) -> bool:
    """True iff ``plan`` is feasible and wastes no more than the LP minimum."""
    if np.any(plan.D < -tol):
        return False
    for n in range(instance.N):
        if not band_is_reachable(plan.E_eff[n], instance.P[n], instance.B_max[n]):
            return False
        best = min_total_discharge(instance.harvest[n], instance.P[n], instance.B_max[n])
        if plan.D[n].sum() > best + tol:
            return False
    return True
