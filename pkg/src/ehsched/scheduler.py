"""Alternating energy/bandwidth maximisation for the non-causal optimum."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import SizeLimitError, UnsupportedConfigurationError
from .bandwidth import fit_bandwidth_slots
from .discharge import greedy_discharge
from .model import Allocation, DischargePlan, Instance, check_feasible, objective
from .waterfill import solve_ep

__all__ = [
    "SolveTrace",
    "SolveResult",
    "solve",
    "solve_energy",
    "polish_energy",
    "block_gaps",
    "solve_general_stub",
    "OptimalScheduler",
]

TOLERANCE = "tolerance"
MAX_ITERATIONS = "max-iterations"
ABSOLUTE = "absolute"
RELATIVE = "relative"
DEFAULT_EPS0 = 0.01


@dataclass
class SolveTrace:
    """Objective after each iteration, with the floor and wall time used."""

    values: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    reason: str = ""
    initial_value: float = 0.0
    offset: int = 0
    polish_values: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.values)

    @property
    def final_eps(self) -> float:
        return self.eps[-1] if self.eps else float("nan")

    @property
    def final_value(self) -> float:
        return self.values[-1] if self.values else self.initial_value

    def is_monotone(self, tol: float = 1e-9) -> bool:
        v = np.asarray(self.values)
        return bool(np.all(np.diff(v) >= -tol))

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "eps": [float(e) for e in self.eps],
            "wall_times": [float(t) for t in self.wall_times],
            "reason": self.reason,
            "iterations": self.iterations,
            "final_eps": self.final_eps if self.eps else None,
            "polish_sweeps": len(self.polish_values),
            "polished_value": float(self.polish_values[-1]) if self.polish_values else None,
        }


class SolveResult(NamedTuple):
    """``eps`` is the bandwidth floor the allocation is optimal for."""

    allocation: Allocation
    discharge: DischargePlan
    trace: SolveTrace
    profiles: tuple
    eps: float


def default_eps0(M: int) -> float:
    return min(DEFAULT_EPS0, 1.0 / (2 * M))


def solve_energy(instance: Instance, plan: DischargePlan, a):
    """Water-fill every transmitter for fixed shares ``a`` (point-to-point only)."""
    p = np.zeros((instance.M, instance.K))
    profiles = []
    for n, (m,) in enumerate(instance.receiver_map):
        p[m], prof = solve_ep(a[m], instance.H[m], plan.E_eff[n], instance.P[n], instance.B_max[n])
        profiles.append(prof)
    return p, tuple(profiles)


def _require_point_to_point(instance: Instance):
    if not instance.is_point_to_point:
        raise UnsupportedConfigurationError(
            "fast solver needs one receiver per transmitter and unit weights; "
            "use solve_general_stub / verify.reference_solve for this instance")


def solve(instance: Instance, eps0: Optional[float] = None, delta: float = 1e-3,
          max_iters: int = 100, *, criterion: str = RELATIVE, min_eps: float = 0.0,
          polish: bool = True, polish_tol: float = 1e-9, polish_sweeps: int = 5000,
          warm_start: Optional[SolveResult] = None, validate: bool = False) -> SolveResult:
    """Optimal non-causal allocation by alternating bandwidth fitting and water-filling.

    Parameters
    ----------
    instance : Instance
        Point-to-point instance with unit weights.
    eps0 : float, optional
        Initial bandwidth floor; iteration ``i`` uses ``eps0 / i``.  Defaults
        to ``min(0.01, 1 / (2 M))``.
    delta : float
        Stop once successive objective values differ by less than this,
        relative to the current value unless ``criterion="absolute"``.
    max_iters : int
        Iteration cap.
    criterion : {"relative", "absolute"}
        How ``delta`` is read.
    min_eps : float
        Lower clamp on the floor schedule.  With ``min_eps > 0`` the loop
        solves the floored problem at ``min_eps`` instead of driving the
        floor to zero.
    polish : bool
        After the alternating loop, finish with exact per-transmitter
        water-filling sweeps on the bandwidth-optimised objective (floor 0)
        until energies move less than ``polish_tol``.  Ignored when
        ``min_eps > 0``.
    warm_start : SolveResult, optional
        Continue from a previous result: its allocation seeds the loop, its
        objective is the reference value and the floor keeps shrinking like
        ``1/i`` from the floor that result was solved at (zero stays zero).
    validate : bool
        Check feasibility against the current floor after every iteration.
    """
    _require_point_to_point(instance)
    M = instance.M
    if eps0 is None:
        eps0 = default_eps0(M)
    if eps0 <= 0 or delta <= 0:
        raise ValueError("eps0 and delta must be positive")
    if M * eps0 > 1.0:
        raise ValueError("eps0 must not exceed 1/M")
    if criterion not in (RELATIVE, ABSOLUTE):
        raise ValueError(f"unknown criterion {criterion!r}")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if warm_start is None:
        plan = greedy_discharge(instance)
        a = np.full((M, instance.K), 1.0 / M)
        p, profiles = solve_energy(instance, plan, a)
        trace = SolveTrace(initial_value=objective(instance, Allocation(p, a)))
        ref = 0.0
        scale = eps0
    else:
        plan = warm_start.discharge
        a = np.array(warm_start.allocation.a)
        p = np.array(warm_start.allocation.p)
        profiles = warm_start.profiles
        ref = objective(instance, warm_start.allocation)
        trace = SolveTrace(initial_value=ref,
                           offset=warm_start.trace.offset + warm_start.trace.iterations)
        scale = warm_start.eps * trace.offset
    H = instance.H
    for i in range(1, max_iters + 1):
        tic = time.perf_counter()
        eps = max(scale / (trace.offset + i), min_eps)
        a = fit_bandwidth_slots(p * H, eps)
        p, profiles = solve_energy(instance, plan, a)
        alloc = Allocation(p, a)
        value = objective(instance, alloc)
        trace.values.append(value)
        trace.eps.append(eps)
        trace.wall_times.append(time.perf_counter() - tic)
        if validate:
            bad = check_feasible(instance, plan, alloc, eps)
            if bad:
                raise RuntimeError(f"iteration {i} left the feasible set: {bad[0]}")
        change = abs(value - ref)
        if change < (delta * abs(value) if criterion == RELATIVE else delta) or change == 0.0:
            trace.reason = TOLERANCE
            break
        ref = value
    else:
        trace.reason = MAX_ITERATIONS
    if polish and min_eps == 0.0:
        alloc, profiles = polish_energy(instance, plan, p, polish_tol, polish_sweeps,
                                        trace.polish_values)
        return SolveResult(alloc, plan, trace, profiles, 0.0)
    return SolveResult(Allocation(p, a), plan, trace, profiles, eps)


def polish_energy(instance: Instance, plan: DischargePlan, p, tol: float = 1e-9,
                  max_sweeps: int = 5000, values: Optional[list] = None):
    """Gauss-Seidel water-filling on the floor-free problem.

    With optimal shares a slot earns ``log(1 + sum_n p_n H_n)``, so with
    the others fixed transmitter ``n`` faces single-link water-filling with
    gain ``H_n / (1 + rest)``.  Sweeps stop when no energy moves by more
    than ``tol``.  Shares are then ``pH / sum(pH)`` (``1/M`` in idle slots).
    """
    H = instance.H
    p = np.array(p, dtype=float)
    ones = np.ones(instance.K)
    profiles = [None] * instance.N
    for _ in range(max_sweeps):
        moved = 0.0
        for n, (m,) in enumerate(instance.receiver_map):
            rest = (p * H).sum(axis=0) - p[m] * H[m]
            new, profiles[n] = solve_ep(ones, H[m] / (1.0 + rest), plan.E_eff[n],
                                        instance.P[n], instance.B_max[n])
            moved = max(moved, float(np.max(np.abs(new - p[m]))))
            p[m] = new
        if values is not None:
            values.append(float(np.log1p((p * H).sum(axis=0)).sum()))
        if moved <= tol:
            break
    x = p * H
    tot = x.sum(axis=0)
    a = np.where(tot > 0, x / np.where(tot > 0, tot, 1.0), 1.0 / instance.M)
    return Allocation(p, a), tuple(profiles)


def block_gaps(instance: Instance, plan: DischargePlan, alloc: Allocation, eps: float):
    """Objective gain from re-solving each energy block and each bandwidth slot alone."""
    _require_point_to_point(instance)
    base = objective(instance, alloc)
    energy = []
    for n, (m,) in enumerate(instance.receiver_map):
        p = np.array(alloc.p)
        p[m], _ = solve_ep(alloc.a[m], instance.H[m], plan.E_eff[n], instance.P[n], instance.B_max[n])
        energy.append(objective(instance, Allocation(p, alloc.a)) - base)
    refit = fit_bandwidth_slots(alloc.p * instance.H, eps)
    bandwidth = []
    for k in range(instance.K):
        a = np.array(alloc.a)
        a[:, k] = refit[:, k]
        bandwidth.append(objective(instance, Allocation(alloc.p, a)) - base)
    return np.array(energy), np.array(bandwidth)


def solve_general_stub(instance: Instance, eps: float = 0.0, max_size: int = 400) -> dict:
    """Route any instance (weighted, multi-receiver) to the reference convex solver."""
    from .verify import reference_solve

    if instance.M * instance.K > max_size:
        raise SizeLimitError(f"K*M = {instance.M * instance.K} exceeds the reference limit {max_size}")
    plan = greedy_discharge(instance)
    ref = reference_solve(instance, eps, plan=plan, max_size=max_size)
    return {
        "allocation": ref.allocation,
        "discharge": plan,
        "objective": objective(instance, ref.allocation),
        "quality": "reference-quality, small instances only",
        "converged": ref.converged,
    }


class OptimalScheduler(BaseEstimator):
    """Estimator wrapper around :func:`solve`.

    ``fit(instance)`` stores ``allocation_``, ``discharge_``, ``trace_``,
    ``profiles_`` and ``objective_``.
    """

    def __init__(self, eps0=None, delta=1e-3, max_iter=100, criterion=RELATIVE, min_eps=0.0,
                 polish=True):
        self.eps0 = eps0
        self.delta = delta
        self.max_iter = max_iter
        self.criterion = criterion
        self.min_eps = min_eps
        self.polish = polish

    def fit(self, instance: Instance, y=None):
        res = solve(instance, self.eps0, self.delta, self.max_iter, criterion=self.criterion,
                    min_eps=self.min_eps, polish=self.polish)
        self.eps_ = res.eps
        self.allocation_ = res.allocation
        self.discharge_ = res.discharge
        self.trace_ = res.trace
        self.profiles_ = res.profiles
        self.objective_ = objective(instance, res.allocation)
        self.n_iter_ = res.trace.iterations
        return self

    def predict(self, instance: Optional[Instance] = None) -> Allocation:
        if not hasattr(self, "allocation_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit first")
        return self.allocation_

    def score(self, instance: Instance, y=None) -> float:
        return objective(instance, self.predict(instance))
