"""Problem data, allocations and the weighted sum-rate objective.

Arrays are indexed from zero internally: ``H[m, k]`` is the power gain of
link ``m`` in slot ``k``.  The JSON form numbers receivers from one, as does
the human-facing text of feasibility violations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import (
    DEFAULT_TOL,
    InvalidInputError,
    check_count,
    check_matrix,
    check_vector,
)

__all__ = [
    "Instance",
    "Allocation",
    "DischargePlan",
    "Violation",
    "BatteryRangeError",
    "objective",
    "slot_rates",
    "check_feasible",
    "battery_trajectory",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """Static problem data for one scheduling period.

    Parameters
    ----------
    receiver_map : sequence of sequences of int
        ``receiver_map[n]`` lists the (zero-based) links served by
        transmitter ``n``.  Must partition ``range(M)``.
    H : array, shape (M, K)
        Channel power gains.
    E : array, shape (N, K)
        Cumulative harvested energy at the end of each slot.
    P : array, shape (N,)
        Per-slot transmit energy cap.
    B_max : array, shape (N,)
        Battery capacity.
    W : array, shape (M,), optional
        Link weights, all ones by default.
    """

    receiver_map: tuple
    H: np.ndarray
    E: np.ndarray
    P: np.ndarray
    B_max: np.ndarray
    W: np.ndarray = None
    owner: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rmap = _check_receiver_map(self.receiver_map)
        N = len(rmap)
        M = sum(len(r) for r in rmap)
        H = check_matrix(self.H, "H")
        if H.shape[0] != M:
            raise InvalidInputError("H", f"expected {M} rows (one per receiver), got {H.shape[0]}")
        K = H.shape[1]
        if K < 1:
            raise InvalidInputError("K", "must be >= 1")
        E = check_matrix(self.E, "E_cumulative", shape=(N, K))
        if np.any(np.diff(E, axis=1) < -DEFAULT_TOL):
            raise InvalidInputError("E_cumulative", "cumulative harvest must be nondecreasing")
        W = np.ones(M) if self.W is None else self.W
        object.__setattr__(self, "receiver_map", rmap)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "P", check_vector(self.P, "P", size=N))
        object.__setattr__(self, "B_max", check_vector(self.B_max, "B_max", size=N))
        object.__setattr__(self, "W", check_vector(W, "W", size=M))
        owner = np.empty(M, dtype=int)
        for n, links in enumerate(rmap):
            owner[list(links)] = n
        owner.setflags(write=False)
        object.__setattr__(self, "owner", owner)

    @property
    def N(self) -> int:
        return len(self.receiver_map)

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def harvest(self) -> np.ndarray:
        """Per-slot harvest increments, shape (N, K)."""
        return np.diff(self.E, axis=1, prepend=0.0)

    @property
    def is_point_to_point(self) -> bool:
        return all(len(r) == 1 for r in self.receiver_map) and bool(np.all(self.W == 1.0))

    @classmethod
    def point_to_point(cls, H, E, P, B_max) -> "Instance":
        """One receiver per transmitter, unit weights; ``H`` has shape (N, K)."""
        H = np.asarray(H, dtype=float)
        if H.ndim == 1:
            H = H[None, :]
        N = H.shape[0]
        P = np.broadcast_to(np.asarray(P, dtype=float), (N,))
        B_max = np.broadcast_to(np.asarray(B_max, dtype=float), (N,))
        E = np.asarray(E, dtype=float)
        if E.ndim == 1:
            E = E[None, :]
        return cls(tuple((n,) for n in range(N)), H, E, P, B_max)

    def replace(self, **changes) -> "Instance":
        kw = dict(receiver_map=self.receiver_map, H=self.H, E=self.E, P=self.P,
                  B_max=self.B_max, W=self.W)
        kw.update(changes)
        return Instance(**kw)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "M": self.M,
            "K": self.K,
            "receiver_map": [[m + 1 for m in r] for r in self.receiver_map],
            "H": self.H.tolist(),
            "E_cumulative": self.E.tolist(),
            "P": self.P.tolist(),
            "B_max": self.B_max.tolist(),
            "W": self.W.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        if not isinstance(doc, dict):
            raise InvalidInputError("instance", "expected a JSON object")
        for key in ("N", "M", "K", "receiver_map", "H", "E_cumulative", "P", "B_max"):
            if key not in doc:
                raise InvalidInputError(key, "missing field")
        N = check_count(doc["N"], "N")
        M = check_count(doc["M"], "M")
        K = check_count(doc["K"], "K")
        rmap = doc["receiver_map"]
        if not isinstance(rmap, list) or not all(isinstance(r, list) for r in rmap):
            raise InvalidInputError("receiver_map", "expected a list of lists")
        if len(rmap) != N:
            raise InvalidInputError("receiver_map", f"expected {N} entries, got {len(rmap)}")
        try:
            zero_based = tuple(tuple(int(m) - 1 for m in r) for r in rmap)
        except (TypeError, ValueError):
            raise InvalidInputError("receiver_map", "receiver ids must be integers") from None
        H = check_matrix(doc["H"], "H", shape=(M, K))
        E = check_matrix(doc["E_cumulative"], "E_cumulative", shape=(N, K))
        if N > M:
            raise InvalidInputError("N", "cannot exceed M")
        return cls(zero_based, H, E, doc["P"], doc["B_max"], doc.get("W"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


def _check_receiver_map(rmap) -> tuple:
    try:
        rmap = tuple(tuple(int(m) for m in r) for r in rmap)
    except (TypeError, ValueError):
        raise InvalidInputError("receiver_map", "expected a sequence of integer sequences") from None
    if len(rmap) == 0:
        raise InvalidInputError("receiver_map", "at least one transmitter required")
    flat = [m for r in rmap for m in r]
    if any(len(r) == 0 for r in rmap):
        raise InvalidInputError("receiver_map", "every transmitter needs a receiver")
    if sorted(flat) != list(range(len(flat))):
        raise InvalidInputError("receiver_map", "must partition the receivers 1..M")
    return rmap


@dataclass(frozen=True, eq=False)
class Allocation:
    """Energy ``p`` and bandwidth ``a``, both of shape (M, K)."""

    p: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if p.ndim != 2 or p.shape != a.shape:
            raise InvalidInputError("allocation", f"p {p.shape} and a {a.shape} must be equal 2-D shapes")
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "a", _frozen(a))

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "a": self.a.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Allocation":
        for key in ("p", "a"):
            if key not in doc:
                raise InvalidInputError(key, "missing field")
        p = check_matrix(doc["p"], "p", nonneg=False)
        a = check_matrix(doc["a"], "a", nonneg=False, shape=p.shape)
        return cls(p, a)


@dataclass(frozen=True, eq=False)
class DischargePlan:
    """Discharged energy ``D`` and the effective cumulative budget ``E_eff``."""

    D: np.ndarray
    E_eff: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "D", _frozen(self.D))
        object.__setattr__(self, "E_eff", _frozen(self.E_eff))

    @classmethod
    def from_discharge(cls, instance: Instance, D) -> "DischargePlan":
        D = np.asarray(D, dtype=float)
        return cls(D, instance.E - np.cumsum(D, axis=1))

    @classmethod
    def none(cls, instance: Instance) -> "DischargePlan":
        return cls(np.zeros_like(instance.E), instance.E)

    def to_dict(self) -> dict:
        return {"D": self.D.tolist(), "E_eff": self.E_eff.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DischargePlan":
        D = check_matrix(doc["D"], "D")
        E_eff = check_matrix(doc["E_eff"], "E_eff", nonneg=False, shape=D.shape)
        return cls(D, E_eff)


def _check_dims(instance: Instance, alloc: Allocation):
    if alloc.p.shape != (instance.M, instance.K):
        raise InvalidInputError(
            "allocation", f"expected shape {(instance.M, instance.K)}, got {alloc.p.shape}")


def slot_rates(p, a, H) -> np.ndarray:
    """Elementwise ``a * log(1 + p*H/a)`` with ``0 * log(1 + x/0) = 0``."""
    p, a, H = np.broadcast_arrays(np.asarray(p, float), np.asarray(a, float), np.asarray(H, float))
    out = np.zeros(p.shape)
    pos = a > 0
    out[pos] = a[pos] * np.log1p(p[pos] * H[pos] / a[pos])
    return out


def objective(instance: Instance, alloc: Allocation) -> float:
    """Weighted sum rate in nats."""
    _check_dims(instance, alloc)
    return float(np.sum(instance.W[:, None] * slot_rates(alloc.p, alloc.a, instance.H)))


class Violation(NamedTuple):
    constraint: str
    index: tuple
    magnitude: float

    def __str__(self):
        where = ",".join(str(i + 1) for i in self.index)
        return f"{self.constraint}[{where}] violated by {self.magnitude:.3g}"


def transmitter_energy(instance: Instance, p) -> np.ndarray:
    """Per-transmitter energy use per slot, shape (N, K)."""
    out = np.zeros((instance.N, instance.K))
    np.add.at(out, instance.owner, np.asarray(p, dtype=float))
    return out


def check_feasible(instance: Instance, plan: DischargePlan, alloc: Allocation,
                   eps: float = 0.0, tol: float = DEFAULT_TOL) -> list:
    """List every constraint violated by more than ``tol``.

    Checks the cumulative band ``E_eff - B_max <= cumsum(p) <= E_eff``, the
    per-slot cap, the bandwidth simplex, the floor ``a >= eps`` and ``p >= 0``.
    """
    _check_dims(instance, alloc)
    out = []
    use = transmitter_energy(instance, alloc.p)
    cum = np.cumsum(use, axis=1)
    over = cum - plan.E_eff
    under = plan.E_eff - instance.B_max[:, None] - cum
    capx = use - instance.P[:, None]
    for name, arr in (("energy_causality", over), ("battery_capacity", under), ("power_cap", capx)):
        for n, k in zip(*np.nonzero(arr > tol)):
            out.append(Violation(name, (int(n), int(k)), float(arr[n, k])))
    simplex = np.abs(alloc.a.sum(axis=0) - 1.0)
    for k in np.nonzero(simplex > tol)[0]:
        out.append(Violation("simplex", (int(k),), float(simplex[k])))
    for name, arr in (("bandwidth_floor", eps - alloc.a), ("energy_nonnegative", -alloc.p)):
        for m, k in zip(*np.nonzero(arr > tol)):
            out.append(Violation(name, (int(m), int(k)), float(arr[m, k])))
    return out


class BatteryRangeError(ValueError):
    def __init__(self, n: int, slot: int, level: float):
        super().__init__(f"battery of transmitter {n + 1} leaves its range at slot {slot + 1} (level {level:.6g})")
        self.transmitter = n
        self.slot = slot
        self.level = level


def battery_trajectory(instance: Instance, plan: DischargePlan, alloc: Allocation, n: int,
                       tol: float = DEFAULT_TOL) -> np.ndarray:
    """End-of-slot battery levels of transmitter ``n`` starting from empty.

    Raises
    ------
    BatteryRangeError
        At the first slot where the level leaves ``[0, B_max[n]]``.
    """
    _check_dims(instance, alloc)
    use = alloc.p[list(instance.receiver_map[n])].sum(axis=0)
    levels = np.empty(instance.K)
    b = 0.0
    for k, gain in enumerate(instance.harvest[n]):
        b = b + gain - use[k] - plan.D[n, k]
        if b < -tol or b > instance.B_max[n] + tol:
            raise BatteryRangeError(n, k, b)
        levels[k] = b
    return levels
