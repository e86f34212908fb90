"""Per-slot bandwidth fitting.

For one slot with link products ``x_n = p_n H_n`` the optimal shares on the
``eps``-floored simplex are proportional to ``x_n`` on an active set and
pinned to ``eps`` elsewhere.  The active set shrinks monotonically: links
whose proportional share drops to ``eps`` or below are floored and the
remainder is re-split, at most ``N`` times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

__all__ = [
    "DegenerateSlotError",
    "FittingState",
    "fit_bandwidth",
    "fit_bandwidth_slots",
    "verify_theorem4",
    "BandwidthFitter",
]


class DegenerateSlotError(ValueError):
    """Every link in the slot has zero energy; any feasible split is optimal."""


@dataclass(frozen=True)
class FittingState:
    """Active/floored split at the start of one iteration and the shares it yields."""

    active: tuple
    floored: tuple
    a: np.ndarray
    ratio: float


def _check(pH, eps):
    pH = np.asarray(pH, dtype=float)
    if pH.ndim != 1 or pH.size == 0:
        raise ValueError("pH must be a nonempty vector")
    if np.any(pH < 0) or not np.all(np.isfinite(pH)):
        raise ValueError("pH entries must be finite and nonnegative")
    if eps < 0 or pH.size * eps > 1.0 + 1e-12:
        raise ValueError(f"eps={eps} leaves the floored simplex empty for {pH.size} links")
    return pH


def fit_bandwidth(pH, eps: float, return_states: bool = False):
    """Optimal shares for one slot.

    Parameters
    ----------
    pH : array_like, shape (N,)
        Energy times channel gain for each link.
    eps : float
        Bandwidth floor, ``0 <= eps <= 1/N``.
    return_states : bool
        Also return the list of :class:`FittingState` after every iteration.

    Raises
    ------
    DegenerateSlotError
        If ``sum(pH) == 0``.
    """
    pH = _check(pH, eps)
    if pH.sum() <= 0:
        raise DegenerateSlotError("all links idle in this slot")
    floored = pH <= 0
    a = np.full(pH.size, eps)
    states = []
    while True:
        active = ~floored
        if not active.any():
            break
        ratio = (1.0 - floored.sum() * eps) / pH[active].sum()
        a = np.where(active, ratio * pH, eps)
        if return_states:
            states.append(FittingState(tuple(np.nonzero(active)[0]), tuple(np.nonzero(floored)[0]),
                                       a.copy(), ratio))
        viol = active & (a <= eps)
        if not viol.any():
            break
        floored = floored | viol
    if return_states:
        return a, states
    return a


def fit_bandwidth_slots(pH, eps: float) -> np.ndarray:
    """Fit every column of ``pH`` (shape (N, K)); idle slots get ``1/N``."""
    pH = np.asarray(pH, dtype=float)
    N, K = pH.shape
    if eps < 0 or N * eps > 1.0 + 1e-12:
        raise ValueError(f"eps={eps} leaves the floored simplex empty for {N} links")
    a = np.full((N, K), 1.0 / N)
    live = pH.sum(axis=0) > 0
    if not live.any():
        return a
    x = pH[:, live]
    floored = x <= 0
    for _ in range(N + 1):
        active = ~floored
        tot = np.where(active, x, 0.0).sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(tot > 0, (1.0 - floored.sum(axis=0) * eps) / tot, 0.0)
        share = np.where(active, ratio * x, eps)
        viol = active & (share <= eps)
        if not viol.any():
            break
        floored |= viol
    a[:, live] = share
    return a


def verify_theorem4(pH, eps: float, a, tol: float = 1e-9) -> bool:
    """Check proportional shares on the active set and floor dominance elsewhere."""
    pH = np.asarray(pH, dtype=float)
    a = np.asarray(a, dtype=float)
    if abs(a.sum() - 1.0) > tol or np.any(a < eps - tol):
        return False
    if pH.sum() <= 0:
        return True
    active = a > eps + tol
    if not active.any():
        return bool(np.all(pH <= 0)) or pH.size * eps >= 1.0 - tol
    tot = pH[active].sum()
    if tot <= 0:
        return False
    ratio = (1.0 - (~active).sum() * eps) / tot
    if np.any(np.abs(a[active] - ratio * pH[active]) > tol):
        return False
    return bool(np.all(eps >= ratio * pH[~active] - tol))


class BandwidthFitter(TransformerMixin, BaseEstimator):
    """Transformer mapping rows of ``p*H`` products to optimal bandwidth shares.

    Each row of ``X`` is one slot; columns are links.  Stateless, so ``fit``
    only validates.
    """

    def __init__(self, eps: float = 0.0):
        self.eps = eps

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("expected a 2-D array of shape (n_slots, n_links)")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("expected a 2-D array of shape (n_slots, n_links)")
        return fit_bandwidth_slots(X.T, self.eps).T
