"""Discounted dynamic water-filling for one transmitter's energy subproblem.

Given bandwidth shares ``a`` the per-slot fill at water level ``w`` is
``min(P, a * (w - 1/H)^+)``.  The optimal schedule is piecewise constant in
``w``; the level may rise only where the battery runs empty (BDP) and fall
only where it is full (BFP).  The segments are found with a taut-string
sweep: from each boundary, extend a constant level for as long as the
cumulative band allows, then bend at the last slot where the binding bound
was touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import DEFAULT_TOL, InfeasibleError

__all__ = [
    "SegmentProfile",
    "segment_water_level",
    "solve_ep",
    "verify_theorem3",
    "level_intervals",
]

BDP = "BDP"
BFP = "BFP"
HORIZON_END = "horizon-end"


@dataclass(frozen=True)
class SegmentProfile:
    """Segment ends (zero-based slot, kind) and one water level per segment.

    A level of ``inf`` marks a segment where energy has no marginal value and
    every usable slot runs at its cap.
    """

    boundaries: tuple
    water_levels: tuple

    def segments(self):
        start = 0
        for (end, kind), w in zip(self.boundaries, self.water_levels):
            yield start, end, kind, w
            start = end + 1

    def to_dict(self) -> dict:
        return {
            "boundaries": [{"slot": int(s) + 1, "kind": kind} for s, kind in self.boundaries],
            "water_levels": [float(w) for w in self.water_levels],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SegmentProfile":
        bounds = tuple((int(b["slot"]) - 1, str(b["kind"])) for b in doc["boundaries"])
        return cls(bounds, tuple(float(w) for w in doc["water_levels"]))


def _inverse_gain(a, H):
    a = np.asarray(a, dtype=float)
    H = np.asarray(H, dtype=float)
    inv = np.full(a.shape, np.inf)
    ok = (H > 0) & (a > 0)
    inv[ok] = 1.0 / H[ok]
    return inv


def _fill(w: float, a, inv_h, P: float) -> np.ndarray:
    """Per-slot energy at finite level ``w``; zero-rate slots (``inv_h = inf``) get nothing."""
    out = np.zeros(a.shape)
    reg = np.isfinite(inv_h)
    out[reg] = np.clip(a[reg] * (w - inv_h[reg]), 0.0, P)
    return out


class _Curves:
    """Cumulative fill ``F_t(w)`` of slots ``0..t`` as exact piecewise-linear curves."""

    def __init__(self, a, inv_h, P: float):
        reg = np.isfinite(inv_h)
        b0 = inv_h[reg]
        with np.errstate(divide="ignore"):
            b1 = b0 + P / a[reg]
        self.bp = np.unique(np.concatenate([[0.0], b0, b1[np.isfinite(b1)]]))
        vals = np.zeros((a.size, self.bp.size))
        vals[reg] = np.clip(a[reg, None] * (self.bp[None, :] - b0[:, None]), 0.0, P)
        self.G = np.cumsum(vals, axis=0)
        # growth rate past the last breakpoint (nonzero only when P is infinite)
        tail = np.where(reg, a, 0.0) if np.isinf(P) else np.zeros(a.size)
        self.slope = np.cumsum(tail)
        self.rows = np.arange(a.size)

    def lower(self, T) -> np.ndarray:
        """Smallest w with ``F_t(w) >= T_t``; ``inf`` when no finite level suffices."""
        G, bp = self.G, self.bp
        nb = bp.size
        idx = (G < T[:, None]).sum(axis=1)
        w = np.zeros(T.size)
        mid = (idx > 0) & (idx < nb)
        if mid.any():
            r, i = self.rows[mid], idx[mid]
            g0, g1 = G[r, i - 1], G[r, i]
            w[mid] = bp[i - 1] + (T[mid] - g0) / (g1 - g0) * (bp[i] - bp[i - 1])
        past = idx == nb
        if past.any():
            r = self.rows[past]
            with np.errstate(divide="ignore", invalid="ignore"):
                w[past] = np.where(self.slope[r] > 0,
                                   bp[-1] + (T[past] - G[r, -1]) / self.slope[r], np.inf)
        return w

    def upper(self, T) -> np.ndarray:
        """Largest w with ``F_t(w) <= T_t``; ``inf`` when every finite level fits."""
        G, bp = self.G, self.bp
        nb = bp.size
        T = np.maximum(T, 0.0)
        idx = (G <= T[:, None]).sum(axis=1) - 1
        w = np.empty(T.size)
        mid = idx < nb - 1
        if mid.any():
            r, i = self.rows[mid], idx[mid]
            g0, g1 = G[r, i], G[r, i + 1]
            w[mid] = bp[i] + (T[mid] - g0) / (g1 - g0) * (bp[i + 1] - bp[i])
        past = ~mid
        if past.any():
            r = self.rows[past]
            with np.errstate(divide="ignore", invalid="ignore"):
                w[past] = np.where(self.slope[r] > 0,
                                   bp[-1] + (T[past] - G[r, -1]) / self.slope[r], np.inf)
        return w


def segment_water_level(a, H, P: float, S: float, tol: float = DEFAULT_TOL):
    """Water level of one segment that spends exactly ``S``.

    Parameters
    ----------
    a, H : array_like
        Bandwidth shares and channel gains of the segment's slots.
    P : float
        Per-slot cap; may be ``inf``.
    S : float
        Energy to spend across the segment.

    Returns
    -------
    w : float
        The smallest level reaching ``S`` (so a fully capped segment reports
        the level at which the last cap starts to bind).
    p : ndarray
        Per-slot energy ``min(P, a * (w - 1/H)^+)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    inv_h = _inverse_gain(a, H)
    if S < -tol or S > a.size * P + tol:
        raise InfeasibleError(f"segment target {S:.6g} outside [0, {a.size * P:.6g}]")
    S = max(S, 0.0)
    curves = _Curves(a, inv_h, P)
    w = float(curves.lower(np.full(a.size, S))[-1])
    if np.isinf(w):
        raise InfeasibleError("segment target exceeds what its usable slots can absorb")
    return w, _fill(w, a, inv_h, P)


def _first_band_violation(E_eff, P: float, B_max: float, tol: float):
    lo = hi = 0.0
    for k, e in enumerate(E_eff):
        lo = max(lo, e - B_max)
        hi = min(hi + P, e)
        if lo > hi + tol:
            return k
    return None


def solve_ep(a, H, E_eff, P: float, B_max: float, tol: float = DEFAULT_TOL):
    """Optimal energy schedule of one point-to-point transmitter.

    Maximises ``sum_k a_k log(1 + p_k H_k / a_k)`` subject to
    ``E_eff - B_max <= cumsum(p) <= E_eff`` and ``0 <= p <= P``.

    Returns
    -------
    p : ndarray, shape (K,)
    profile : SegmentProfile

    Raises
    ------
    InfeasibleError
        If the cumulative band admits no schedule; the message names the
        first slot whose constraint cannot be met.
    """
    a = np.asarray(a, dtype=float)
    H = np.asarray(H, dtype=float)
    E_eff = np.asarray(E_eff, dtype=float)
    K = a.size
    if np.any(a < 0):
        raise ValueError("bandwidth shares must be nonnegative")
    bad = _first_band_violation(E_eff, P, B_max, tol)
    if bad is not None:
        raise InfeasibleError(
            f"cumulative constraint at slot {bad + 1} cannot be met "
            f"(band [{E_eff[bad] - B_max:.6g}, {E_eff[bad]:.6g}])")
    inv_h = _inverse_gain(a, H)
    seg_a_all, seg_inv_all, dump_level = _with_dump_slots(a, inv_h, P)
    real_top = _top_breakpoint(a, inv_h, P)
    upper_bound = E_eff
    lower_bound = E_eff - B_max
    p = np.zeros(K)
    bounds, levels = [], []
    s, base = 0, 0.0
    while s < K:
        seg_a, seg_inv = seg_a_all[s:], seg_inv_all[s:]
        curves = _Curves(seg_a, seg_inv, P)
        t_up = upper_bound[s:] - base
        t_lo = lower_bound[s:] - base
        up = curves.upper(t_up)
        lo = curves.lower(t_lo)
        lo[t_lo <= 0] = 0.0
        end, level, kind = _sweep(up, lo)
        if end < 0:
            raise InfeasibleError(f"no feasible continuation after slot {s}")
        e = s + end
        if kind == HORIZON_END:
            # usable slots run at cap; zero-rate slots take only what the floors force
            level = max(level, min(float(np.max(curves.bp)), real_top))
        # an infinite level means every slot, zero-rate ones included, is at its cap
        fill_at = float(np.max(curves.bp)) if np.isinf(level) else level
        p[s:e + 1] = _fill(fill_at, seg_a[:end + 1], seg_inv[:end + 1], P)
        bounds.append(e)
        levels.append(np.inf if level >= dump_level else level)
        s, base = e + 1, base + p[s:e + 1].sum()
    return p, _profile(p, a, inv_h, P, E_eff, B_max, bounds, levels, tol)


def _top_breakpoint(a, inv_h, P: float) -> float:
    reg = np.isfinite(inv_h)
    if not reg.any():
        return 0.0
    with np.errstate(divide="ignore"):
        return float(np.max(inv_h[reg] + P / a[reg]))


def _with_dump_slots(a, inv_h, P: float):
    """Model zero-rate slots as unit-share slots filling only above every real breakpoint.

    They absorb energy the battery cannot hold once every usable slot is at
    its cap.  Their breakpoints are stacked ``P`` apart so the earliest one
    fills first.  Returns the virtual shares, inverse gains and the level
    from which energy is pure waste.
    """
    dead = ~np.isfinite(inv_h)
    if not dead.any() or not np.isfinite(P):
        return a, inv_h, np.inf
    L = _top_breakpoint(a, inv_h, P) + 1.0
    a_v = np.where(dead, 1.0, a)
    inv_v = inv_h.copy()
    inv_v[dead] = L + P * np.arange(dead.sum())
    return a_v, inv_v, L


def _sweep(up, lo):
    """Scan one segment; returns (relative end slot, level, kind)."""
    hi, arg_hi = np.inf, -1
    low, arg_lo = 0.0, -1
    for t in range(up.size):
        if up[t] < low:
            return arg_lo, low, BFP
        if lo[t] > hi:
            return arg_hi, hi, BDP
        if up[t] <= hi:
            hi, arg_hi = up[t], t
        if lo[t] >= low and lo[t] > 0:
            low, arg_lo = lo[t], t
    if np.isfinite(hi):
        return arg_hi, hi, BDP
    if np.isinf(low):
        return arg_lo, low, BFP
    return up.size - 1, low, HORIZON_END


def level_intervals(p, a, H, P: float, starts, ends, tol: float = 1e-9):
    """Interval of water levels reproducing ``p`` on each segment.

    Uncapped positive slots pin ``w = p/a + 1/H``; capped slots require
    ``w >= 1/H + P/a``; idle usable slots require ``w <= 1/H``.
    """
    a = np.asarray(a, dtype=float)
    return _intervals(np.asarray(p, dtype=float), a, _inverse_gain(a, H), P, starts, ends, tol)


def _intervals(p, a, inv_h, P, starts, ends, tol):
    out = []
    for s, e in zip(starts, ends):
        lo, hi = 0.0, np.inf
        for k in range(s, e + 1):
            if not np.isfinite(inv_h[k]):
                continue
            if p[k] >= P - tol:
                lo = max(lo, inv_h[k] + P / a[k])
            elif p[k] <= tol:
                hi = min(hi, inv_h[k])
            else:
                w = p[k] / a[k] + inv_h[k]
                lo, hi = max(lo, w), min(hi, w)
        out.append((lo, hi))
    return out


def _profile(p, a, inv_h, P, E_eff, B_max, ends, levels, tol):
    battery = E_eff - np.cumsum(p)
    # split at interior slots where the battery touches either bound
    touch = (battery <= tol * max(1.0, B_max)) | (battery >= B_max - tol * max(1.0, B_max))
    split_ends, split_levels, s = [], [], 0
    for e, w in zip(ends, levels):
        for t in range(s, e):
            if touch[t]:
                split_ends.append(t)
                split_levels.append(w)
        split_ends.append(e)
        split_levels.append(w)
        s = e + 1
    ends, levels = split_ends, split_levels
    starts = [0] + [e + 1 for e in ends[:-1]]
    intervals = _intervals(p, a, inv_h, P, starts, ends, 1e-9)
    bounds, reported = [], []
    usable = np.isfinite(inv_h)
    for st, e, w, (lo, hi) in zip(starts, ends, levels, intervals):
        if np.isfinite(w):
            capped = np.any(usable[st:e + 1] & (p[st:e + 1] >= P - 1e-9))
            if hi - lo <= 1e-9 * max(1.0, lo) or not (lo <= w <= hi):
                # unique level when some slot is interior
                w = float(np.clip(w, lo, hi))
            elif capped:
                # smallest level consistent with the binding caps
                w = lo
        if battery[e] <= tol * max(1.0, B_max):
            kind = BDP
        elif battery[e] >= B_max - tol * max(1.0, B_max):
            kind = BFP
        else:
            kind = HORIZON_END
        bounds.append((int(e), kind))
        reported.append(float(w))
    return SegmentProfile(tuple(bounds), tuple(reported))


def verify_theorem3(p, profile: SegmentProfile, a, H, E_eff, P: float, B_max: float,
                    tol: float = 1e-7) -> bool:
    """Check the water-filling optimality structure of an energy schedule.

    True iff ``p`` is feasible, matches ``min(P, a (w - 1/H)^+)`` for the
    profile's levels, declared boundaries sit at an empty/full battery, some
    level sequence consistent with ``p`` rises only at empty-battery slots
    and falls only at full-battery slots, and leftover energy at the horizon
    implies every usable slot of the last segment is capped.
    """
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    E_eff = np.asarray(E_eff, dtype=float)
    K = p.size
    scale = max(1.0, B_max, P)
    inv_h = _inverse_gain(a, H)
    if np.any(p < -tol) or np.any(p > P + tol):
        return False
    battery = E_eff - np.cumsum(p)
    if np.any(battery < -tol * scale) or np.any(battery > B_max + tol * scale):
        return False
    segs = list(profile.segments())
    if not segs or segs[-1][1] != K - 1:
        return False
    empty = battery <= tol * scale
    full = battery >= B_max - tol * scale
    for s, e, kind, w in segs:
        if e < s:
            return False
        if (kind == BDP and not empty[e]) or (kind == BFP and not full[e]):
            return False
        sl = slice(s, e + 1)
        reg = np.isfinite(inv_h[sl])
        if np.isinf(w):
            if np.any(np.abs(p[sl][reg] - P) > tol):
                return False
        else:
            expect = _fill(w, a[sl], inv_h[sl], P)
            if np.any(np.abs(p[sl] - expect) > tol * max(1.0, P if np.isfinite(P) else 1.0)):
                return False
    intervals = _intervals(p, a, inv_h, P, [s for s, *_ in segs], [e for _, e, *_ in segs], tol)
    for (lo, hi), (*_, w) in zip(intervals, segs):
        if lo > hi + tol * max(1.0, lo):
            return False
    cur_lo, cur_hi = intervals[0]
    for j in range(1, len(segs)):
        e = segs[j - 1][1]
        nlo, nhi = intervals[j]
        if empty[e] and full[e]:
            cur_lo, cur_hi = nlo, nhi
        elif empty[e]:
            cur_lo, cur_hi = max(nlo, cur_lo), nhi
        elif full[e]:
            cur_lo, cur_hi = nlo, min(nhi, cur_hi)
        else:
            cur_lo, cur_hi = max(nlo, cur_lo), min(nhi, cur_hi)
        if cur_lo > cur_hi + tol * max(1.0, cur_lo):
            return False
    s, e, kind, w = segs[-1]
    if not empty[K - 1]:
        reg = np.isfinite(inv_h[s:e + 1])
        if np.any(p[s:e + 1][reg] < P - tol):
            return False
    return True
