"""Independent checks: KKT certification, brute-force grids and a reference convex solve."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq, linprog

from ._validation import SizeLimitError
from .discharge import greedy_discharge
from .model import Allocation, DischargePlan, Instance, check_feasible, objective, slot_rates

__all__ = [
    "KktReport",
    "kkt_residual",
    "default_tolerance",
    "grid_oracle",
    "lipschitz_gap",
    "slot_grid_oracle",
    "discharge_grid_min",
    "ReferenceResult",
    "reference_solve",
    "perturb_allocation",
]

# caps the energy-stationarity weight a/q^2 on near-dead links
_MAX_WEIGHT = 1e3


@dataclass
class KktReport:
    """Residuals of the optimality conditions for the floored problem.

    Energy stationarity is scaled to energy units (how far each ``p`` sits
    from the value its multipliers imply); bandwidth stationarity is in nats.
    Slackness entries are multiplier times slack.
    """

    stationarity_energy: float = 0.0
    stationarity_bandwidth: float = 0.0
    slackness_lambda: float = 0.0
    slackness_mu: float = 0.0
    slackness_cap: float = 0.0
    slackness_nonneg: float = 0.0
    slackness_beta: float = 0.0
    dual_feasibility: float = 0.0
    violations: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def max_residual(self) -> float:
        if self.violations:
            return float("inf")
        return max(self.stationarity_energy, self.stationarity_bandwidth, self.slackness_lambda,
                   self.slackness_mu, self.slackness_cap, self.slackness_nonneg,
                   self.slackness_beta, self.dual_feasibility)

    @property
    def certified(self) -> bool:
        return self.max_residual <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "max_residual": self.max_residual if np.isfinite(self.max_residual) else None,
            "tolerance": self.tolerance,
            "stationarity_energy": self.stationarity_energy,
            "stationarity_bandwidth": self.stationarity_bandwidth,
            "slackness_lambda": self.slackness_lambda,
            "slackness_mu": self.slackness_mu,
            "slackness_cap": self.slackness_cap,
            "slackness_nonneg": self.slackness_nonneg,
            "slackness_beta": self.slackness_beta,
            "dual_feasibility": self.dual_feasibility,
            "violations": [str(v) for v in self.violations],
        }


def default_tolerance(instance: Instance) -> float:
    return 1e-4 * max(1.0, float(np.max(instance.H, initial=0.0)))


def _marginals(instance: Instance, alloc: Allocation):
    """Per-link ``dR/dp`` and ``dR/da`` including weights."""
    p, a, H = alloc.p, alloc.a, instance.H
    W = instance.W[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(a > 0, p * H / a, np.where(p * H > 0, np.inf, 0.0))
        q = W * H / (1.0 + x)
        g = W * np.where(np.isinf(x), np.inf, np.log1p(x) - x / (1.0 + x))
    return q, g


def _zero_share_floor(WH, alpha_w):
    """Smallest energy price keeping a bandwidth-less link idle.

    A link with no bandwidth gains ``max_x WH-rate - x*price`` per unit of
    band it could take; that stays below ``alpha`` iff the price is at least
    ``WH * y`` with ``-log(y) - 1 + y = alpha / W``.
    """
    if alpha_w <= 0:
        return WH
    f = lambda y: -np.log(y) - 1.0 + y - alpha_w
    # f(lo) = lo > 0 and f(1) = -alpha_w < 0
    return WH * brentq(f, np.exp(-alpha_w - 1.0), 1.0, xtol=1e-15)


def _energy_block(q, s, p, use, E_eff, P, B_max, K, act_tol, floor_price=None):
    """LP over (lambda, mu, eta, nu) for one transmitter; returns residual parts.

    Multipliers of constraints with slack above ``act_tol`` are pinned to 0.
    ``floor_price`` (shape (L, K), NaN where unused) asks the slot's energy
    price to be at least that value, which keeps zero-share links idle.
    """
    L = q.shape[0]
    cum = np.cumsum(use)
    slack_l = np.maximum(E_eff - cum, 0.0)
    slack_m = np.maximum(cum - (E_eff - B_max), 0.0)
    slack_c = np.maximum(P - use, 0.0)
    slack_n = np.maximum(p, 0.0).ravel()
    nv = 3 * K + L * K + 1  # lam, mu, eta, nu, t
    it = nv - 1
    suffix = np.triu(np.ones((K, K)))  # row k sums j >= k
    rows, rhs = [], []
    for m in range(L):
        # s * (q - suffix@(lam - mu) - eta + nu) within [-t, t]
        block = np.zeros((K, nv))
        block[:, 0:K] = -suffix
        block[:, K:2 * K] = suffix
        block[:, 2 * K:3 * K] = -np.eye(K)
        block[:, 3 * K + m * K:3 * K + (m + 1) * K] = np.eye(K)
        block *= s[m][:, None]
        sq = s[m] * q[m]
        up = block.copy()
        up[:, it] = -1.0
        rows.append(up)
        rhs.append(-sq)
        dn = -block
        dn[:, it] = -1.0
        rows.append(dn)
        rhs.append(sq)
    if floor_price is not None:
        for m in range(L):
            for k in np.nonzero(np.isfinite(floor_price[m]))[0]:
                # floor_price - (suffix@(lam - mu))_k - eta_k <= t
                r = np.zeros(nv)
                r[0:K], r[K:2 * K] = -suffix[k], suffix[k]
                r[2 * K + k], r[it] = -1.0, -1.0
                rows.append(r[None, :])
                rhs.append(np.array([-floor_price[m, k]]))
    slacks = np.concatenate([slack_l, slack_m, slack_c, slack_n])
    bounds = [(0.0, None if sl <= act_tol else 0.0) for sl in slacks] + [(0.0, None)]
    c = np.zeros(nv)
    c[it] = 1.0
    res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"KKT multiplier LP failed: {res.message}")
    z = res.x
    lam, mu, eta, nu = z[:K], z[K:2 * K], z[2 * K:3 * K], z[3 * K:3 * K + L * K].reshape(L, K)
    v = suffix @ (lam - mu)
    stat = np.abs(s * (q - v[None, :] - eta[None, :] + nu))
    return (float(stat.max()), float(np.max(lam * slack_l)), float(np.max(mu * slack_m)),
            float(np.max(eta * slack_c)), float(np.max(nu.ravel() * slack_n)), v + eta)


def _bandwidth_block(g, a, eps, act_tol):
    """Best ``alpha`` for one slot and the residual of ``g - alpha + beta = 0``.

    Floored links (within ``act_tol`` of ``eps``) may carry ``beta >= 0``,
    so they only need ``g <= alpha``; the rest need ``g == alpha``.  The
    minimax ``alpha`` is the midpoint of the active spread, pushed up to the
    largest floored value when that is higher.
    """
    if np.any(np.isinf(g)):
        return float("inf"), 0.0, float("inf")
    slack = np.maximum(a - eps, 0.0)
    floored = slack <= act_tol
    if floored.all():
        return 0.0, 0.0, float(g.max())
    ga = g[~floored]
    hi = max(ga.max(), g[floored].max(initial=-np.inf))
    alpha = 0.5 * (hi + ga.min())
    beta = np.where(floored, np.maximum(alpha - g, 0.0), 0.0)
    return float(np.max(np.abs(g - alpha + beta))), float(np.max(beta * slack)), float(alpha)


def kkt_residual(instance: Instance, plan: DischargePlan, alloc: Allocation, eps: float = 0.0,
                 tol: Optional[float] = None, feas_tol: float = 1e-7,
                 act_tol: float = 1e-6) -> KktReport:
    """Certify ``alloc`` for the problem with bandwidth floor ``eps``.

    Multipliers are recovered from the primal point, so no solver has to
    export its duals.  Constraints with slack at most ``act_tol`` count as
    active and only those may carry multipliers; a small linear program then
    picks the multipliers minimising the worst energy stationarity residual.
    An infeasible allocation gets a report listing the violations and an
    infinite residual.
    """
    tol = default_tolerance(instance) if tol is None else tol
    report = KktReport(tolerance=tol)
    report.violations = check_feasible(instance, plan, alloc, eps, feas_tol)
    if report.violations:
        return report
    q, g = _marginals(instance, alloc)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(q > 0, instance.W[:, None] * alloc.a / q ** 2, _MAX_WEIGHT)
    s = np.minimum(s, _MAX_WEIGHT)
    K = instance.K
    alpha = np.zeros(K)
    for k in range(K):
        st, cs, alpha[k] = _bandwidth_block(g[:, k], alloc.a[:, k], eps, act_tol)
        report.stationarity_bandwidth = max(report.stationarity_bandwidth, st)
        report.slackness_beta = max(report.slackness_beta, cs)
    # links without bandwidth must not want any: price floor per slot
    W = instance.W
    zero = alloc.a <= act_tol
    floor_price = np.full((instance.M, K), np.nan)
    for m, k in zip(*np.nonzero(zero & (instance.H > 0) & np.isfinite(alpha)[None, :])):
        floor_price[m, k] = _zero_share_floor(W[m] * instance.H[m, k], alpha[k] / W[m])
    for n, links in enumerate(instance.receiver_map):
        links = list(links)
        use = alloc.p[links].sum(axis=0)
        parts = _energy_block(q[links], s[links], alloc.p[links], use, plan.E_eff[n],
                              instance.P[n], instance.B_max[n], K, act_tol, floor_price[links])
        report.stationarity_energy = max(report.stationarity_energy, parts[0])
        report.slackness_lambda = max(report.slackness_lambda, parts[1])
        report.slackness_mu = max(report.slackness_mu, parts[2])
        report.slackness_cap = max(report.slackness_cap, parts[3])
        report.slackness_nonneg = max(report.slackness_nonneg, parts[4])
        price = parts[5]
        for j, m in enumerate(links):
            for k in np.nonzero(np.isfinite(floor_price[m]))[0]:
                # band value the idle link could capture at this price
                WH, v = W[m] * instance.H[m, k], price[k]
                gain = float("inf") if v <= 0 else (
                    W[m] * (np.log(WH / v) - 1.0 + v / WH) if WH > v else 0.0)
                report.stationarity_bandwidth = max(report.stationarity_bandwidth,
                                                    gain - alpha[k])
    return report


# ---------------------------------------------------------------- grid oracles

def _simplex_grid(L: int, eps: float, resolution: float):
    """Points ``eps + j * step`` on the floored simplex, shape (G, L), and ``step``."""
    room = 1.0 - L * eps
    if room < -1e-12:
        raise ValueError("eps too large for the simplex")
    J = max(int(round(room / resolution)), 0)
    if J == 0:
        return np.full((1, L), 1.0 / L if room <= 1e-12 else eps + room / L), 0.0
    step = room / J
    pts = [c for c in itertools.product(range(J + 1), repeat=L - 1) if sum(c) <= J]
    idx = np.array([list(c) + [J - sum(c)] for c in pts], dtype=float)
    return eps + idx * step, step


def slot_grid_oracle(pH, eps: float, resolution: float = 1e-3, W=None):
    """Best ``sum W a log(1 + pH/a)`` over a simplex grid for one slot."""
    pH = np.asarray(pH, dtype=float)
    if pH.size > 3:
        raise SizeLimitError("slot grid oracle supports at most 3 links")
    W = np.ones(pH.size) if W is None else np.asarray(W, dtype=float)
    A, _ = _simplex_grid(pH.size, eps, resolution)
    vals = (W * slot_rates(pH[None, :], A, 1.0)).sum(axis=1)
    i = int(np.argmax(vals))
    return float(vals[i]), A[i]


def lipschitz_gap(instance: Instance, eps: float, resolution: float) -> float:
    """Bound on how far the best grid point can sit below the true optimum.

    Assumes harvest, ``B_max`` and ``P`` lie on the ``resolution`` grid so
    rounding cumulative use down keeps a point feasible and moves each
    ``p`` by less than one step.
    """
    if eps <= 0:
        return float("inf")
    _, step = _simplex_grid(instance.M, eps, resolution)
    W = instance.W[:, None]
    P = instance.P[instance.owner][:, None]
    H = instance.H
    return float(np.sum(W * (H * resolution + np.log1p(P * H / eps) * step)))


def grid_oracle(instance: Instance, eps: float, resolution: float,
                plan: Optional[DischargePlan] = None, max_links: int = 3, max_slots: int = 3):
    """Exhaustive search over gridded energies and bandwidth shares.

    Dynamic programming over the joint cumulative-energy state makes the
    search exact over the grid.  Returns ``(best objective, Allocation)``.
    """
    if instance.M > max_links or instance.N > max_links or instance.K > max_slots:
        raise SizeLimitError(f"grid oracle limited to {max_links} links and {max_slots} slots")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    plan = greedy_discharge(instance) if plan is None else plan
    N, M, K = instance.N, instance.M, instance.K
    A, _ = _simplex_grid(M, eps, resolution)
    top = np.floor(plan.E_eff[:, -1] / resolution + 1e-9).astype(int)
    cap = np.floor(instance.P / resolution + 1e-9).astype(int)
    per_link = [range(min(cap[instance.owner[m]], top[instance.owner[m]]) + 1) for m in range(M)]
    grid_p = np.array(list(itertools.product(*per_link)), dtype=int).reshape(-1, M)
    usage = np.zeros((grid_p.shape[0], N), dtype=int)
    for m in range(M):
        usage[:, instance.owner[m]] += grid_p[:, m]
    ok = np.all(usage <= cap[None, :], axis=1)
    grid_p, usage = grid_p[ok], usage[ok]
    keys, inverse = np.unique(usage, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    shape = tuple(top + 1)
    levels = [np.arange(s) * resolution for s in shape]
    value = np.full(shape, -np.inf)
    value[(0,) * N] = 0.0
    choices = []
    W = instance.W
    for k in range(K):
        p_vals = grid_p * resolution
        rates = (W[None, None, :] * slot_rates(p_vals[:, None, :], A[None, :, :],
                                               instance.H[None, None, :, k])).sum(axis=2)
        best_a = rates.argmax(axis=1)
        h = rates[np.arange(len(rates)), best_a]
        # best p vector for every distinct per-transmitter usage
        order = np.lexsort((-h, inverse))
        first = order[np.r_[True, inverse[order][1:] != inverse[order][:-1]]]
        new = np.full(shape, -np.inf)
        arg = np.full(shape, -1, dtype=int)
        for j in first:
            u = usage[j]
            src = tuple(slice(0, s - uu) for s, uu in zip(shape, u))
            dst = tuple(slice(uu, s) for s, uu in zip(shape, u))
            if any(uu >= s for s, uu in zip(shape, u)):
                continue
            cand = value[src] + h[j]
            better = cand > new[dst]
            new[dst] = np.where(better, cand, new[dst])
            arg[dst] = np.where(better, j, arg[dst])
        grids = np.meshgrid(*levels, indexing="ij")
        for n in range(N):
            bad = (grids[n] > plan.E_eff[n, k] + 1e-9) | (grids[n] < plan.E_eff[n, k] - instance.B_max[n] - 1e-9)
            new[bad] = -np.inf
        value = new
        choices.append((arg, best_a))
    if not np.isfinite(value).any():
        raise ValueError("no grid point satisfies the energy constraints")
    state = np.unravel_index(int(np.argmax(value)), shape)
    best = float(value[state])
    p = np.zeros((M, K))
    a = np.zeros((M, K))
    for k in range(K - 1, -1, -1):
        arg, best_a = choices[k]
        j = arg[state]
        p[:, k] = grid_p[j] * resolution
        a[:, k] = A[best_a[j]]
        state = tuple(s - uu for s, uu in zip(state, usage[j]))
    return best, Allocation(p, a)


def discharge_grid_min(harvest, P: float, B_max: float, resolution: float = 0.25) -> float:
    """Least total waste over every gridded (consumption, discharge) path.

    Battery states, consumption and discharge all move in steps of
    ``resolution``; inputs are expected to lie on that grid.
    """
    harvest = np.asarray(harvest, dtype=float)
    steps = lambda x: int(round(x / resolution))
    nb, cap = steps(B_max), steps(P)
    best = {0: 0}
    for d in harvest:
        dd = steps(d)
        nxt = {}
        for b, cost in best.items():
            avail = b + dd
            for use in range(min(cap, avail) + 1):
                rest = avail - use
                for waste in range(max(rest - nb, 0), rest + 1):
                    key = rest - waste
                    c = cost + waste
                    if c < nxt.get(key, np.inf):
                        nxt[key] = c
        best = nxt
    return min(best.values()) * resolution


# ------------------------------------------------------------ reference solver

class ReferenceResult(NamedTuple):
    allocation: Allocation
    objective: float
    converged: bool
    status: str


def reference_solve(instance: Instance, eps: float = 0.0, plan: Optional[DischargePlan] = None,
                    max_size: int = 2000, solver: str = "CLARABEL") -> ReferenceResult:
    """Solve the floored problem with a generic conic solver.

    Works for any receiver map and weights.  A solver status other than
    optimal yields the returned point with ``converged=False``.
    """
    import cvxpy as cp

    M, K, N = instance.M, instance.K, instance.N
    if M * K > max_size:
        raise SizeLimitError(f"K*M = {M * K} exceeds the reference limit {max_size}")
    if M * eps > 1.0 + 1e-12:
        raise ValueError("eps too large for the simplex")
    plan = greedy_discharge(instance) if plan is None else plan
    p = cp.Variable((M, K), nonneg=True)
    a = cp.Variable((M, K))
    S = np.zeros((N, M))
    S[instance.owner, np.arange(M)] = 1.0
    tri = np.triu(np.ones((K, K)))  # x @ tri gives cumulative sums along slots
    use = S @ p
    cum = use @ tri
    cons = [
        cum <= plan.E_eff,
        cum >= plan.E_eff - instance.B_max[:, None],
        use <= instance.P[:, None] @ np.ones((1, K)),
        cp.sum(a, axis=0) == 1,
        a >= eps,
    ]
    rate = -cp.rel_entr(a, a + cp.multiply(instance.H, p))
    prob = cp.Problem(cp.Maximize(cp.sum(instance.W @ rate)), cons)
    try:
        prob.solve(solver=solver)
    except cp.error.SolverError:
        prob.solve(solver="SCS", eps=1e-9, max_iters=200000)
    status = str(prob.status)
    if p.value is None:
        raise RuntimeError(f"reference solver failed: {status}")
    pv = np.clip(p.value, 0.0, None)
    av = np.clip(a.value, eps, None)
    av = av / av.sum(axis=0, keepdims=True)
    alloc = Allocation(pv, av)
    return ReferenceResult(alloc, objective(instance, alloc), status == cp.OPTIMAL, status)


# --------------------------------------------------------------- perturbation

def perturb_allocation(instance: Instance, plan: DischargePlan, alloc: Allocation,
                       magnitude: float, rng: np.random.Generator, eps: float = 0.0,
                       tries: int = 50) -> Optional[Allocation]:
    """Shift ``magnitude`` of energy on one link between two slots, keeping feasibility.

    Picks a random link and slot, then looks for a partner slot on the same
    link to absorb the opposite change.  Returns None if no feasible move
    turns up within ``tries`` random picks.
    """
    M, K = instance.M, instance.K
    if K < 2:
        return None
    for _ in range(tries):
        m, k = int(rng.integers(M)), int(rng.integers(K))
        for sign in rng.permutation([1.0, -1.0]):
            for j in rng.permutation(K):
                if j == k:
                    continue
                p = np.array(alloc.p)
                p[m, k] += sign * magnitude
                p[m, j] -= sign * magnitude
                cand = Allocation(p, alloc.a)
                if not check_feasible(instance, plan, cand, eps, 1e-9):
                    return cand
    return None
