"""Random instances and Monte Carlo comparisons of the scheduling policies."""

from __future__ import annotations

import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np

from ._io import atomic_write, dumps, fmt
from ._validation import InvalidInputError
from .model import Instance, objective
from .policies import (equal_bandwidth_policy, greedy_policy, run_causal, tdma_greedy_policy)
from .scheduler import solve
from .verify import default_tolerance, kkt_residual

__all__ = [
    "CampaignConfig",
    "GeneratedTrial",
    "TrialReport",
    "CertificationError",
    "substream",
    "truncated_gaussian",
    "generate_instance",
    "run_trial",
    "run_campaign",
    "summarize",
    "summary_csv",
    "thread_count",
]

POLICY_NAMES = ("optimal", "causal", "greedy", "tdma", "equal")
CHANNELS = ("rayleigh",)
_HARVEST, _CHANNEL = 0, 1


@dataclass
class CampaignConfig:
    """Monte Carlo settings; defaults follow the desk-scale simulation setup.

    ``mu_E`` may hold several sweep points.  ``w0``/``c`` fix the causal
    policy's water level and adjustment factor; ``None`` uses the
    statistics-based initializer.
    """

    N: int = 4
    K: int = 40
    B_max: float = 20.0
    P: float = 10.0
    mu_E: tuple = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    sigma2: float = 2.0
    channel: str = "rayleigh"
    trials: int = 200
    seed: int = 0
    policies: tuple = POLICY_NAMES
    w0: Optional[float] = 25.0
    c: Optional[float] = 1.1
    kkt_tolerance: Optional[float] = None
    summary_path: Optional[str] = None
    trials_path: Optional[str] = None
    repro_dir: Optional[str] = None

    def __post_init__(self):
        self.mu_E = tuple(float(m) for m in np.atleast_1d(self.mu_E))
        self.policies = tuple(self.policies)
        for name in ("N", "K", "trials"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise InvalidInputError(name, "must be an integer >= 1")
        for name in ("B_max", "P", "sigma2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(name, "must be finite and >= 0")
        if any(not np.isfinite(m) or m < 0 for m in self.mu_E):
            raise InvalidInputError("mu_E", "must be finite and >= 0")
        if self.channel not in CHANNELS:
            raise InvalidInputError("channel", f"unknown channel model {self.channel!r}")
        bad = [p for p in self.policies if p not in POLICY_NAMES]
        if bad:
            raise InvalidInputError("policies", f"unknown policy {bad[0]!r}")
        if "optimal" not in self.policies:
            self.policies = ("optimal",) + self.policies

    @classmethod
    def from_dict(cls, doc: dict) -> "CampaignConfig":
        if not isinstance(doc, dict):
            raise InvalidInputError("config", "expected a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise InvalidInputError(sorted(extra)[0], "unknown configuration field")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu_E"] = list(self.mu_E)
        d["policies"] = list(self.policies)
        return d


class GeneratedTrial(NamedTuple):
    instance: Instance
    harvest: np.ndarray
    H: np.ndarray
    realized_mean: float


@dataclass
class TrialReport:
    trial: int
    mu_E: float
    objectives: dict
    iterations: int
    polish_sweeps: int
    kkt_residual: float
    causal_fallbacks: int = 0
    seconds: float = 0.0
    traces: Optional[dict] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {"trial": self.trial, "mu_E": self.mu_E, "objectives": dict(self.objectives),
             "iterations": self.iterations, "polish_sweeps": self.polish_sweeps,
             "kkt_residual": self.kkt_residual, "causal_fallbacks": self.causal_fallbacks}
        if self.traces is not None:
            d["traces"] = self.traces
        return d


class CertificationError(RuntimeError):
    """The optimal run of some trial failed KKT certification."""

    def __init__(self, message: str, instance_path: str):
        super().__init__(f"{message}; instance saved to {instance_path}")
        self.instance_path = instance_path


def substream(seed: int, trial: int, n: int, k: int, kind: int) -> np.random.Generator:
    """Independent Philox stream for one (trial, transmitter, slot, quantity)."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(trial, n, k, kind))
    return np.random.Generator(np.random.Philox(seq))


def truncated_gaussian(rng: np.random.Generator, mean: float, sd: float) -> float:
    """One draw of N(mean, sd^2) conditioned on being >= 0, by rejection."""
    if sd == 0:
        return max(mean, 0.0)
    while True:
        x = rng.normal(mean, sd)
        if x >= 0:
            return float(x)


def generate_instance(config: CampaignConfig, trial: int, mu_E: Optional[float] = None) -> GeneratedTrial:
    """Draw harvest increments and channel gains for one trial.

    Every (transmitter, slot) pair has its own substreams, so the draws do
    not depend on how many rejections other pairs needed.  The same trial
    index gives the same gains at every sweep point.
    """
    mu = config.mu_E[0] if mu_E is None else float(mu_E)
    sd = float(np.sqrt(config.sigma2))
    N, K = config.N, config.K
    harvest = np.empty((N, K))
    H = np.empty((N, K))
    for n in range(N):
        for k in range(K):
            harvest[n, k] = truncated_gaussian(substream(config.seed, trial, n, k, _HARVEST), mu, sd)
            H[n, k] = substream(config.seed, trial, n, k, _CHANNEL).exponential(1.0)
    inst = Instance.point_to_point(H, np.cumsum(harvest, axis=1), np.full(N, config.P),
                                   np.full(N, config.B_max))
    return GeneratedTrial(inst, harvest, H, float(harvest.mean()))


def _save_repro(config: CampaignConfig, instance: Instance, trial: int, mu: float) -> str:
    folder = config.repro_dir or tempfile.gettempdir()
    os.makedirs(folder, exist_ok=True)
    path = os.path.join(folder, f"failed-trial-{trial}-mu{fmt(mu)}.json")
    atomic_write(path, dumps(instance.to_dict(), indent=1))
    return path


def run_trial(config: CampaignConfig, trial: int, mu_E: float, keep_traces: bool = False) -> TrialReport:
    tic = time.perf_counter()
    inst = generate_instance(config, trial, mu_E).instance
    res = solve(inst)
    opt = res.allocation
    tol = default_tolerance(inst) if config.kkt_tolerance is None else config.kkt_tolerance
    report = kkt_residual(inst, res.discharge, opt, res.eps, tol=tol)
    if not report.certified:
        path = _save_repro(config, inst, trial, mu_E)
        raise CertificationError(
            f"trial {trial} at mu_E={mu_E}: KKT residual {report.max_residual:.3g} > {tol:.3g}", path)
    objs = {"optimal": objective(inst, opt)}
    fallbacks = 0
    traces = {"optimal_p": opt.p.tolist(), "optimal_a": opt.a.tolist()} if keep_traces else None
    for name in config.policies:
        if name == "optimal":
            continue
        if name == "causal":
            alloc, info = run_causal(inst, w0=config.w0, c=config.c)
            fallbacks = info["fallbacks"]
        else:
            alloc = {"greedy": greedy_policy, "tdma": tdma_greedy_policy,
                     "equal": equal_bandwidth_policy}[name](inst)
        objs[name] = objective(inst, alloc)
        if keep_traces:
            traces[f"{name}_p"] = alloc.p.tolist()
            traces[f"{name}_a"] = alloc.a.tolist()
    return TrialReport(trial, float(mu_E), objs, res.trace.iterations, len(res.trace.polish_values),
                       report.max_residual, fallbacks, time.perf_counter() - tic, traces)


def thread_count(requested: Optional[int] = None) -> int:
    """Worker count: explicit request, else ``EHSCHED_THREADS``, else 1; capped by the env var."""
    env = os.environ.get("EHSCHED_THREADS")
    cap = None
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise InvalidInputError("EHSCHED_THREADS", f"not an integer: {env!r}")
    n = requested if requested is not None else (cap or 1)
    if cap is not None:
        n = min(n, cap)
    return max(1, int(n))


def _trial_job(args):
    config, trial, mu, keep = args
    return run_trial(config, trial, mu, keep)


def run_campaign(config: CampaignConfig, threads: Optional[int] = None, keep_traces: bool = False,
                 progress=None):
    """Run every trial at every sweep point.

    Returns ``(reports, summary)``; reports are ordered by sweep point, then
    trial, whatever the worker count.  Writes the summary CSV and per-trial
    JSON lines if the config names output paths.
    """
    jobs = [(config, t, mu, keep_traces) for mu in config.mu_E for t in range(config.trials)]
    workers = thread_count(threads)
    if workers == 1:
        reports = []
        for job in jobs:
            reports.append(_trial_job(job))
            if progress:
                progress(reports[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_trial_job, jobs, chunksize=4))
    order = {mu: i for i, mu in enumerate(config.mu_E)}
    reports.sort(key=lambda r: (order[r.mu_E], r.trial))
    summary = summarize(reports, config.policies)
    if config.summary_path:
        atomic_write(config.summary_path, summary_csv(summary))
    if config.trials_path:
        atomic_write(config.trials_path, "".join(dumps(r.to_dict()) + "\n" for r in reports))
    return reports, summary


def summarize(reports, policies=POLICY_NAMES) -> list:
    """Per (sweep point, policy) mean, standard error and trial count."""
    out = []
    mus = sorted({r.mu_E for r in reports})
    for mu in mus:
        group = [r for r in reports if r.mu_E == mu]
        for name in policies:
            vals = np.array([r.objectives[name] for r in group if name in r.objectives])
            if vals.size == 0:
                continue
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            out.append({"mu_E": mu, "policy": name, "mean_rate": float(vals.mean()),
                        "stderr": se, "trials": int(vals.size)})
    return out


def summary_csv(summary) -> str:
    lines = ["mu_E,policy,mean_rate,stderr,trials"]
    for row in summary:
        lines.append(f"{fmt(row['mu_E'])},{row['policy']},{fmt(row['mean_rate'])},"
                     f"{fmt(row['stderr'])},{row['trials']}")
    return "\n".join(lines) + "\n"
