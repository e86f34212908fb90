"""Command-line front end: ``ehsched {generate,solve,simulate,certify,campaign}``.

Exit codes: 0 success, 2 certification failure, 3 invalid input.
Per-stage timings go to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone

from ._io import atomic_write, dumps
from ._validation import (InvalidInputError, SizeLimitError, UnsupportedConfigurationError)
from .discharge import greedy_discharge
from .harness import (POLICY_NAMES, CampaignConfig, CertificationError, generate_instance,
                      run_campaign, thread_count)
from .model import Allocation, DischargePlan, Instance, objective
from .policies import (equal_bandwidth_policy, greedy_policy, run_causal, tdma_greedy_policy)
from .scheduler import RELATIVE, ABSOLUTE, solve, solve_general_stub
from .verify import default_tolerance, kkt_residual

EXIT_OK = 0
EXIT_UNCERTIFIED = 2
EXIT_INVALID = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved here
    def error(self, message):
        raise UsageError(message)


class _Log:
    def __init__(self, stream=None, timestamps: bool = True):
        self.stream = stream
        self.timestamps = timestamps

    def emit(self, **record):
        if self.timestamps:
            record = {"ts": datetime.now(timezone.utc).isoformat(), **record}
        record = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                  for k, v in record.items()}
        stream = self.stream or sys.stderr
        stream.write(json.dumps(record, allow_nan=False) + "\n")
        stream.flush()

    @contextmanager
    def stage(self, name: str, **extra):
        tic = time.perf_counter()
        yield
        self.emit(stage=name, seconds=round(time.perf_counter() - tic, 6), **extra)


def _read_json(path: str, field: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidInputError(field, f"no such file {path!r}") from None
    except json.JSONDecodeError as err:
        raise InvalidInputError(field, f"malformed JSON in {path!r} (line {err.lineno})") from None


def _write(path, doc, args):
    if not args.no_timestamp and isinstance(doc, dict):
        doc = {**doc, "created": datetime.now(timezone.utc).isoformat()}
    text = dumps(doc, indent=1) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write(path, text)


def _load_instance(path: str) -> Instance:
    doc = _read_json(path, "instance")
    if isinstance(doc, dict) and "instance" in doc and "H" not in doc:
        doc = doc["instance"]
    return Instance.from_dict(doc)


def _config(args, **overrides) -> CampaignConfig:
    doc = {"N": args.N, "K": args.K, "P": args.P, "B_max": args.B_max, "mu_E": [args.mu_E],
           "sigma2": args.sigma2, "trials": 1, "seed": 0 if args.seed is None else args.seed}
    doc.update(overrides)
    return CampaignConfig.from_dict(doc)


def _tolerance(args, instance: Instance) -> float:
    return default_tolerance(instance) if args.tolerance is None else args.tolerance


def cmd_generate(args, log) -> int:
    cfg = _config(args)
    with log.stage("generate", trial=args.trial):
        trial = generate_instance(cfg, args.trial, args.mu_E)
    doc = trial.instance.to_dict()
    doc["realized_mean_harvest"] = trial.realized_mean
    _write(args.out, doc, args)
    return EXIT_OK


def cmd_solve(args, log) -> int:
    inst = _load_instance(args.input)
    if not inst.is_point_to_point:
        with log.stage("reference_solve"):
            out = solve_general_stub(inst, eps=args.min_eps)
        plan, alloc, eps = out["discharge"], out["allocation"], args.min_eps
        extra = {"quality": out["quality"], "converged": out["converged"]}
    else:
        with log.stage("solve"):
            res = solve(inst, args.eps0, args.delta, args.max_iters, criterion=args.criterion,
                        min_eps=args.min_eps, polish=not args.no_polish)
        plan, alloc, eps = res.discharge, res.allocation, res.eps
        trace = res.trace.to_dict()
        trace.pop("wall_times")
        extra = {"trace": trace,
                 "profiles": [pr.to_dict() if pr is not None else None for pr in res.profiles]}
        log.emit(stage="iterations", iterations=res.trace.iterations, reason=res.trace.reason)
    tol = _tolerance(args, inst)
    with log.stage("certify"):
        report = kkt_residual(inst, plan, alloc, eps, tol=tol)
    doc = {"objective": objective(inst, alloc), "eps": eps, "allocation": alloc.to_dict(),
           "discharge": plan.to_dict(), **extra, "kkt": report.to_dict()}
    _write(args.out, doc, args)
    return EXIT_OK if report.certified else EXIT_UNCERTIFIED


def _policy_allocation(name: str, inst: Instance, args):
    if name == "optimal":
        res = solve(inst)
        return res.allocation, {"iterations": res.trace.iterations, "eps": res.eps}
    if name == "causal":
        alloc, info = run_causal(inst, w0=args.w0, c=args.c)
        return alloc, {"fallbacks": info["fallbacks"],
                       "water_level": info["water_level"].tolist(),
                       "battery": info["battery"].tolist()}
    fn = {"greedy": greedy_policy, "tdma": tdma_greedy_policy, "equal": equal_bandwidth_policy}[name]
    return fn(inst), {}


def cmd_simulate(args, log) -> int:
    if args.input:
        inst = _load_instance(args.input)
    else:
        inst = generate_instance(_config(args), args.trial, args.mu_E).instance
    with log.stage("simulate", policy=args.policy):
        alloc, info = _policy_allocation(args.policy, inst, args)
    doc = {"policy": args.policy, "objective": objective(inst, alloc),
           "allocation": alloc.to_dict(), **info}
    if not args.input:
        doc["instance"] = inst.to_dict()
    _write(args.out, doc, args)
    return EXIT_OK


def cmd_certify(args, log) -> int:
    inst = _load_instance(args.instance)
    doc = _read_json(args.allocation, "allocation")
    if not isinstance(doc, dict):
        raise InvalidInputError("allocation", "expected a JSON object")
    alloc = Allocation.from_dict(doc.get("allocation", doc))
    if alloc.p.shape != (inst.M, inst.K):
        raise InvalidInputError("p", f"expected shape {(inst.M, inst.K)}, got {alloc.p.shape}")
    plan = DischargePlan.from_dict(doc["discharge"]) if "discharge" in doc else greedy_discharge(inst)
    eps = args.eps if args.eps is not None else float(doc.get("eps", 0.0))
    tol = _tolerance(args, inst)
    with log.stage("certify"):
        report = kkt_residual(inst, plan, alloc, eps, tol=tol)
    _write(args.out, report.to_dict(), args)
    log.emit(stage="verdict", certified=report.certified, max_residual=report.max_residual)
    return EXIT_OK if report.certified else EXIT_UNCERTIFIED


def cmd_campaign(args, log) -> int:
    doc = _read_json(args.config, "config") if args.config else {}
    if not isinstance(doc, dict):
        raise InvalidInputError("config", "expected a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.tolerance is not None:
        doc["kkt_tolerance"] = args.tolerance
    for key, value in (("summary_path", args.summary), ("trials_path", args.trials_out),
                       ("repro_dir", args.repro_dir)):
        if value is not None:
            doc[key] = value
    cfg = CampaignConfig.from_dict(doc)
    workers = thread_count(args.threads)
    log.emit(stage="campaign_start", trials=cfg.trials, sweep=list(cfg.mu_E), workers=workers)
    with log.stage("campaign"):
        try:
            _, summary = run_campaign(cfg, threads=workers)
        except CertificationError as err:
            log.emit(stage="certification_failed", instance=err.instance_path)
            print(f"error: {err}", file=sys.stderr)
            return EXIT_UNCERTIFIED
    if not cfg.summary_path:
        from .harness import summary_csv

        sys.stdout.write(summary_csv(summary))
    return EXIT_OK


def _generator_options(p):
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--K", type=int, default=40)
    p.add_argument("--P", type=float, default=10.0)
    p.add_argument("--B-max", dest="B_max", type=float, default=20.0)
    p.add_argument("--mu-E", dest="mu_E", type=float, default=4.0)
    p.add_argument("--sigma2", type=float, default=2.0)
    p.add_argument("--trial", type=int, default=0, help="trial index within the seed's stream")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes (capped by EHSCHED_THREADS)")
    common.add_argument("--tolerance", type=float, default=argparse.SUPPRESS,
                        help="KKT certification tolerance")
    common.add_argument("--no-timestamp", action="store_true", default=argparse.SUPPRESS,
                        help="omit timestamps from outputs and logs")

    parser = _Parser(prog="ehsched", parents=[common],
                     description="Energy-bandwidth scheduling for energy-harvesting transmitters.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="draw a random instance")
    _generator_options(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("solve", parents=[common], help="optimal non-causal schedule")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--eps0", type=float, default=None)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--criterion", choices=(RELATIVE, ABSOLUTE), default=RELATIVE)
    p.add_argument("--min-eps", type=float, default=0.0)
    p.add_argument("--no-polish", action="store_true")

    p = sub.add_parser("simulate", parents=[common], help="run one policy on an instance")
    p.add_argument("--policy", choices=POLICY_NAMES, required=True)
    p.add_argument("--in", dest="input", default=None,
                   help="instance JSON; without it an instance is drawn from --seed")
    p.add_argument("--out", default="-")
    p.add_argument("--w0", type=float, default=25.0)
    p.add_argument("--c", type=float, default=1.1)
    _generator_options(p)

    p = sub.add_parser("certify", parents=[common], help="KKT certificate for an allocation")
    p.add_argument("--instance", required=True)
    p.add_argument("--allocation", required=True, help="allocation or solve output JSON")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--out", default="-")

    p = sub.add_parser("campaign", parents=[common], help="Monte Carlo policy comparison")
    p.add_argument("--config", default=None, help="CampaignConfig JSON")
    p.add_argument("--summary", default=None, help="summary CSV path")
    p.add_argument("--trials-out", default=None, help="per-trial JSON lines path")
    p.add_argument("--repro-dir", default=None)
    return parser


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "simulate": cmd_simulate,
            "certify": cmd_certify, "campaign": cmd_campaign}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    for name, default in (("seed", None), ("threads", None), ("tolerance", None),
                          ("no_timestamp", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    log = _Log(timestamps=not args.no_timestamp)
    try:
        return COMMANDS[args.command](args, log)
    except InvalidInputError as err:
        print(f"error: invalid field {err.field!r}: {str(err).split(': ', 1)[-1]}", file=sys.stderr)
    except (UnsupportedConfigurationError, SizeLimitError, ValueError) as err:
        print(f"error: {err}".splitlines()[0], file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
