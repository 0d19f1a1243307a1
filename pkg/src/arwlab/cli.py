"""Command-line front end: configuration, seeding, execution, output.

Per-run records go to JSON-lines files (one object per line, keys
sorted), sweep-style commands also emit a CSV summary, and every cell
prints a one-line summary.  Records carry the config hash and the cell
seed; timestamps live only in a leading meta line, so reruns with the
same config and master seed are byte-identical below it.

Exit codes: 0 success (budget outcomes included), 1 configuration
error, 2 internal invariant violation (an abelianity mismatch, a
coupling violation, or a failed exact-law suite).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import __version__, experiments, walk
from .arw_core import ReferenceArwState, check_abelian, couple_and_compare, \
    stabilize_reference
from .errors import BudgetExceededError, DomainError
from .hierarchy import DormitoryHierarchy, build_high_lambda, \
    build_low_lambda, trivial_hierarchy, validate_hierarchy
from .loop_model import LoopModelState, LowestIndexProcedure, SelectProcedure, \
    stabilize_recursive
from .rng import TAG_CELL, derive_seed
from .torus import SiteSet, TorusGeometry

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2


@dataclass
class ExperimentConfig:
    """Flat key-value description of one CLI invocation."""

    command: str
    params: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"command = {self.command}"]
        for key in sorted(self.params):
            lines.append(f"{key} = {self.params[key]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        command = ""
        params = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DomainError(f"bad config line: {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "command":
                command = value
            else:
                params[key] = _parse_scalar(value)
        return cls(command=command, params=params)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _parse_scalar(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


class RecordWriter:
    """JSON-lines sink with a single meta header line."""

    def __init__(self, path: Optional[str], config: ExperimentConfig):
        self.path = path
        self.config_hash = config.hash()
        self._fh = None
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            self._fh = open(path, "w")
            meta = {"meta": {"command": config.command,
                             "config_hash": self.config_hash,
                             "version": __version__,
                             "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}}
            self._fh.write(json.dumps(meta, sort_keys=True) + "\n")

    def write(self, record: dict):
        if self._fh:
            record = dict(record)
            record["config_hash"] = self.config_hash
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()


def _write_csv(path: Optional[str], rows: list[dict]):
    if not path or not rows:
        return
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _out_paths(args, default_stem: str):
    if args.out:
        stem = args.out
    elif os.environ.get("ARWLAB_OUTDIR"):
        stem = os.path.join(os.environ["ARWLAB_OUTDIR"], default_stem)
    else:
        return None, None
    return stem + ".jsonl", stem + ".csv"


# -- subcommands -----------------------------------------------------------


def _cmd_stabilize(args) -> int:
    g = TorusGeometry(args.n, args.d)
    config = _config_of(args, "stabilize",
                        ["d", "n", "lam", "mu", "seed", "budget"])
    jsonl, _ = _out_paths(args, "stabilize")
    writer = RecordWriter(jsonl, config)
    m = math.ceil(args.mu * g.n_sites)
    rng = np.random.default_rng(args.seed)
    A = g.random_subset(m, rng)
    state = ReferenceArwState.from_settling_set(g, A, args.lam, args.seed)
    res = stabilize_reference(state, budget=args.budget)
    record = {"seed": args.seed, "mu": args.mu, "particles": m,
              "m_a": res.m_a, "consumed": res.consumed, "status": res.status}
    writer.write(record)
    writer.close()
    print(f"stabilize d={args.d} n={args.n} lam={args.lam} mu={args.mu}: "
          f"M_A={res.m_a} consumed={res.consumed} status={res.status}")
    return EXIT_OK


def _cmd_abelian_check(args) -> int:
    g = TorusGeometry(args.n, args.d)
    config = _config_of(args, "abelian-check",
                        ["d", "n", "lam", "mu", "orders", "instances", "seed"])
    jsonl, _ = _out_paths(args, "abelian")
    writer = RecordWriter(jsonl, config)
    m = math.ceil(args.mu * g.n_sites)
    failures = 0
    for inst in range(args.instances):
        cell_seed = derive_seed(args.seed, TAG_CELL, inst)
        rng = np.random.default_rng(cell_seed)
        A = g.random_subset(m, rng)
        state = ReferenceArwState.from_settling_set(g, A, args.lam, cell_seed)
        report = check_abelian(state, num_orders=args.orders,
                               policy_seed=cell_seed, budget=args.budget)
        writer.write({"seed": cell_seed, "instance": inst,
                      "identical": report.identical,
                      "mismatches": report.mismatches})
        if not report.identical:
            failures += 1
            print(f"instance {inst}: MISMATCH {report.mismatches[:1]}")
    writer.close()
    verdict = "PASS" if failures == 0 else "FAIL"
    print(f"abelian-check: {args.instances} instances x {args.orders} orders "
          f"-> {verdict}")
    return EXIT_OK if failures == 0 else EXIT_INVARIANT


def _build_hierarchy(args) -> DormitoryHierarchy:
    g = TorusGeometry(args.n, 2)
    rng = np.random.default_rng(args.seed)
    if args.size is not None:
        m = args.size
    else:
        m = math.ceil(args.density * g.n_sites)
    A = g.random_subset(m, rng)
    if args.mode == "low":
        return build_low_lambda(g, A, args.d0)
    if args.mode == "high":
        return build_high_lambda(g, A, args.r)
    return trivial_hierarchy(g, A)


def _cmd_hierarchy_build(args) -> int:
    config = _config_of(args, "hierarchy-build",
                        ["mode", "n", "d0", "r", "density", "size", "seed"])
    h = _build_hierarchy(args)
    report = validate_hierarchy(h)
    if args.hierarchy_out:
        with open(args.hierarchy_out, "w") as fh:
            fh.write(h.to_json())
    jsonl, _ = _out_paths(args, "hierarchy")
    writer = RecordWriter(jsonl, config)
    writer.write({"seed": args.seed, "mode": args.mode,
                  "levels": h.depth + 1, "A": len(h.A),
                  "A_final": len(h.levels[-1]), "valid": report.ok,
                  "violations": report.violations})
    writer.close()
    print(f"hierarchy-build mode={args.mode}: J={h.depth} |A|={len(h.A)} "
          f"|A_J|={len(h.levels[-1])} valid={report.ok}")
    return EXIT_OK if report.ok else EXIT_INVARIANT


def _cmd_loop_stabilize(args) -> int:
    config = _config_of(args, "loop-stabilize",
                        ["hierarchy", "mode", "n", "d0", "r", "density",
                         "size", "lam", "seeds", "seed", "budget",
                         "procedure", "proc_r", "proc_v", "beta"])
    if args.hierarchy:
        with open(args.hierarchy) as fh:
            h = DormitoryHierarchy.from_json(fh.read())
    else:
        h = _build_hierarchy(args)
    procedure = None
    if args.procedure == "select":
        beta = Fraction(args.beta).limit_denominator(10**6)
        procedure = SelectProcedure(r=args.proc_r, v=args.proc_v, beta=beta)
    elif args.procedure == "lowest":
        procedure = LowestIndexProcedure()
    jsonl, _ = _out_paths(args, "loop")
    writer = RecordWriter(jsonl, config)
    top = h.top_cluster()
    for i in range(args.seeds):
        cell_seed = derive_seed(args.seed, TAG_CELL, i)
        state = LoopModelState(h, args.lam, cell_seed)
        rec = stabilize_recursive(state, top, procedures=procedure,
                                  budget=args.budget, raise_on_budget=False)
        writer.write({"seed": cell_seed, "steps": rec.steps,
                      "sleeps_star": rec.sleeps_star,
                      "loops_star": rec.loops_star,
                      "loops_by_colour": {str(k): v for k, v in
                                          sorted(rec.loops_by_colour.items())},
                      "pingpong_rounds": rec.pingpong_rounds,
                      "status": rec.budget_status})
        print(f"loop-stabilize seed={cell_seed}: H={rec.steps} "
              f"S={rec.sleeps_star} L={rec.loops_star} "
              f"rounds={rec.pingpong_rounds} status={rec.budget_status}")
    writer.close()
    return EXIT_OK


def _cmd_upsilon(args) -> int:
    config = _config_of(args, "upsilon", ["d", "r", "n", "samples", "seed"])
    jsonl, _ = _out_paths(args, "upsilon")
    writer = RecordWriter(jsonl, config)
    est = walk.estimate_upsilon(args.d, args.r, args.n, args.samples,
                                args.seed)
    record = {"seed": args.seed, "d": args.d, "r": args.r, "n": args.n,
              "samples": args.samples, "estimate": est.point_estimate,
              "std_error": est.std_error}
    if args.d == 1:
        record["exact_torus_value"] = walk.exact_escape_probability_1d(
            args.n, args.r)
    writer.write(record)
    writer.close()
    print(f"upsilon d={args.d} r={args.r} n={args.n}: "
          f"{est.point_estimate:.5f} +- {est.std_error:.5f}")
    return EXIT_OK


def _pair_hierarchy(n: int, lam_seed: int) -> DormitoryHierarchy:
    """Two adjacent singletons merged at level 1 (colour-law testbed)."""
    g = TorusGeometry(n, 1)
    A = SiteSet.from_indices(g, [0, 1])
    return DormitoryHierarchy.from_partitions(
        g, A, v=1, D=[max(1, n // 2)], levels=[A, A],
        partitions=[[[0], [1]], [[0, 1]]])


def _cmd_lemmas(args) -> int:
    config = _config_of(args, "lemmas",
                        ["suite", "a", "b", "p", "c", "k", "lam",
                         "samples", "seed"])
    jsonl, _ = _out_paths(args, "lemmas")
    writer = RecordWriter(jsonl, config)
    ok = True
    if args.suite in ("sum-geometrics", "all"):
        rep = experiments.verify_sum_geometrics(args.a, args.b, args.samples,
                                                args.seed)
        writer.write({"check": "sum-geometrics", "a": args.a, "b": args.b,
                      "param": rep.param, "ks": rep.ks_distance,
                      "threshold": rep.threshold, "passed": rep.passed})
        print(f"sum-geometrics a={args.a} b={args.b}: KS={rep.ks_distance:.5f}"
              f" (<= {rep.threshold:.5f}) {'PASS' if rep.passed else 'FAIL'}")
        ok &= rep.passed
    if args.suite in ("bernoulli-bound", "all"):
        for tag, (name, sampler) in enumerate((
                ("comonotone", experiments.comonotone_bernoulli(args.p, args.k)),
                ("independent", experiments.independent_bernoulli(args.p, args.k)))):
            rep = experiments.verify_bernoulli_bound(
                sampler, args.p, args.c, args.k, args.samples,
                derive_seed(args.seed, TAG_CELL, 1000 + tag))
            writer.write({"check": f"bernoulli-{name}", "estimate": rep.estimate,
                          "bound": rep.bound, "passed": rep.passed})
            print(f"bernoulli-bound {name}: {rep.estimate:.5f} <= "
                  f"{rep.bound:.5f} + 3se {'PASS' if rep.passed else 'FAIL'}")
            ok &= rep.passed
    if args.suite in ("next-colour", "all"):
        h = _pair_hierarchy(8, args.seed)
        top = h.top_cluster()
        sims, totals = [], []
        for i in range(args.samples):
            state = LoopModelState(h, args.lam, derive_seed(args.seed,
                                                            TAG_CELL, i))
            rec = stabilize_recursive(state, top)
            sims.append(rec.loops_by_colour.get(1, 0))
            totals.append(rec.sleeps_star + rec.loops_by_colour.get(0, 0))
        # the star sleeps at least once, so the compounding count is >= 1
        p = (args.lam + 0.5) / (args.lam + 0.75)
        rng = np.random.default_rng(derive_seed(args.seed, TAG_CELL, 10**6))
        resampled = rng.negative_binomial(np.asarray(totals), p)
        rep = experiments.two_sample_equality(sims, resampled, level=0.01)
        writer.write({"check": "next-colour", "lam": args.lam,
                      "distance": rep.ks_distance, "threshold": rep.threshold,
                      "passed": rep.passed})
        print(f"next-colour lam={args.lam}: dist={rep.ks_distance:.4f} "
              f"(<= {rep.threshold:.4f}) {'PASS' if rep.passed else 'FAIL'}")
        ok &= rep.passed
    writer.close()
    return EXIT_OK if ok else EXIT_INVARIANT


def _cmd_sweep(args) -> int:
    config = _config_of(args, "sweep",
                        ["d", "n", "lam", "mu_grid", "seeds", "seed", "budget"])
    grid = [float(x) for x in args.mu_grid.split(",")]
    runs, summaries = experiments.activity_sweep(
        args.d, args.n, args.lam, grid, args.seeds, args.budget,
        master_seed=args.seed, workers=args.workers)
    jsonl, csv_path = _out_paths(args, "sweep")
    writer = RecordWriter(jsonl, config)
    for r in runs:
        writer.write({"seed": r.cell_seed, "mu": r.mu, "particles": r.particles,
                      "m_a": r.m_a, "consumed": r.consumed,
                      "exceeded": r.exceeded})
    writer.close()
    rows = []
    for s in summaries:
        rows.append({"mu": s.mu, "runs": s.runs, "exceeded": s.exceeded,
                     "exceed_rate": s.exceed_rate,
                     "rate_std_error": round(s.rate_std_error, 6),
                     "mean_m_a_completed": s.mean_m_a_completed,
                     "censored": s.censored})
        print(f"sweep mu={s.mu}: exceeded {s.exceeded}/{s.runs} "
              f"(rate {s.exceed_rate:.2f}) mean M_A "
              f"{s.mean_m_a_completed}")
    _write_csv(csv_path, rows)
    return EXIT_OK


def _cmd_scaling(args) -> int:
    config = _config_of(args, "scaling",
                        ["n", "lam", "ks", "seeds", "seed", "budget"])
    ks = [int(x) for x in args.ks.split(",")]
    hierarchies = [experiments.square_cluster_hierarchy(args.n, k) for k in ks]
    fit = experiments.scaling_fit(hierarchies, args.lam, args.seeds,
                                  master_seed=args.seed, budget=args.budget,
                                  workers=args.workers)
    jsonl, csv_path = _out_paths(args, "scaling")
    writer = RecordWriter(jsonl, config)
    rows = []
    for k, size, mean in zip(ks, fit.sizes, fit.mean_steps):
        writer.write({"seed": args.seed, "k": k, "cluster_size": size,
                      "mean_steps": mean})
        rows.append({"k": k, "cluster_size": size, "mean_steps": mean})
        print(f"scaling k={k}: |C|={size} mean H={mean:.1f}")
    writer.write({"seed": args.seed, "slope": fit.slope,
                  "r_squared": fit.r_squared, "censored": fit.censored})
    writer.close()
    rows.append({"k": "fit", "cluster_size": fit.slope,
                 "mean_steps": fit.r_squared})
    _write_csv(csv_path, rows)
    print(f"scaling fit: slope={fit.slope:.4f} R2={fit.r_squared:.4f} "
          f"censored={fit.censored}")
    return EXIT_OK


def _cmd_couple(args) -> int:
    config = _config_of(args, "couple-check",
                        ["n", "lam", "size", "seeds", "seed", "budget"])
    g = TorusGeometry(args.n, 2)
    jsonl, _ = _out_paths(args, "couple")
    writer = RecordWriter(jsonl, config)
    violations = 0
    for i in range(args.seeds):
        cell_seed = derive_seed(args.seed, TAG_CELL, i)
        rng = np.random.default_rng(cell_seed)
        A = g.random_subset(args.size, rng)
        idx = [int(s) for s in A.indices]
        half = len(idx) // 2
        h = DormitoryHierarchy.from_partitions(
            g, A, v=1, D=[args.n], levels=[A, A],
            partitions=[[idx[:half], idx[half:]], [idx]])
        try:
            res = couple_and_compare(h, args.lam, cell_seed, budget=args.budget)
        except BudgetExceededError:
            writer.write({"seed": cell_seed, "status": "budget_exceeded"})
            print(f"seed {cell_seed}: budget exceeded (flagged)")
            continue
        writer.write({"seed": cell_seed, "m_a": res.m_a, "h": res.h_loops,
                      "dominates": res.dominates})
        if not res.dominates:
            violations += 1
            print(f"seed {cell_seed}: VIOLATION H={res.h_loops} > M_A={res.m_a}")
    writer.close()
    verdict = "PASS" if violations == 0 else "FAIL"
    print(f"couple-check: {args.seeds} runs -> {verdict}")
    return EXIT_OK if violations == 0 else EXIT_INVARIANT


def _config_of(args, command: str, keys: list[str]) -> ExperimentConfig:
    params = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    return ExperimentConfig(command=command, params=params)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arwlab",
        description="Activated-random-walk simulation laboratory")
    parser.add_argument("--config", help="flat key = value config file; "
                        "explicit flags override its entries")
    parser.add_argument("--out", help="output stem for .jsonl/.csv files "
                        "(default: $ARWLAB_OUTDIR/<command> when set)")
    parser.add_argument("--workers", type=int,
                        default=os.cpu_count() or 1,
                        help="worker threads for sweep-style commands")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("stabilize", _cmd_stabilize, help="one reference-model run")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--budget", type=int, default=10**9)

    p = add("abelian-check", _cmd_abelian_check,
            help="order-independence of the final state and odometer")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--orders", type=int, default=20)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--budget", type=int, default=10**9)

    p = add("hierarchy-build", _cmd_hierarchy_build,
            help="build and validate a dormitory hierarchy")
    p.add_argument("--mode", choices=["low", "high", "trivial"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d0", type=int, default=20)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--density", type=float, default=0.75)
    p.add_argument("--size", type=int)
    p.add_argument("--hierarchy-out", help="write the hierarchy JSON here")

    p = add("loop-stabilize", _cmd_loop_stabilize,
            help="recursive ping-pong stabilization on a hierarchy")
    p.add_argument("--hierarchy", help="hierarchy JSON produced by "
                   "hierarchy-build")
    p.add_argument("--mode", choices=["low", "high", "trivial"],
                   default="trivial")
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--d0", type=int, default=20)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--size", type=int)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--budget", type=int, default=10**9)
    p.add_argument("--procedure", choices=["lowest", "select"],
                   default="lowest")
    p.add_argument("--proc-r", type=int, default=1)
    p.add_argument("--proc-v", type=int, default=4)
    p.add_argument("--beta", type=float, default=5 / 6)

    p = add("upsilon", _cmd_upsilon, help="escape-probability estimate")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, default=10**6)

    p = add("lemmas", _cmd_lemmas, help="closed-form law verifications")
    p.add_argument("--suite", choices=["sum-geometrics", "bernoulli-bound",
                                       "next-colour", "all"], default="all")
    p.add_argument("--a", type=float, default=0.3)
    p.add_argument("--b", type=float, default=0.6)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=10**5)

    p = add("sweep", _cmd_sweep, help="stabilization sweep over densities")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--mu-grid", required=True,
                   help="comma-separated densities, e.g. 0.05,0.3,0.6,1.0")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--budget", type=int, default=10**7)

    p = add("scaling", _cmd_scaling,
            help="ln(mean steps) versus cluster size on full squares")
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--ks", default="2,3,4,5")
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--budget", type=int, default=10**8)

    p = add("couple-check", _cmd_couple,
            help="pathwise loop-vs-reference toppling count comparison")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--size", type=int, default=18)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--budget", type=int, default=10**9)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # first pass picks up --config so its entries become overridable defaults
    known, _ = parser.parse_known_args(argv)
    if getattr(known, "config", None):
        try:
            with open(known.config) as fh:
                file_config = ExperimentConfig.from_text(fh.read())
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        parser.set_defaults(**file_config.params)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (DomainError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
