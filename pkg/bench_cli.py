"""
Benchmark harness.

    python bench_cli.py gen   --n 50 --d 8 --seed 1 --out inst.txt
    python bench_cli.py run   --instance inst.txt --algo fast-flat --k 5 --repeats 3 --out runs.csv
    python bench_cli.py sweep --n 100 1000 --d 8 32 --k 5 --algo naive batch --out sweep.csv --db
    python bench_cli.py audit --battery ipe --battery qfs_flat

Exit status: 0 on success, 1 when an audit battery fails, 2 on usage errors.
"""

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import ValidationError

from audit import AUDIT_DIM_SCALE, DEFAULT_BATTERIES, SCALING_N, batteries, run_audit
from config import config, configure_logging
from core import BASE_KINDS, generate_instance, validate_instance
from errors import SubmodError
from instance_io import write_instance
from tasks import ALGORITHMS, CSV_COLUMNS, run_cell, save_runs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_USAGE = 2

GROUP_COLUMNS = ["algorithm", "n", "d", "k", "eps", "delta"]
SOFT_CHECK_MIN_N = 2000
SOFT_CHECK_MIN_D = 32


# ============================================================================
# Argument parsing
# ============================================================================

def _add_instance_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--n", type=int, nargs=nargs, default=[50] if multi else 50)
    p.add_argument("--d", type=int, nargs=nargs, default=[8] if multi else 8)
    p.add_argument("--norm-bound", type=float, default=1.0)
    p.add_argument("--lambda-scale", type=float, default=0.5)
    p.add_argument("--base", choices=BASE_KINDS, default="identity")


def _add_run_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--algo", choices=ALGORITHMS, nargs=nargs, default=["naive"] if multi else "naive")
    p.add_argument("--k", type=int, nargs=nargs, default=[5] if multi else 5)
    p.add_argument("--eps", type=float, nargs=nargs, default=[0.1] if multi else 0.1)
    p.add_argument("--delta", type=float, nargs=nargs, default=[0.1] if multi else 0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--dim-scale", type=float, default=None, help="multiplier on the sketch dimension")
    p.add_argument("--backend", choices=["exact", "batch", "sketch", "lsh", "perturbed"], default=None,
                   help="backend for matroid/knapsack/online runs")
    p.add_argument("--c", type=float, default=0.9)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--blocks", type=int, default=2, help="partition matroid blocks")
    p.add_argument("--capacity", type=int, default=2, help="capacity of every partition block")
    p.add_argument("--budget", type=float, default=None, help="knapsack budget (default k)")
    p.add_argument("--adversary", choices=["null", "random", "spoiler"], default="null")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--out", type=Path, default=None, help="CSV path (stdout when omitted)")
    p.add_argument("--db", nargs="?", const=config.DATABASE_URL, default=None,
                   help="also store rows in a SQL database (default DATABASE_URL)")
    p.add_argument("--workers", type=int, default=config.BENCH_WORKERS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench_cli", description="Submodular maximization benchmark harness")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a random DiversityFamily instance")
    _add_instance_args(gen)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--validate", type=int, default=0, metavar="SAMPLES",
                     help="sample the instance properties before writing")
    gen.add_argument("--out", type=Path, required=True)

    run = sub.add_parser("run", help="run one algorithm with repeats")
    run.add_argument("--instance", type=Path, default=None, help="instance file (else generated)")
    _add_instance_args(run)
    _add_run_args(run)

    sweep = sub.add_parser("sweep", help="cartesian grid of runs")
    _add_instance_args(sweep, multi=True)
    _add_run_args(sweep, multi=True)

    audit = sub.add_parser("audit", help="statistical guarantee batteries")
    audit.add_argument("--battery", action="append", choices=sorted(batteries()), default=None)
    audit.add_argument("--trials-scale", type=float, default=1.0)
    audit.add_argument("--dim-scale", type=float, default=AUDIT_DIM_SCALE)
    audit.add_argument("--scaling-n", type=int, default=SCALING_N, help="ground set size of the scaling probe")
    audit.add_argument("--out", type=Path, default=None)
    return parser


# ============================================================================
# Specs and output
# ============================================================================

def _spec(args, *, algo: str, n: int, d: int, k: int, eps: float, delta: float,
          instance: Optional[Path] = None) -> Dict[str, Any]:
    cfg: Dict[str, Any] = {
        "k": k,
        "eps": eps,
        "delta": delta,
        "c": args.c,
        "tau": args.tau,
        "seed": args.seed,
        "dim_scale": args.dim_scale,
    }
    if args.backend is not None:
        cfg["backend"] = args.backend
    elif algo == "online":
        cfg["backend"] = "sketch"
    source: Dict[str, Any] = {
        "n": n,
        "d": d,
        "norm_bound": args.norm_bound,
        "lambda_scale": args.lambda_scale,
        "base": args.base,
        "seed": args.instance_seed,
    }
    if instance is not None:
        source["path"] = str(instance)
    return {
        "instance": source,
        "algorithm": algo,
        "cfg": cfg,
        "repeats": args.repeats,
        "blocks": args.blocks,
        "capacity": args.capacity,
        "budget": args.budget,
        "adversary": args.adversary,
        "sigma": args.sigma,
    }


def execute_specs(specs: Sequence[Dict[str, Any]], workers: int = 1) -> List[Dict[str, Any]]:
    """Run every cell, in a process pool when workers > 1; rows keep spec order."""
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_cell, specs))
    else:
        chunks = [run_cell(spec) for spec in specs]
    return [row for chunk in chunks for row in chunk]


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Median over repeats per (algorithm, n, d, k, eps, delta) cell."""
    done = frame[frame["status"] == "completed"]
    if done.empty:
        return pd.DataFrame(columns=GROUP_COLUMNS + ["value", "total_time", "mean_step_time", "repeats"])
    grouped = done.groupby(GROUP_COLUMNS, dropna=False)
    summary = grouped[["value", "total_time", "mean_step_time"]].median()
    summary["repeats"] = grouped.size()
    summary = summary.reset_index()
    _flag_timing_order(summary)
    return summary


def _flag_timing_order(summary: pd.DataFrame) -> List[str]:
    """Soft check: naive should not be faster than batch on large d and n."""
    flags = []
    big = summary[(summary["n"] >= SOFT_CHECK_MIN_N) & (summary["d"] >= SOFT_CHECK_MIN_D)]
    for key, cell in big.groupby(["n", "d", "k"]):
        times = dict(zip(cell["algorithm"], cell["total_time"]))
        if "naive" in times and "batch" in times and times["naive"] < times["batch"]:
            msg = f"naive faster than batch at n={key[0]} d={key[1]} k={key[2]}"
            logger.warning(f"[BENCH] soft check: {msg}")
            flags.append(msg)
    return flags


def emit(rows: List[Dict[str, Any]], out: Optional[Path], db: Optional[str]) -> pd.DataFrame:
    frame = pd.DataFrame(rows).reindex(columns=CSV_COLUMNS)
    summary = summarize(frame)
    if out is None:
        frame.to_csv(sys.stdout, index=False)
    else:
        frame.to_csv(out, index=False)
        summary_path = out.with_name(f"{out.stem}_summary.csv")
        summary.to_csv(summary_path, index=False)
        logger.info(f"[BENCH] wrote {len(frame)} rows to {out} and medians to {summary_path}")
    if db is not None:
        save_runs(rows, db)
    return frame


# ============================================================================
# Subcommands
# ============================================================================

def cmd_gen(args) -> int:
    inst = generate_instance(args.n, args.d, args.norm_bound, args.lambda_scale, args.base, args.seed)
    if args.validate:
        report = validate_instance(inst.ground, inst.oracle, args.validate, seed=args.seed)
        logger.info(f"[BENCH] validation: {report.to_dict()}")
    write_instance(inst, args.out, base_kind=args.base)
    return EXIT_OK


def cmd_run(args) -> int:
    spec = _spec(args, algo=args.algo, n=args.n, d=args.d, k=args.k, eps=args.eps, delta=args.delta,
                 instance=args.instance)
    # repeats of one cell run serially; the pool splits cells, not repeats
    rows = run_cell(spec)
    emit(rows, args.out, args.db)
    failed = [row for row in rows if row.get("status") == "failed"]
    if failed:
        logger.error(f"[BENCH] {len(failed)} of {len(rows)} repeats failed: {failed[0]['error']}")
        return EXIT_USAGE
    return EXIT_OK


def cmd_sweep(args) -> int:
    specs = [
        _spec(args, algo=algo, n=n, d=d, k=k, eps=eps, delta=delta)
        for algo, n, d, k, eps, delta in itertools.product(args.algo, args.n, args.d, args.k, args.eps, args.delta)
        if k <= n
    ]
    if not specs:
        logger.error("[BENCH] empty sweep grid (every k exceeds n)")
        return EXIT_USAGE
    logger.info(f"[BENCH] sweep: {len(specs)} cells on {args.workers} workers")
    emit(execute_specs(specs, args.workers), args.out, args.db)
    return EXIT_OK


def cmd_audit(args) -> int:
    results = run_audit(args.battery or DEFAULT_BATTERIES, args.trials_scale, args.dim_scale, args.scaling_n)
    frame = pd.DataFrame([r.to_dict() for r in results])
    if args.out is not None:
        frame.to_csv(args.out, index=False)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status:4}  {r.name:16} violations {r.violations}/{r.trials}  "
              f"rate {r.rate:.3f}  allowed {r.allowed_rate:.3f}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_AUDIT_FAILED


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep, "audit": cmd_audit}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (SubmodError, ValidationError) as e:
        logger.error(f"[BENCH] {type(e).__name__}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
