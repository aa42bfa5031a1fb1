# tasks.py - Bench work units for the sweep worker pool

import logging
import statistics
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import config
from core import Cardinality, EmbeddingInstance, Knapsack, Matroid, SelectionRun, generate_instance
from errors import IncompatibleRunError, SubmodError
from instance_io import read_instance
from maximizers import (
    ADVERSARIES,
    BackendKind,
    GreedyConfig,
    greedy_batch,
    greedy_fast,
    greedy_lsh,
    greedy_matroid,
    greedy_naive,
    greedy_perturbed,
    knapsack_two_pass,
    semi_online_run,
)
from oracle import brute_force_opt
from qfs import QfsVariant

logger = logging.getLogger(__name__)

ALGORITHMS = ("naive", "batch", "fast-flat", "fast-columns", "lsh", "perturbed", "matroid", "knapsack", "online")
Algorithm = Literal["naive", "batch", "fast-flat", "fast-columns", "lsh", "perturbed", "matroid", "knapsack", "online"]

CSV_COLUMNS = [
    "schema_version", "status", "algorithm", "repeat", "seed", "n", "d", "k", "eps", "delta",
    "backend", "value", "opt", "ratio", "chain", "total_time", "mean_step_time", "step_times",
    "queries", "deletes", "fallbacks", "error",
]


class InstanceSource(BaseModel):
    """Either an instance file or generate_instance parameters."""

    model_config = ConfigDict(frozen=True)

    path: Optional[str] = None
    n: int = Field(default=50, ge=1)
    d: int = Field(default=8, ge=1)
    norm_bound: float = Field(default=1.0, gt=0)
    lambda_scale: float = Field(default=0.5, ge=0, le=1)
    base: str = "identity"
    seed: int = 0

    def load(self) -> EmbeddingInstance:
        if self.path is not None:
            return read_instance(self.path)
        return generate_instance(self.n, self.d, self.norm_bound, self.lambda_scale, self.base, self.seed)


class RunSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance: InstanceSource = InstanceSource()
    algorithm: Algorithm = "naive"
    cfg: GreedyConfig = GreedyConfig(k=5)
    repeats: int = Field(default=1, ge=1)
    blocks: int = Field(default=2, ge=1)
    capacity: int = Field(default=2, ge=0)
    budget: Optional[float] = Field(default=None, gt=0)
    adversary: str = "null"
    sigma: float = Field(default=0.1, ge=0)

    @field_validator("adversary")
    @classmethod
    def _known_adversary(cls, v: str) -> str:
        if v not in ADVERSARIES:
            raise ValueError(f"unknown adversary {v!r}, expected one of {sorted(ADVERSARIES)}")
        return v

    @model_validator(mode="after")
    def _backend_fits_algorithm(self) -> "RunSpec":
        # the other algorithm ids fix their own backend
        backend = BackendKind(self.cfg.backend)
        if self.algorithm == "online" and backend in (BackendKind.LSH, BackendKind.PERTURBED):
            raise ValueError(f"online runs need an updatable backend, got {backend.value}")
        return self


def algorithm_config(algorithm: str, cfg: GreedyConfig) -> GreedyConfig:
    """cfg with the backend/variant the algorithm id implies."""
    updates: Dict[str, Any] = {}
    if algorithm == "naive":
        updates["backend"] = BackendKind.EXACT
    elif algorithm == "batch":
        updates["backend"] = BackendKind.BATCH
    elif algorithm == "fast-flat":
        updates.update(backend=BackendKind.SKETCH, variant=QfsVariant.FLAT)
    elif algorithm == "fast-columns":
        updates.update(backend=BackendKind.SKETCH, variant=QfsVariant.COLUMNS)
    elif algorithm == "lsh":
        updates["backend"] = BackendKind.LSH
    elif algorithm == "perturbed":
        updates["backend"] = BackendKind.PERTURBED
    return cfg.model_copy(update=updates)


def partition_blocks(n: int, blocks: int) -> List[List[int]]:
    """Round-robin split of range(n) into ``blocks`` groups."""
    return [list(range(b, n, blocks)) for b in range(min(blocks, n))]


def knapsack_weights(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, 7919])).uniform(0.5, 1.5, size=n)


def constraint_for(spec: RunSpec, inst: EmbeddingInstance):
    if spec.algorithm == "matroid":
        groups = partition_blocks(inst.n, spec.blocks)
        return Matroid.partition(groups, [spec.capacity] * len(groups))
    if spec.algorithm == "knapsack":
        budget = spec.budget if spec.budget is not None else float(spec.cfg.k or 1)
        return Knapsack(knapsack_weights(inst.n, spec.instance.seed), budget)
    return Cardinality(spec.cfg.k or 0)


def execute(spec: RunSpec, inst: EmbeddingInstance, cfg: GreedyConfig) -> SelectionRun:
    algo = spec.algorithm
    if algo == "naive":
        return greedy_naive(inst, cfg.k)
    if algo == "batch":
        return greedy_batch(inst, cfg.k, cfg.block_size)
    if algo in ("fast-flat", "fast-columns"):
        return greedy_fast(inst, cfg)
    if algo == "lsh":
        return greedy_lsh(inst, cfg)
    if algo == "perturbed":
        return greedy_perturbed(inst, cfg)
    if algo == "matroid":
        return greedy_matroid(inst, constraint_for(spec, inst), cfg)
    if algo == "knapsack":
        knapsack = constraint_for(spec, inst)
        return knapsack_two_pass(inst, knapsack.weights, knapsack.budget, cfg)
    if algo == "online":
        adversary = ADVERSARIES[spec.adversary]
        if spec.adversary == "random":
            return semi_online_run(inst, cfg, adversary(spec.sigma, seed=cfg.seed))
        return semi_online_run(inst, cfg, adversary())
    raise IncompatibleRunError(f"unknown algorithm {algo!r}")


def _row(spec: RunSpec, cfg: GreedyConfig, repeat: int, inst: EmbeddingInstance) -> Dict[str, Any]:
    return {
        "schema_version": config.CSV_SCHEMA_VERSION,
        "algorithm": spec.algorithm,
        "repeat": repeat,
        "seed": cfg.seed,
        "n": inst.n,
        "d": inst.d,
        "k": cfg.k,
        "eps": cfg.eps,
        "delta": cfg.delta,
        "backend": BackendKind(cfg.backend).value,
    }


def run_cell(spec_data: Dict[str, Any]) -> List[Dict[str, Any]]:
    """All repeats of one RunSpec; top-level so the process pool can pickle it.

    Repeat r runs with seed cfg.seed + r on the same instance. Errors raised
    by the library become ``failed`` rows instead of propagating.
    """
    spec = RunSpec.model_validate(spec_data)
    inst = spec.instance.load()
    base_cfg = algorithm_config(spec.algorithm, spec.cfg)

    opt: Optional[float] = None
    if inst.n <= config.ORACLE_MAX_N and spec.algorithm != "online":
        opt = brute_force_opt(inst, constraint_for(spec, inst)).best_value

    rows: List[Dict[str, Any]] = []
    for repeat in range(spec.repeats):
        cfg = base_cfg.model_copy(update={"seed": base_cfg.seed + repeat})
        row = _row(spec, cfg, repeat, inst)
        try:
            run = execute(spec, inst, cfg)
        except SubmodError as e:
            logger.warning(f"[BENCH] {spec.algorithm} repeat {repeat} failed: {e}")
            row.update(status="failed", error=f"{type(e).__name__}: {e}")
            rows.append(row)
            continue

        steps = run.timings
        row.update({
            "status": "completed",
            "backend": run.stats.get("backend", row["backend"]),
            "value": run.value,
            "opt": opt,
            "ratio": run.value / opt if opt else None,
            "chain": " ".join(str(i) for i in run.chain),
            "total_time": run.total_time,
            "mean_step_time": statistics.fmean(steps) if steps else 0.0,
            "step_times": " ".join(f"{t:.6e}" for t in steps),
            "queries": run.stats.get("queries"),
            "deletes": run.stats.get("deletes"),
            "fallbacks": run.stats.get("fallbacks"),
            "error": None,
        })
        rows.append(row)
    logger.info(f"[BENCH] cell {spec.algorithm} n={inst.n} d={inst.d} k={base_cfg.k}: {len(rows)} rows")
    return rows


def save_runs(rows: List[Dict[str, Any]], url: Optional[str] = None) -> int:
    """Append rows to the bench_runs table; returns the number stored."""
    from database import init_db, session_factory
    from models import BenchRun, RunStatus

    init_db(url)
    db = session_factory(url)()
    try:
        for row in rows:
            fields = {c: row.get(c) for c in BenchRun.__table__.columns.keys() if c in row and c != "status"}
            db.add(BenchRun(status=RunStatus(row.get("status", "completed")), **fields))
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()
    logger.info(f"[DB] stored {len(rows)} bench rows")
    return len(rows)
