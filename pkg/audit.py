"""
Statistical guarantee batteries.

Each battery runs many seeded trials against exact ground truth and reports
the observed violation rate next to the allowed one. Deterministic
guarantees (greedy ratios, chain equality, exact identities) allow zero
violations; probabilistic ones allow delta plus a fixed statistical slack,
and carry a one-sided binomial p-value for "true rate > delta".
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from core import BASE_KINDS, Cardinality, Knapsack, Matroid, generate_instance
from ipe import IpeState, distances_to_inner_products, lift_p, lift_q
from lsh_maxip import HashEnsemble
from maximizers import (
    GREEDY_RATIO,
    KNAPSACK_RATIO,
    MATROID_RATIO,
    BackendKind,
    GreedyConfig,
    NullAdversary,
    greedy_batch,
    greedy_fast,
    greedy_matroid,
    greedy_naive,
    greedy_perturbed,
    knapsack_two_pass,
    perturbed_greedy_bound,
    semi_online_run,
)
from oracle import brute_force_opt, exact_inner_products, exact_qf_argmax
from qfs import QfsVariant, QuadraticFormSearch, flatten, vec
from tasks import knapsack_weights, partition_blocks

logger = logging.getLogger(__name__)

STAT_SLACK = 0.03
RATIO_TOL = 1e-9
AUDIT_DIM_SCALE = 0.02
SCALING_N = 5000


@dataclass
class BatteryResult:
    name: str
    trials: int
    violations: int
    allowed_rate: float
    passed: bool
    p_value: Optional[float] = None
    seconds: float = 0.0
    detail: Dict[str, object] = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.violations / self.trials if self.trials else 0.0

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["rate"] = self.rate
        return out


def _result(name: str, trials: int, violations: int, delta: float = 0.0, slack: float = STAT_SLACK, **detail) -> BatteryResult:
    """Zero-tolerance when delta == 0, else rate <= delta + slack."""
    allowed = delta + slack if delta > 0 else 0.0
    rate = violations / trials if trials else 0.0
    passed = violations == 0 if delta == 0 else rate <= allowed
    p_value = float(binomtest(violations, trials, delta, alternative="greater").pvalue) if delta > 0 and trials else None
    return BatteryResult(name, trials, violations, allowed, passed, p_value, detail=detail)


def _small_instance(rng: np.random.Generator, n_max: int = 12):
    n = int(rng.integers(4, n_max + 1))
    d = int(rng.integers(2, 6))
    base = BASE_KINDS[int(rng.integers(len(BASE_KINDS)))]
    inst = generate_instance(n, d, lambda_scale=float(rng.uniform(0, 1)), base=base, seed=int(rng.integers(2**31)))
    return inst


# ============================================================================
# Batteries
# ============================================================================

def identities_battery(trials: int = 1000, seed: int = 0) -> BatteryResult:
    """Flattening, asymmetric lifts and the distance conversion, relative error 1e-10."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 9))
        u = rng.standard_normal(d)
        M = rng.standard_normal((d, d))
        errs = []
        qf = float(u @ M @ u)
        errs.append(abs(float(flatten(u) @ vec(M)) - qf) / max(1.0, abs(qf)))

        a = rng.standard_normal(d)
        b = rng.standard_normal(d)
        a /= max(1.0, float(np.linalg.norm(a))) * rng.uniform(1.0, 2.0)
        b /= max(1.0, float(np.linalg.norm(b))) * rng.uniform(1.0, 2.0)
        P, Q = lift_p(b), lift_q(a)
        errs.append(abs(float(np.linalg.norm(P)) - 1.0))
        errs.append(abs(float(np.linalg.norm(Q)) - 1.0))
        errs.append(abs(float(P @ Q) - float(a @ b)))

        D = float(rng.uniform(0.5, 3.0))
        dist = float(np.linalg.norm(P - Q))
        w = float(distances_to_inner_products(dist, D))
        errs.append(abs(w - D * float(a @ b)) / max(1.0, D))

        e = max(errs)
        worst = max(worst, e)
        violations += int(e > 1e-10)
    return _result("identities", trials, violations, worst_error=worst)


def greedy_ratio_battery(trials: int = 200, seed: int = 1) -> BatteryResult:
    rng = np.random.default_rng(seed)
    violations = 0
    worst = math.inf
    for _ in range(trials):
        inst = _small_instance(rng)
        k = int(rng.integers(1, min(4, inst.n) + 1))
        opt = brute_force_opt(inst, Cardinality(k)).best_value
        value = greedy_naive(inst, k).value
        if opt > 0:
            worst = min(worst, value / opt)
        violations += int(value < GREEDY_RATIO * opt - RATIO_TOL)
    return _result("greedy_ratio", trials, violations, worst_ratio=worst)


def perturbed_battery(trials: int = 200, eps: float = 0.05, seed: int = 2) -> BatteryResult:
    """Adversarial +/- eps gain oracle against the approximate-greedy bound."""
    rng = np.random.default_rng(seed)
    violations = 0
    for t in range(trials):
        inst = _small_instance(rng)
        k = int(rng.integers(1, min(4, inst.n) + 1))
        cfg = GreedyConfig(k=k, eps=eps, backend=BackendKind.PERTURBED, perturbation="adversarial", seed=t)
        opt = brute_force_opt(inst, Cardinality(k)).best_value
        value = greedy_perturbed(inst, cfg).value
        violations += int(value < perturbed_greedy_bound(opt, k, eps) - RATIO_TOL)
    return _result("perturbed", trials, violations, eps=eps)


def ipe_battery(
    builds: int = 100,
    n: int = 200,
    d: int = 16,
    eps: float = 0.1,
    delta: float = 0.05,
    queries: int = 20,
    dim_scale: float = AUDIT_DIM_SCALE,
    seed: int = 3,
) -> BatteryResult:
    """A build violates when any (query, point) estimate is off by more than eps."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    X *= (rng.uniform(0, 1, size=(n, 1)) ** (1.0 / d)) / np.linalg.norm(X, axis=1, keepdims=True)
    Q = rng.standard_normal((queries, d))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)

    violations = 0
    worst = 0.0
    for b in range(builds):
        st = IpeState(X, 1.0, eps, delta, dim_scale=dim_scale, seed=seed * 100_003 + b)
        err = max(float(np.max(np.abs(st.query(q) - exact_inner_products(X, q)))) for q in Q)
        worst = max(worst, err)
        violations += int(err > eps)
    return _result("ipe", builds, violations, delta, worst_error=worst, dim_scale=dim_scale)


def qfs_battery(
    variant: QfsVariant = QfsVariant.FLAT,
    trials: int = 100,
    n: int = 50,
    d: int = 4,
    eps: float = 0.05,
    delta: float = 0.05,
    dim_scale: float = AUDIT_DIM_SCALE / 4,
    seed: int = 4,
) -> BatteryResult:
    """Returned index must be a 2 eps-near argmax of a random PSD query."""
    variant = QfsVariant(variant)
    rng = np.random.default_rng(seed)
    scale = dim_scale if variant is QfsVariant.FLAT else dim_scale / (d * d)
    violations = 0
    worst_gap = -math.inf
    for t in range(trials):
        inst = generate_instance(n, d, seed=int(rng.integers(2**31)))
        G = rng.standard_normal((d, d))
        M = G @ G.T
        M /= np.linalg.norm(M)
        st = QuadraticFormSearch(inst.ground, eps, delta, variant, dim_scale=scale, seed=t)
        j0 = st.query(M)
        _, best = exact_qf_argmax(inst.ground, M, range(n))
        u = inst.ground.vectors[j0]
        gap = best - float(u @ M @ u)
        worst_gap = max(worst_gap, gap)
        violations += int(gap > 2 * eps)
    return _result(f"qfs_{variant.value}", trials, violations, delta, worst_gap=worst_gap, dim_scale=scale)


def chain_equality_battery(trials: int = 100, seed: int = 5) -> BatteryResult:
    """greedy_batch and greedy_naive must return the same chain."""
    rng = np.random.default_rng(seed)
    sizes = [(n, d) for n in (10, 100, 1000) for d in (4, 32)]
    violations = 0
    for t in range(trials):
        n, d = sizes[t % len(sizes)]
        if t % 3 == 0:
            n += 1  # n not divisible by d
        inst = generate_instance(n, d, lambda_scale=float(rng.uniform(0, 1)), seed=int(rng.integers(2**31)))
        k = int(rng.integers(1, min(10, n) + 1))
        violations += int(greedy_naive(inst, k).chain != greedy_batch(inst, k).chain)
    return _result("chain_equality", trials, violations)


def matroid_battery(trials: int = 100, seed: int = 6) -> BatteryResult:
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(trials):
        inst = _small_instance(rng)
        blocks = partition_blocks(inst.n, int(rng.integers(1, 4)))
        caps = [int(rng.integers(0, 3)) for _ in blocks]
        matroid = Matroid.partition(blocks, caps)
        opt = brute_force_opt(inst, matroid).best_value
        value = greedy_matroid(inst, matroid, GreedyConfig()).value
        violations += int(value < MATROID_RATIO * opt - RATIO_TOL)
    return _result("matroid", trials, violations)


def knapsack_battery(trials: int = 100, seed: int = 7) -> BatteryResult:
    rng = np.random.default_rng(seed)
    violations = 0
    for t in range(trials):
        inst = _small_instance(rng)
        w = knapsack_weights(inst.n, t)
        budget = float(rng.uniform(1.0, 3.0))
        opt = brute_force_opt(inst, Knapsack(w, budget)).best_value
        value = knapsack_two_pass(inst, w, budget, GreedyConfig()).value
        violations += int(value < KNAPSACK_RATIO * opt - RATIO_TOL)
    return _result("knapsack", trials, violations)


def planted_maxip(n: int, dim: int, rng: np.random.Generator, strength: float = 0.95):
    """Random unit points with one planted point of inner product ``strength`` with q."""
    X = rng.standard_normal((n, dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    w = rng.standard_normal(dim)
    w -= (w @ q) * q
    w /= np.linalg.norm(w)
    planted = int(rng.integers(n))
    X[planted] = strength * q + math.sqrt(1.0 - strength ** 2) * w
    return X, q, planted


def lsh_battery(
    trials: int = 200,
    n: int = 200,
    dim: int = 32,
    c: float = 0.9,
    tau: float = 0.8,
    delta: float = 0.1,
    seed: int = 8,
) -> BatteryResult:
    """Recall on planted instances; a deleted index is never returned."""
    rng = np.random.default_rng(seed)
    misses = 0
    returned_deleted = 0
    for t in range(trials):
        X, q, _ = planted_maxip(n, dim, rng)
        ens = HashEnsemble(X, c, tau, delta, seed=t)
        j = ens.query(q)
        if j is None or float(X[j] @ q) < c * tau:
            misses += 1
            continue
        ens.delete(j)
        again = ens.query(q)
        returned_deleted += int(again == j)
    result = _result("lsh_recall", trials, misses, delta, slack=0.05, returned_deleted=returned_deleted)
    result.passed = result.passed and returned_deleted == 0
    return result


def online_battery(trials: int = 10, dim_scale: float = AUDIT_DIM_SCALE / 4, seed: int = 9) -> BatteryResult:
    """Null adversary reproduces greedy_fast chain and gains exactly."""
    rng = np.random.default_rng(seed)
    violations = 0
    for t in range(trials):
        inst = generate_instance(30, 4, seed=int(rng.integers(2**31)))
        cfg = GreedyConfig(k=5, eps=0.1, delta=0.1, backend=BackendKind.SKETCH, dim_scale=dim_scale, seed=t)
        fast = greedy_fast(inst, cfg)
        online = semi_online_run(inst, cfg, NullAdversary())
        violations += int(fast.chain != online.chain or fast.gains != online.gains)
    return _result("online_null", trials, violations)


def scaling_probe(
    dims: Sequence[int] = (32, 64, 128),
    n: int = SCALING_N,
    k: int = 10,
    eps: float = 0.2,
    delta: float = 0.1,
    dim_scale: float = 0.005,
    seed: int = 10,
) -> BatteryResult:
    """Per-step times of greedy_fast vs greedy_naive; reports the crossover d, never fails."""
    per_step: Dict[int, Dict[str, float]] = {}
    crossover = None
    for d in dims:
        inst = generate_instance(n, d, seed=seed)
        naive = greedy_naive(inst, k)
        fast = greedy_fast(inst, GreedyConfig(k=k, eps=eps, delta=delta, backend=BackendKind.SKETCH,
                                              dim_scale=dim_scale, seed=seed))
        per_step[d] = {"naive": naive.total_time / k, "fast": fast.total_time / k}
        if crossover is None and per_step[d]["fast"] < per_step[d]["naive"]:
            crossover = d
    growth = per_step[dims[-1]]["naive"] / max(per_step[dims[0]]["naive"], 1e-12)
    if crossover is None:
        logger.warning(f"[BENCH] scaling: no crossover up to d={dims[-1]} (naive growth {growth:.2f}x)")
    return BatteryResult("scaling", len(dims), 0, 0.0, True,
                         detail={"crossover_d": crossover, "naive_growth": growth, "per_step": per_step})


# ============================================================================
# Driver
# ============================================================================

def _scaled(trials: int, scale: float) -> int:
    return max(1, int(round(trials * scale)))


def batteries(
    trials_scale: float = 1.0,
    dim_scale: float = AUDIT_DIM_SCALE,
    scaling_n: int = SCALING_N,
) -> Dict[str, Callable[[], BatteryResult]]:
    s = trials_scale
    return {
        "identities": lambda: identities_battery(_scaled(1000, s)),
        "greedy_ratio": lambda: greedy_ratio_battery(_scaled(200, s)),
        "perturbed": lambda: perturbed_battery(_scaled(200, s)),
        "ipe": lambda: ipe_battery(_scaled(100, s), dim_scale=dim_scale),
        "qfs_flat": lambda: qfs_battery(QfsVariant.FLAT, _scaled(100, s), dim_scale=dim_scale / 4),
        "qfs_columns": lambda: qfs_battery(QfsVariant.COLUMNS, _scaled(100, s), dim_scale=dim_scale / 4),
        "chain_equality": lambda: chain_equality_battery(_scaled(100, s)),
        "matroid": lambda: matroid_battery(_scaled(100, s)),
        "knapsack": lambda: knapsack_battery(_scaled(100, s)),
        "lsh_recall": lambda: lsh_battery(_scaled(200, s)),
        "online_null": lambda: online_battery(_scaled(10, s), dim_scale=dim_scale / 4),
        "scaling": lambda: scaling_probe(n=scaling_n),
    }


DEFAULT_BATTERIES = tuple(name for name in batteries() if name != "scaling")


def run_audit(
    names: Optional[Sequence[str]] = None,
    trials_scale: float = 1.0,
    dim_scale: float = AUDIT_DIM_SCALE,
    scaling_n: int = SCALING_N,
) -> List[BatteryResult]:
    table = batteries(trials_scale, dim_scale, scaling_n)
    selected = list(names) if names else list(DEFAULT_BATTERIES)
    unknown = [name for name in selected if name not in table]
    if unknown:
        raise KeyError(f"unknown batteries {unknown}, expected some of {sorted(table)}")

    results = []
    for name in selected:
        start = time.perf_counter()
        result = table[name]()
        result.seconds = time.perf_counter() - start
        status = "PASS" if result.passed else "FAIL"
        logger.info(f"[BENCH] audit {name}: {status} {result.violations}/{result.trials} in {result.seconds:.1f}s")
        results.append(result)
    return results
