"""
Brute-force ground truth: exhaustive constrained optima, exact quadratic-form
argmax and exact inner products. Used by tests, the audit batteries and the
bench ``ratio`` column.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
from scipy.special import comb

from config import config
from core import Cardinality, Constraint, EmbeddingInstance, GroundVectors, Knapsack, Matroid
from errors import DimensionMismatch, EmptyCandidateSet, ParameterError, ProblemTooLarge

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12


@dataclass(frozen=True)
class OptResult:
    best_set: Tuple[int, ...]
    best_value: float
    enumerated: int


def _subsets(n: int) -> Iterator[Tuple[int, ...]]:
    for size in range(n + 1):
        yield from itertools.combinations(range(n), size)


def _candidates(n: int, constraint: Constraint) -> Iterator[Tuple[int, ...]]:
    if isinstance(constraint, Cardinality):
        k = int(constraint.k)
        if k > n:
            raise ParameterError(f"k = {k} exceeds n = {n}")
        return itertools.combinations(range(n), k)
    if isinstance(constraint, Matroid):
        return (T for T in _subsets(n) if constraint.feasible(T))
    if isinstance(constraint, Knapsack):
        if constraint.weights.size != n:
            raise ParameterError(f"need {n} knapsack weights, got {constraint.weights.size}")
        return (T for T in _subsets(n) if constraint.feasible(T))
    raise ParameterError(f"unsupported constraint {type(constraint).__name__}")


def expected_count(n: int, constraint: Constraint) -> int:
    """Number of feasible sets brute_force_opt will examine, when a formula exists."""
    if isinstance(constraint, Cardinality):
        return int(comb(n, int(constraint.k), exact=True))
    if isinstance(constraint, Knapsack) and np.all(constraint.weights == 1.0):
        top = min(n, int(np.floor(constraint.budget * (1 + 1e-12))))
        return int(sum(comb(n, s, exact=True) for s in range(top + 1)))
    raise ParameterError("no closed-form count for this constraint")


def brute_force_opt(inst: EmbeddingInstance, constraint: Constraint) -> OptResult:
    """Exact max of f over feasible sets; ties go to the lexicographically smallest set."""
    n = inst.n
    if n > config.ORACLE_MAX_N:
        raise ProblemTooLarge(f"brute force needs n <= {config.ORACLE_MAX_N}, got {n}")

    best_set: Tuple[int, ...] = ()
    best_value = -np.inf
    enumerated = 0
    for T in _candidates(n, constraint):
        enumerated += 1
        value = inst.value(T)
        slack = TIE_TOL * max(1.0, abs(best_value)) if np.isfinite(best_value) else 0.0
        if value > best_value + slack or (value >= best_value - slack and T < best_set):
            best_set, best_value = T, value

    if enumerated == 0:
        best_value = 0.0
    logger.info(f"[ORACLE] {type(constraint).__name__}: OPT={best_value:.6g} set={best_set} over {enumerated} sets")
    return OptResult(best_set=best_set, best_value=float(best_value), enumerated=enumerated)


def exact_qf_argmax(gv: GroundVectors, M, live) -> Tuple[int, float]:
    """Exact argmax of u_j^T M u_j over live j, smallest index on ties."""
    idx = np.unique(np.asarray(list(live), dtype=np.int64))
    if idx.size == 0:
        raise EmptyCandidateSet("live set is empty")
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (gv.d, gv.d):
        raise DimensionMismatch(f"matrix has shape {M.shape}, expected ({gv.d}, {gv.d})")
    for i in (idx[0], idx[-1]):
        gv.check_index(i)
    U = gv.vectors[idx]
    values = np.einsum("ij,jk,ik->i", U, M, U)
    best = int(np.argmax(values))
    return int(idx[best]), float(values[best])


def exact_inner_products(points, q) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if X.ndim != 2 or q.shape != (X.shape[1],):
        raise DimensionMismatch(f"points {X.shape} and query {q.shape} do not match")
    return X @ q
