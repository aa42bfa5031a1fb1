"""
Embedding representation of a submodular instance.

An instance is a set of ground vectors u_1..u_n in R^d together with a matrix
oracle h: 2^[n] -> R^{d x d}. Every marginal gain is the quadratic form

    gain(i | S) = u_i^T h(S) u_i

and f(S) is the sum of gains along any insertion chain of S (f(empty) = 0).
This module holds the representation, exact evaluation, the DiversityFamily
instance family, the constraint types and the SelectionRun result object.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Union

import numpy as np

from errors import (
    DimensionMismatch,
    DuplicateIndexError,
    IndexOutOfRange,
    NormBoundError,
    ParameterError,
)

logger = logging.getLogger(__name__)

# Tolerances used by validate_instance
MONOTONE_TOL = 1e-10
SUBMODULAR_TOL = 1e-10
PSD_TOL = -1e-8


# ============================================================================
# Ground vectors
# ============================================================================

@dataclass(frozen=True, eq=False)
class GroundVectors:
    """n read-only rows u_i of length d, each with ||u_i|| <= norm_bound."""

    vectors: np.ndarray
    norm_bound: float

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatch(f"ground vectors must be an n x d array, got shape {vectors.shape}")
        n, d = vectors.shape
        if n < 1 or d < 1:
            raise ParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        if not np.all(np.isfinite(vectors)):
            raise ParameterError("ground vectors contain non-finite entries")

        bound = float(self.norm_bound)
        if not (math.isfinite(bound) and bound > 0):
            raise ParameterError(f"norm bound D must be positive, got {self.norm_bound}")

        norms = np.linalg.norm(vectors, axis=1)
        worst = int(np.argmax(norms))
        if norms[worst] > bound * (1 + 1e-12):
            raise NormBoundError(f"||u_{worst}|| = {norms[worst]:.6g} exceeds D = {bound:.6g}")

        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "norm_bound", bound)

    @classmethod
    def from_rows(cls, rows, norm_bound: Optional[float] = None) -> "GroundVectors":
        """Build from rows; D defaults to the largest row norm (1.0 if all rows are zero)."""
        arr = np.asarray(rows, dtype=np.float64)
        if norm_bound is None:
            top = float(np.linalg.norm(arr, axis=-1).max()) if arr.ndim == 2 and arr.size else 0.0
            norm_bound = top if top > 0 else 1.0
        return cls(arr, norm_bound)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    def check_index(self, i) -> int:
        idx = int(i)
        if not 0 <= idx < self.n:
            raise IndexOutOfRange(f"index {i} outside [0, {self.n})")
        return idx

    def replace(self, i: int, z) -> "GroundVectors":
        """Copy with row i replaced by z (same norm bound)."""
        idx = self.check_index(i)
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.d,):
            raise DimensionMismatch(f"replacement has shape {z.shape}, expected ({self.d},)")
        rows = self.vectors.copy()
        rows[idx] = z
        return GroundVectors(rows, self.norm_bound)


# ============================================================================
# Marginal-gain oracles
# ============================================================================

class RecomputingTracker:
    """Maintains h(S) along a chain by re-evaluating the oracle after each add."""

    def __init__(self, oracle: "MarginalOracle"):
        self.oracle = oracle
        self.selected: List[int] = []
        self.current = oracle.evaluate(self.selected)

    def add(self, j: int, ground: Optional[GroundVectors] = None):
        self.selected.append(int(j))
        self.current = self.oracle.evaluate(self.selected)
        return self


class MarginalOracle(ABC):
    """Set-indexed matrix oracle S -> h(S).

    Subclasses set ``frobenius_bound`` (H >= sup_S ||h(S)||_F) and ``psd``.
    ``evaluate`` must depend only on the set S, not on its order.
    """

    frobenius_bound: float = 1.0
    psd: bool = False

    @abstractmethod
    def evaluate(self, S: Iterable[int]) -> np.ndarray:
        ...

    def rebind(self, ground: GroundVectors) -> "MarginalOracle":
        """Oracle for the same family over new ground vectors."""
        return self

    def tracker(self, ground: GroundVectors):
        return RecomputingTracker(self)

    def set_value(self, ground: GroundVectors, S: Sequence[int]) -> Optional[float]:
        """Closed-form f(S) when the family has one, else None."""
        return None


class CallbackOracle(MarginalOracle):
    """Caller-supplied h: frozenset -> d x d matrix."""

    def __init__(
        self,
        fn: Callable[[FrozenSet[int]], Any],
        dim: int,
        frobenius_bound: float,
        psd: bool = False,
    ):
        if dim < 1:
            raise ParameterError(f"dim must be >= 1, got {dim}")
        if not frobenius_bound > 0:
            raise ParameterError(f"frobenius bound must be positive, got {frobenius_bound}")
        self.fn = fn
        self.dim = int(dim)
        self.frobenius_bound = float(frobenius_bound)
        self.psd = bool(psd)

    def evaluate(self, S: Iterable[int]) -> np.ndarray:
        M = np.asarray(self.fn(frozenset(int(i) for i in S)), dtype=np.float64)
        if M.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"oracle returned shape {M.shape}, expected ({self.dim}, {self.dim})")
        return M


def monotone_penalty_limit(vectors: np.ndarray, base: np.ndarray) -> float:
    """Largest lambda keeping every marginal of the diversity family nonnegative.

    min_i u_i^T B u_i / (2 sum_{j != i} <u_i, u_j>^2); inf when no pair overlaps.
    """
    U = np.asarray(vectors, dtype=np.float64)
    overlap = (U @ U.T) ** 2
    np.fill_diagonal(overlap, 0.0)
    denom = 2.0 * overlap.sum(axis=1)
    own = np.einsum("ij,jk,ik->i", U, base, U)
    active = denom > 0
    if not np.any(active):
        return math.inf
    return float(np.min(own[active] / denom[active]))


class DiversityFamily(MarginalOracle):
    """h(S) = B - 2*lam * sum_{j in S} u_j u_j^T.

    f(S) = sum_{i in S} u_i^T B u_i - lam * sum_{i != j in S} <u_i, u_j>^2 is
    submodular for lam >= 0. ``current_h`` is maintained incrementally by
    ``diversity_step`` and is the only mutable state.
    """

    def __init__(self, ground: GroundVectors, base, penalty: float):
        B = np.array(base, dtype=np.float64)
        d = ground.d
        if B.shape != (d, d):
            raise DimensionMismatch(f"base matrix has shape {B.shape}, expected ({d}, {d})")
        scale = max(1.0, float(np.abs(B).max()))
        if not np.allclose(B, B.T, rtol=0.0, atol=1e-12 * scale):
            raise ParameterError("base matrix B must be symmetric")
        smallest = float(np.linalg.eigvalsh(B).min())
        if smallest < PSD_TOL * scale:
            raise ParameterError(f"base matrix B must be PSD, smallest eigenvalue {smallest:.3g}")
        penalty = float(penalty)
        if not (math.isfinite(penalty) and penalty >= 0):
            raise ParameterError(f"penalty lambda must be >= 0, got {penalty}")

        B.setflags(write=False)
        self.ground = ground
        self.base = B
        self.penalty = penalty
        self.current_h = B.copy()
        self.selected: List[int] = []
        self.frobenius_bound = float(np.linalg.norm(B)) + 2.0 * penalty * float(np.sum(ground.norms() ** 2))
        if self.frobenius_bound == 0.0:
            self.frobenius_bound = 1.0
        self.psd = penalty == 0.0

    def evaluate(self, S: Iterable[int]) -> np.ndarray:
        idx = np.unique(np.fromiter((int(i) for i in S), dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.ground.n):
            raise IndexOutOfRange(f"set contains an index outside [0, {self.ground.n})")
        if idx.size == 0 or self.penalty == 0.0:
            return self.base.copy()
        U_S = self.ground.vectors[idx]
        return self.base - 2.0 * self.penalty * (U_S.T @ U_S)

    def rebind(self, ground: GroundVectors) -> "DiversityFamily":
        return DiversityFamily(ground, self.base, self.penalty)

    def tracker(self, ground: GroundVectors) -> "DiversityFamily":
        return DiversityFamily(ground, self.base, self.penalty)

    @property
    def current(self) -> np.ndarray:
        return self.current_h

    def add(self, j: int, ground: Optional[GroundVectors] = None) -> "DiversityFamily":
        return diversity_step(self, ground if ground is not None else self.ground, j)

    def set_value(self, ground: GroundVectors, S: Sequence[int]) -> float:
        idx = np.asarray(sorted(int(i) for i in S), dtype=np.int64)
        if idx.size == 0:
            return 0.0
        U_S = ground.vectors[idx]
        own = float(np.einsum("ij,jk,ik->", U_S, self.base, U_S))
        gram = U_S @ U_S.T
        cross = float(np.sum(gram ** 2) - np.sum(np.diag(gram) ** 2))
        return own - self.penalty * cross


# ============================================================================
# Instance bundle
# ============================================================================

@dataclass(eq=False)
class EmbeddingInstance:
    ground: GroundVectors
    oracle: MarginalOracle

    @property
    def n(self) -> int:
        return self.ground.n

    @property
    def d(self) -> int:
        return self.ground.d

    def marginal_gain(self, S: Iterable[int], i: int) -> float:
        return marginal_gain(self.ground, self.oracle, S, i)

    def evaluate_f(self, chain: Sequence[int]) -> float:
        return evaluate_f(self.ground, self.oracle, chain)

    def value(self, S: Sequence[int]) -> float:
        """f(S), closed form when the oracle offers one."""
        closed = self.oracle.set_value(self.ground, S)
        if closed is not None:
            return closed
        return evaluate_f(self.ground, self.oracle, sorted(int(i) for i in S))

    def replace_vector(self, i: int, z) -> "EmbeddingInstance":
        ground = self.ground.replace(i, z)
        return EmbeddingInstance(ground, self.oracle.rebind(ground))


# ============================================================================
# Operations
# ============================================================================

def marginal_gain(gv: GroundVectors, h: MarginalOracle, S: Iterable[int], i: int) -> float:
    """u_i^T h(S) u_i, exact in floating point."""
    idx = gv.check_index(i)
    members = [gv.check_index(j) for j in S]
    if idx in members:
        raise DuplicateIndexError(f"index {idx} is already in S")
    u = gv.vectors[idx]
    return float(u @ h.evaluate(members) @ u)


def evaluate_f(gv: GroundVectors, h: MarginalOracle, chain: Sequence[int]) -> float:
    """Sum of marginal gains along the chain, starting from f(empty) = 0."""
    prefix: List[int] = []
    total = 0.0
    for i in chain:
        idx = gv.check_index(i)
        if idx in prefix:
            raise DuplicateIndexError(f"index {idx} appears twice in the chain")
        total += marginal_gain(gv, h, prefix, idx)
        prefix.append(idx)
    return total


def diversity_step(df: DiversityFamily, gv: GroundVectors, j: int) -> DiversityFamily:
    """current_h -= 2*lam * u_j u_j^T in place; O(d^2)."""
    idx = gv.check_index(j)
    if df.penalty != 0.0:
        u = gv.vectors[idx]
        df.current_h -= 2.0 * df.penalty * np.outer(u, u)
    df.selected.append(idx)
    return df


@dataclass
class ValidationReport:
    samples: int = 0
    monotonicity: int = 0
    submodularity: int = 0
    psd: int = 0
    frobenius: int = 0
    worst_gain: float = math.inf
    worst_submodular_gap: float = -math.inf

    @property
    def violations(self) -> int:
        return self.monotonicity + self.submodularity + self.psd + self.frobenius

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "samples": self.samples,
            "monotonicity": self.monotonicity,
            "submodularity": self.submodularity,
            "psd": self.psd,
            "frobenius": self.frobenius,
            "worst_gain": self.worst_gain,
            "worst_submodular_gap": self.worst_submodular_gap,
        }


def validate_instance(
    gv: GroundVectors,
    h: MarginalOracle,
    sample_budget: int,
    seed: int = 0,
) -> ValidationReport:
    """Sample S subset-of T and i outside T; count property violations. Diagnostic only."""
    rng = np.random.default_rng(seed)
    report = ValidationReport()
    n = gv.n
    if n < 2:
        logger.info("[CORE] validate_instance: n=1, nothing to sample")
        return report

    bound = h.frobenius_bound * (1 + 1e-9) + 1e-12
    for _ in range(int(sample_budget)):
        keep = rng.random(n) < rng.random()
        if keep.all():
            keep[rng.integers(n)] = False
        T = np.flatnonzero(keep)
        S = T[rng.random(T.size) < 0.5]
        outside = np.flatnonzero(~keep)
        i = int(rng.choice(outside))
        u = gv.vectors[i]

        h_S = h.evaluate(S.tolist())
        h_T = h.evaluate(T.tolist())
        gain_S = float(u @ h_S @ u)
        gain_T = float(u @ h_T @ u)
        report.samples += 1
        report.worst_gain = min(report.worst_gain, gain_S, gain_T)
        report.worst_submodular_gap = max(report.worst_submodular_gap, gain_T - gain_S)

        if gain_S < -MONOTONE_TOL or gain_T < -MONOTONE_TOL:
            report.monotonicity += 1
        if gain_T > gain_S + SUBMODULAR_TOL:
            report.submodularity += 1
        if h.psd:
            if min(np.linalg.eigvalsh(h_S).min(), np.linalg.eigvalsh(h_T).min()) < PSD_TOL:
                report.psd += 1
        if max(np.linalg.norm(h_S), np.linalg.norm(h_T)) > bound:
            report.frobenius += 1

    if report.ok:
        logger.debug(f"[CORE] validate_instance: {report.samples} samples, no violations")
    else:
        logger.info(f"[CORE] validate_instance: {report.violations} violations in {report.samples} samples")
    return report


def generate_instance(
    n: int,
    d: int,
    norm_bound: float = 1.0,
    lambda_scale: float = 0.5,
    base: str = "identity",
    seed: int = 0,
) -> EmbeddingInstance:
    """Random monotone DiversityFamily instance, deterministic per seed.

    lambda = lambda_scale * monotone_penalty_limit, so lambda_scale in [0, 1]
    keeps every marginal nonnegative and lambda_scale = 0 gives a modular f.
    """
    if n < 1 or d < 1:
        raise ParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not norm_bound > 0:
        raise ParameterError(f"norm bound must be positive, got {norm_bound}")
    if not 0.0 <= lambda_scale <= 1.0:
        raise ParameterError(f"lambda_scale must lie in [0, 1], got {lambda_scale}")

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n, d))
    lengths = np.linalg.norm(directions, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    radii = norm_bound * rng.uniform(0.25, 1.0, size=(n, 1))
    vectors = directions / lengths * radii

    B = base_matrix(base, d, rng)
    limit = monotone_penalty_limit(vectors, B)
    penalty = lambda_scale * (limit if math.isfinite(limit) else 1.0)

    ground = GroundVectors(vectors, norm_bound)
    logger.debug(f"[CORE] generated n={n} d={d} base={base} lambda={penalty:.4g}")
    return EmbeddingInstance(ground, DiversityFamily(ground, B, penalty))


BASE_KINDS = ("identity", "diagonal", "dense")


def base_matrix(kind: str, d: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "identity":
        return np.eye(d)
    if kind == "diagonal":
        return np.diag(rng.uniform(0.5, 1.5, size=d))
    if kind == "dense":
        G = rng.standard_normal((d, d))
        B = G @ G.T / d
        return (B + B.T) / 2.0
    raise ParameterError(f"unknown base kind {kind!r}, expected one of {BASE_KINDS}")


# ============================================================================
# Constraints
# ============================================================================

@dataclass(frozen=True)
class Cardinality:
    k: int

    def __post_init__(self):
        if int(self.k) < 0:
            raise ParameterError(f"cardinality k must be >= 0, got {self.k}")

    def feasible(self, S: Iterable[int]) -> bool:
        return len(set(S)) <= self.k


@dataclass(frozen=True, eq=False)
class Matroid:
    independent: Callable[[FrozenSet[int]], bool]
    rank: int
    name: str = "matroid"

    def feasible(self, S: Iterable[int]) -> bool:
        return bool(self.independent(frozenset(int(i) for i in S)))

    @classmethod
    def uniform(cls, n: int, k: int) -> "Matroid":
        """Free matroid of rank min(n, k): every set of size <= k is independent."""
        def independent(S: FrozenSet[int]) -> bool:
            return len(S) <= k and all(0 <= i < n for i in S)

        return cls(independent, min(n, k), name=f"uniform(n={n},k={k})")

    @classmethod
    def partition(cls, blocks: Sequence[Sequence[int]], capacities: Sequence[int]) -> "Matroid":
        if len(blocks) != len(capacities):
            raise ParameterError("partition matroid needs one capacity per block")
        owner: Dict[int, int] = {}
        for b, block in enumerate(blocks):
            for i in block:
                if int(i) in owner:
                    raise ParameterError(f"element {i} appears in two blocks")
                owner[int(i)] = b
        caps = [int(c) for c in capacities]
        if any(c < 0 for c in caps):
            raise ParameterError("block capacities must be >= 0")

        def independent(S: FrozenSet[int]) -> bool:
            used = [0] * len(caps)
            for i in S:
                b = owner.get(int(i))
                if b is None:
                    return False
                used[b] += 1
                if used[b] > caps[b]:
                    return False
            return True

        rank = sum(min(c, len(block)) for c, block in zip(caps, blocks))
        return cls(independent, rank, name=f"partition(blocks={len(blocks)})")


@dataclass(frozen=True, eq=False)
class Knapsack:
    weights: np.ndarray
    budget: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ParameterError("knapsack weights must be a non-empty vector")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ParameterError("knapsack weights must be positive and finite")
        budget = float(self.budget)
        if not (math.isfinite(budget) and budget > 0):
            raise ParameterError(f"knapsack budget must be positive, got {self.budget}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "budget", budget)

    def cost(self, S: Iterable[int]) -> float:
        return math.fsum(float(self.weights[int(i)]) for i in S)

    def fits(self, cost: float) -> bool:
        return cost <= self.budget * (1 + 1e-12)

    def feasible(self, S: Iterable[int]) -> bool:
        return self.fits(self.cost(S))


Constraint = Union[Cardinality, Matroid, Knapsack]


# ============================================================================
# Selection result
# ============================================================================

@dataclass
class SelectionRun:
    """Ordered chain with exact per-step gains; value = f(chain)."""

    chain: List[int]
    gains: List[float]
    timings: List[float]
    stats: Dict[str, Any] = field(default_factory=dict)
    value: float = field(init=False)

    def __post_init__(self):
        self.chain = [int(i) for i in self.chain]
        if len(set(self.chain)) != len(self.chain):
            raise DuplicateIndexError(f"selection chain has duplicates: {self.chain}")
        if len(self.gains) != len(self.chain):
            raise ParameterError("one gain per chosen index is required")
        self.gains = [float(g) for g in self.gains]
        self.value = math.fsum(self.gains)

    @property
    def total_time(self) -> float:
        return math.fsum(self.timings)

    def as_set(self) -> FrozenSet[int]:
        return frozenset(self.chain)
