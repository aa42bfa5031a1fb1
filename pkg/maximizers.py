"""
Greedy selection drivers.

Every driver runs the same loop: read A_t = h(S_t) from the oracle tracker,
ask a search backend for (approximately) the best live index, record its
exact gain u_j^T A_t u_j, add it and delete it from the backend. Backends:

    exact      naive scan, one quadratic form per live index
    batch      the same scan computed block-wise as diag(U_b A U_b^T)
    sketch     quadratic form search over IPE (queries A_t / H)
    lsh        Max-IP over lifted flattened points, exact scan on FAIL
    perturbed  exact gains shifted by +/- eps (approximate-greedy oracle)
"""

import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Literal, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core import EmbeddingInstance, GroundVectors, Knapsack, Matroid, SelectionRun
from errors import AdversaryError, IncompatibleRunError, ParameterError
from lsh_maxip import LshQuadraticFormSearch
from qfs import CandidateSet, QfsVariant, QuadraticFormSearch

logger = logging.getLogger(__name__)

GREEDY_RATIO = 1.0 - 1.0 / math.e
MATROID_RATIO = 0.5
KNAPSACK_RATIO = 0.5 - 1.0 / (2.0 * math.e)


class BackendKind(str, Enum):
    EXACT = "exact"
    BATCH = "batch"
    SKETCH = "sketch"
    LSH = "lsh"
    PERTURBED = "perturbed"


class GreedyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: Optional[int] = Field(default=None, ge=0)
    eps: float = Field(default=0.1, gt=0)
    delta: float = Field(default=0.1, gt=0, lt=1)
    backend: BackendKind = BackendKind.EXACT
    variant: QfsVariant = QfsVariant.FLAT
    c: float = Field(default=0.9, gt=0, lt=1)
    tau: float = Field(default=0.5, gt=0, lt=1)
    perturbation: Literal["adversarial", "random"] = "adversarial"
    h_bound: Optional[float] = Field(default=None, gt=0)
    seed: int = 0
    dim_scale: Optional[float] = Field(default=None, gt=0)
    block_size: Optional[int] = Field(default=None, ge=1)


def quadratic_forms(U: np.ndarray, A: np.ndarray) -> np.ndarray:
    """u_j^T A u_j for every row of U."""
    return np.einsum("ij,jk,ik->i", U, A, U)


def perturbed_greedy_bound(opt: float, k: int, oracle_error: float) -> float:
    """(1 - 1/e) OPT - k (2 - 1/e) eps for a greedy run with a +/- eps gain oracle."""
    return GREEDY_RATIO * opt - k * (2.0 - 1.0 / math.e) * oracle_error


# ============================================================================
# Search backends
# ============================================================================

class SearchBackend:
    name = "base"

    def __init__(self, ground: GroundVectors):
        self.ground = ground
        self.candidates = CandidateSet(ground.n)
        self.queries = 0
        self.deletes = 0
        self.fallbacks = 0
        self.oracle_error = 0.0

    @property
    def is_empty(self) -> bool:
        return len(self.candidates) == 0

    def live(self) -> np.ndarray:
        return self.candidates.indices()

    def select(self, A: np.ndarray) -> int:
        raise NotImplementedError

    def delete(self, i: int) -> None:
        self.candidates.delete(i)
        self.deletes += 1

    def update(self, i: int, z) -> None:
        self.ground = self.ground.replace(i, z)

    def exact_scan(self, A: np.ndarray) -> int:
        scores = np.full(self.ground.n, -np.inf)
        live = self.live()
        scores[live] = quadratic_forms(self.ground.vectors[live], A)
        return self.candidates.argmax(scores)

    def stats(self) -> Dict[str, Any]:
        return {
            "backend": self.name,
            "queries": self.queries,
            "deletes": self.deletes,
            "fallbacks": self.fallbacks,
            "oracle_error": self.oracle_error,
        }


class NaiveBackend(SearchBackend):
    """One O(d^2) quadratic form per live index, per step."""

    name = "exact"

    def select(self, A: np.ndarray) -> int:
        self.queries += 1
        scores = np.full(self.ground.n, -np.inf)
        for j in self.live():
            u = self.ground.vectors[j]
            scores[j] = u @ A @ u
        return self.candidates.argmax(scores)


class BatchBackend(SearchBackend):
    """Scores block-wise via diag(U_b A U_b^T) with blocks of d live vectors."""

    name = "batch"

    def __init__(self, ground: GroundVectors, block_size: Optional[int] = None):
        super().__init__(ground)
        self.block_size = int(block_size) if block_size else ground.d

    def select(self, A: np.ndarray) -> int:
        self.queries += 1
        scores = np.full(self.ground.n, -np.inf)
        live = self.live()
        for start in range(0, live.size, self.block_size):
            block = live[start:start + self.block_size]
            U_b = self.ground.vectors[block]
            scores[block] = np.diagonal(U_b @ A @ U_b.T)
        return self.candidates.argmax(scores)


class SketchBackend(SearchBackend):
    """QFS over IPE; queries A / H so that ||A/H||_F <= 1."""

    name = "sketch"

    def __init__(
        self,
        ground: GroundVectors,
        h_bound: float,
        eps: float,
        delta: float,
        variant: QfsVariant = QfsVariant.FLAT,
        *,
        norm_bound: Optional[float] = None,
        dim_scale: Optional[float] = None,
        seed: Optional[int] = None,
    ):
        super().__init__(ground)
        self.h_bound = float(h_bound)
        self.qfs = QuadraticFormSearch(ground, eps, delta, variant, norm_bound=norm_bound,
                                       dim_scale=dim_scale, seed=seed)
        self.candidates = self.qfs.candidates
        self.name = f"sketch-{self.qfs.variant.value}"
        self.oracle_error = eps * self.h_bound

    def select(self, A: np.ndarray) -> int:
        self.queries += 1
        return self.qfs.query(A / self.h_bound)

    def estimates(self, A: np.ndarray) -> np.ndarray:
        """Estimated gains on the original scale."""
        return self.qfs.estimates(A / self.h_bound) * self.h_bound

    def delete(self, i: int) -> None:
        self.qfs.delete(i)
        self.deletes += 1

    def update(self, i: int, z) -> None:
        self.qfs.update(i, z)
        super().update(i, z)


class LshBackend(SearchBackend):
    """LSH quadratic form search; a FAIL step falls back to the exact scan."""

    name = "lsh"

    def __init__(
        self,
        ground: GroundVectors,
        h_bound: float,
        c: float,
        tau: float,
        delta: float,
        *,
        seed: Optional[int] = None,
    ):
        super().__init__(ground)
        self.h_bound = float(h_bound)
        self.search = LshQuadraticFormSearch(ground, c, tau, delta, seed=seed)
        self.candidates = self.search.candidates

    def select(self, A: np.ndarray) -> int:
        self.queries += 1
        j = self.search.query(A / self.h_bound)
        if j is None:
            self.fallbacks += 1
            logger.debug("[LSH] FAIL, exact scan for this step")
            return self.exact_scan(A)
        return j

    def delete(self, i: int) -> None:
        self.search.delete(i)
        self.deletes += 1

    def update(self, i: int, z) -> None:
        raise IncompatibleRunError("the LSH backend does not support vector updates")


class PerturbedBackend(SearchBackend):
    """Exact gains plus errors in [-eps, eps].

    ``adversarial`` lowers the true best by eps and raises every other live
    gain by eps; ``random`` adds independent uniform errors.
    """

    name = "perturbed"

    def __init__(self, ground: GroundVectors, eps: float, mode: str = "adversarial", seed: Optional[int] = None):
        super().__init__(ground)
        if mode not in ("adversarial", "random"):
            raise ParameterError(f"unknown perturbation mode {mode!r}")
        self.mode = mode
        self.eps = float(eps)
        self.oracle_error = self.eps
        self._rng = np.random.default_rng(seed)

    def select(self, A: np.ndarray) -> int:
        self.queries += 1
        live = self.live()
        exact = np.full(self.ground.n, -np.inf)
        exact[live] = quadratic_forms(self.ground.vectors[live], A)
        if self.mode == "adversarial":
            best = self.candidates.argmax(exact)
            noisy = exact + self.eps
            noisy[best] = exact[best] - self.eps
        else:
            noisy = exact + self._rng.uniform(-self.eps, self.eps, size=exact.size)
        return self.candidates.argmax(noisy)


def make_backend(
    ground: GroundVectors,
    cfg: GreedyConfig,
    steps: int,
    h_bound: float,
) -> SearchBackend:
    """Backend for a run of ``steps`` queries; failure budget delta/steps per query."""
    step_delta = cfg.delta / max(1, steps)
    H = cfg.h_bound if cfg.h_bound is not None else h_bound
    if not H > 0:
        H = 1.0
    kind = BackendKind(cfg.backend)
    if kind is BackendKind.EXACT:
        return NaiveBackend(ground)
    if kind is BackendKind.BATCH:
        return BatchBackend(ground, cfg.block_size)
    if kind is BackendKind.SKETCH:
        # sized for the declared D so any replacement with ||z|| <= D fits
        return SketchBackend(ground, H, cfg.eps, step_delta, cfg.variant, norm_bound=ground.norm_bound ** 2,
                             dim_scale=cfg.dim_scale, seed=cfg.seed)
    if kind is BackendKind.LSH:
        return LshBackend(ground, H, cfg.c, cfg.tau, step_delta, seed=cfg.seed)
    return PerturbedBackend(ground, cfg.eps, cfg.perturbation, seed=cfg.seed)


# ============================================================================
# Selection loop
# ============================================================================

def _check_k(inst: EmbeddingInstance, k: Optional[int]) -> int:
    if k is None:
        raise ParameterError("cardinality k is required")
    if not 0 <= k <= inst.n:
        raise ParameterError(f"k = {k} must lie in [0, n = {inst.n}]")
    return int(k)


def _select(
    inst: EmbeddingInstance,
    backend: SearchBackend,
    max_steps: int,
    *,
    prune: Optional[Callable[[List[int], int], bool]] = None,
    accept: Optional[Callable[[List[int], int], bool]] = None,
    label: str = "greedy",
) -> SelectionRun:
    """Query, select, delete until max_steps picks or the backend runs dry.

    ``prune(chain, j)`` deletes j before the query when true; ``accept(chain, j)``
    decides whether the queried j joins the chain (it is deleted either way).
    """
    tracker = inst.oracle.tracker(inst.ground)
    chain: List[int] = []
    gains: List[float] = []
    timings: List[float] = []
    pruned = rejected = 0

    while len(chain) < max_steps and not backend.is_empty:
        start = time.perf_counter()
        if prune is not None:
            for j in backend.live().tolist():
                if prune(chain, j):
                    backend.delete(j)
                    pruned += 1
            if backend.is_empty:
                timings.append(time.perf_counter() - start)
                break

        A = tracker.current
        j = backend.select(A)
        if accept is None or accept(chain, j):
            u = inst.ground.vectors[j]
            gains.append(float(u @ A @ u))
            chain.append(j)
            tracker.add(j, inst.ground)
        else:
            rejected += 1
        backend.delete(j)
        timings.append(time.perf_counter() - start)
        logger.debug(f"[GREEDY] {label} step {len(timings)}: j={j} chain={len(chain)}")

    stats = backend.stats()
    stats.update({"pruned": pruned, "rejected": rejected, "label": label})
    run = SelectionRun(chain, gains, timings, stats)
    if backend.fallbacks:
        logger.warning(f"[GREEDY] {label}: {backend.fallbacks} LSH fallbacks in {backend.queries} queries")
    logger.info(f"[GREEDY] {label} done: |S|={len(chain)} f={run.value:.6g} time={run.total_time:.4f}s")
    return run


# ============================================================================
# Drivers
# ============================================================================

def greedy_naive(inst: EmbeddingInstance, k: int) -> SelectionRun:
    k = _check_k(inst, k)
    return _select(inst, NaiveBackend(inst.ground), k, label="naive")


def greedy_batch(inst: EmbeddingInstance, k: int, block_size: Optional[int] = None) -> SelectionRun:
    k = _check_k(inst, k)
    return _select(inst, BatchBackend(inst.ground, block_size), k, label="batch")


def _require(cfg: GreedyConfig, kind: BackendKind, driver: str) -> None:
    if BackendKind(cfg.backend) is not kind:
        raise IncompatibleRunError(f"{driver} needs the {kind.value} backend, got {BackendKind(cfg.backend).value}")


def greedy_fast(inst: EmbeddingInstance, cfg: GreedyConfig) -> SelectionRun:
    _require(cfg, BackendKind.SKETCH, "greedy_fast")
    k = _check_k(inst, cfg.k)
    backend = make_backend(inst.ground, cfg, k, inst.oracle.frobenius_bound)
    return _select(inst, backend, k, label=backend.name)


def greedy_lsh(inst: EmbeddingInstance, cfg: GreedyConfig) -> SelectionRun:
    _require(cfg, BackendKind.LSH, "greedy_lsh")
    k = _check_k(inst, cfg.k)
    backend = make_backend(inst.ground, cfg, k, inst.oracle.frobenius_bound)
    return _select(inst, backend, k, label="lsh")


def greedy_perturbed(inst: EmbeddingInstance, cfg: GreedyConfig) -> SelectionRun:
    _require(cfg, BackendKind.PERTURBED, "greedy_perturbed")
    k = _check_k(inst, cfg.k)
    backend = make_backend(inst.ground, cfg, k, inst.oracle.frobenius_bound)
    return _select(inst, backend, k, label=f"perturbed-{cfg.perturbation}")


def greedy(inst: EmbeddingInstance, cfg: GreedyConfig) -> SelectionRun:
    """Cardinality-constrained greedy with the backend named in cfg."""
    kind = BackendKind(cfg.backend)
    if kind is BackendKind.EXACT:
        return greedy_naive(inst, cfg.k)
    if kind is BackendKind.BATCH:
        return greedy_batch(inst, cfg.k, cfg.block_size)
    if kind is BackendKind.SKETCH:
        return greedy_fast(inst, cfg)
    if kind is BackendKind.LSH:
        return greedy_lsh(inst, cfg)
    return greedy_perturbed(inst, cfg)


def greedy_matroid(inst: EmbeddingInstance, matroid: Matroid, cfg: GreedyConfig) -> SelectionRun:
    """rank(M) steps; before each query every live j with S + j dependent is deleted."""
    steps = min(int(matroid.rank), inst.n)
    backend = make_backend(inst.ground, cfg, steps, inst.oracle.frobenius_bound)

    def dependent(chain: List[int], j: int) -> bool:
        return not matroid.feasible(chain + [j])

    run = _select(inst, backend, steps, prune=dependent, label=f"matroid-{backend.name}")
    run.stats["rank"] = steps
    run.stats["ended_early"] = len(run.chain) < steps
    return run


def _scaled_ground(ground: GroundVectors, weights: np.ndarray) -> GroundVectors:
    return GroundVectors.from_rows(ground.vectors / np.sqrt(weights)[:, None])


def knapsack_pass(
    inst: EmbeddingInstance,
    search_ground: GroundVectors,
    knapsack: Knapsack,
    cfg: GreedyConfig,
    label: str,
) -> SelectionRun:
    """Query every live index once; keep it when it still fits the budget."""
    backend = make_backend(search_ground, cfg, inst.n, inst.oracle.frobenius_bound)
    spent = [0.0]

    def fits(chain: List[int], j: int) -> bool:
        cost = spent[0] + float(knapsack.weights[j])
        if knapsack.fits(cost):
            spent[0] = cost
            return True
        return False

    run = _select(inst, backend, inst.n, accept=fits, label=label)
    run.stats["cost"] = spent[0]
    return run


def knapsack_two_pass(inst: EmbeddingInstance, weights, budget: float, cfg: GreedyConfig) -> SelectionRun:
    """Better of the uniform-cost pass on u_i and the cost-benefit pass on u_i / sqrt(w_i)."""
    knapsack = Knapsack(weights, budget)
    if knapsack.weights.size != inst.n:
        raise ParameterError(f"need {inst.n} weights, got {knapsack.weights.size}")

    uniform = knapsack_pass(inst, inst.ground, knapsack, cfg, "knapsack-uniform")
    benefit = knapsack_pass(inst, _scaled_ground(inst.ground, knapsack.weights), knapsack, cfg, "knapsack-benefit")

    best = uniform if uniform.value > benefit.value else benefit
    best.stats.update({
        "uniform_value": uniform.value,
        "benefit_value": benefit.value,
        "chosen_pass": "uniform" if best is uniform else "benefit",
        "deletes": uniform.stats["deletes"] + benefit.stats["deletes"],
    })
    return best


# ============================================================================
# Semi-online setting
# ============================================================================

@dataclass(frozen=True)
class OnlineView:
    """What an adversary sees before step ``step``."""

    step: int
    instance: EmbeddingInstance
    chain: Tuple[int, ...]
    live: np.ndarray
    h: np.ndarray


class Adversary(Protocol):
    def __call__(self, view: OnlineView) -> Optional[Tuple[int, np.ndarray]]:
        ...


class NullAdversary:
    def __call__(self, view: OnlineView) -> None:
        return None


class RandomPerturb:
    """Adds N(0, sigma^2) noise to a random live vector, keeping its norm from growing."""

    def __init__(self, sigma: float = 0.1, seed: Optional[int] = None):
        self.sigma = float(sigma)
        self._rng = np.random.default_rng(seed)

    def __call__(self, view: OnlineView) -> Optional[Tuple[int, np.ndarray]]:
        if view.live.size == 0:
            return None
        i = int(self._rng.choice(view.live))
        u = view.instance.ground.vectors[i]
        z = u + self.sigma * self._rng.standard_normal(u.size)
        cap = float(np.linalg.norm(u))
        norm = float(np.linalg.norm(z))
        if norm > cap:
            z = z * (cap / norm) if norm > 0 else np.zeros_like(u)
        return i, z


class GreedySpoiler:
    """Shrinks the current best live candidate toward 0 by ``shrink``."""

    def __init__(self, shrink: float = 0.5):
        if not 0.0 <= shrink < 1.0:
            raise ParameterError(f"shrink must lie in [0, 1), got {shrink}")
        self.shrink = float(shrink)

    def __call__(self, view: OnlineView) -> Optional[Tuple[int, np.ndarray]]:
        if view.live.size == 0:
            return None
        U = view.instance.ground.vectors
        scores = quadratic_forms(U[view.live], view.h)
        i = int(view.live[int(np.argmax(scores))])
        return i, self.shrink * U[i]


ADVERSARIES: Dict[str, Callable[..., Adversary]] = {
    "null": NullAdversary,
    "random": RandomPerturb,
    "spoiler": GreedySpoiler,
}


def semi_online_run(inst: EmbeddingInstance, cfg: GreedyConfig, adversary: Adversary) -> SelectionRun:
    """Greedy where an adversary may replace one unselected vector before each step."""
    k = _check_k(inst, cfg.k)
    if BackendKind(cfg.backend) in (BackendKind.LSH, BackendKind.PERTURBED):
        raise IncompatibleRunError(f"semi-online runs need an updatable backend, got {BackendKind(cfg.backend).value}")
    backend = make_backend(inst.ground, cfg, k, inst.oracle.frobenius_bound)
    tracker = inst.oracle.tracker(inst.ground)
    chain: List[int] = []
    gains: List[float] = []
    timings: List[float] = []
    moves = 0

    for step in range(k):
        if backend.is_empty:
            break
        start = time.perf_counter()
        A = tracker.current
        move = adversary(OnlineView(step, inst, tuple(chain), backend.live(), A))
        if move is not None:
            i, z = move
            i = inst.ground.check_index(i)
            if i not in backend.candidates:
                raise AdversaryError(f"adversary targeted selected index {i}")
            z = np.asarray(z, dtype=np.float64)
            inst = inst.replace_vector(i, z)
            backend.update(i, z)
            moves += 1

        j = backend.select(A)
        u = inst.ground.vectors[j]
        gains.append(float(u @ A @ u))
        chain.append(j)
        tracker.add(j, inst.ground)
        backend.delete(j)
        timings.append(time.perf_counter() - start)

    stats = backend.stats()
    stats.update({"adversary": type(adversary).__name__, "moves": moves, "label": "online"})
    run = SelectionRun(chain, gains, timings, stats)
    run.stats["final_instance"] = inst
    logger.info(f"[GREEDY] online done: |S|={len(chain)} f={run.value:.6g} moves={moves}")
    return run
