"""
Maximum inner product search with signed random hyperplanes.

Points and queries are unit vectors, so inner product and angle are the same
order: one hyperplane bit collides with probability 1 - theta/pi. Each of
the T tables concatenates K bits; a query gathers the buckets it lands in,
scores the gathered candidates exactly and answers the best one if it reaches
c * tau, or FAIL (None) otherwise.

    K = ceil(log2 n),  p1 = 1 - arccos(tau)/pi,  T = max(8, ceil(4 ln(1/delta) / p1^K))

``LshQuadraticFormSearch`` runs the same search over lifted flattened
points Q(vec(u u^T)) with lifted queries P(vec(M)), so the inner product
it scores is exactly u^T M u.
"""

import logging
import math
from typing import Dict, List, Optional, Set

import numpy as np

from config import config
from core import GroundVectors
from errors import DimensionMismatch, NormBoundError, ParameterError
from ipe import lift_p, lift_q
from qfs import CandidateSet, check_query_matrix, flatten_rows, vec
from sketch_ade import SeedLike, as_seed_sequence, check_open_unit

logger = logging.getLogger(__name__)

FAIL = None
UNIT_TOL = 1e-9
MAX_BITS = 62


def table_shape(n: int, tau: float, delta: float) -> tuple:
    """(T, K) for n points at threshold tau and failure delta."""
    bits = min(MAX_BITS, max(1, math.ceil(math.log2(max(n, 2)))))
    p1 = 1.0 - math.acos(tau) / math.pi
    tables = max(8, math.ceil(4 * math.log(1.0 / delta) / p1 ** bits))
    return tables, bits


def _check_unit_rows(X: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(X, axis=-1)
    bad = np.abs(norms - 1.0) > UNIT_TOL
    if np.any(bad):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise NormBoundError(f"{what} must be unit vectors, got norm {float(np.atleast_1d(norms)[worst]):.12g}")


class HashEnsemble:
    def __init__(
        self,
        points,
        c: float,
        tau: float,
        delta: float,
        *,
        seed: SeedLike = None,
        tables: Optional[int] = None,
        bits: Optional[int] = None,
        candidate_factor: Optional[int] = None,
    ):
        X = np.array(points, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DimensionMismatch(f"points must be a non-empty n x d array, got shape {X.shape}")
        _check_unit_rows(X, "stored points")
        self.c = check_open_unit("c", c)
        self.tau = check_open_unit("tau", tau)
        self.delta = check_open_unit("delta", delta)

        n, dim = X.shape
        default_tables, default_bits = table_shape(n, self.tau, self.delta)
        self.tables = int(tables) if tables is not None else default_tables
        self.bits = int(bits) if bits is not None else default_bits
        if not (1 <= self.bits <= MAX_BITS and self.tables >= 1):
            raise ParameterError(f"need 1 <= K <= {MAX_BITS} and T >= 1, got K={self.bits}, T={self.tables}")
        factor = config.LSH_CANDIDATE_FACTOR if candidate_factor is None else int(candidate_factor)
        self.candidate_cap = factor * self.tables

        rng = np.random.default_rng(as_seed_sequence(seed))
        planes = rng.standard_normal((self.tables, self.bits, dim))
        self.hyperplanes = planes / np.linalg.norm(planes, axis=2, keepdims=True)
        self._weights = np.left_shift(np.int64(1), np.arange(self.bits, dtype=np.int64))

        self.points = X
        self.candidates = CandidateSet(n)
        self.codes = self._codes(X)                      # (T, n)
        self.buckets: List[Dict[int, Set[int]]] = []
        for t in range(self.tables):
            table: Dict[int, Set[int]] = {}
            for i, code in enumerate(self.codes[t].tolist()):
                table.setdefault(code, set()).add(i)
            self.buckets.append(table)

        self.queries = 0
        self.failures = 0
        self.deletes = 0
        logger.debug(f"[LSH] init n={n} dim={dim} T={self.tables} K={self.bits} cap={self.candidate_cap}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _codes(self, X: np.ndarray) -> np.ndarray:
        """K-bit codes of each row of X in every table, shape (T, rows)."""
        signs = np.einsum("tkd,nd->tnk", self.hyperplanes, X) > 0
        return signs.astype(np.int64) @ self._weights

    def gather(self, q: np.ndarray) -> List[int]:
        """Live bucket members across tables in table order, up to the candidate cap."""
        codes = self._codes(q[None, :])[:, 0]
        seen: Set[int] = set()
        found: List[int] = []
        for t, code in enumerate(codes.tolist()):
            for i in sorted(self.buckets[t].get(code, ())):
                if i not in seen:
                    seen.add(i)
                    found.append(i)
                    if len(found) >= self.candidate_cap:
                        return found
        return found

    def query(self, q) -> Optional[int]:
        """Live index with <p, q> >= c*tau, or FAIL."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"query has shape {q.shape}, expected ({self.dim},)")
        _check_unit_rows(q, "query")
        self.queries += 1

        found = self.gather(q)
        if not found:
            self.failures += 1
            return FAIL
        idx = np.asarray(found, dtype=np.int64)
        scores = self.points[idx] @ q
        best = float(scores.max())
        if best < self.c * self.tau:
            self.failures += 1
            return FAIL
        slack = config.TIE_RTOL * max(1.0, abs(best))
        return int(idx[scores >= best - slack].min())

    def delete(self, i: int) -> None:
        self.candidates.delete(i)
        for t in range(self.tables):
            self.buckets[t][int(self.codes[t, i])].discard(int(i))
        self.deletes += 1

    def occurrences(self, i: int) -> int:
        """How many buckets across all tables still hold i."""
        return sum(int(i) in bucket for table in self.buckets for bucket in table.values())


def maxip_init(points, c: float, tau: float, delta: float, **kwargs) -> HashEnsemble:
    return HashEnsemble(points, c, tau, delta, **kwargs)


def maxip_query(ens: HashEnsemble, q) -> Optional[int]:
    return ens.query(q)


def maxip_delete(ens: HashEnsemble, i: int) -> None:
    ens.delete(i)


class LshQuadraticFormSearch:
    """Quadratic form search through Max-IP over lifted flattened points."""

    def __init__(
        self,
        ground: GroundVectors,
        c: float,
        tau: float,
        delta: float,
        *,
        seed: SeedLike = None,
        candidate_factor: Optional[int] = None,
    ):
        norms = ground.norms()
        if float(norms.max()) > 1.0 + 1e-12:
            raise NormBoundError(f"LSH search needs ||u_i|| <= 1, got {float(norms.max()):.6g}")
        self.ground = ground
        self.maxip = HashEnsemble(
            lift_q(flatten_rows(ground.vectors)), c, tau, delta, seed=seed, candidate_factor=candidate_factor
        )

    @property
    def candidates(self) -> CandidateSet:
        return self.maxip.candidates

    def query(self, M) -> Optional[int]:
        M = check_query_matrix(M, self.ground.d)
        return self.maxip.query(lift_p(vec(M)))

    def delete(self, i: int) -> None:
        self.maxip.delete(i)


def fqfs_lsh_query(st: LshQuadraticFormSearch, M) -> Optional[int]:
    return st.query(M)
