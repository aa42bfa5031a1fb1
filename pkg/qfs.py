"""
Fast quadratic form search.

Given M (||M||_F <= 1), return a live index j0 whose quadratic form
u_j0^T M u_j0 is within 2 eps of the best live one. Quadratic forms become
inner products through flattening:

    <vec(u u^T), vec(M)> = u^T M u

Two layouts are provided. ``flat`` keeps one IPE over the n flattened
d^2-vectors. ``columns`` is the warm-up layout: d IPE instances, instance i
holding the rows (u_j)_i * u_j and answering column i of M, each with
accuracy eps/d and failure delta/d.
"""

import logging
from enum import Enum
from typing import Callable, Iterator, List, Optional

import numpy as np

from config import config
from core import GroundVectors
from errors import AbsentIndexError, DimensionMismatch, EmptyCandidateSet, IndexOutOfRange, NormBoundError
from ipe import IpeState
from sketch_ade import SeedLike, as_seed_sequence

logger = logging.getLogger(__name__)

FROBENIUS_TOL = 1e-12


def flatten(u) -> np.ndarray:
    """vec(u u^T) stacked column by column: [(u)_1 u, (u)_2 u, ..., (u)_d u]."""
    u = np.asarray(u, dtype=np.float64)
    return np.outer(u, u).reshape(-1, order="F")


def flatten_rows(U) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    return np.einsum("ni,nj->nij", U, U).reshape(U.shape[0], -1)


def vec(M) -> np.ndarray:
    """Column-stacked vec(M), the order that pairs with ``flatten``."""
    return np.asarray(M, dtype=np.float64).reshape(-1, order="F")


def check_query_matrix(M, d: int) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (d, d):
        raise DimensionMismatch(f"query matrix has shape {M.shape}, expected ({d}, {d})")
    norm = float(np.linalg.norm(M))
    if norm > 1.0 + FROBENIUS_TOL:
        raise NormBoundError(f"query matrix needs ||M||_F <= 1, got {norm:.6g}")
    return M


class CandidateSet:
    """Live index set over [0, n): O(1) membership and delete, vectorised argmax."""

    def __init__(self, n: int):
        self._live = np.ones(int(n), dtype=bool)
        self._size = int(n)

    @property
    def n(self) -> int:
        return self._live.size

    def __len__(self) -> int:
        return self._size

    def __contains__(self, i) -> bool:
        idx = int(i)
        return 0 <= idx < self.n and bool(self._live[idx])

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices().tolist())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self._live)

    @property
    def mask(self) -> np.ndarray:
        view = self._live.view()
        view.setflags(write=False)
        return view

    def delete(self, i) -> None:
        idx = int(i)
        if not 0 <= idx < self.n:
            raise IndexOutOfRange(f"index {i} outside [0, {self.n})")
        if not self._live[idx]:
            raise AbsentIndexError(f"index {idx} is not live")
        self._live[idx] = False
        self._size -= 1

    def argmax(self, scores) -> int:
        """Best live score; among live scores within TIE_RTOL of the best, smallest index."""
        if self._size == 0:
            raise EmptyCandidateSet("no live candidates")
        masked = np.where(self._live, np.asarray(scores, dtype=np.float64), -np.inf)
        best = float(masked.max())
        if not np.isfinite(best):
            return int(np.argmax(masked))
        slack = config.TIE_RTOL * max(1.0, abs(best))
        return int(np.flatnonzero(masked >= best - slack)[0])


class QfsVariant(str, Enum):
    FLAT = "flat"
    COLUMNS = "columns"


class QuadraticFormSearch:
    """Near-argmax of u_j^T M u_j over live candidates, backed by IPE.

    ``ipe_factory`` builds each IPE instance (signature of ``IpeState``) and
    exists so tests can inject a deterministic estimator.
    """

    def __init__(
        self,
        ground: GroundVectors,
        eps: float,
        delta: float,
        variant: QfsVariant = QfsVariant.FLAT,
        *,
        norm_bound: Optional[float] = None,
        dim_scale: Optional[float] = None,
        seed: SeedLike = None,
        ipe_factory: Callable[..., IpeState] = IpeState,
    ):
        self.ground = ground
        self.variant = QfsVariant(variant)
        self.eps = float(eps)
        self.delta = float(delta)
        self.candidates = CandidateSet(ground.n)
        U = ground.vectors
        d = ground.d
        step_eps = self.eps if self.variant is QfsVariant.FLAT else self.eps / d

        # ||vec(u u^T)|| = ||u||^2 and every column row (u)_i u is no longer;
        # the bound is raised to eps when needed so that eps < 3D/2 holds
        if norm_bound is None:
            norm_bound = float(np.max(np.sum(U * U, axis=1)))
        self.norm_bound = max(float(norm_bound), step_eps)

        if self.variant is QfsVariant.FLAT:
            self.instances: List[IpeState] = [
                ipe_factory(flatten_rows(U), self.norm_bound, step_eps, self.delta, dim_scale=dim_scale, seed=seed)
            ]
        else:
            seeds = as_seed_sequence(seed).spawn(d)
            self.instances = [
                ipe_factory(U[:, i:i + 1] * U, self.norm_bound, step_eps, self.delta / d, dim_scale=dim_scale, seed=seeds[i])
                for i in range(d)
            ]
        self.queries = 0
        self.deletes = 0
        self.updates = 0
        logger.debug(f"[QFS] init variant={self.variant.value} n={ground.n} d={d} eps={self.eps:.4g} delta={self.delta:.4g}")

    @property
    def n(self) -> int:
        return self.ground.n

    @property
    def d(self) -> int:
        return self.ground.d

    def estimates(self, M) -> np.ndarray:
        """Estimated u_j^T M u_j for every j (live or not)."""
        M = check_query_matrix(M, self.d)
        if self.variant is QfsVariant.FLAT:
            return self.instances[0].query(vec(M))
        # s_j = sum_i w_ij, instance i answering column i of M
        return np.sum([inst.query(M[:, i]) for i, inst in enumerate(self.instances)], axis=0)

    def query(self, M) -> int:
        if len(self.candidates) == 0:
            raise EmptyCandidateSet("quadratic form search has no live candidates")
        scores = self.estimates(M)
        self.queries += 1
        return self.candidates.argmax(scores)

    def delete(self, i: int) -> None:
        self.candidates.delete(i)
        self.deletes += 1

    def update(self, i: int, z) -> None:
        """Replace u_i by z in every IPE instance."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.d,):
            raise DimensionMismatch(f"update vector has shape {z.shape}, expected ({self.d},)")
        if self.variant is QfsVariant.FLAT:
            self.instances[0].update(i, flatten(z))
        else:
            for c, inst in enumerate(self.instances):
                inst.update(i, z[c] * z)
        self.updates += 1


def qfs_init(ground: GroundVectors, eps: float, delta: float, variant=QfsVariant.FLAT, **kwargs) -> QuadraticFormSearch:
    return QuadraticFormSearch(ground, eps, delta, variant, **kwargs)


def qfs_query(st: QuadraticFormSearch, M) -> int:
    return st.query(M)


def qfs_delete(st: QuadraticFormSearch, i: int) -> None:
    st.delete(i)
