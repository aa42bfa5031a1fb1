"""
Adaptive distance estimation (ADE) over a dynamic point set.

The ensemble holds L independent Gaussian random projections Pi_l (m x d,
entries N(0, 1/m)) and the sketches Pi_l x_i of every point. A query draws r
sketch ids with a private random stream, measures ||Pi_l x_i - Pi_l q|| in
each and returns the per-point median, which keeps a (1 +/- eps) guarantee
even when queries depend on earlier answers.

Sizes follow the ensemble rule
    r = ceil(10 ln(2n/delta)),  L = max(32, 4r),  m = ceil(8 eps^-2 ln(8nL/delta))
with m optionally multiplied by ``dim_scale`` (config SKETCH_DIM_SCALE).
"""

import logging
import math
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from config import config
from errors import DimensionMismatch, IndexOutOfRange, ParameterError

logger = logging.getLogger(__name__)

SeedLike = Union[None, int, np.random.SeedSequence]


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def check_open_unit(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ParameterError(f"{name} must lie in (0, 1), got {value}")
    return value


@dataclass(frozen=True)
class AdeParams:
    sketches: int   # L
    sample: int     # r, sketches drawn per query
    dim: int        # m, projection dimension

    @classmethod
    def for_accuracy(cls, n: int, eps: float, delta: float, dim_scale: Optional[float] = None) -> "AdeParams":
        eps = check_open_unit("eps", eps)
        delta = check_open_unit("delta", delta)
        if n < 1:
            raise ParameterError(f"need n >= 1, got {n}")
        sample = math.ceil(10 * math.log(2 * n / delta))
        sketches = max(config.SKETCH_MIN_ENSEMBLE, 4 * sample)
        scale = config.SKETCH_DIM_SCALE if dim_scale is None else float(dim_scale)
        if not scale > 0:
            raise ParameterError(f"dim_scale must be positive, got {scale}")
        dim = math.ceil(scale * 8 * eps ** -2 * math.log(8 * n * sketches / delta))
        return cls(sketches=sketches, sample=sample, dim=max(1, dim))


class SketchEnsemble:
    """L random-projection sketches of n points with median-of-r queries.

    Queries are read-only apart from the private query stream, which is
    guarded by a lock, so they may run concurrently between updates.
    Updates need exclusive access.
    """

    def __init__(
        self,
        points,
        eps: float,
        delta: float,
        *,
        params: Optional[AdeParams] = None,
        dim_scale: Optional[float] = None,
        seed: SeedLike = None,
    ):
        X = np.array(points, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionMismatch(f"points must be an n x d array, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise ParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        self.eps = check_open_unit("eps", eps)
        self.delta = check_open_unit("delta", delta)
        self.params = params if params is not None else AdeParams.for_accuracy(n, eps, delta, dim_scale)

        # build seeds and the query stream are separate children of the root
        build_seq, query_seq = as_seed_sequence(seed).spawn(2)
        self.seeds = build_seq.spawn(self.params.sketches)
        self._query_rng = np.random.default_rng(query_seq)
        self._query_lock = threading.Lock()

        L, m = self.params.sketches, self.params.dim
        self._cache: Optional[Dict[int, np.ndarray]] = {} if L * m * d <= config.SKETCH_CACHE_LIMIT else None

        self.points = X
        self.sketched = np.empty((L, n, m), dtype=np.float64)
        for l in range(L):
            self.sketched[l] = X @ self.projection(l).T

        self.queries = 0
        self.updates = 0
        logger.debug(f"[ADE] init n={n} d={d} L={L} r={self.params.sample} m={m}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def projection(self, l: int) -> np.ndarray:
        """Pi_l, regenerated from its seed unless the ensemble is small enough to cache."""
        if self._cache is not None and l in self._cache:
            return self._cache[l]
        rng = np.random.default_rng(self.seeds[l])
        P = rng.standard_normal((self.params.dim, self.d)) / math.sqrt(self.params.dim)
        if self._cache is not None:
            self._cache[l] = P
        return P

    def update(self, i: int, z) -> None:
        """Replace x_i by z in every sketch."""
        idx = int(i)
        if not 0 <= idx < self.n:
            raise IndexOutOfRange(f"index {i} outside [0, {self.n})")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.d,):
            raise DimensionMismatch(f"update vector has shape {z.shape}, expected ({self.d},)")
        if np.array_equal(z, self.points[idx]):
            return
        self.points[idx] = z
        for l in range(self.params.sketches):
            self.sketched[l, idx] = self.projection(l) @ z
        self.updates += 1

    def draw(self) -> np.ndarray:
        """Fresh sketch ids for one query, sampled with replacement."""
        with self._query_lock:
            return self._query_rng.integers(0, self.params.sketches, size=self.params.sample)

    def query(self, q) -> np.ndarray:
        """Median over r sampled sketches of ||Pi_l x_i - Pi_l q|| for every i."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.d,):
            raise DimensionMismatch(f"query has shape {q.shape}, expected ({self.d},)")

        ids, counts = np.unique(self.draw(), return_counts=True)
        per_sketch = np.empty((ids.size, self.n))
        for row, l in enumerate(ids):
            per_sketch[row] = np.linalg.norm(self.sketched[l] - self.projection(l) @ q, axis=1)
        estimates = np.median(np.repeat(per_sketch, counts, axis=0), axis=0)

        # the multiplicative guarantee is vacuous at zero distance
        estimates[np.all(self.points == q, axis=1)] = 0.0
        self.queries += 1
        return estimates

    def max_drift(self) -> float:
        """Largest |sketched - Pi_l x_i| after re-projecting every point."""
        worst = 0.0
        for l in range(self.params.sketches):
            fresh = self.points @ self.projection(l).T
            worst = max(worst, float(np.abs(fresh - self.sketched[l]).max()))
        return worst


def ade_init(points, eps: float, delta: float, **kwargs) -> SketchEnsemble:
    return SketchEnsemble(points, eps, delta, **kwargs)


def ade_update(ens: SketchEnsemble, i: int, z) -> None:
    ens.update(i, z)


def ade_query(ens: SketchEnsemble, q) -> np.ndarray:
    return ens.query(q)
