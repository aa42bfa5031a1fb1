"""
Dynamic inner product estimation on top of ADE.

Points x_i (||x_i|| <= D) are scaled by 1/D and lifted with Q; a query q
(||q|| <= 1) is lifted with P. Both lifts are unit vectors and
<P(q), Q(x/D)> = <q, x>/D, so the lifted distance d_i satisfies
d_i^2 = 2 - 2<q, x_i>/D and each inner product is recovered as

    w_i = D * (1 - d_i^2 / 2).

Running the ADE with eps' = 2 eps / (3D) keeps |w_i - <q, x_i>| <= eps.
"""

import logging
import math
from typing import Optional

import numpy as np

from errors import DimensionMismatch, IndexOutOfRange, NormBoundError, ParameterError
from sketch_ade import AdeParams, SeedLike, SketchEnsemble, check_open_unit

logger = logging.getLogger(__name__)

LIFT_TOL = 1e-12


def _padding(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=-1)
    if np.any(sq > 1.0 + LIFT_TOL):
        raise NormBoundError(f"lift needs ||x|| <= 1, got {math.sqrt(float(np.max(sq))):.6g}")
    return np.sqrt(np.clip(1.0 - sq, 0.0, None))


def lift_p(b) -> np.ndarray:
    """[b, sqrt(1 - ||b||^2), 0]; works row-wise on 2-D input."""
    b = np.asarray(b, dtype=np.float64)
    pad = _padding(b)[..., None]
    return np.concatenate([b, pad, np.zeros_like(pad)], axis=-1)


def lift_q(a) -> np.ndarray:
    """[a, 0, sqrt(1 - ||a||^2)]; works row-wise on 2-D input."""
    a = np.asarray(a, dtype=np.float64)
    pad = _padding(a)[..., None]
    return np.concatenate([a, np.zeros_like(pad), pad], axis=-1)


def distances_to_inner_products(distances, norm_bound: float) -> np.ndarray:
    distances = np.asarray(distances, dtype=np.float64)
    return norm_bound * (1.0 - 0.5 * distances ** 2)


class IpeState:
    def __init__(
        self,
        points,
        norm_bound: float,
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
        D = float(norm_bound)
        if not (math.isfinite(D) and D > 0):
            raise ParameterError(f"norm bound D must be positive, got {norm_bound}")
        self._check_norms(X, D)

        eps = float(eps)
        if not 0.0 < eps < 1.5 * D:
            raise ParameterError(f"eps must lie in (0, 3D/2) = (0, {1.5 * D:.6g}), got {eps}")
        self.eps = eps
        self.delta = check_open_unit("delta", delta)
        self.norm_bound = D
        self.eps_prime = 2.0 * eps / (3.0 * D)

        # error budget: D/2 (2e' + e'^2) <= (3/2) D e' <= eps
        budget = 0.5 * D * (2 * self.eps_prime + self.eps_prime ** 2)
        assert budget <= 1.5 * D * self.eps_prime * (1 + 1e-12) <= eps * (1 + 1e-12), "IPE error budget"

        self.ade = SketchEnsemble(
            lift_q(X / D), self.eps_prime, self.delta, params=params, dim_scale=dim_scale, seed=seed
        )
        logger.debug(f"[IPE] init n={X.shape[0]} d={X.shape[1]} D={D:.4g} eps={eps:.4g} eps'={self.eps_prime:.4g}")

    @staticmethod
    def _check_norms(X: np.ndarray, D: float) -> None:
        norms = np.linalg.norm(X, axis=-1)
        if norms.size and float(norms.max()) > D * (1 + 1e-12):
            worst = int(np.argmax(norms))
            raise NormBoundError(f"||x_{worst}|| = {norms.max():.6g} exceeds D = {D:.6g}")

    @property
    def n(self) -> int:
        return self.ade.n

    @property
    def d(self) -> int:
        return self.ade.d - 2

    def update(self, i: int, z) -> None:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.d,):
            raise DimensionMismatch(f"update vector has shape {z.shape}, expected ({self.d},)")
        if not 0 <= int(i) < self.n:
            raise IndexOutOfRange(f"index {i} outside [0, {self.n})")
        self._check_norms(z[None, :], self.norm_bound)
        self.ade.update(i, lift_q(z / self.norm_bound))

    def query(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.d,):
            raise DimensionMismatch(f"query has shape {q.shape}, expected ({self.d},)")
        if float(np.linalg.norm(q)) > 1.0 + LIFT_TOL:
            raise NormBoundError(f"query needs ||q|| <= 1, got {np.linalg.norm(q):.6g}")
        return distances_to_inner_products(self.ade.query(lift_p(q)), self.norm_bound)


def ipe_init(points, norm_bound: float, eps: float, delta: float, **kwargs) -> IpeState:
    return IpeState(points, norm_bound, eps, delta, **kwargs)


def ipe_update(st: IpeState, i: int, z) -> None:
    st.update(i, z)


def ipe_query(st: IpeState, q) -> np.ndarray:
    return st.query(q)
