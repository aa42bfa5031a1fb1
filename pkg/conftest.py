import numpy as np
import pytest

from core import DiversityFamily, EmbeddingInstance, GroundVectors, generate_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance():
    return generate_instance(10, 4, lambda_scale=0.5, seed=7)


@pytest.fixture
def make_instance():
    def _make(n=10, d=4, lambda_scale=0.5, base="identity", seed=0):
        return generate_instance(n, d, lambda_scale=lambda_scale, base=base, seed=seed)

    return _make


def modular_instance(weights, d=None):
    """Orthogonal-ish modular instance: gain of i is weights[i] regardless of S."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    d = d or n
    U = np.zeros((n, d))
    for i, wi in enumerate(w):
        U[i, i % d] = np.sqrt(wi)
    ground = GroundVectors.from_rows(U)
    return EmbeddingInstance(ground, DiversityFamily(ground, np.eye(d), 0.0))


@pytest.fixture
def modular():
    return modular_instance
