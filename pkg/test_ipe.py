import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from errors import DimensionMismatch, IndexOutOfRange, NormBoundError, ParameterError
from ipe import IpeState, distances_to_inner_products, ipe_init, ipe_query, ipe_update, lift_p, lift_q
from oracle import exact_inner_products

SCALE = 0.05

finite = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False, allow_infinity=False)


def ball_rows(rng, n, d, radius=1.0):
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * radius * rng.uniform(0, 1, size=(n, 1))


def unit(rng, d):
    q = rng.standard_normal(d)
    return q / np.linalg.norm(q)


def _shrink(v):
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 1 else v


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_lift_identities(a, b):
    a, b = _shrink(a), _shrink(b)
    P, Q = lift_p(b), lift_q(a)
    assert abs(np.linalg.norm(P) - 1.0) <= 1e-12
    assert abs(np.linalg.norm(Q) - 1.0) <= 1e-12
    assert abs(float(P @ Q) - float(a @ b)) <= 1e-12


def test_lift_rejects_long_vectors():
    with pytest.raises(NormBoundError):
        lift_p(np.array([1.0, 1.0]))


def test_lift_works_row_wise(rng):
    A = ball_rows(rng, 4, 3)
    np.testing.assert_array_equal(lift_q(A)[2], lift_q(A[2]))


def test_unit_point_with_unit_bound_has_no_padding():
    x = np.array([0.0, 1.0])
    np.testing.assert_array_equal(lift_q(x / 1.0), [0.0, 1.0, 0.0, 0.0])


def test_scaled_lift_example():
    st_ = IpeState(np.array([[2.0, 0.0]]), 2.0, 0.5, 0.1, dim_scale=SCALE, seed=0)
    np.testing.assert_allclose(st_.ade.points[0], [1.0, 0.0, 0.0, 0.0])


def test_conversion_identity_with_exact_distances(rng):
    D = 2.5
    X = ball_rows(rng, 50, 6, radius=D)
    q = unit(rng, 6) * 0.7
    dist = np.linalg.norm(lift_q(X / D) - lift_p(q), axis=1)
    np.testing.assert_allclose(distances_to_inner_products(dist, D), X @ q, rtol=0, atol=1e-10)


def test_eps_prime_and_range_checks():
    X = np.eye(3)
    st_ = IpeState(X, 2.0, 0.3, 0.1, dim_scale=SCALE, seed=1)
    assert st_.eps_prime == pytest.approx(2 * 0.3 / (3 * 2.0))
    with pytest.raises(ParameterError):
        IpeState(X, 1.0, 1.5, 0.1)
    with pytest.raises(ParameterError):
        IpeState(X, 0.0, 0.1, 0.1)
    with pytest.raises(NormBoundError):
        IpeState(X * 2, 1.0, 0.1, 0.1)


def test_exact_match_query_returns_norm_bound(rng):
    D = 1.5
    q = unit(rng, 4)
    X = np.vstack([q * D, ball_rows(rng, 5, 4)])
    st_ = ipe_init(X, D, 0.1, 0.1, dim_scale=SCALE, seed=2)
    assert ipe_query(st_, q)[0] == pytest.approx(D, abs=1e-12)


def test_orthogonal_query_estimates_zero(rng):
    eps = 0.1
    x = np.array([1.0, 0.0, 0.0])
    st_ = ipe_init(np.vstack([x, -x]), 1.0, eps, 0.05, dim_scale=SCALE, seed=3)
    w = ipe_query(st_, np.array([0.0, 1.0, 0.0]))
    assert np.all(np.abs(w) <= eps)


def test_update_duplicate_and_zero(rng):
    eps = 0.1
    X = ball_rows(rng, 20, 8)
    st_ = ipe_init(X, 1.0, eps, 0.05, dim_scale=SCALE, seed=4)
    ipe_update(st_, 2, X[1].copy())
    ipe_update(st_, 5, np.zeros(8))
    q = unit(rng, 8)
    w = ipe_query(st_, q)
    target = float(X[1] @ q)
    assert abs(w[1] - target) <= eps
    assert abs(w[2] - target) <= eps
    assert abs(w[5]) <= eps


def test_update_and_query_errors(rng):
    st_ = ipe_init(ball_rows(rng, 4, 3), 1.0, 0.1, 0.1, dim_scale=SCALE, seed=5)
    with pytest.raises(NormBoundError):
        st_.update(0, np.array([2.0, 0.0, 0.0]))
    with pytest.raises(IndexOutOfRange):
        st_.update(9, np.zeros(3))
    with pytest.raises(NormBoundError):
        st_.query(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(DimensionMismatch):
        st_.query(np.zeros(4))


def _battery(builds, n, d, queries, seed, eps=0.1, delta=0.05):
    rng = np.random.default_rng(seed)
    X = ball_rows(rng, n, d)
    Q = np.array([unit(rng, d) for _ in range(queries)])
    bad = 0
    for b in range(builds):
        st_ = ipe_init(X, 1.0, eps, delta, dim_scale=SCALE, seed=10_000 + b)
        if any(np.max(np.abs(st_.query(q) - exact_inner_products(X, q))) > eps for q in Q):
            bad += 1
    return bad / builds


def test_additive_guarantee_small_battery():
    assert _battery(builds=10, n=100, d=16, queries=10, seed=6) <= 0.05 + 0.03


@pytest.mark.slow
def test_additive_guarantee_full_battery():
    assert _battery(builds=100, n=200, d=16, queries=20, seed=7) <= 0.05 + 0.03


def test_random_unit_points_max_error(rng):
    X = np.array([unit(rng, 10) for _ in range(100)])
    st_ = ipe_init(X, 1.0, 0.1, 0.05, dim_scale=SCALE, seed=8)
    for _ in range(5):
        q = unit(rng, 10)
        assert np.max(np.abs(st_.query(q) - X @ q)) <= 0.1
