import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from errors import DimensionMismatch, IndexOutOfRange, ParameterError
from sketch_ade import AdeParams, SketchEnsemble, ade_init, ade_query, ade_update

SCALE = 0.1


def unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def relative_errors(est, X, q):
    true = np.linalg.norm(X - q, axis=1)
    mask = true > 0
    return np.abs(est[mask] - true[mask]) / true[mask]


def test_params_follow_sizing_rule():
    p = AdeParams.for_accuracy(100, 0.2, 0.05, dim_scale=1.0)
    r = math.ceil(10 * math.log(2 * 100 / 0.05))
    L = max(32, 4 * r)
    assert (p.sample, p.sketches) == (r, L)
    assert p.dim == math.ceil(8 * 0.2 ** -2 * math.log(8 * 100 * L / 0.05))


def test_dim_scale_shrinks_only_projection_dimension():
    full = AdeParams.for_accuracy(50, 0.1, 0.1, dim_scale=1.0)
    small = AdeParams.for_accuracy(50, 0.1, 0.1, dim_scale=0.01)
    assert small.sketches == full.sketches and small.sample == full.sample
    assert small.dim < full.dim


@pytest.mark.parametrize("eps, delta", [(0.0, 0.1), (1.0, 0.1), (0.1, 0.0), (0.1, 1.5)])
def test_init_rejects_out_of_range_parameters(eps, delta):
    with pytest.raises(ParameterError):
        ade_init(np.ones((2, 2)), eps, delta)


def test_init_rejects_bad_dim_scale():
    with pytest.raises(ParameterError):
        AdeParams.for_accuracy(10, 0.1, 0.1, dim_scale=0.0)


def test_zero_point_sketches_to_zero():
    ens = ade_init(np.zeros((1, 5)), 0.2, 0.1, dim_scale=SCALE, seed=0)
    assert not np.any(ens.sketched)


def test_identical_points_have_identical_sketches(rng):
    x = rng.standard_normal(6)
    ens = ade_init(np.vstack([x, x, rng.standard_normal(6)]), 0.2, 0.1, dim_scale=SCALE, seed=1)
    np.testing.assert_array_equal(ens.sketched[:, 0], ens.sketched[:, 1])


def test_query_equal_to_point_is_exactly_zero(rng):
    X = rng.standard_normal((8, 4))
    ens = ade_init(X, 0.2, 0.1, dim_scale=SCALE, seed=2)
    est = ade_query(ens, X[3].copy())
    assert est[3] == 0.0
    assert np.all(est[np.arange(8) != 3] > 0)


def test_update_with_same_point_is_a_no_op(rng):
    X = rng.standard_normal((5, 3))
    ens = ade_init(X, 0.2, 0.1, dim_scale=SCALE, seed=3)
    before = ens.sketched.copy()
    ade_update(ens, 2, X[2].copy())
    np.testing.assert_array_equal(ens.sketched, before)
    assert ens.updates == 0


def test_update_then_query_tracks_new_point(rng):
    X = unit_rows(rng, 20, 8)
    ens = ade_init(X, 0.2, 0.05, dim_scale=SCALE, seed=4)
    z = 0.5 * unit_rows(rng, 1, 8)[0]
    ade_update(ens, 7, z)
    q = unit_rows(rng, 1, 8)[0]
    est = ade_query(ens, q)
    true = np.linalg.norm(z - q)
    assert (1 - 0.2) * true <= est[7] <= (1 + 0.2) * true
    assert ens.max_drift() < 1e-12


def test_update_to_future_query_gives_zero(rng):
    X = rng.standard_normal((4, 3))
    ens = ade_init(X, 0.2, 0.1, dim_scale=SCALE, seed=5)
    q = rng.standard_normal(3)
    ade_update(ens, 1, q)
    assert ade_query(ens, q)[1] == 0.0


def test_antipodal_pair(rng):
    x = unit_rows(rng, 1, 10)[0]
    ens = ade_init(np.vstack([x, -x]), 0.2, 0.05, dim_scale=SCALE, seed=6)
    est = ade_query(ens, x)
    assert est[0] == 0.0
    assert 2 * (1 - 0.2) <= est[1] <= 2 * (1 + 0.2)


def test_sketches_are_linear(rng):
    X = rng.standard_normal((3, 6))
    ens = ade_init(X, 0.3, 0.1, dim_scale=SCALE, seed=7)
    q = rng.standard_normal(6)
    for l in range(0, ens.params.sketches, 17):
        P = ens.projection(l)
        np.testing.assert_allclose(P @ (X[0] - q), ens.sketched[l, 0] - P @ q, rtol=0, atol=1e-12)


def test_projection_is_unbiased_in_squared_norm(rng):
    x, q = rng.standard_normal(8), rng.standard_normal(8)
    ens = SketchEnsemble(x[None, :], 0.2, 0.1, params=AdeParams(sketches=1000, sample=1, dim=20), seed=8)
    sq = [float(np.sum((ens.sketched[l, 0] - ens.projection(l) @ q) ** 2)) for l in range(1000)]
    assert np.mean(sq) == pytest.approx(float(np.sum((x - q) ** 2)), rel=0.05)


def test_projection_regenerates_identically_without_cache(rng, monkeypatch):
    from config import config

    monkeypatch.setattr(config, "SKETCH_CACHE_LIMIT", 0)
    ens = ade_init(rng.standard_normal((3, 4)), 0.3, 0.1, dim_scale=SCALE, seed=9)
    assert ens._cache is None
    np.testing.assert_array_equal(ens.projection(5), ens.projection(5))
    assert ens.max_drift() < 1e-12


def test_same_seed_same_answers(rng):
    X = rng.standard_normal((10, 5))
    q = rng.standard_normal(5)
    a = ade_init(X, 0.2, 0.1, dim_scale=SCALE, seed=10)
    b = ade_init(X, 0.2, 0.1, dim_scale=SCALE, seed=10)
    for _ in range(3):
        np.testing.assert_array_equal(a.query(q), b.query(q))


def test_errors(rng):
    ens = ade_init(rng.standard_normal((4, 3)), 0.2, 0.1, dim_scale=SCALE, seed=11)
    with pytest.raises(DimensionMismatch):
        ens.query(np.ones(4))
    with pytest.raises(IndexOutOfRange):
        ens.update(4, np.ones(3))
    with pytest.raises(DimensionMismatch):
        ens.update(0, np.ones(2))


def test_concurrent_queries(rng):
    X = unit_rows(rng, 30, 6)
    ens = ade_init(X, 0.2, 0.05, dim_scale=SCALE, seed=12)
    queries = unit_rows(rng, 16, 6)
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(ens.query, queries))
    for q, est in zip(queries, results):
        assert relative_errors(est, X, q).max() <= 0.2


def _battery(builds, queries, seed):
    rng = np.random.default_rng(seed)
    X = unit_rows(rng, 100, 16)
    Q = unit_rows(rng, queries, 16)
    bad = 0
    for b in range(builds):
        ens = ade_init(X, 0.2, 0.05, dim_scale=SCALE, seed=1000 + b)
        if any(relative_errors(ens.query(q), X, q).max() > 0.2 for q in Q):
            bad += 1
    return bad / builds


def test_joint_guarantee_on_fixed_queries():
    assert _battery(builds=10, queries=40, seed=13) <= 0.05 + 0.03


@pytest.mark.slow
def test_joint_guarantee_full_battery():
    assert _battery(builds=100, queries=200, seed=14) <= 0.05


def test_adaptive_attack_loop():
    rng = np.random.default_rng(15)
    eps = 0.2
    ok = 0
    trials = 10
    for t in range(trials):
        X = unit_rows(rng, 40, 8)
        ens = ade_init(X, eps, 0.05, dim_scale=SCALE, seed=2000 + t)
        worst = 0.0
        for _ in range(50):
            q = unit_rows(rng, 1, 8)[0]
            est = ens.query(q)
            true = np.linalg.norm(ens.points - q, axis=1)
            rel = np.abs(est - true) / np.where(true > 0, true, 1.0)
            worst = max(worst, float(rel.max()))
            i = int(np.argmax(rel))
            ens.update(i, 0.5 * (ens.points[i] + q))
        ok += worst <= 2 * eps
    assert ok >= 0.9 * trials
