import numpy as np
import pytest
from pydantic import ValidationError

from conftest import modular_instance
from core import Cardinality, DiversityFamily, EmbeddingInstance, GroundVectors, Knapsack, Matroid, generate_instance
from errors import AdversaryError, IncompatibleRunError, ParameterError
from maximizers import (
    GREEDY_RATIO,
    KNAPSACK_RATIO,
    MATROID_RATIO,
    BackendKind,
    GreedyConfig,
    GreedySpoiler,
    LshBackend,
    NullAdversary,
    RandomPerturb,
    SketchBackend,
    greedy,
    greedy_batch,
    greedy_fast,
    greedy_lsh,
    greedy_matroid,
    greedy_naive,
    greedy_perturbed,
    knapsack_two_pass,
    perturbed_greedy_bound,
    quadratic_forms,
    semi_online_run,
)
from oracle import brute_force_opt

SEPARATED = [0.9, 0.7, 0.5, 0.3, 0.1, 0.05]


def sketch_cfg(k, **kw):
    kw.setdefault("eps", 0.02)
    kw.setdefault("delta", 0.1)
    kw.setdefault("dim_scale", 0.002)
    kw.setdefault("seed", 3)
    return GreedyConfig(k=k, backend="sketch", **kw)


# ============================================================================
# Cardinality greedy
# ============================================================================

def test_k_zero_is_empty(small_instance):
    run = greedy_naive(small_instance, 0)
    assert run.chain == [] and run.value == 0.0


def test_k_out_of_range(small_instance):
    with pytest.raises(ParameterError):
        greedy_naive(small_instance, small_instance.n + 1)
    with pytest.raises(ParameterError):
        greedy(small_instance, GreedyConfig())


def test_k_equals_n_selects_everything(small_instance):
    run = greedy_naive(small_instance, small_instance.n)
    assert sorted(run.chain) == list(range(small_instance.n))
    assert run.value == pytest.approx(small_instance.evaluate_f(range(small_instance.n)), abs=1e-10)


def test_value_matches_exact_evaluation(small_instance):
    run = greedy_naive(small_instance, 4)
    assert run.value == pytest.approx(small_instance.evaluate_f(run.chain), abs=1e-12)
    assert len(run.timings) == 4


def test_modular_top_k(modular):
    inst = modular([0.3, 0.9, 0.1, 0.7, 0.5])
    run = greedy_naive(inst, 3)
    assert run.chain == [1, 3, 4]
    assert run.value == pytest.approx(brute_force_opt(inst, Cardinality(3)).best_value)


@pytest.mark.parametrize("seed", range(6))
def test_greedy_ratio_against_brute_force(seed):
    inst = generate_instance(10, 3, lambda_scale=0.8, base="dense", seed=seed)
    for k in (1, 3, 5):
        opt = brute_force_opt(inst, Cardinality(k)).best_value
        assert greedy_naive(inst, k).value >= GREEDY_RATIO * opt - 1e-9


@pytest.mark.parametrize("n, d, block", [(10, 4, None), (13, 4, None), (9, 1, None), (17, 3, 5)])
def test_batch_matches_naive(n, d, block):
    inst = generate_instance(n, d, seed=n + d)
    k = min(n, 6)
    naive = greedy_naive(inst, k)
    batch = greedy_batch(inst, k, block)
    assert batch.chain == naive.chain
    assert batch.value == pytest.approx(naive.value, abs=1e-12)


def test_dispatch_by_backend(small_instance):
    run = greedy(small_instance, GreedyConfig(k=3, backend=BackendKind.BATCH))
    assert run.stats["label"] == "batch"
    assert run.chain == greedy_naive(small_instance, 3).chain


def test_fast_matches_naive_on_separated_gains():
    inst = modular_instance(SEPARATED)
    run = greedy_fast(inst, sketch_cfg(3))
    assert run.chain == [0, 1, 2]
    assert run.stats["backend"] == "sketch-flat"
    assert run.stats["oracle_error"] == pytest.approx(0.02 * inst.oracle.frobenius_bound)
    assert run.value == pytest.approx(0.9 + 0.7 + 0.5)


def test_fast_columns_matches_naive_on_separated_gains():
    inst = modular_instance(SEPARATED[:4], d=4)
    run = greedy_fast(inst, sketch_cfg(2, variant="columns", dim_scale=0.0005))
    assert run.chain == [0, 1]


def greedy_margin(inst, k):
    """Smallest gap between the best and second best live gain along the naive chain."""
    chain = greedy_naive(inst, k).chain
    tracker = inst.oracle.tracker(inst.ground)
    live = list(range(inst.n))
    margin = np.inf
    for j in chain:
        gains = np.sort(quadratic_forms(inst.ground.vectors[live], tracker.current))
        if gains.size > 1:
            margin = min(margin, gains[-1] - gains[-2])
        tracker.add(j, inst.ground)
        live.remove(j)
    return margin


def test_tiny_eps_fast_matches_naive_over_seeds():
    checked = 0
    for seed in range(1000):
        inst = generate_instance(6, 2, seed=seed)
        if greedy_margin(inst, 2) < 0.05 * inst.oracle.frobenius_bound:
            continue
        run = greedy_fast(inst, sketch_cfg(2, eps=0.001, dim_scale=2e-5, seed=seed))
        assert run.chain == greedy_naive(inst, 2).chain, f"seed {seed}"
        checked += 1
        if checked == 20:
            break
    assert checked == 20


def test_fast_respects_perturbed_greedy_bound():
    inst = generate_instance(12, 3, lambda_scale=0.5, seed=21)
    cfg = sketch_cfg(4, eps=0.05, dim_scale=0.005)
    run = greedy_fast(inst, cfg)
    opt = brute_force_opt(inst, Cardinality(4)).best_value
    assert run.value >= perturbed_greedy_bound(opt, 4, run.stats["oracle_error"]) - 1e-9


@pytest.mark.parametrize("mode", ["adversarial", "random"])
@pytest.mark.parametrize("seed", range(4))
def test_perturbed_meets_error_bound(mode, seed):
    inst = generate_instance(10, 3, lambda_scale=0.6, seed=100 + seed)
    cfg = GreedyConfig(k=4, eps=0.05, backend="perturbed", perturbation=mode, seed=seed)
    run = greedy_perturbed(inst, cfg)
    opt = brute_force_opt(inst, Cardinality(4)).best_value
    assert run.value >= perturbed_greedy_bound(opt, 4, 0.05) - 1e-9


def test_adversarial_perturbation_avoids_true_best(modular):
    inst = modular([0.5, 0.49, 0.1])
    run = greedy_perturbed(inst, GreedyConfig(k=1, eps=0.05, backend="perturbed"))
    assert run.chain == [1]


def test_lsh_falls_back_to_exact_scan():
    inst = modular_instance(SEPARATED)
    cfg = GreedyConfig(k=3, backend="lsh", c=0.99, tau=0.95, delta=0.1, seed=1)
    run = greedy_lsh(inst, cfg)
    assert run.chain == greedy_naive(inst, 3).chain
    assert run.stats["fallbacks"] == 3


def test_lsh_ratio_on_planted_instances():
    # d = 4 gives H = 2, so every weight >= 0.8 keeps the top scaled gain >= tau
    rng = np.random.default_rng(17)
    bound = 0.9 * GREEDY_RATIO
    good = 0
    fallbacks = 0
    for t in range(100):
        inst = modular_instance(rng.uniform(0.8, 1.0, size=8), d=4)
        run = greedy_lsh(inst, GreedyConfig(k=3, backend="lsh", c=0.9, tau=0.4, delta=0.1, seed=t))
        opt = brute_force_opt(inst, Cardinality(3)).best_value
        good += int(run.value >= bound * opt - 1e-9)
        fallbacks += run.stats["fallbacks"]
    assert good >= 95
    assert fallbacks <= 5


def test_driver_backend_mismatch(small_instance):
    with pytest.raises(IncompatibleRunError):
        greedy_fast(small_instance, GreedyConfig(k=2))
    with pytest.raises(IncompatibleRunError):
        greedy_lsh(small_instance, GreedyConfig(k=2, backend="sketch"))


def test_config_validation():
    with pytest.raises(ValidationError):
        GreedyConfig(eps=0.0)
    with pytest.raises(ValidationError):
        GreedyConfig(delta=1.0)
    with pytest.raises(ValidationError):
        GreedyConfig(c=1.0)
    with pytest.raises(ValidationError):
        GreedyConfig(perturbation="gentle")
    cfg = GreedyConfig(backend="sketch")
    assert cfg.backend is BackendKind.SKETCH
    with pytest.raises(ValidationError):
        cfg.k = 3


# ============================================================================
# Matroid
# ============================================================================

@pytest.mark.parametrize("seed", range(4))
def test_matroid_half_ratio(seed):
    inst = generate_instance(9, 3, lambda_scale=0.7, seed=200 + seed)
    matroid = Matroid.partition([[0, 1, 2], [3, 4, 5], [6, 7, 8]], [1, 2, 1])
    run = greedy_matroid(inst, matroid, GreedyConfig())
    assert matroid.feasible(run.chain)
    assert len(run.chain) == matroid.rank
    opt = brute_force_opt(inst, matroid).best_value
    assert run.value >= MATROID_RATIO * opt - 1e-9


def test_uniform_matroid_is_cardinality_greedy(small_instance):
    run = greedy_matroid(small_instance, Matroid.uniform(small_instance.n, 4), GreedyConfig())
    assert run.chain == greedy_naive(small_instance, 4).chain
    assert run.stats["rank"] == 4 and not run.stats["ended_early"]


def test_matroid_ends_early_when_everything_is_dependent(small_instance):
    matroid = Matroid(lambda S: len(S) <= 1, rank=3)
    run = greedy_matroid(small_instance, matroid, GreedyConfig())
    assert len(run.chain) == 1
    assert run.stats["ended_early"]
    assert run.stats["pruned"] == small_instance.n - 1


# ============================================================================
# Knapsack
# ============================================================================

def test_unit_weights_reduce_to_cardinality(small_instance):
    run = knapsack_two_pass(small_instance, np.ones(small_instance.n), 3.0, GreedyConfig())
    assert run.chain == greedy_naive(small_instance, 3).chain
    assert run.stats["chosen_pass"] == "benefit"
    assert run.stats["uniform_value"] == pytest.approx(run.stats["benefit_value"])


@pytest.mark.parametrize("seed", range(5))
def test_knapsack_ratio(seed):
    inst = generate_instance(8, 3, lambda_scale=0.5, seed=300 + seed)
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=8)
    budget = 2.5
    run = knapsack_two_pass(inst, weights, budget, GreedyConfig())
    assert Knapsack(weights, budget).feasible(run.chain)
    opt = brute_force_opt(inst, Knapsack(weights, budget)).best_value
    assert run.value >= KNAPSACK_RATIO * opt - 1e-9
    assert run.value == pytest.approx(max(run.stats["uniform_value"], run.stats["benefit_value"]))


def test_knapsack_nothing_fits(small_instance):
    run = knapsack_two_pass(small_instance, np.ones(small_instance.n), 0.5, GreedyConfig())
    assert run.chain == [] and run.value == 0.0
    assert run.stats["rejected"] == small_instance.n


def test_knapsack_weight_count_must_match(small_instance):
    with pytest.raises(ParameterError):
        knapsack_two_pass(small_instance, np.ones(3), 1.0, GreedyConfig())


def test_knapsack_prefers_cheap_dense_items(modular):
    # one heavy item worth 1.0 versus three light items worth 0.5 each
    inst = modular([1.0, 0.5, 0.5, 0.5])
    run = knapsack_two_pass(inst, [3.0, 1.0, 1.0, 1.0], 3.0, GreedyConfig())
    assert sorted(run.chain) == [1, 2, 3]
    assert run.stats["chosen_pass"] == "benefit"


# ============================================================================
# Semi-online
# ============================================================================

def test_null_adversary_matches_fast_run():
    inst = modular_instance(SEPARATED)
    cfg = sketch_cfg(3)
    online = semi_online_run(inst, cfg, NullAdversary())
    offline = greedy_fast(inst, cfg)
    assert online.chain == offline.chain
    assert online.gains == offline.gains
    assert online.stats["moves"] == 0


def test_zeroed_vector_estimate_is_near_zero():
    inst = modular_instance(SEPARATED)
    H = inst.oracle.frobenius_bound
    backend = SketchBackend(inst.ground, H, 0.02, 0.05, dim_scale=0.01, seed=4)
    backend.update(0, np.zeros(inst.d))
    A = inst.oracle.evaluate([])
    assert abs(backend.estimates(A)[0]) <= 0.02 * H
    assert backend.select(A) == 1


def test_adversary_may_not_touch_selected():
    class Meddler:
        def __call__(self, view):
            if view.chain:
                return view.chain[0], np.zeros(view.instance.d)
            return None

    with pytest.raises(AdversaryError):
        semi_online_run(generate_instance(8, 3, seed=5), GreedyConfig(k=3), Meddler())


def test_spoiler_never_helps_on_modular_instances():
    inst = modular_instance(SEPARATED)
    null = semi_online_run(inst, GreedyConfig(k=3), NullAdversary())
    spoiled = semi_online_run(inst, GreedyConfig(k=3), GreedySpoiler(0.5))
    assert spoiled.value <= null.value + 1e-12
    assert spoiled.stats["moves"] == 3
    final = spoiled.stats["final_instance"]
    assert final.value(spoiled.chain) == pytest.approx(spoiled.value)


def test_spoiler_rarely_helps_on_diverse_instances():
    no_gain = 0
    for seed in range(50):
        inst = generate_instance(10, 3, lambda_scale=0.7, seed=300 + seed)
        null = semi_online_run(inst, GreedyConfig(k=3), NullAdversary())
        spoiled = semi_online_run(inst, GreedyConfig(k=3), GreedySpoiler(0.5))
        no_gain += int(spoiled.value <= null.value + 1e-12)
    assert no_gain >= 45


def test_sketch_backend_accepts_moves_up_to_the_declared_bound():
    U = np.zeros((6, 6))
    for i, w in enumerate(SEPARATED):
        U[i, i] = 0.5 * np.sqrt(w)
    ground = GroundVectors(U, 1.0)
    inst = EmbeddingInstance(ground, DiversityFamily(ground, np.eye(6), 0.0))
    z = np.zeros(6)
    z[5] = 0.95

    class Grow:
        def __call__(self, view):
            return (5, z) if view.step == 0 else None

    run = semi_online_run(inst, sketch_cfg(3, dim_scale=0.01), Grow())
    assert run.stats["moves"] == 1
    assert 5 in run.chain
    final = run.stats["final_instance"]
    np.testing.assert_array_equal(final.ground.vectors[5], z)
    assert final.value(run.chain) == pytest.approx(run.value)


def test_random_perturb_keeps_norms():
    inst = generate_instance(12, 4, seed=6)
    run = semi_online_run(inst, GreedyConfig(k=5), RandomPerturb(sigma=0.3, seed=1))
    final = run.stats["final_instance"]
    assert np.all(final.ground.norms() <= inst.ground.norms() + 1e-12)
    assert run.stats["adversary"] == "RandomPerturb"


def test_online_rejects_non_updatable_backends(small_instance):
    for backend in ("lsh", "perturbed"):
        with pytest.raises(IncompatibleRunError):
            semi_online_run(small_instance, GreedyConfig(k=2, backend=backend), NullAdversary())
    lsh = LshBackend(modular_instance(SEPARATED).ground, 1.0, 0.9, 0.5, 0.1, seed=0)
    with pytest.raises(IncompatibleRunError):
        lsh.update(0, np.zeros(6))
