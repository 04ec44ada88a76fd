import math

import numpy as np
import pytest

from gapfill.errors import GapFillError
from gapfill.evo import (
    EvoConfig,
    _add_blend,
    _drop_node,
    crossover,
    evaluate_fitness,
    initial_population,
    mutate,
    random_genome,
    run_search,
    trace_to_csv,
)
from gapfill.pipeline import MAX_NODES, is_valid, single_node
from gapfill.series import TimeSeries

SINE = TimeSeries(np.sin(np.arange(2000) * 0.01))
SMALL = EvoConfig(population_size=8, generations=4, rng_seed=3)


def noisy_sine(seed, n=800):
    rng = np.random.default_rng(seed)
    return TimeSeries(np.sin(np.arange(n) * 0.05) + rng.normal(0, 0.1, n))


def test_config_validation():
    with pytest.raises(ValueError):
        EvoConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        EvoConfig(population_size=3, elitism_count=3)
    with pytest.raises(ValueError):
        EvoConfig(tournament_size=1)


def test_perfect_genome_has_near_zero_fitness():
    assert evaluate_fitness(single_node("ridge", alpha=1e-10), SINE, 100, EvoConfig()) < 1e-6


def test_infeasible_genome_scores_inf():
    short = TimeSeries(np.sin(np.arange(60) * 0.1))
    assert math.isinf(evaluate_fitness(single_node("ridge"), short, 100, EvoConfig()))


def test_fitness_is_deterministic():
    s = noisy_sine(0)
    a = evaluate_fitness(single_node("lasso"), s, 20, EvoConfig(rng_seed=5))
    b = evaluate_fitness(single_node("lasso"), s, 20, EvoConfig(rng_seed=5))
    assert a == b


def test_mutation_arity_and_drop_rules():
    g = single_node("ridge")
    assert _drop_node(g, np.random.default_rng(0)) is g
    assert not is_valid(_add_blend(g, np.random.default_rng(0)))
    assert is_valid(mutate(g, np.random.default_rng(0)))


def test_random_variation_closure():
    rng = np.random.default_rng(123)
    pool = [random_genome(rng, int(rng.integers(1, 6))) for _ in range(50)]
    for i in range(1000):
        a = pool[int(rng.integers(len(pool)))]
        b = pool[int(rng.integers(len(pool)))]
        child = mutate(a, rng) if i % 2 else crossover(a, b, rng)
        assert is_valid(child, MAX_NODES)
        assert len(child) <= MAX_NODES
        pool[i % len(pool)] = child


def test_self_crossover_is_identity():
    rng = np.random.default_rng(9)
    for _ in range(20):
        x = random_genome(rng, 4)
        assert crossover(x, x, rng).canonical() == x.canonical()


def test_initial_population_layout():
    pop = initial_population(EvoConfig(population_size=10))
    assert [p.nodes[0].operation for p in pop[:3]] == ["ridge", "lasso", "knn"]
    assert all(len(p) == 1 for p in pop[:5])
    assert all(2 <= len(p) <= 4 for p in pop[5:])
    assert all(is_valid(p) for p in pop)


def test_zero_generations():
    res = run_search(noisy_sine(1), 20, EvoConfig(population_size=6, generations=0))
    assert res.trace == []
    assert res.best_fitness == min(
        evaluate_fitness(g, noisy_sine(1), 20, EvoConfig()) for g in initial_population(
            EvoConfig(population_size=6, generations=0)))


@pytest.mark.parametrize("seed", range(3))
def test_trace_non_increasing_and_fresh(seed):
    s = noisy_sine(seed)
    cfg = EvoConfig(population_size=8, generations=6, rng_seed=seed)
    res = run_search(s, 20, cfg, threads=1)
    assert len(res.trace) == 6
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.best_fitness == res.trace[-1]
    assert evaluate_fitness(res.best, s, 20, cfg) == res.best_fitness


def test_thread_count_does_not_change_result():
    s = noisy_sine(4)
    a = run_search(s, 20, SMALL, threads=1)
    b = run_search(s, 20, SMALL, threads=4)
    assert a.best.canonical() == b.best.canonical()
    assert a.trace == b.trace


def test_search_on_noiseless_sine():
    cfg = EvoConfig(population_size=10, generations=5, rng_seed=0)
    res = run_search(SINE, 100, cfg, threads=1)
    initial = min(evaluate_fitness(g, SINE, 100, cfg) for g in initial_population(cfg))
    ridge = evaluate_fitness(single_node("ridge"), SINE, 100, cfg)
    # recorded run: final 3.5e-16, initial best 1.1e-4, single ridge 1.1e-4
    assert res.best_fitness <= initial
    assert res.best_fitness <= ridge


def test_no_feasible_pipeline():
    with pytest.raises(GapFillError, match="no feasible pipeline"):
        run_search(TimeSeries(np.arange(30.0)), 100, EvoConfig(population_size=4, generations=1))


def test_trace_csv():
    assert trace_to_csv([0.5, 0.25]) == "generation,best_fitness\n1,0.5\n2,0.25\n"
