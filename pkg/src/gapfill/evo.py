"""Evolutionary search over pipeline structures.

Fitness is the MAE of bi-directional restoration on pseudo-gaps cut out of
the observed data (pseudo-gaps may lengthen existing gaps; the error is
taken only where the truth is known). The mask depends only on ``rng_seed``, so
every genome in a run is scored on the same holdout and fitness is a pure
function of the genome. Variation for offspring ``i`` of generation ``g``
draws from its own stream seeded by ``(rng_seed, g, i)``, which keeps runs
bit-identical however many evaluation threads are used.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gapfill.bidir import (
    GapFillPolicy,
    fit_directional,
    pseudo_gap_mask,
    restore_gaps,
)
from gapfill.errors import GapFillError
from gapfill.lag_models import MODEL_KINDS
from gapfill.pipeline import (
    MAX_NODES,
    OPERATIONS,
    TRANSFORMS,
    DEFAULT_PARAMS,
    FitCache,
    Pipeline,
    PipelineNode,
    is_valid,
    single_node,
)
from gapfill.series import TimeSeries, as_series, scan_gaps

__all__ = [
    "EvoConfig",
    "Individual",
    "SearchResult",
    "evaluate_fitness",
    "mutate",
    "crossover",
    "random_genome",
    "initial_population",
    "run_search",
    "trace_to_csv",
]

logger = logging.getLogger(__name__)

MAX_RETRIES = 20


@dataclass(frozen=True)
class EvoConfig:
    population_size: int = 20
    generations: int = 15
    tournament_size: int = 3
    mutation_rate: float = 0.8
    crossover_rate: float = 0.5
    elitism_count: int = 1
    rng_seed: int = 0
    fitness_holdout_fraction: float = 0.2
    max_nodes: int = MAX_NODES

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.tournament_size < 2:
            raise ValueError("tournament_size must be at least 2")
        for name in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must be below population_size")
        if not 0.0 < self.fitness_holdout_fraction < 1.0:
            raise ValueError("fitness_holdout_fraction must lie in (0, 1)")
        if not 1 <= self.max_nodes <= MAX_NODES:
            raise ValueError(f"max_nodes must lie in [1, {MAX_NODES}]")


@dataclass
class Individual:
    genome: Pipeline
    fitness: float | None = None


@dataclass
class SearchResult:
    best: Pipeline
    best_fitness: float
    trace: list[float] = field(default_factory=list)
    evaluations: int = 0


class _Holdout:
    """Pseudo-gapped copy of a series and the scorer for one search run."""

    def __init__(self, series: TimeSeries, w: int, config: EvoConfig):
        self.series = as_series(series)
        self.w = w
        self.policy = GapFillPolicy.default(w)
        rng = np.random.default_rng(config.rng_seed)
        self.mask = pseudo_gap_mask(
            self.series, config.fitness_holdout_fraction, rng, min_run=w + 1
        )
        vals = self.series.values.copy()
        vals[self.mask] = np.nan
        self.masked = self.series.replace(vals)
        self.gaps = [g for g in scan_gaps(self.masked) if self.mask[g.start:g.stop].any()]
        self.caches = (FitCache(), FitCache())

    def __call__(self, genome: Pipeline) -> float:
        if not self.gaps:
            return math.inf
        try:
            with np.errstate(all="ignore"):
                models = fit_directional(genome, self.masked, self.w, caches=self.caches)
                fills = restore_gaps(self.masked, self.gaps, models, self.policy)
        except (GapFillError, ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("infeasible genome %s: %s", genome.canonical(), exc)
            return math.inf
        filled = self.masked.values.copy()
        for f in fills:
            filled[f.gap.start:f.gap.stop] = f.values
        mae = float(np.abs(filled[self.mask] - self.series.values[self.mask]).mean())
        return mae if math.isfinite(mae) else math.inf


def evaluate_fitness(genome: Pipeline, series: TimeSeries, w: int, config: EvoConfig) -> float:
    """MAE of restoring seeded pseudo-gaps; ``inf`` for infeasible genomes."""
    return _Holdout(series, w, config)(genome)


def _fresh_id(taken: set[str]) -> str:
    k = 0
    while f"n{k}" in taken:
        k += 1
    taken.add(f"n{k}")
    return f"n{k}"


def _random_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == "knn":
        return {"k": int(rng.integers(1, 11))}
    return {"alpha": float(10.0 ** rng.uniform(-3.0, 1.0))}


def _random_model_kind(rng: np.random.Generator) -> str:
    return MODEL_KINDS[int(rng.integers(len(MODEL_KINDS)))]


def _replace_node(genome: Pipeline, node: PipelineNode) -> Pipeline:
    return Pipeline(tuple(node if n.id == node.id else n for n in genome.nodes), genome.root)


def _swap_operation(genome: Pipeline, rng: np.random.Generator) -> Pipeline:
    node = genome.nodes[int(rng.integers(len(genome)))]
    choices = [op for op in OPERATIONS if op != node.operation]
    op = choices[int(rng.integers(len(choices)))]
    params = dict(DEFAULT_PARAMS.get(op, {}))
    return _replace_node(genome, PipelineNode(node.id, op, params, node.parents))


def _perturb(genome: Pipeline, rng: np.random.Generator) -> Pipeline:
    models = [n for n in genome.nodes if n.is_model]
    if not models:
        return genome
    node = models[int(rng.integers(len(models)))]
    params = {**DEFAULT_PARAMS[node.operation], **node.params}
    if node.operation == "knn":
        params["k"] = int(params["k"]) + (1 if rng.random() < 0.5 else -1)
    else:
        factor = rng.uniform(1.0, 3.0)
        params["alpha"] = float(params["alpha"] * factor if rng.random() < 0.5
                                else params["alpha"] / factor)
    return _replace_node(genome, PipelineNode(node.id, node.operation, params, node.parents))


def _add_blend(genome: Pipeline, rng: np.random.Generator) -> Pipeline:
    # the new blend takes the old sink and one other existing prediction node
    others = [n.id for n in genome.nodes if n.id != genome.root and not n.is_transform]
    parents = [genome.root]
    if others:
        parents.append(others[int(rng.integers(len(others)))])
    new_id = _fresh_id(set(genome.ids))
    blend = PipelineNode(new_id, "linear_blend", {}, tuple(parents))
    return Pipeline(genome.nodes + (blend,), new_id)


def _drop_node(genome: Pipeline, rng: np.random.Generator) -> Pipeline:
    candidates = [n for n in genome.nodes if n.id != genome.root]
    if not candidates:
        return genome
    victim = candidates[int(rng.integers(len(candidates)))]
    nodes = []
    for n in genome.nodes:
        if n.id == victim.id:
            continue
        if victim.id in n.parents:
            parents: list[str] = []
            for p in n.parents:
                for q in (victim.parents if p == victim.id else (p,)):
                    if q not in parents:
                        parents.append(q)
            n = PipelineNode(n.id, n.operation, n.params, tuple(parents))
        nodes.append(n)
    return Pipeline(tuple(nodes), genome.root)


_MUTATIONS = (_swap_operation, _perturb, _add_blend, _drop_node)


def mutate(genome: Pipeline, rng: np.random.Generator, max_nodes: int = MAX_NODES) -> Pipeline:
    """Apply one random structural or hyperparameter change.

    Operators whose result breaks a pipeline rule are re-drawn; after
    ``MAX_RETRIES`` failures the genome is returned unchanged.
    """
    for _ in range(MAX_RETRIES):
        op = _MUTATIONS[int(rng.integers(len(_MUTATIONS)))]
        child = op(genome, rng)
        if child is not genome and is_valid(child, max_nodes):
            return child
    return genome


def _prune(nodes: list[PipelineNode], root: str) -> Pipeline:
    by_id = {n.id: n for n in nodes}
    keep = {root}
    stack = [root]
    while stack:
        for p in by_id[stack.pop()].parents:
            if p not in keep:
                keep.add(p)
                stack.append(p)
    return Pipeline(tuple(n for n in nodes if n.id in keep), root)


def _graft(a: Pipeline, b: Pipeline, cut: str, donor: str) -> Pipeline:
    """Replace the subtree of ``a`` rooted at ``cut`` by ``b``'s at ``donor``."""
    taken = set(a.ids)
    rename = {nid: _fresh_id(taken) for nid in sorted(b.upstream(donor))}
    grafted = [
        PipelineNode(rename[n.id], n.operation, n.params, tuple(rename[p] for p in n.parents))
        for n in b.nodes if n.id in rename
    ]
    nodes = []
    for n in a.nodes:
        if cut in n.parents:
            parents: list[str] = []
            for p in n.parents:
                q = rename[donor] if p == cut else p
                if q not in parents:
                    parents.append(q)
            n = PipelineNode(n.id, n.operation, n.params, tuple(parents))
        nodes.append(n)
    return _prune(nodes + grafted, a.root)


def crossover(a: Pipeline, b: Pipeline, rng: np.random.Generator,
              max_nodes: int = MAX_NODES) -> Pipeline:
    """Subtree exchange: a random non-sink subtree of ``a`` is replaced by a
    random subtree of ``b``. Falls back to ``a`` when no valid child is found.
    """
    if a.canonical() == b.canonical():
        return a
    cuts = [n.id for n in a.nodes if n.id != a.root]
    if not cuts:
        return a
    for _ in range(MAX_RETRIES):
        cut = cuts[int(rng.integers(len(cuts)))]
        donor = b.nodes[int(rng.integers(len(b)))].id
        child = _graft(a, b, cut, donor)
        if is_valid(child, max_nodes):
            return child
    return a


def random_genome(rng: np.random.Generator, size: int) -> Pipeline:
    """Grow a random pipeline of exactly ``size`` nodes from one model node."""
    taken: set[str] = set()
    first = _fresh_id(taken)
    kind = _random_model_kind(rng)
    nodes = {first: PipelineNode(first, kind, _random_params(kind, rng))}
    root = first
    while len(nodes) < size:
        room = size - len(nodes)
        options = ["stack"]
        bare = [n.id for n in nodes.values() if n.is_model and not n.parents]
        if bare:
            options.append("transform")
        if room >= 2:
            options.append("blend")
        choice = options[int(rng.integers(len(options)))]
        if choice == "stack":
            nid = _fresh_id(taken)
            kind = _random_model_kind(rng)
            nodes[nid] = PipelineNode(nid, kind, _random_params(kind, rng), (root,))
            root = nid
        elif choice == "transform":
            target = nodes[bare[int(rng.integers(len(bare)))]]
            nid = _fresh_id(taken)
            op = TRANSFORMS[int(rng.integers(len(TRANSFORMS)))]
            nodes[nid] = PipelineNode(nid, op)
            nodes[target.id] = PipelineNode(target.id, target.operation, target.params, (nid,))
        else:
            other = _fresh_id(taken)
            kind = _random_model_kind(rng)
            nodes[other] = PipelineNode(other, kind, _random_params(kind, rng))
            nid = _fresh_id(taken)
            nodes[nid] = PipelineNode(nid, "linear_blend", {}, (root, other))
            root = nid
    return Pipeline(tuple(nodes.values()), root)


def initial_population(config: EvoConfig) -> list[Pipeline]:
    """Half single-node genomes cycling through the model kinds, half
    random 2-4 node chains."""
    population = []
    n_single = config.population_size // 2
    for i in range(config.population_size):
        rng = np.random.default_rng([config.rng_seed, 0, i])
        if i < n_single:
            kind = MODEL_KINDS[i % len(MODEL_KINDS)]
            params = {} if i < len(MODEL_KINDS) else _random_params(kind, rng)
            population.append(single_node(kind, **params))
        else:
            size = int(rng.integers(2, min(4, config.max_nodes) + 1)) if config.max_nodes >= 2 else 1
            population.append(random_genome(rng, size))
    return population


def _tournament(fitness: list[float], size: int, rng: np.random.Generator) -> int:
    picks = rng.choice(len(fitness), size=min(size, len(fitness)), replace=False)
    return min(picks.tolist(), key=lambda i: (fitness[i], i))


def run_search(series, w: int, config: EvoConfig | None = None,
               threads: int | None = None) -> SearchResult:
    """Evolve pipeline structures and return the best one found.

    ``trace[g]`` is the best fitness seen up to generation ``g + 1``; the
    initial population is generation 0 and does not appear in the trace.
    """
    config = config or EvoConfig()
    holdout = _Holdout(as_series(series), w, config)
    cache: dict[str, float] = {}
    threads = threads or os.cpu_count() or 1

    def evaluate(population: list[Pipeline]) -> list[float]:
        pending: dict[str, Pipeline] = {}
        for g in population:
            key = g.canonical()
            if key not in cache and key not in pending:
                pending[key] = g
        keys = list(pending)
        if threads > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scores = list(pool.map(holdout, [pending[k] for k in keys]))
        else:
            scores = [holdout(pending[k]) for k in keys]
        cache.update(zip(keys, scores))
        return [cache[g.canonical()] for g in population]

    population = initial_population(config)
    fitness = evaluate(population)
    if all(math.isinf(f) for f in fitness):
        raise GapFillError("no feasible pipeline")

    def best_of(pop, fit):
        i = min(range(len(pop)), key=lambda j: (fit[j], j))
        return pop[i], fit[i]

    best, best_fit = best_of(population, fitness)
    logger.info("generation 0: best fitness %.6g (%s)", best_fit, best.canonical())
    trace: list[float] = []
    for gen in range(1, config.generations + 1):
        ranked = sorted(range(len(population)), key=lambda j: (fitness[j], j))
        elites = [population[j] for j in ranked[:config.elitism_count]]
        offspring = []
        for i in range(config.population_size - len(elites)):
            rng = np.random.default_rng([config.rng_seed, gen, i])
            child = population[_tournament(fitness, config.tournament_size, rng)]
            if rng.random() < config.crossover_rate:
                mate = population[_tournament(fitness, config.tournament_size, rng)]
                child = crossover(child, mate, rng, config.max_nodes)
            if rng.random() < config.mutation_rate:
                child = mutate(child, rng, config.max_nodes)
            offspring.append(child)
        population = elites + offspring
        fitness = evaluate(population)
        cand, cand_fit = best_of(population, fitness)
        if cand_fit < best_fit:
            best, best_fit = cand, cand_fit
        trace.append(best_fit)
        logger.info("generation %d: best fitness %.6g (%s)", gen, best_fit, best.canonical())
    return SearchResult(best, best_fit, trace, evaluations=len(cache))


def trace_to_csv(trace: list[float]) -> str:
    rows = ["generation,best_fitness"]
    rows += [f"{g},{v!r}" for g, v in enumerate(trace, start=1)]
    return "\n".join(rows) + "\n"
