"""Elitist multi-source selection and the architecture/reasoning co-evolution loop."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from .backend.base import BackendError, ExecutionLimits, GenerationBackend
from .evaluation import evaluate_population
from .fitness import DEFAULT_DELTA, DEFAULT_EPSILON_Y, SplitSpec, TaskInstance, instance_weights
from .graph import (
    DEFAULT_EPSILON,
    ArchGraph,
    build_initial_graph,
    chain_path,
    graph_union,
    prune,
    traversal_map,
    update_fitness_weights,
    update_sparsity_weights,
)
from .individual import Individual, IndividualError, Population, Provenance
from .merging import JudgeError, MemoJudge, align_chains
from .recombination import NoFeasiblePath, NoveltyExhausted, edge_scores, recombine
from .variation import KnowledgeStore, MutationError, floor_count, hybrid_initialize, mutate

log = logging.getLogger(__name__)

DEFAULT_TASK_CONTEXT = (
    "Build an agent that reads an operations-research word problem, formulates an "
    "optimization model, writes and runs solver code, and prints the optimal objective value."
)

# stream purposes for per-slot generators
INIT, RECOMBINE, MUTATE, REFILL = range(4)

_OPERATOR_FAILURES = (BackendError, IndividualError, MutationError, NoveltyExhausted, NoFeasiblePath)


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    n: int = 10
    t_max: int = 8
    alpha_init: float = 0.5
    beta_mut: float = 0.5
    beta_learn: float = 0.5
    beta_strat: float = 0.5
    beta_elite: float = 0.2
    alpha: float = 0.5
    gamma: float = 0.5
    tau: float = 0.1
    sigma: int = 2
    epsilon: float = DEFAULT_EPSILON
    epsilon_y: float = DEFAULT_EPSILON_Y
    delta: float = DEFAULT_DELTA
    seed: int = 0
    novelty_attempts: int = 50
    restarts: int = 20
    kb_top_k: int = 3
    reevaluate: bool = False
    workers: int = 4

    def __post_init__(self) -> None:
        if self.n < 1 or self.t_max < 0:
            raise ValueError("need n >= 1 and t_max >= 0")
        for name in ("alpha_init", "beta_mut", "beta_learn", "beta_strat", "beta_elite", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.sigma < 1 or self.epsilon <= 0 or self.epsilon_y <= 0 or self.delta <= 0:
            raise ValueError("sigma, epsilon, epsilon_y and delta must be positive")
        if self.novelty_attempts < 1 or self.restarts < 0 or self.workers < 1:
            raise ValueError("bad search or worker budget")
        compute_counts(self.n, self.beta_elite, self.beta_mut)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvolutionConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GenerationReport:
    generation: int
    fitness: dict[str, float]
    best_id: str
    best_wa: float
    mean_wa: float
    graph_nodes: int
    graph_edges: int
    pruned: int
    composition: dict[str, int]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenerationReport":
        return cls(**d)


@dataclass
class RunState:
    """Everything needed to continue a run after ``generation``."""

    generation: int
    population: Population
    fitness: dict[str, float]
    graph: ArchGraph
    reports: list[GenerationReport]
    fitness_cache: dict[str, float] = field(default_factory=dict)


@dataclass
class RunResult:
    population: Population
    graph: ArchGraph
    reports: list[GenerationReport]
    fitness: dict[str, float]
    best: Individual


def slot_rng(seed: int, generation: int, slot: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, generation, slot, purpose])


def compute_counts(n: int, beta_elite: float, beta_mut: float) -> tuple[int, int, int]:
    """(n_elite, n_rec, n_mut) with floor semantics for elites and mutants."""
    n_elite = floor_count(n, beta_elite)
    n_mut = floor_count(n, beta_mut)
    n_rec = n - n_elite - n_mut
    if n_rec < 0:
        raise ValueError(f"elite ({n_elite}) + mutant ({n_mut}) counts exceed population {n}")
    return n_elite, n_rec, n_mut


def rank(population: Sequence[Individual], fitness: Mapping[str, float]) -> list[Individual]:
    return sorted(population, key=lambda ind: (-fitness[ind.id], ind.id))


def get_best(population: Sequence[Individual], fitness: Mapping[str, float], k: int) -> list[Individual]:
    if not 0 <= k <= len(population):
        raise ValueError(f"cannot take {k} elites from {len(population)} individuals")
    return [ind.as_elite() for ind in rank(population, fitness)[:k]]


def composition(population: Sequence[Individual]) -> dict[str, int]:
    counts = Counter(ind.provenance.value for ind in population)
    return {p.value: counts.get(p.value, 0) for p in Provenance}


def multi_source_selection(
    population: Sequence[Individual],
    fitness: Mapping[str, float],
    graph: ArchGraph,
    kb: KnowledgeStore,
    config: EvolutionConfig,
    backend: GenerationBackend,
    generation: int,
) -> Population:
    """Next population: elites, then recombined slots, then mutated slots.

    A failed recombination slot is refilled by mutation and a failed mutation
    slot by recombination; if the refill fails too the run stops.
    """
    n_elite, n_rec, n_mut = compute_counts(config.n, config.beta_elite, config.beta_mut)
    elites = get_best(population, fitness, n_elite)
    parents = list(population)
    scores = edge_scores(graph, config.gamma)
    max_len = 4 * max(len(p.chain) for p in parents)

    def do_recombine(slot: int, rng: np.random.Generator) -> Individual:
        return recombine(
            graph, parents, config.gamma, rng, backend,
            new_id=f"g{generation:02d}-{slot:02d}", scores=scores, max_len=max_len,
            attempts=config.novelty_attempts, restarts=config.restarts,
        )

    def do_mutate(slot: int, rng: np.random.Generator) -> Individual:
        target = parents[int(rng.integers(len(parents)))]
        return mutate(
            target, kb, config.beta_learn, config.beta_strat, rng, backend,
            new_id=f"g{generation:02d}-{slot:02d}", top_k=config.kb_top_k,
        )

    def run_slot(job: tuple[int, bool]) -> Individual:
        slot, is_rec = job
        first, second = (do_recombine, do_mutate) if is_rec else (do_mutate, do_recombine)
        try:
            return first(slot, slot_rng(config.seed, generation, slot, RECOMBINE if is_rec else MUTATE))
        except _OPERATOR_FAILURES as exc:
            log.warning("generation %d slot %d: %s; refilling", generation, slot, exc)
        try:
            return second(slot, slot_rng(config.seed, generation, slot, REFILL))
        except _OPERATOR_FAILURES as exc:
            raise EvolutionError(f"generation {generation} slot {slot}: operator and refill failed ({exc})") from exc

    jobs = [(n_elite + i, True) for i in range(n_rec)] + [(n_elite + n_rec + i, False) for i in range(n_mut)]
    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            offspring = list(pool.map(run_slot, jobs))
    else:
        offspring = [run_slot(j) for j in jobs]
    return elites + offspring


def update_graph(
    graph: ArchGraph,
    population: Sequence[Individual],
    fitness: Mapping[str, float],
    config: EvolutionConfig,
    judge: Callable[[str, str, dict], bool] | None = None,
) -> tuple[ArchGraph, int]:
    """Merge the population's chains in, reweight, prune. Returns (graph, removed count)."""
    existing = {}
    for nid, node in graph.nodes.items():
        kinds = frozenset(e.kind for e in graph.incident_edges(nid))
        existing[nid] = (node.label, node.phase, kinds)
    aligned, _ = align_chains([ind.chain for ind in population], judge, graph.boundaries, existing)
    local = ArchGraph(graph.boundaries)
    for chain in aligned:
        local.insert_chain(chain)
    merged = graph_union(graph, local)
    traversals = traversal_map((chain_path(c)[1], fitness[ind.id]) for ind, c in zip(population, aligned))
    update_fitness_weights(merged, traversals, config.alpha)
    update_sparsity_weights(merged, config.epsilon)
    before = len(merged)
    removed = prune(merged, config.tau, config.sigma)
    if before - len(merged) != len(removed):
        raise EvolutionError("prune bookkeeping mismatch")
    merged.iteration = graph.iteration + 1
    return merged, len(removed)


def make_report(
    generation: int, population: Sequence[Individual], fitness: Mapping[str, float], graph: ArchGraph, pruned: int
) -> GenerationReport:
    best = rank(population, fitness)[0]
    values = [fitness[ind.id] for ind in population]
    return GenerationReport(
        generation=generation,
        fitness={ind.id: fitness[ind.id] for ind in sorted(population, key=lambda i: i.id)},
        best_id=best.id,
        best_wa=fitness[best.id],
        mean_wa=float(np.mean(values)),
        graph_nodes=len(graph.nodes),
        graph_edges=len(graph.edges),
        pruned=pruned,
        composition=composition(population),
    )


def coevolve(
    config: EvolutionConfig,
    split: SplitSpec,
    dataset: Sequence[TaskInstance],
    kb: KnowledgeStore,
    backend: GenerationBackend,
    *,
    limits: ExecutionLimits = ExecutionLimits(),
    task_context: str = DEFAULT_TASK_CONTEXT,
    resume: RunState | None = None,
    on_generation: Callable[[RunState], None] | None = None,
) -> RunResult:
    if not split.train_ids:
        raise ValueError("train split is empty")
    by_id = {inst.id: inst for inst in dataset}
    weights = instance_weights(split.subset_weights, dataset)
    judge = MemoJudge(backend.judge_equivalence)

    def evaluate(pop: Population, cache: dict[str, float]) -> dict[str, float]:
        return evaluate_population(
            pop, split.train_ids, by_id, backend, weights,
            limits=limits, delta=config.delta, epsilon_y=config.epsilon_y,
            workers=config.workers, cache=None if config.reevaluate else cache,
        )

    if resume is None:
        rngs = [slot_rng(config.seed, 0, s, INIT) for s in range(config.n)]
        population = hybrid_initialize(
            config.n, config.alpha_init, kb, backend, rngs,
            task_context=task_context, top_k=config.kb_top_k, id_prefix="g00",
        )
        try:
            graph = build_initial_graph([ind.chain for ind in population], judge, backend.boundaries)
        except JudgeError as exc:
            raise EvolutionError(f"state judging failed: {exc}") from exc
        update_sparsity_weights(graph, config.epsilon)
        cache: dict[str, float] = {}
        fitness = evaluate(population, cache)
        state = RunState(0, population, fitness, graph, [make_report(0, population, fitness, graph, 0)], cache)
        if on_generation:
            on_generation(state)
    else:
        state = resume

    for t in range(state.generation + 1, config.t_max + 1):
        population = multi_source_selection(
            state.population, state.fitness, state.graph, kb, config, backend, t
        )
        if len(population) != config.n:
            raise EvolutionError(f"generation {t} has {len(population)} individuals")
        cache = dict(state.fitness_cache)
        fitness = evaluate(population, cache)
        try:
            graph, pruned = update_graph(state.graph, population, fitness, config, judge)
        except JudgeError as exc:
            raise EvolutionError(f"state judging failed: {exc}") from exc
        state = RunState(
            t, population, fitness, graph, [*state.reports, make_report(t, population, fitness, graph, pruned)], cache
        )
        if on_generation:
            on_generation(state)

    best = rank(state.population, state.fitness)[0]
    return RunResult(state.population, state.graph, state.reports, state.fitness, best)
