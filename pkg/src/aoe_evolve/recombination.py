"""Edge scoring and path-conditioned recombination over the architecture graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .backend.base import GenerationBackend
from .chain import Signature, path_signature, validate_chain
from .graph import ArchGraph, EdgeKey, GraphError, chain_path
from .individual import Individual, Provenance, check_individual

SCORE_FLOOR = 1e-3
NOVELTY_ATTEMPTS = 50
RESTARTS = 20


class NoFeasiblePath(GraphError):
    pass


class NoveltyExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeScoreMap:
    scores: Mapping[str, float]
    gamma: float

    def __getitem__(self, eid: str) -> float:
        return self.scores[eid]


@dataclass(frozen=True)
class SampledPath:
    nodes: tuple[str, ...]
    edges: tuple[EdgeKey, ...]
    signature: Signature


def minmax(values: Mapping[str, float]) -> dict[str, float]:
    """Min-max scale to [0, 1]; a constant input maps to 0.5 everywhere."""
    if not values:
        return {}
    lo, hi = min(values.values()), max(values.values())
    if hi == lo:
        return {k: 0.5 for k in values}
    span = hi - lo
    return {k: (v - lo) / span for k, v in values.items()}


def edge_scores(graph: ArchGraph, gamma: float) -> EdgeScoreMap:
    if not graph.edges:
        raise GraphError("cannot score an empty graph")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    fit = minmax({e.id: e.w_fit for e in graph.edges.values()})
    sparse = minmax({e.id: e.w_sparse for e in graph.edges.values()})
    return EdgeScoreMap({k: gamma * fit[k] + (1.0 - gamma) * sparse[k] for k in fit}, gamma)


def sample_path(
    graph: ArchGraph,
    scores: EdgeScoreMap,
    rng: np.random.Generator,
    max_len: int,
    *,
    floor: float = SCORE_FLOOR,
    restarts: int = RESTARTS,
) -> SampledPath:
    """Forward stochastic walk from source to sink.

    Each step picks among admissible out-edges whose head can still reach the
    sink in the remaining budget, with probability proportional to score + floor.
    """
    dist = graph.distances_to_sink()
    src, sink = graph.source_id, graph.sink_id
    if src not in dist or dist[src] > max_len:
        raise NoFeasiblePath(f"no feasible path within {max_len} edges")
    out: dict[str, list] = {}
    for e in sorted(graph.edges.values(), key=lambda e: (e.src, e.dst, e.kind.value)):
        if graph.admissible(e):
            out.setdefault(e.src, []).append(e)
    for _ in range(restarts + 1):
        cur, nodes, keys = src, [src], []
        while cur != sink:
            left = max_len - len(keys) - 1
            cands = [e for e in out.get(cur, ()) if e.dst in dist and dist[e.dst] <= left]
            if not cands:
                break
            w = np.array([scores[e.id] + floor for e in cands])
            cum = np.cumsum(w)
            k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cands) - 1)
            e = cands[k]
            keys.append(e.key)
            nodes.append(e.dst)
            cur = e.dst
        if cur == sink:
            chain = graph.materialize(keys)
            return SampledPath(tuple(nodes), tuple(keys), path_signature(chain))
    raise NoFeasiblePath(f"walk failed after {restarts} restarts")


def population_paths(population: Iterable[Individual]) -> set[tuple[EdgeKey, ...]]:
    return {tuple(chain_path(ind.chain)[1]) for ind in population}


def recombine(
    graph: ArchGraph,
    population: Iterable[Individual],
    gamma: float,
    rng: np.random.Generator,
    backend: GenerationBackend,
    *,
    new_id: str = "recombined",
    scores: EdgeScoreMap | None = None,
    max_len: int | None = None,
    attempts: int = NOVELTY_ATTEMPTS,
    restarts: int = RESTARTS,
) -> Individual:
    """Sample a path no parent already follows and instantiate it."""
    parents = list(population)
    if scores is None:
        scores = edge_scores(graph, gamma)
    if max_len is None:
        longest = max((len(p.chain) for p in parents), default=0)
        max_len = 4 * (longest or len(graph.nodes))
    taken = population_paths(parents)
    for _ in range(attempts):
        path = sample_path(graph, scores, rng, max_len, restarts=restarts)
        if path.edges in taken:
            continue
        chain = graph.materialize(path.edges, source_individual=new_id)
        if not validate_chain(chain, graph.boundaries).ok:
            continue
        artifact = backend.synthesize_artifact(chain, seed=int(rng.integers(2**31)))
        extracted = backend.extract_chain(artifact)
        return check_individual(
            Individual(new_id, artifact, extracted, Provenance.RECOMBINED), graph.boundaries
        )
    raise NoveltyExhausted(f"no novel feasible path after {attempts} samples")

