"""Architecture graph: typed transitions between phase-owned reasoning states."""

from __future__ import annotations

import copy
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .chain import (
    DEFAULT_BOUNDARIES,
    AoeChain,
    AoeEdgeRecord,
    EdgeKind,
    Phase,
    PhaseBoundaries,
    normalize_label,
    validate_chain,
)

INITIAL_FIT = 0.5
DEFAULT_EPSILON = 1e-6

EdgeKey = tuple[str, str, EdgeKind]


class GraphError(ValueError):
    pass


def node_id(label: str, phase: Phase) -> str:
    return f"p{int(phase)}:{normalize_label(label)}"


def edge_id(key: EdgeKey) -> str:
    src, dst, kind = key
    return f"{src} -> {dst} [{kind.value}]"


def payload_digest(action: str, key: str) -> str:
    h = hashlib.sha256()
    h.update(action.encode("utf-8"))
    h.update(b"\x00")
    h.update(key.encode("utf-8"))
    return h.hexdigest()[:16]


def sparsity_weight(count: int, epsilon: float = DEFAULT_EPSILON) -> float:
    return 1.0 / (math.log(2 + count) + epsilon)


@dataclass
class StateNode:
    id: str
    label: str
    phase: Phase
    weak_streak: int = 0


@dataclass
class Transition:
    src: str
    dst: str
    kind: EdgeKind
    w_fit: float = INITIAL_FIT
    w_sparse: float = field(default_factory=lambda: sparsity_weight(0))
    count: int = 0
    weak_streak: int = 0
    # digest -> (action, key); insertion order is the materialization preference
    actions: dict[str, tuple[str, str]] = field(default_factory=dict)

    @property
    def key(self) -> EdgeKey:
        return (self.src, self.dst, self.kind)

    @property
    def id(self) -> str:
        return edge_id(self.key)


def chain_path(chain: AoeChain) -> tuple[list[str], list[EdgeKey]]:
    """Node ids and edge keys a chain occupies in any graph."""
    states = chain.states()
    phases = chain.state_phases()
    nodes = [node_id(s, p) for s, p in zip(states, phases)]
    edges = [(nodes[i], nodes[i + 1], e.kind) for i, e in enumerate(chain.edges)]
    return nodes, edges


class ArchGraph:
    def __init__(self, boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES, iteration: int = 0):
        self.boundaries = boundaries
        self.iteration = iteration
        self.nodes: dict[str, StateNode] = {}
        self.edges: dict[EdgeKey, Transition] = {}

    def __len__(self) -> int:
        return len(self.nodes) + len(self.edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ArchGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def copy(self) -> "ArchGraph":
        return copy.deepcopy(self)

    # -- structure ---------------------------------------------------------
    @property
    def boundary_ids(self) -> tuple[str, str, str, str]:
        b = self.boundaries
        return (
            node_id(b.source, Phase.PROBLEM_ANALYSIS),
            node_id(b.exit(Phase.PROBLEM_ANALYSIS), Phase.PROBLEM_ANALYSIS),
            node_id(b.exit(Phase.MATHEMATICAL_MODELING), Phase.MATHEMATICAL_MODELING),
            node_id(b.sink, Phase.CODE_GENERATION),
        )

    @property
    def source_id(self) -> str:
        return self.boundary_ids[0]

    @property
    def sink_id(self) -> str:
        return self.boundary_ids[3]

    def out_edges(self, nid: str) -> list[Transition]:
        return sorted(
            (e for e in self.edges.values() if e.src == nid), key=lambda e: (e.dst, e.kind.value)
        )

    def incident_edges(self, nid: str) -> list[Transition]:
        return [e for e in self.edges.values() if e.src == nid or e.dst == nid]

    def admissible(self, edge: Transition) -> bool:
        """Phase rule: stay in phase, or step up one phase from that phase's exit."""
        sp = self.nodes[edge.src].phase
        dp = self.nodes[edge.dst].phase
        if sp == dp:
            return True
        return int(dp) == int(sp) + 1 and edge.src == self.boundary_ids[int(sp)]

    def _adjacency(
        self, skip_node: str | None = None, skip_edge: EdgeKey | None = None
    ) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes if n != skip_node}
        for k, e in self.edges.items():
            if k == skip_edge or skip_node in (e.src, e.dst):
                continue
            if self.admissible(e):
                adj[e.src].append(e.dst)
        return adj

    def is_feasible(self, skip_node: str | None = None, skip_edge: EdgeKey | None = None) -> bool:
        """Whether a boundary-ordered source-to-sink path exists."""
        src, sink = self.source_id, self.sink_id
        if src not in self.nodes or sink not in self.nodes or skip_node in (src, sink):
            return False
        adj = self._adjacency(skip_node, skip_edge)
        seen = {src}
        queue = deque([src])
        while queue:
            cur = queue.popleft()
            if cur == sink:
                return True
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return False

    def distances_to_sink(self) -> dict[str, int]:
        """Fewest admissible edges from each node to the sink (absent if unreachable)."""
        radj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges.values():
            if self.admissible(e):
                radj[e.dst].append(e.src)
        dist: dict[str, int] = {}
        if self.sink_id not in self.nodes:
            return dist
        dist[self.sink_id] = 0
        queue = deque([self.sink_id])
        while queue:
            cur = queue.popleft()
            for prv in radj[cur]:
                if prv not in dist:
                    dist[prv] = dist[cur] + 1
                    queue.append(prv)
        return dist

    def path_of(self, chain: AoeChain) -> tuple[EdgeKey, ...] | None:
        """Edge keys of chain in this graph, or None if any edge is absent."""
        _, keys = chain_path(chain)
        if all(k in self.edges for k in keys):
            return tuple(keys)
        return None

    # -- mutation ----------------------------------------------------------
    def _ensure_node(self, nid: str, label: str, phase: Phase, created: set[str]) -> None:
        if nid not in self.nodes:
            self.nodes[nid] = StateNode(nid, normalize_label(label), phase)
            created.add(nid)

    def insert_chain(self, chain: AoeChain, *, count: int = 1) -> set[str]:
        """Insert a valid chain; returns ids of nodes and edges created.

        Every edge on the chain gains ``count`` traversals, once per chain even
        when the chain revisits it.
        """
        report = validate_chain(chain, self.boundaries)
        if not report.ok:
            raise GraphError(f"invalid chain: {report.violations[0]}")
        created: set[str] = set()
        nodes, keys = chain_path(chain)
        for nid, label, phase in zip(nodes, chain.states(), chain.state_phases()):
            self._ensure_node(nid, label, phase, created)
        for key, rec in zip(keys, chain.edges):
            edge = self.edges.get(key)
            if edge is None:
                edge = Transition(key[0], key[1], key[2])
                self.edges[key] = edge
                created.add(edge.id)
            edge.actions.setdefault(payload_digest(rec.action, rec.key), (rec.action, rec.key))
        for key in dict.fromkeys(keys):
            self.edges[key].count += count
        return created

    def remove_node(self, nid: str) -> list[str]:
        removed = []
        for k in [k for k, e in self.edges.items() if nid in (e.src, e.dst)]:
            removed.append(edge_id(k))
            del self.edges[k]
        del self.nodes[nid]
        removed.append(nid)
        return removed

    def node_weight(self, nid: str) -> float:
        if nid not in self.nodes:
            raise GraphError(f"unknown node {nid!r}")
        inc = self.incident_edges(nid)
        if not inc:
            raise GraphError(f"node {nid!r} has no incident edges")
        return sum(e.w_fit for e in inc) / len(inc)

    def materialize(self, keys: Sequence[EdgeKey], source_individual: str = "") -> AoeChain:
        """Turn a graph path into a chain using each edge's first recorded payload."""
        records = []
        for key in keys:
            e = self.edges[key]
            action, payload = next(iter(e.actions.values()), (e.kind.value, e.kind.value))
            records.append(
                AoeEdgeRecord(
                    phase=self.nodes[e.dst].phase,
                    kind=e.kind,
                    action=action,
                    start_state=self.nodes[e.src].label,
                    end_state=self.nodes[e.dst].label,
                    key=payload,
                )
            )
        return AoeChain(tuple(records), source_individual)

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.boundaries.labels),
            "iteration": self.iteration,
            "nodes": [
                {"id": n.id, "label": n.label, "phase": int(n.phase), "weak_streak": n.weak_streak}
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "edges": [
                {
                    "src": e.src,
                    "dst": e.dst,
                    "kind": e.kind.value,
                    "w_fit": e.w_fit,
                    "w_sparse": e.w_sparse,
                    "count": e.count,
                    "weak_streak": e.weak_streak,
                    "actions": [[d, a, k] for d, (a, k) in e.actions.items()],
                }
                for _, e in sorted(self.edges.items(), key=lambda kv: _sort_key(kv[0]))
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ArchGraph":
        g = cls(PhaseBoundaries(tuple(data["boundaries"])), int(data.get("iteration", 0)))
        for n in data["nodes"]:
            g.nodes[n["id"]] = StateNode(n["id"], n["label"], Phase(n["phase"]), int(n.get("weak_streak", 0)))
        for e in data["edges"]:
            t = Transition(
                e["src"],
                e["dst"],
                EdgeKind(e["kind"]),
                w_fit=float(e["w_fit"]),
                w_sparse=float(e["w_sparse"]),
                count=int(e["count"]),
                weak_streak=int(e["weak_streak"]),
                actions={d: (a, k) for d, a, k in e.get("actions", [])},
            )
            g.edges[t.key] = t
        return g


def _sort_key(key: EdgeKey) -> tuple[str, str, str]:
    return (key[0], key[1], key[2].value)


def build_initial_graph(
    chains: Sequence[AoeChain],
    judge: Callable[[str, str, dict], bool] | None = None,
    boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES,
) -> ArchGraph:
    """Align states phase-locally, then insert every chain.

    Without a judge only exact (normalized) labels are shared.
    """
    from .merging import align_chains

    if not chains:
        raise GraphError("cannot build a graph from zero chains")
    for i, c in enumerate(chains):
        report = validate_chain(c, boundaries)
        if not report.ok:
            raise GraphError(f"chain {i} invalid: {report.violations[0]}")
    aligned, _ = align_chains(chains, judge, boundaries)
    g = ArchGraph(boundaries)
    for c in aligned:
        g.insert_chain(c)
    return g


def graph_union(a: ArchGraph, b: ArchGraph) -> ArchGraph:
    """Set union; shared edges sum counts and keep a's learned state."""
    if a.boundaries != b.boundaries:
        raise GraphError("graphs use different phase boundaries")
    out = a.copy()
    for nid, n in b.nodes.items():
        if nid not in out.nodes:
            out.nodes[nid] = copy.copy(n)
    for key, e in b.edges.items():
        mine = out.edges.get(key)
        if mine is None:
            out.edges[key] = copy.deepcopy(e)
        else:
            mine.count += e.count
            for d, payload in e.actions.items():
                mine.actions.setdefault(d, payload)
    return out


def update_fitness_weights(
    graph: ArchGraph, traversals: Mapping[EdgeKey, Sequence[float]], alpha: float
) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    for key, values in traversals.items():
        if not values or key not in graph.edges:
            continue
        e = graph.edges[key]
        mean = sum(values) / len(values)
        e.w_fit = e.w_fit + alpha * (mean - e.w_fit)


def update_sparsity_weights(graph: ArchGraph, epsilon: float = DEFAULT_EPSILON) -> None:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for e in graph.edges.values():
        e.w_sparse = sparsity_weight(e.count, epsilon)


def prune(graph: ArchGraph, tau: float, sigma: int) -> list[str]:
    """Advance weak streaks and drop elements weak for ``sigma`` iterations.

    Boundary nodes are never removed, and no removal may leave the graph
    without a feasible path; such elements stay and keep their streak.
    Non-boundary nodes left without incident edges are dropped as well.
    """
    if sigma < 1:
        raise ValueError("sigma must be a positive integer")
    boundary = set(graph.boundary_ids)
    removed: list[str] = []

    weights = {nid: graph.node_weight(nid) for nid in graph.nodes if graph.incident_edges(nid)}
    for nid, n in graph.nodes.items():
        if nid in weights and weights[nid] < tau:
            n.weak_streak += 1
        else:
            n.weak_streak = 0
    for e in graph.edges.values():
        e.weak_streak = e.weak_streak + 1 if e.w_fit < tau else 0

    for nid in sorted(graph.nodes):
        n = graph.nodes.get(nid)
        if n is None or nid in boundary or n.weak_streak < sigma:
            continue
        if graph.is_feasible(skip_node=nid):
            removed.extend(graph.remove_node(nid))

    for key in sorted(graph.edges, key=_sort_key):
        e = graph.edges[key]
        if e.weak_streak < sigma:
            continue
        if graph.is_feasible(skip_edge=key):
            del graph.edges[key]
            removed.append(edge_id(key))

    for nid in sorted(graph.nodes):
        if nid not in boundary and not graph.incident_edges(nid):
            removed.extend(graph.remove_node(nid))
    return removed


def traversal_map(
    paths: Iterable[tuple[Iterable[EdgeKey], float]],
) -> dict[EdgeKey, list[float]]:
    """Group fitness values by edge, counting each individual once per edge."""
    out: dict[EdgeKey, list[float]] = {}
    for keys, fitness in paths:
        for key in dict.fromkeys(keys):
            out.setdefault(key, []).append(fitness)
    return out
