"""Phase-local state alignment with type isolation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .chain import (
    DEFAULT_BOUNDARIES,
    AoeChain,
    AoeEdgeRecord,
    EdgeKind,
    Phase,
    PhaseBoundaries,
    normalize_label,
)
from .graph import node_id

Judge = Callable[[str, str, dict], bool]

PROGRAMMATIC = "programmatic"
PROMPT_DRIVEN = "prompt"
NEUTRAL = "neutral"


class JudgeError(RuntimeError):
    def __init__(self, a: str, b: str, cause: BaseException):
        self.pair = (a, b)
        super().__init__(f"judge failed on ({a!r}, {b!r}): {cause}")


@dataclass(frozen=True)
class StateCandidate:
    node_id: str
    state_text: str
    phase: Phase
    incident_kinds: frozenset[EdgeKind]
    origin: str = ""

    @property
    def state_type(self) -> str:
        return state_type(self.incident_kinds)


def state_type(kinds: Iterable[EdgeKind]) -> str:
    kinds = set(kinds)
    if EdgeKind.REASON in kinds:
        return PROMPT_DRIVEN
    if EdgeKind.WORK in kinds:
        return PROGRAMMATIC
    return NEUTRAL


@dataclass(frozen=True)
class MergeGroup:
    canonical_state: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class MergeGrouping:
    groups: tuple[MergeGroup, ...]

    def label_map(self) -> dict[str, str]:
        """node_id -> canonical label."""
        return {m: g.canonical_state for g in self.groups for m in g.members}

    def to_json(self) -> str:
        doc = {
            "groups": [
                {"canonical_state": g.canonical_state, "members": [{"node_id": m} for m in g.members]}
                for g in self.groups
            ]
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MergeGrouping":
        doc = json.loads(text)
        groups = []
        for g in doc["groups"]:
            groups.append(MergeGroup(str(g["canonical_state"]), tuple(str(m["node_id"]) for m in g["members"])))
        return cls(tuple(groups))


def collect_candidates(chains: Sequence[AoeChain]) -> list[StateCandidate]:
    """One candidate per (normalized label, owning phase) across all chains."""
    kinds: dict[str, set[EdgeKind]] = {}
    info: dict[str, tuple[str, Phase, str]] = {}
    for ci, chain in enumerate(chains):
        states = chain.states()
        phases = chain.state_phases()
        origin = chain.source_individual or f"chain-{ci}"
        for k, (label, phase) in enumerate(zip(states, phases)):
            nid = node_id(label, phase)
            info.setdefault(nid, (label, phase, origin))
            bucket = kinds.setdefault(nid, set())
            if k > 0:
                bucket.add(chain.edges[k - 1].kind)
            if k < len(chain.edges):
                bucket.add(chain.edges[k].kind)
    return [
        StateCandidate(nid, info[nid][0], info[nid][1], frozenset(kinds[nid]), info[nid][2])
        for nid in sorted(info)
    ]


class MemoJudge:
    """Memoizes a pairwise judge by phase and unordered label pair."""

    def __init__(self, judge: Judge):
        self.judge = judge
        self.cache: dict[tuple[int, str, str], bool] = {}
        self.calls = 0

    def __call__(self, a: str, b: str, context: dict) -> bool:
        lo, hi = sorted((a, b))
        key = (int(context.get("phase", 0)), lo, hi)
        if key not in self.cache:
            self.calls += 1
            try:
                self.cache[key] = bool(self.judge(lo, hi, context))
            except Exception as exc:  # noqa: BLE001 - re-raised with the pair attached
                raise JudgeError(lo, hi, exc) from exc
        return self.cache[key]


def exact_judge(a: str, b: str, context: dict | None = None) -> bool:
    return normalize_label(a) == normalize_label(b)


def propose_groups(
    candidates: Sequence[StateCandidate],
    judge: Judge | None = None,
    pinned: Iterable[str] = (),
) -> MergeGrouping:
    """Transitive closure of judged-equivalent pairs, restricted per phase.

    A union is refused when it would put programmatic and prompt-driven
    states together, or two pinned node ids into one group. Pinned ids
    (boundaries, states already in a graph) name their group.
    """
    if not candidates:
        raise ValueError("no candidates to group")
    judge = judge or exact_judge
    pinned = set(pinned)
    ids = [c.node_id for c in candidates]
    if len(set(ids)) != len(ids):
        raise ValueError("candidate node ids must be unique")

    parent = {c.node_id: c.node_id for c in candidates}
    types = {c.node_id: {c.state_type} - {NEUTRAL} for c in candidates}
    pins = {c.node_id: ({c.node_id} & pinned) for c in candidates}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    by_phase: dict[Phase, list[StateCandidate]] = {}
    for c in sorted(candidates, key=lambda c: c.node_id):
        by_phase.setdefault(c.phase, []).append(c)

    for phase in sorted(by_phase):
        group = by_phase[phase]
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                ra, rb = find(a.node_id), find(b.node_id)
                if ra == rb:
                    continue
                merged_types = types[ra] | types[rb]
                if len(merged_types) > 1 or len(pins[ra] | pins[rb]) > 1:
                    continue
                ctx = {"phase": int(phase), "kinds_a": sorted(k.value for k in a.incident_kinds),
                       "kinds_b": sorted(k.value for k in b.incident_kinds)}
                if judge(a.state_text, b.state_text, ctx):
                    parent[rb] = ra
                    types[ra] = merged_types
                    pins[ra] = pins[ra] | pins[rb]

    text = {c.node_id: c.state_text for c in candidates}
    comps: dict[str, list[str]] = {}
    for nid in sorted(parent):
        comps.setdefault(find(nid), []).append(nid)
    groups = []
    for members in comps.values():
        pinned_members = [m for m in members if m in pinned]
        if pinned_members:
            canonical = text[pinned_members[0]]
        else:
            canonical = min(text[m] for m in members)
        groups.append(MergeGroup(canonical, tuple(members)))
    groups.sort(key=lambda g: g.members[0])
    return MergeGrouping(tuple(groups))


def validate_grouping(grouping: MergeGrouping, candidates: Sequence[StateCandidate]) -> list[str]:
    by_id = {c.node_id: c for c in candidates}
    seen: dict[str, int] = {}
    out: list[str] = []
    for gi, g in enumerate(grouping.groups):
        if not g.members:
            out.append(f"group {gi}: empty group")
            continue
        for m in g.members:
            if m not in by_id:
                out.append(f"group {gi}: unknown member {m!r}")
            seen[m] = seen.get(m, 0) + 1
        known = [by_id[m] for m in g.members if m in by_id]
        if len({c.phase for c in known}) > 1:
            out.append(f"group {gi}: cross-phase group")
        kinds = {c.state_type for c in known} - {NEUTRAL}
        if len(kinds) > 1:
            out.append(f"group {gi}: type isolation broken (programmatic mixed with prompt-driven)")
    for nid in sorted(by_id):
        if nid not in seen:
            out.append(f"missing member {nid!r}")
    for nid, n in sorted(seen.items()):
        if n > 1:
            out.append(f"duplicate member {nid!r} appears {n} times")
    return out


def canonicalize(
    chains: Sequence[AoeChain],
    grouping: MergeGrouping,
    candidates: Sequence[StateCandidate] | None = None,
) -> list[AoeChain]:
    """Rewrite state labels to their group's canonical label."""
    if candidates is not None:
        problems = validate_grouping(grouping, candidates)
        if problems:
            raise ValueError(f"invalid grouping: {problems[0]}")
    mapping = grouping.label_map()
    out = []
    for chain in chains:
        states = chain.states()
        phases = chain.state_phases()
        targets = [mapping.get(node_id(s, p), s) for s, p in zip(states, phases)]

        def pick(raw: str, target: str) -> str:
            return raw if normalize_label(raw) == target else target

        edges = tuple(
            AoeEdgeRecord(
                e.phase,
                e.kind,
                e.action,
                pick(e.start_state, targets[i]),
                pick(e.end_state, targets[i + 1]),
                e.key,
            )
            for i, e in enumerate(chain.edges)
        )
        out.append(AoeChain(edges, chain.source_individual))
    return out


def align_chains(
    chains: Sequence[AoeChain],
    judge: Judge | None = None,
    boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES,
    existing: Mapping[str, tuple[str, Phase, frozenset[EdgeKind]]] | None = None,
) -> tuple[list[AoeChain], MergeGrouping]:
    """Merge chain states among themselves and onto ``existing`` graph states.

    ``existing`` maps node id -> (label, phase, incident kinds); those ids
    and the boundary states are pinned.
    """
    cands = {c.node_id: c for c in collect_candidates(chains)}
    existing = existing or {}
    for nid, (label, phase, kinds) in existing.items():
        if nid in cands:
            c = cands[nid]
            cands[nid] = StateCandidate(nid, c.state_text, c.phase, c.incident_kinds | kinds, c.origin)
        else:
            cands[nid] = StateCandidate(nid, label, phase, frozenset(kinds), "graph")
    pinned = set(existing)
    b = boundaries
    pinned.update(
        {
            node_id(b.source, Phase.PROBLEM_ANALYSIS),
            node_id(b.exit(Phase.PROBLEM_ANALYSIS), Phase.PROBLEM_ANALYSIS),
            node_id(b.exit(Phase.MATHEMATICAL_MODELING), Phase.MATHEMATICAL_MODELING),
            node_id(b.sink, Phase.CODE_GENERATION),
        }
    )
    candidates = [cands[k] for k in sorted(cands)]
    grouping = propose_groups(candidates, judge, pinned)
    return canonicalize(chains, grouping, candidates), grouping
