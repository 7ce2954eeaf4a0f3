"""Deterministic backend over a synthetic "hill domain".

Artifacts are serialized chains. Every feasible workflow picks one interior
state per phase (plus an optional knowledge edge in phase 2); each
transition carries a hidden utility, and an instance is solved when the
path utility reaches the instance's hidden threshold. All capabilities are
pure functions of their arguments and seed.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from ..chain import (
    DEFAULT_BOUNDARIES,
    AoeChain,
    AoeEdgeRecord,
    ChainParseError,
    ChainValidationError,
    EdgeKind,
    Phase,
    PhaseBoundaries,
    Signature,
    normalize_label,
    parse_chain,
    path_signature,
    serialize_chain,
    split_by_phase,
    validate_chain,
)
from ..fitness import Status, TaskInstance
from .base import (
    BackendError,
    ExecutionLimits,
    ExecutionTrace,
    KnowledgeExcerpt,
    MutationScope,
)

DEFAULT_OPTIONS: tuple[tuple[str, ...], ...] = (
    ("Ques Parsed", "Entities Extracted", "Sets Defined"),
    ("LP Formulated", "MILP Formulated", "Route Decided"),
    ("Code Generated", "Code Verified", "Code Repaired"),
)

_ENTRY_KIND = {
    Phase.PROBLEM_ANALYSIS: EdgeKind.REASON,
    Phase.MATHEMATICAL_MODELING: EdgeKind.REASON,
    Phase.CODE_GENERATION: EdgeKind.TOOL,
}

Oracle = Callable[[Signature, TaskInstance], "bool | None"]


def unit_hash(*parts: object) -> float:
    """Deterministic value in [0, 1) from arbitrary parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2**64


@dataclass(frozen=True)
class HillDomain:
    options: tuple[tuple[str, ...], ...] = DEFAULT_OPTIONS
    kb_label: str = "Knowledge Pattern Applied"
    utility_seed: int = 0
    # share of instances pinned to the top threshold, so only the best path solves them
    peak_fraction: float = 0.0
    boundaries: PhaseBoundaries = field(default=DEFAULT_BOUNDARIES)

    def __post_init__(self) -> None:
        if len(self.options) != 3 or not all(self.options):
            raise ValueError("need a non-empty option list for each of the three phases")
        if not 0.0 <= self.peak_fraction <= 1.0:
            raise ValueError("peak_fraction must lie in [0, 1]")

    # -- structure ---------------------------------------------------------
    def segment(
        self,
        phase: Phase,
        option: int,
        kb: bool = False,
        *,
        entry: str | None = None,
        exit_: str | None = None,
        tag: str = "",
    ) -> list[AoeEdgeRecord]:
        entry = entry or self.boundaries.entry(phase)
        exit_ = exit_ or self.boundaries.exit(phase)
        label = self.options[int(phase) - 1][option]
        suffix = f" ({tag})" if tag else ""
        entry_kind = _ENTRY_KIND[phase]
        recs = [
            AoeEdgeRecord(
                phase,
                entry_kind,
                f"reach {label}",
                entry,
                label,
                f"{entry_kind.surface}: produce {label}" + (suffix if entry_kind is EdgeKind.REASON else ""),
            )
        ]
        last = label
        if kb and phase is Phase.MATHEMATICAL_MODELING:
            recs.append(
                AoeEdgeRecord(
                    phase, EdgeKind.REASON, "apply retrieved pattern", label, self.kb_label,
                    f"prompt: apply retrieved modeling pattern{suffix}",
                )
            )
            last = self.kb_label
        recs.append(AoeEdgeRecord(phase, EdgeKind.WORK, f"close {phase.title}", last, exit_, f"code: hand off {last}"))
        return recs

    def chain_for(self, choices: Sequence[int], kb: bool = False, tag: str = "") -> AoeChain:
        edges: list[AoeEdgeRecord] = []
        for phase, opt in zip(Phase, choices):
            edges.extend(self.segment(phase, int(opt), kb, tag=tag))
        return AoeChain(tuple(edges))

    def decode(self, chain: AoeChain) -> tuple[list[int | None], bool]:
        """Option index per phase (None when foreign) and the knowledge flag."""
        out: list[int | None] = []
        kb = False
        for phase, part in zip(Phase, split_by_phase(chain)):
            labels = [normalize_label(e.end_state) for e in part.edges[:-1]]
            opts = self.options[int(phase) - 1]
            idx = opts.index(labels[0]) if labels and labels[0] in opts else None
            if phase is Phase.MATHEMATICAL_MODELING and labels[1:] == [self.kb_label]:
                kb = True
            elif len(labels) != 1:
                idx = None
            out.append(idx)
        return out, kb

    # -- hidden utilities --------------------------------------------------
    def edge_utility(self, start: str, end: str, kind: EdgeKind) -> float:
        return unit_hash("edge", self.utility_seed, start, end, kind.value)

    def path_utility(self, signature: Signature) -> float:
        return sum(self.edge_utility(s, e, k) for s, e, k in signature)

    def segment_utility(self, phase: Phase, option: int, kb: bool) -> float:
        recs = self.segment(phase, option, kb)
        return sum(self.edge_utility(r.start_state, r.end_state, r.kind) for r in recs)

    @cached_property
    def all_paths(self) -> list[tuple[tuple[int, int, int], bool]]:
        ranges = [range(len(o)) for o in self.options]
        return [(c, kb) for c in itertools.product(*ranges) for kb in (False, True)]

    @cached_property
    def utility_range(self) -> tuple[float, float]:
        vals = [self.path_utility(path_signature(self.chain_for(c, kb))) for c, kb in self.all_paths]
        return min(vals), max(vals)

    def threshold(self, instance: TaskInstance) -> float:
        lo, hi = self.utility_range
        if unit_hash("peak", self.utility_seed, instance.id) < self.peak_fraction:
            return hi
        return lo + (hi - lo) * unit_hash("threshold", self.utility_seed, instance.id)

    def solves(self, signature: Signature, instance: TaskInstance) -> bool:
        return self.path_utility(signature) >= self.threshold(instance)

    def fitness(self, signature: Signature, instances: Sequence[TaskInstance], weights: Mapping[str, float]) -> float:
        """Weighted solve rate of a path; the oracle for brute-force checks."""
        total = sum(weights[i.id] for i in instances)
        hit = sum(weights[i.id] for i in instances if self.solves(signature, i))
        return hit / total


class MockBackend:
    def __init__(
        self,
        domain: HillDomain | None = None,
        *,
        oracle: Oracle | None = None,
        perturbation: float = 0.0,
        runtime: Callable[[Signature, TaskInstance], float] | None = None,
    ):
        self.domain = domain or HillDomain()
        self.boundaries = self.domain.boundaries
        self.oracle = oracle or self.domain.solves
        self.perturbation = perturbation
        self.runtime = runtime

    def generate_individual(
        self, task_context: str, excerpts: Sequence[KnowledgeExcerpt] | None = None, *, seed: int = 0
    ) -> str:
        if not task_context.strip():
            raise BackendError("empty task context")
        rng = np.random.default_rng([seed])
        choices = [int(rng.integers(len(o))) for o in self.domain.options]
        return serialize_chain(self.domain.chain_for(choices, kb=bool(excerpts)))

    def extract_chain(self, artifact: str) -> AoeChain:
        try:
            return parse_chain(artifact, validate=True, boundaries=self.boundaries)
        except (ChainParseError, ChainValidationError) as exc:
            raise BackendError(f"cannot extract chain: {exc}") from exc

    def synthesize_artifact(self, chain: AoeChain, *, seed: int = 0) -> str:
        report = validate_chain(chain, self.boundaries)
        if not report.ok:
            raise BackendError(f"cannot synthesize invalid chain: {report.violations[0]}")
        return serialize_chain(chain)

    def mutate_artifact(
        self,
        artifact: str,
        scope: MutationScope,
        excerpts: Sequence[KnowledgeExcerpt] | None = None,
        *,
        seed: int = 0,
    ) -> str:
        chain = self.extract_chain(artifact)
        rng = np.random.default_rng([seed])
        choices, kb = self.domain.decode(chain)
        guided = bool(excerpts)
        tag = f"rev {seed % 100003}"
        parts = list(split_by_phase(chain))
        targets = list(Phase) if scope.phase is None else [scope.phase]
        for phase in targets:
            i = int(phase) - 1
            n_opts = len(self.domain.options[i])
            new_kb = kb
            if guided:
                cands = []
                for _ in range(2):
                    opt = int(rng.integers(n_opts))
                    flag = bool(rng.random() < 0.5) if phase is Phase.MATHEMATICAL_MODELING else kb
                    cands.append((self.domain.segment_utility(phase, opt, flag), opt, flag))
                _, opt, new_kb = max(cands)
            else:
                opt = int(rng.integers(n_opts))
                if phase is Phase.MATHEMATICAL_MODELING and rng.random() < 0.5:
                    new_kb = not kb
            part = parts[i]
            seg = self.domain.segment(
                phase,
                opt,
                new_kb,
                entry=part.edges[0].start_state,
                exit_=part.edges[-1].end_state,
                tag=tag,
            )
            parts[i] = AoeChain(tuple(seg))
            if phase is Phase.MATHEMATICAL_MODELING:
                kb = new_kb
        edges = tuple(e for p in parts for e in p.edges)
        return serialize_chain(AoeChain(edges))

    def judge_equivalence(self, state_a: str, state_b: str, context: dict | None = None) -> bool:
        return normalize_label(state_a).casefold() == normalize_label(state_b).casefold()

    def execute(self, artifact: str, instance: TaskInstance, limits: ExecutionLimits) -> ExecutionTrace:
        try:
            chain = self.extract_chain(artifact)
        except BackendError as exc:
            return ExecutionTrace(Status.RUN_FAILED, None, None, [{"error": str(exc)}])
        sig = path_signature(chain)
        transcript = [
            {"step": i, "phase": int(e.phase), "type": e.kind.surface, "action": e.action}
            for i, e in enumerate(chain.edges)
        ]
        if self.runtime is not None and self.runtime(sig, instance) > limits.timeout_s:
            transcript.append({"error": "timeout"})
            return ExecutionTrace(Status.RUN_FAILED, None, chain, transcript)
        verdict = self.oracle(sig, instance)
        if verdict is None:
            return ExecutionTrace(Status.NO_NUMERIC, None, chain, transcript)
        if not verdict:
            return ExecutionTrace(Status.RUN_FAILED, None, chain, transcript)
        y = instance.ground_truth
        return ExecutionTrace(Status.SOLVED, y + abs(y) * self.perturbation if y else self.perturbation, chain, transcript)
