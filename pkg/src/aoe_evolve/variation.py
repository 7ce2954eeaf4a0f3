"""Hybrid initialization, knowledge retrieval and semantic mutation."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend.base import BackendError, GenerationBackend, KnowledgeExcerpt, MutationScope
from .chain import Phase, path_signature, split_by_phase
from .individual import Individual, IndividualError, Population, Provenance, check_individual

log = logging.getLogger(__name__)

# 0 and 1 are structural (bounds, binaries); anything else looks instance-specific
_NUMERAL = re.compile(r"(?<![A-Za-z_\d.])\d+(?:\.\d+)?(?![A-Za-z_\d])")
_ALLOWED_NUMERALS = {"0", "1"}
_TOKEN = re.compile(r"[a-z0-9]+")


class KnowledgeError(ValueError):
    pass


class MutationError(RuntimeError):
    pass


def floor_count(n: int, ratio: float) -> int:
    """floor(n * ratio), tolerant of binary rounding (10 * 0.3 -> 3)."""
    return int(math.floor(n * ratio + 1e-9))


def numeral_flags(excerpt: KnowledgeExcerpt) -> list[str]:
    text = f"{excerpt.theoretical_summary}\n{excerpt.abstract_template}"
    return [m for m in _NUMERAL.findall(text) if m not in _ALLOWED_NUMERALS]


@dataclass(frozen=True)
class KnowledgeStore:
    excerpts: tuple[KnowledgeExcerpt, ...] = ()

    def __len__(self) -> int:
        return len(self.excerpts)


def load_kb(path: str | Path, *, strict: bool = True) -> KnowledgeStore:
    """Read a JSON array of excerpts.

    Entries carrying instance-like numerals raise in strict mode and are
    dropped otherwise.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise KnowledgeError(f"{path}: not JSON ({exc})") from None
    if not isinstance(raw, list):
        raise KnowledgeError(f"{path}: expected a JSON array")
    out = []
    for i, obj in enumerate(raw):
        try:
            ex = KnowledgeExcerpt(obj["component_name"], obj["theoretical_summary"], obj["abstract_template"])
        except (KeyError, TypeError, ValueError) as exc:
            raise KnowledgeError(f"{path}: entry {i} malformed ({exc})") from None
        flags = numeral_flags(ex)
        if flags:
            if strict:
                raise KnowledgeError(f"{path}: entry {i} ({ex.component_name}) has numerals {flags}")
            log.warning("dropping knowledge entry %d (%s): numerals %s", i, ex.component_name, flags)
            continue
        out.append(ex)
    return KnowledgeStore(tuple(out))


def save_kb(store: KnowledgeStore, path: str | Path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in store.excerpts], indent=2) + "\n", encoding="utf-8")


def _tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def kb_score(excerpt: KnowledgeExcerpt, query: str) -> tuple[int, int]:
    """(exact name hit, shared term count)."""
    exact = int(excerpt.component_name.strip().lower() == query.strip().lower())
    terms = _tokens(f"{excerpt.component_name} {excerpt.theoretical_summary} {excerpt.abstract_template}")
    return exact, len(terms & _tokens(query))


def kb_retrieve(kb: KnowledgeStore, query: str, k: int) -> list[KnowledgeExcerpt]:
    if k < 0:
        raise ValueError("k must be non-negative")
    ranked = sorted(
        range(len(kb.excerpts)),
        key=lambda i: (*(-s for s in kb_score(kb.excerpts[i], query)), i),
    )
    return [kb.excerpts[i] for i in ranked[:k]]


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31))


def _create(
    backend: GenerationBackend,
    ind_id: str,
    task_context: str,
    excerpts: Sequence[KnowledgeExcerpt],
    provenance: Provenance,
    rng: np.random.Generator,
) -> Individual:
    last: Exception | None = None
    for _ in range(2):
        try:
            artifact = backend.generate_individual(task_context, list(excerpts) or None, seed=_seed(rng))
            chain = backend.extract_chain(artifact)
            return check_individual(Individual(ind_id, artifact, chain, provenance), backend.boundaries)
        except (BackendError, IndividualError) as exc:
            log.warning("generation for %s failed: %s", ind_id, exc)
            last = exc
    raise BackendError(f"generation for {ind_id} failed twice: {last}")


def hybrid_initialize(
    n: int,
    alpha_init: float,
    kb: KnowledgeStore,
    backend: GenerationBackend,
    rngs: Sequence[np.random.Generator],
    *,
    task_context: str,
    top_k: int = 3,
    id_prefix: str = "g0",
) -> Population:
    """First floor(n * alpha_init) slots are knowledge-guided, the rest plain.

    ``rngs`` holds one independent stream per slot.
    """
    if n < 1:
        raise ValueError("population size must be at least 1")
    if not 0.0 <= alpha_init <= 1.0:
        raise ValueError("alpha_init must lie in [0, 1]")
    if len(rngs) != n:
        raise ValueError("need one rng stream per slot")
    n_kb = floor_count(n, alpha_init)
    excerpts = kb_retrieve(kb, task_context, top_k)
    pop = []
    for slot in range(n):
        guided = slot < n_kb
        pop.append(
            _create(
                backend,
                f"{id_prefix}-{slot:02d}",
                task_context,
                excerpts if guided else (),
                Provenance.INIT_KB if guided else Provenance.INIT_PLAIN,
                rngs[slot],
            )
        )
    return pop


def draw_mutation_mode(
    rng: np.random.Generator, beta_strat: float, beta_learn: float
) -> tuple[MutationScope, bool]:
    """Scope (phase-level with prob. beta_strat, phase uniform) and guidance flag."""
    phase_level = rng.random() < beta_strat
    guided = rng.random() < beta_learn
    scope = MutationScope(Phase(int(rng.integers(1, 4)))) if phase_level else MutationScope(None)
    return scope, bool(guided)


def _mutation_query(target: Individual, scope: MutationScope) -> str:
    parts = split_by_phase(target.chain)
    edges = target.chain.edges if scope.phase is None else parts[int(scope.phase) - 1].edges
    return " ".join(f"{e.action} {e.end_state}" for e in edges)


def mutate(
    target: Individual,
    kb: KnowledgeStore,
    beta_learn: float,
    beta_strat: float,
    rng: np.random.Generator,
    backend: GenerationBackend,
    *,
    new_id: str = "mutated",
    top_k: int = 3,
) -> Individual:
    scope, guided = draw_mutation_mode(rng, beta_strat, beta_learn)
    excerpts = kb_retrieve(kb, _mutation_query(target, scope), top_k) if guided else []
    provenance = Provenance.MUTATED_WHOLE if scope.is_whole else Provenance.MUTATED_PHASE
    before = [path_signature(p) for p in split_by_phase(target.chain)]
    last: Exception | None = None
    for _ in range(2):
        try:
            artifact = backend.mutate_artifact(target.artifact, scope, excerpts or None, seed=_seed(rng))
            chain = backend.extract_chain(artifact)
            child = check_individual(Individual(new_id, artifact, chain, provenance, target.id), backend.boundaries)
        except (BackendError, IndividualError) as exc:
            last = exc
            continue
        if scope.phase is not None:
            after = [path_signature(p) for p in split_by_phase(child.chain)]
            touched = int(scope.phase) - 1
            if any(a != b for i, (a, b) in enumerate(zip(before, after)) if i != touched):
                last = MutationError(f"mutation of phase {int(scope.phase)} leaked into other phases")
                continue
        return child
    raise MutationError(f"mutation of {target.id} failed twice: {last}")
