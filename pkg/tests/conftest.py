from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import pytest
from hypothesis import strategies as st

from aoe_evolve.chain import (
    DEFAULT_BOUNDARIES,
    AoeChain,
    AoeEdgeRecord,
    EdgeKind,
    Phase,
    PhaseBoundaries,
    parse_chain,
)

DATA = Path(__file__).parent / "data"
CASE_STUDY_BOUNDARIES = PhaseBoundaries(("Agent Start", "Txt Ready", "Txt Ready", "Bench. Done"))
LABELS = ("Ques Loaded", "Sets Defined", "Vars Defined", "Model Built", "Code Ready", "Obj Parsed")
KINDS = (EdgeKind.WORK, EdgeKind.REASON, EdgeKind.TOOL)


def make_chain(
    interiors: Sequence[Sequence[str]] = (("Ques Parsed",), ("LP Formulated",), ("Code Generated",)),
    kinds: Sequence[Sequence[EdgeKind]] | None = None,
    boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES,
    source: str = "",
) -> AoeChain:
    """Chain visiting entry -> interiors -> exit in every phase.

    Default kinds: reason into interior states, work into the exit.
    """
    edges = []
    for p, inner in zip(Phase, interiors):
        states = [boundaries.entry(p), *inner, boundaries.exit(p)]
        for i in range(len(states) - 1):
            if kinds is not None:
                kind = kinds[int(p) - 1][i]
            else:
                kind = EdgeKind.WORK if i == len(states) - 2 else EdgeKind.REASON
            edges.append(
                AoeEdgeRecord(p, kind, f"step {states[i + 1]}", states[i], states[i + 1], f"do {states[i + 1]}")
            )
    return AoeChain(tuple(edges), source)


def random_chain(rng: np.random.Generator, labels: Sequence[str] = LABELS, max_inner: int = 3) -> AoeChain:
    interiors, kinds = [], []
    for _ in Phase:
        k = int(rng.integers(0, max_inner + 1))
        inner = [str(labels[int(i)]) for i in rng.integers(0, len(labels), size=k)]
        interiors.append(inner)
        kinds.append([KINDS[int(i)] for i in rng.integers(0, 3, size=k + 1)])
    return make_chain(interiors, kinds)


@st.composite
def chains(draw, labels: Sequence[str] = LABELS, max_inner: int = 3) -> AoeChain:
    interiors, kinds = [], []
    for _ in Phase:
        inner = draw(st.lists(st.sampled_from(labels), max_size=max_inner))
        interiors.append(inner)
        kinds.append(draw(st.lists(st.sampled_from(KINDS), min_size=len(inner) + 1, max_size=len(inner) + 1)))
    return make_chain(interiors, kinds)


def load_case_study() -> AoeChain:
    return parse_chain((DATA / "case_study_chain.json").read_text(encoding="utf-8"))


@pytest.fixture
def case_study() -> AoeChain:
    return load_case_study()


# -- hill-domain runs ----------------------------------------------------------

HILL_SUBSETS = {"NL4OPT": 20, "EasyLP": 20, "ComplexLP": 20, "IndustryOR": 20, "BWOR": 20}
HILL_TRAIN = 40


def hill_setup(seed: int, peak_fraction: float = 0.1):
    """(backend, dataset, split) for a seeded synthetic hill-domain problem."""
    from aoe_evolve.backend.mock import HillDomain, MockBackend
    from aoe_evolve.fitness import DEFAULT_SUBSET_WEIGHTS, make_split, synthetic_dataset

    backend = MockBackend(HillDomain(utility_seed=seed, peak_fraction=peak_fraction))
    dataset = synthetic_dataset(HILL_SUBSETS, seed=seed)
    split = make_split(dataset, DEFAULT_SUBSET_WEIGHTS, HILL_TRAIN, seed)
    return backend, dataset, split


def hill_optimum(backend, dataset, split) -> float:
    """Brute-force best weighted train accuracy over every feasible path."""
    from aoe_evolve.chain import path_signature
    from aoe_evolve.fitness import instance_weights

    dom = backend.domain
    by_id = {i.id: i for i in dataset}
    train = [by_id[i] for i in split.train_ids]
    w = instance_weights(split.subset_weights, dataset)
    return max(dom.fitness(path_signature(dom.chain_for(c, kb)), train, w) for c, kb in dom.all_paths)


def hill_run(seed: int, **overrides):
    from aoe_evolve.cli import SAMPLE_KB
    from aoe_evolve.engine import EvolutionConfig, coevolve

    backend, dataset, split = hill_setup(seed)
    config = EvolutionConfig(seed=seed, **overrides)
    return coevolve(config, split, dataset, SAMPLE_KB, backend), (backend, dataset, split)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
