from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, MutableMapping, Sequence

from .backend.base import ExecutionLimits, GenerationBackend, artifact_digest
from .fitness import (
    DEFAULT_DELTA,
    DEFAULT_EPSILON_Y,
    EvalOutcome,
    Status,
    TaskInstance,
    instance_weights,
    subset_accuracy_report,
    weighted_accuracy,
)
from .individual import Individual

log = logging.getLogger(__name__)


def run_instance(
    backend: GenerationBackend, artifact: str, instance: TaskInstance, limits: ExecutionLimits
) -> EvalOutcome:
    """Execute once; any backend exception becomes a run-failed outcome."""
    try:
        trace = backend.execute(artifact, instance, limits)
    except Exception as exc:  # noqa: BLE001 - execution faults are outcomes, not errors
        log.debug("execution of %s failed: %s", instance.id, exc)
        return EvalOutcome(instance.id, Status.RUN_FAILED)
    if trace.status is Status.SOLVED:
        return EvalOutcome(instance.id, Status.SOLVED, trace.objective)
    return EvalOutcome(instance.id, trace.status)


def evaluate_population(
    population: Sequence[Individual],
    train_ids: Sequence[str],
    dataset: Mapping[str, TaskInstance],
    backend: GenerationBackend,
    weights: Mapping[str, float],
    *,
    limits: ExecutionLimits = ExecutionLimits(),
    delta: float = DEFAULT_DELTA,
    epsilon_y: float = DEFAULT_EPSILON_Y,
    workers: int = 1,
    cache: MutableMapping[str, float] | None = None,
) -> dict[str, float]:
    """Weighted train accuracy per individual id.

    With ``cache`` (artifact digest -> fitness), already-scored artifacts are
    not executed again.
    """
    if not train_ids:
        raise ValueError("train split is empty")
    instances = [dataset[i] for i in train_ids]
    digests = {ind.id: artifact_digest(ind.artifact) for ind in population}
    todo: dict[str, Individual] = {}
    for ind in population:
        d = digests[ind.id]
        if (cache is None or d not in cache) and d not in todo:
            todo[d] = ind
    jobs = [(d, inst) for d in todo for inst in instances]
    lock = threading.Lock()
    outcomes: dict[str, list[EvalOutcome]] = {d: [] for d in todo}

    def work(job: tuple[str, TaskInstance]) -> None:
        d, inst = job
        o = run_instance(backend, todo[d].artifact, inst, limits)
        with lock:
            outcomes[d].append(o)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, jobs))
    else:
        for job in jobs:
            work(job)

    # fixed summation order keeps scores independent of thread scheduling
    order = {iid: k for k, iid in enumerate(train_ids)}
    scores = {
        d: weighted_accuracy(sorted(os_, key=lambda o: order[o.instance_id]), weights, dataset, delta, epsilon_y)
        for d, os_ in outcomes.items()
    }
    if cache is not None:
        cache.update(scores)
        scores = {**cache, **scores}
    return {ind.id: scores[digests[ind.id]] for ind in population}


def evaluate_on_split(
    individual: Individual,
    instance_ids: Sequence[str],
    dataset: Sequence[TaskInstance],
    backend: GenerationBackend,
    subset_weights: Mapping[str, float],
    *,
    limits: ExecutionLimits = ExecutionLimits(),
    delta: float = DEFAULT_DELTA,
    epsilon_y: float = DEFAULT_EPSILON_Y,
) -> dict:
    """Per-subset accuracy and overall weighted accuracy on the given ids."""
    by_id = {inst.id: inst for inst in dataset}
    missing = [i for i in instance_ids if i not in by_id]
    if missing:
        raise KeyError(f"{len(missing)} split ids are not in the dataset, e.g. {missing[0]!r}")
    weights = instance_weights(subset_weights, dataset)
    outcomes = [run_instance(backend, individual.artifact, by_id[i], limits) for i in instance_ids]
    return subset_accuracy_report(outcomes, by_id, weights, delta, epsilon_y)
