"""Datasets, the weighted train/test split, and accuracy metrics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DELTA = 1e-3
DEFAULT_EPSILON_Y = 1e-9

BENCHMARK_SUBSET_SIZES = {"NL4OPT": 289, "EasyLP": 652, "ComplexLP": 211, "IndustryOR": 100, "BWOR": 82}
DEFAULT_SUBSET_WEIGHTS = {"NL4OPT": 2.0, "EasyLP": 1.0, "ComplexLP": 1.0, "IndustryOR": 3.0, "BWOR": 3.0}


class Status(str, Enum):
    SOLVED = "solved"
    RUN_FAILED = "run-failed"
    NO_NUMERIC = "no-numeric"


@dataclass(frozen=True)
class TaskInstance:
    id: str
    subset: str
    question: str
    ground_truth: float

    def to_dict(self) -> dict:
        return {"id": self.id, "subset": self.subset, "question": self.question, "ground_truth": self.ground_truth}


@dataclass(frozen=True)
class EvalOutcome:
    instance_id: str
    status: Status
    predicted: float | None = None

    def __post_init__(self) -> None:
        if (self.status is Status.SOLVED) != (self.predicted is not None):
            raise ValueError("predicted must be present exactly when status is solved")


@dataclass(frozen=True)
class SplitSpec:
    subset_weights: Mapping[str, float]
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int
    weighted_mass: float = field(default=float("nan"), compare=False)

    def __post_init__(self) -> None:
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test ids overlap")

    def to_dict(self) -> dict:
        return {
            "subset_weights": dict(sorted(self.subset_weights.items())),
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "seed": self.seed,
            "weighted_mass": self.weighted_mass,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitSpec":
        return cls(
            {k: float(v) for k, v in d["subset_weights"].items()},
            tuple(d["train_ids"]),
            tuple(d["test_ids"]),
            int(d["seed"]),
            float(d.get("weighted_mass", float("nan"))),
        )


class DatasetError(ValueError):
    pass


def load_dataset(path: str | Path) -> list[TaskInstance]:
    """Read line-delimited {id, subset, question, ground_truth} records."""
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                inst = TaskInstance(str(rec["id"]), str(rec["subset"]), str(rec["question"]), float(rec["ground_truth"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad record ({exc})") from None
            if inst.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {inst.id!r}")
            seen.add(inst.id)
            out.append(inst)
    return out


def save_dataset(instances: Iterable[TaskInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), ensure_ascii=False) + "\n")


def synthetic_dataset(sizes: Mapping[str, int] = BENCHMARK_SUBSET_SIZES, seed: int = 0) -> list[TaskInstance]:
    """Placeholder instances with the given subset sizes and random objectives."""
    rng = np.random.default_rng(seed)
    out = []
    for subset, n in sizes.items():
        for i in range(n):
            y = float(np.round(rng.uniform(-500, 5000), 2))
            out.append(TaskInstance(f"{subset}-{i:04d}", subset, f"{subset} synthetic problem {i}", y))
    return out


def relative_correct(
    y_hat: float, y: float, delta: float = DEFAULT_DELTA, epsilon_y: float = DEFAULT_EPSILON_Y
) -> bool:
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not (math.isfinite(y_hat) and math.isfinite(y)):
        return False
    return abs(y_hat - y) / max(abs(y), epsilon_y) <= delta


def is_correct(
    outcome: EvalOutcome, instance: TaskInstance, delta: float = DEFAULT_DELTA, epsilon_y: float = DEFAULT_EPSILON_Y
) -> bool:
    if outcome.status is not Status.SOLVED or outcome.predicted is None:
        return False
    return relative_correct(outcome.predicted, instance.ground_truth, delta, epsilon_y)


def _instances_by_id(instances: Mapping[str, TaskInstance] | Iterable[TaskInstance]) -> Mapping[str, TaskInstance]:
    if isinstance(instances, Mapping):
        return instances
    return {i.id: i for i in instances}


def accuracy(
    outcomes: Sequence[EvalOutcome],
    instances: Mapping[str, TaskInstance] | Iterable[TaskInstance],
    delta: float = DEFAULT_DELTA,
    epsilon_y: float = DEFAULT_EPSILON_Y,
) -> float:
    by_id = _instances_by_id(instances)
    if not outcomes:
        raise ValueError("no outcomes")
    hits = 0
    for o in outcomes:
        if o.instance_id not in by_id:
            raise KeyError(f"outcome for unknown instance {o.instance_id!r}")
        hits += is_correct(o, by_id[o.instance_id], delta, epsilon_y)
    return hits / len(outcomes)


def subset_sizes(dataset: Iterable[TaskInstance]) -> Counter:
    return Counter(i.subset for i in dataset)


def instance_weights(
    subset_weights: Mapping[str, float], dataset: Sequence[TaskInstance]
) -> dict[str, float]:
    """u_i = weight of i's subset / size of that subset in the full dataset."""
    sizes = subset_sizes(dataset)
    out = {}
    for inst in dataset:
        if inst.subset not in subset_weights:
            raise KeyError(f"subset {inst.subset!r} has no weight")
        out[inst.id] = subset_weights[inst.subset] / sizes[inst.subset]
    return out


def instance_weight(spec: SplitSpec, dataset: Sequence[TaskInstance], instance_id: str) -> float:
    by_id = {i.id: i for i in dataset}
    inst = by_id[instance_id]
    if inst.subset not in spec.subset_weights:
        raise KeyError(f"subset {inst.subset!r} has no weight")
    size = sum(1 for i in dataset if i.subset == inst.subset)
    return spec.subset_weights[inst.subset] / size


def weighted_accuracy(
    outcomes: Sequence[EvalOutcome],
    weights: Mapping[str, float],
    instances: Mapping[str, TaskInstance] | Iterable[TaskInstance],
    delta: float = DEFAULT_DELTA,
    epsilon_y: float = DEFAULT_EPSILON_Y,
) -> float:
    by_id = _instances_by_id(instances)
    total = 0.0
    hit = 0.0
    for o in outcomes:
        u = weights[o.instance_id]
        total += u
        if is_correct(o, by_id[o.instance_id], delta, epsilon_y):
            hit += u
    if total <= 0:
        raise ZeroDivisionError("total instance weight is zero")
    return hit / total


def make_split(
    dataset: Sequence[TaskInstance],
    subset_weights: Mapping[str, float],
    target_count: int,
    seed: int,
) -> SplitSpec:
    """Draw ``target_count`` train ids one at a time, proportional to u_i.

    Each draw removes the chosen item and renormalizes over the rest.
    """
    if target_count > len(dataset) or target_count < 0:
        raise ValueError(f"target {target_count} outside [0, {len(dataset)}]")
    weights = instance_weights(subset_weights, dataset)
    ids = [i.id for i in dataset]
    u = np.array([weights[i] for i in ids], dtype=float)
    rng = np.random.default_rng(seed)
    remaining = u.copy()
    chosen: list[int] = []
    for _ in range(target_count):
        cum = np.cumsum(remaining)
        total = cum[-1]
        if total <= 0:
            # only zero-weight items left; fall back to uniform over them
            pool = [k for k in range(len(ids)) if k not in set(chosen)]
            k = pool[int(rng.integers(len(pool)))]
        else:
            k = int(np.searchsorted(cum, rng.random() * total, side="right"))
            k = min(k, len(ids) - 1)
            while remaining[k] == 0:  # guards the float edge at the top of cum
                k -= 1
        chosen.append(k)
        remaining[k] = 0.0
    chosen_set = set(chosen)
    train = tuple(sorted(ids[k] for k in chosen_set))
    test = tuple(sorted(ids[k] for k in range(len(ids)) if k not in chosen_set))
    mass = float(u[list(chosen_set)].sum() / u.sum()) if chosen_set else 0.0
    return SplitSpec(dict(subset_weights), train, test, seed, mass)


def subset_accuracy_report(
    outcomes: Sequence[EvalOutcome],
    instances: Mapping[str, TaskInstance],
    weights: Mapping[str, float],
    delta: float = DEFAULT_DELTA,
    epsilon_y: float = DEFAULT_EPSILON_Y,
) -> dict:
    """Per-subset accuracy plus overall accuracy and weighted accuracy."""
    by_subset: dict[str, list[EvalOutcome]] = {}
    for o in outcomes:
        by_subset.setdefault(instances[o.instance_id].subset, []).append(o)
    return {
        "subsets": {
            s: {"n": len(os_), "accuracy": accuracy(os_, instances, delta, epsilon_y)}
            for s, os_ in sorted(by_subset.items())
        },
        "accuracy": accuracy(outcomes, instances, delta, epsilon_y),
        "weighted_accuracy": weighted_accuracy(outcomes, weights, instances, delta, epsilon_y),
        "n": len(outcomes),
    }
