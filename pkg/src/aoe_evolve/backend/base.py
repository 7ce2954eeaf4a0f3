from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence, runtime_checkable

from ..chain import AoeChain, Phase, PhaseBoundaries
from ..fitness import Status, TaskInstance

CAPABILITIES = ("generate", "extract_chain", "synthesize", "mutate", "judge", "execute")


class BackendError(RuntimeError):
    """A backend capability failed; callers may retry or refill."""


class TemplateError(BackendError):
    pass


@dataclass(frozen=True)
class KnowledgeExcerpt:
    component_name: str
    theoretical_summary: str
    abstract_template: str

    def __post_init__(self) -> None:
        for name in ("component_name", "theoretical_summary", "abstract_template"):
            if not str(getattr(self, name)).strip():
                raise ValueError(f"knowledge excerpt field {name!r} is empty")

    def to_dict(self) -> dict[str, str]:
        return {
            "component_name": self.component_name,
            "theoretical_summary": self.theoretical_summary,
            "abstract_template": self.abstract_template,
        }

    def render(self) -> str:
        return f"[{self.component_name}]\n{self.theoretical_summary}\nTemplate:\n{self.abstract_template}"


@dataclass(frozen=True)
class MutationScope:
    """Phase-level when ``phase`` is set, whole-individual otherwise."""

    phase: Phase | None = None

    @property
    def is_whole(self) -> bool:
        return self.phase is None

    def describe(self) -> str:
        if self.phase is None:
            return "the whole workflow (all three phases)"
        return f"only phase {int(self.phase)} ({self.phase.title}); leave every other phase unchanged"


WHOLE = MutationScope(None)


@dataclass(frozen=True)
class ExecutionLimits:
    timeout_s: float = 120.0
    max_output_chars: int = 200_000


@dataclass(frozen=True)
class BackendRequest:
    capability: str
    template_id: str
    payload: dict[str, Any]

    def __post_init__(self) -> None:
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability {self.capability!r}")


@dataclass
class ExecutionTrace:
    status: Status
    objective: float | None
    chain: AoeChain | None
    transcript: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if (self.status is Status.SOLVED) != (self.objective is not None):
            raise ValueError("objective must be present exactly when status is solved")


def artifact_digest(artifact: str) -> str:
    return hashlib.sha256(artifact.encode("utf-8")).hexdigest()


@runtime_checkable
class GenerationBackend(Protocol):
    boundaries: PhaseBoundaries

    def generate_individual(
        self, task_context: str, excerpts: Sequence[KnowledgeExcerpt] | None = None, *, seed: int = 0
    ) -> str: ...

    def extract_chain(self, artifact: str) -> AoeChain: ...

    def synthesize_artifact(self, chain: AoeChain, *, seed: int = 0) -> str: ...

    def mutate_artifact(
        self,
        artifact: str,
        scope: MutationScope,
        excerpts: Sequence[KnowledgeExcerpt] | None = None,
        *,
        seed: int = 0,
    ) -> str: ...

    def judge_equivalence(self, state_a: str, state_b: str, context: dict | None = None) -> bool: ...

    def execute(self, artifact: str, instance: TaskInstance, limits: ExecutionLimits) -> ExecutionTrace: ...
