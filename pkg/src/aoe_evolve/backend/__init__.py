from .base import (
    BackendError,
    ExecutionLimits,
    ExecutionTrace,
    GenerationBackend,
    KnowledgeExcerpt,
    MutationScope,
    TemplateError,
    artifact_digest,
)
from .mock import HillDomain, MockBackend

__all__ = [
    "BackendError",
    "ExecutionLimits",
    "ExecutionTrace",
    "GenerationBackend",
    "HillDomain",
    "KnowledgeExcerpt",
    "MockBackend",
    "MutationScope",
    "TemplateError",
    "artifact_digest",
]
