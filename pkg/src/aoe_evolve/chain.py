"""Phase-wise AOE chains: parsing, validation, canonical serialization."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence


class Phase(IntEnum):
    PROBLEM_ANALYSIS = 1
    MATHEMATICAL_MODELING = 2
    CODE_GENERATION = 3

    @property
    def title(self) -> str:
        return _PHASE_TITLES[self]

    @classmethod
    def parse(cls, value: object) -> "Phase":
        if isinstance(value, int) and not isinstance(value, bool):
            return cls(value)
        text = str(value).strip()
        key = re.sub(r"[^a-z0-9]", "", text.lower())
        try:
            return _PHASE_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown phase {value!r}") from None


_PHASE_TITLES = {
    Phase.PROBLEM_ANALYSIS: "Problem Analysis",
    Phase.MATHEMATICAL_MODELING: "Mathematical Modeling",
    Phase.CODE_GENERATION: "Code Generation",
}

_PHASE_ALIASES: dict[str, Phase] = {}
for _p in Phase:
    _compact = re.sub(r"[^a-z0-9]", "", _PHASE_TITLES[_p].lower())
    _PHASE_ALIASES[_compact] = _p
    _PHASE_ALIASES[f"{int(_p)}{_compact}"] = _p
    _PHASE_ALIASES[str(int(_p))] = _p
    _PHASE_ALIASES[f"stage{int(_p)}"] = _p
    _PHASE_ALIASES[f"phase{int(_p)}"] = _p


class EdgeKind(str, Enum):
    WORK = "work"
    REASON = "reason"
    TOOL = "tool"

    @property
    def surface(self) -> str:
        return _KIND_TO_SURFACE[self]

    @classmethod
    def from_surface(cls, surface: str) -> "EdgeKind":
        try:
            return _SURFACE_TO_KIND[surface]
        except KeyError:
            raise ValueError(f"unknown edge type {surface!r}") from None


_SURFACE_TO_KIND = {"code": EdgeKind.WORK, "prompt": EdgeKind.REASON, "tool": EdgeKind.TOOL}
_KIND_TO_SURFACE = {v: k for k, v in _SURFACE_TO_KIND.items()}

FIELD_ORDER = ("phase", "type", "action", "start_state", "end_state", "key")


def normalize_label(label: str) -> str:
    """Trim and collapse internal whitespace; case is preserved."""
    return " ".join(label.split())


@dataclass(frozen=True)
class PhaseBoundaries:
    """The four mandatory state labels: source, two inter-phase exits, sink."""

    labels: tuple[str, str, str, str] = (
        "Agent Initialization",
        "Problem Analysis Complete",
        "Mathematical Modeling Complete",
        "Code Generation Complete",
    )

    def __post_init__(self) -> None:
        if len(self.labels) != 4 or not all(normalize_label(x) for x in self.labels):
            raise ValueError("boundaries need four non-empty labels")
        object.__setattr__(self, "labels", tuple(normalize_label(x) for x in self.labels))

    @property
    def source(self) -> str:
        return self.labels[0]

    @property
    def sink(self) -> str:
        return self.labels[3]

    def entry(self, phase: Phase) -> str:
        return self.labels[int(phase) - 1]

    def exit(self, phase: Phase) -> str:
        return self.labels[int(phase)]


DEFAULT_BOUNDARIES = PhaseBoundaries()


@dataclass(frozen=True)
class AoeEdgeRecord:
    phase: Phase
    kind: EdgeKind
    action: str
    start_state: str
    end_state: str
    key: str

    def to_record(self) -> dict[str, str]:
        return {
            "phase": self.phase.title,
            "type": self.kind.surface,
            "action": self.action,
            "start_state": self.start_state,
            "end_state": self.end_state,
            "key": self.key,
        }


@dataclass(frozen=True)
class AoeChain:
    edges: tuple[AoeEdgeRecord, ...]
    source_individual: str = field(default="", compare=False)

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def states(self) -> list[str]:
        """Normalized state sequence, one longer than the edge list."""
        if not self.edges:
            return []
        out = [normalize_label(self.edges[0].start_state)]
        out.extend(normalize_label(e.end_state) for e in self.edges)
        return out

    def state_phases(self) -> list[Phase]:
        """Phase owning each state: the phase of the edge that reaches it.

        The initial state belongs to the first edge's phase, so an exit
        boundary is owned by the phase it closes.
        """
        if not self.edges:
            return []
        return [self.edges[0].phase] + [e.phase for e in self.edges]


class ChainParseError(ValueError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        prefix = f"record {index}: " if index is not None else ""
        super().__init__(prefix + message)


class ChainValidationError(ValueError):
    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Violation:
    kind: str  # continuity | phase_order | missing_phase | boundary | empty
    index: int | None
    message: str

    def __str__(self) -> str:
        where = f" at index {self.index}" if self.index is not None else ""
        return f"{self.kind}{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _record_from_obj(obj: object, index: int) -> AoeEdgeRecord:
    if not isinstance(obj, dict):
        raise ChainParseError("expected an object", index)
    for name in FIELD_ORDER:
        if name not in obj:
            raise ChainParseError(f"missing field {name!r}", index)
        value = obj[name]
        if not isinstance(value, (str, int)) or isinstance(value, bool):
            raise ChainParseError(f"field {name!r} must be text", index)
        if name != "phase" and not str(value).strip():
            raise ChainParseError(f"field {name!r} is empty", index)
    extra = set(obj) - set(FIELD_ORDER)
    if extra:
        raise ChainParseError(f"unexpected fields {sorted(extra)}", index)
    try:
        phase = Phase.parse(obj["phase"])
    except ValueError as exc:
        raise ChainParseError(str(exc), index) from None
    try:
        kind = EdgeKind.from_surface(str(obj["type"]).strip())
    except ValueError as exc:
        raise ChainParseError(str(exc), index) from None
    return AoeEdgeRecord(
        phase=phase,
        kind=kind,
        action=str(obj["action"]),
        start_state=str(obj["start_state"]),
        end_state=str(obj["end_state"]),
        key=str(obj["key"]),
    )


def chain_from_records(records: Iterable[object], source_individual: str = "") -> AoeChain:
    edges = tuple(_record_from_obj(obj, i) for i, obj in enumerate(records))
    if not edges:
        raise ChainParseError("array cannot be empty")
    return AoeChain(edges, source_individual)


def parse_chain(
    text: str,
    *,
    source_individual: str = "",
    validate: bool = False,
    boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES,
) -> AoeChain:
    """Parse a chain document (a JSON array of six-field records).

    With ``validate=True`` an invalid chain raises ChainValidationError
    instead of being returned for inspection.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChainParseError(f"malformed document: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(doc, list):
        raise ChainParseError("document must be a JSON array")
    chain = chain_from_records(doc, source_individual)
    if validate:
        report = validate_chain(chain, boundaries)
        if not report.ok:
            raise ChainValidationError(report.violations)
    return chain


def chain_to_records(chain: AoeChain) -> list[dict[str, str]]:
    return [e.to_record() for e in chain.edges]


def serialize_chain(chain: AoeChain) -> str:
    return json.dumps(chain_to_records(chain), ensure_ascii=False, indent=2) + "\n"


def validate_chain(chain: AoeChain, boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES) -> ValidationReport:
    edges = chain.edges
    if not edges:
        return ValidationReport((Violation("empty", None, "chain has no edges"),))
    out: list[Violation] = []

    for i in range(1, len(edges)):
        prev_end = normalize_label(edges[i - 1].end_state)
        start = normalize_label(edges[i].start_state)
        if prev_end != start:
            out.append(Violation("continuity", i, f"{start!r} does not continue from {prev_end!r}"))

    for i in range(1, len(edges)):
        if edges[i].phase < edges[i - 1].phase:
            out.append(
                Violation(
                    "phase_order",
                    i,
                    f"phase {int(edges[i].phase)} follows phase {int(edges[i - 1].phase)}",
                )
            )
        elif int(edges[i].phase) > int(edges[i - 1].phase) + 1:
            out.append(
                Violation(
                    "phase_order",
                    i,
                    f"phase {int(edges[i - 1].phase)} jumps to phase {int(edges[i].phase)}",
                )
            )

    seen = {e.phase for e in edges}
    for p in Phase:
        if p not in seen:
            out.append(Violation("missing_phase", None, f"phase {int(p)} ({p.title}) is never visited"))

    # boundary checks use the first and last edge of each contiguous phase block
    first: dict[Phase, int] = {}
    last: dict[Phase, int] = {}
    for i, e in enumerate(edges):
        first.setdefault(e.phase, i)
        last[e.phase] = i
    for p in Phase:
        if p not in first:
            continue
        i, j = first[p], last[p]
        entry = normalize_label(edges[i].start_state)
        if entry != boundaries.entry(p):
            out.append(
                Violation("boundary", i, f"phase {int(p)} must start at {boundaries.entry(p)!r}, got {entry!r}")
            )
        exit_ = normalize_label(edges[j].end_state)
        if exit_ != boundaries.exit(p):
            out.append(
                Violation("boundary", j, f"phase {int(p)} must end at {boundaries.exit(p)!r}, got {exit_!r}")
            )
    return ValidationReport(tuple(out))


Signature = tuple[tuple[str, str, EdgeKind], ...]


def path_signature(chain: AoeChain) -> Signature:
    return tuple(
        (normalize_label(e.start_state), normalize_label(e.end_state), e.kind) for e in chain.edges
    )


def split_by_phase(chain: AoeChain) -> tuple[AoeChain, AoeChain, AoeChain]:
    parts = tuple(
        AoeChain(tuple(e for e in chain.edges if e.phase == p), chain.source_individual) for p in Phase
    )
    return parts  # type: ignore[return-value]


def concat_chains(parts: Iterable[AoeChain], source_individual: str = "") -> AoeChain:
    edges: list[AoeEdgeRecord] = []
    for part in parts:
        edges.extend(part.edges)
    return AoeChain(tuple(edges), source_individual)
