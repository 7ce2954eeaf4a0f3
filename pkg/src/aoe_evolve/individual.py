from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

from .chain import (
    DEFAULT_BOUNDARIES,
    AoeChain,
    PhaseBoundaries,
    Signature,
    chain_from_records,
    chain_to_records,
    path_signature,
    validate_chain,
)


class Provenance(str, Enum):
    INIT_KB = "init-kb"
    INIT_PLAIN = "init-plain"
    ELITE = "elite"
    RECOMBINED = "recombined"
    MUTATED_PHASE = "mutated-phase"
    MUTATED_WHOLE = "mutated-whole"


class IndividualError(ValueError):
    pass


@dataclass(frozen=True)
class Individual:
    id: str
    artifact: str
    chain: AoeChain
    provenance: Provenance
    parent_id: str | None = None
    path: Signature = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", path_signature(self.chain))

    def as_elite(self) -> "Individual":
        return replace(self, provenance=Provenance.ELITE)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "provenance": self.provenance.value,
            "parent_id": self.parent_id,
            "artifact": self.artifact,
            "chain": chain_to_records(self.chain),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Individual":
        return cls(
            str(d["id"]),
            str(d["artifact"]),
            chain_from_records(d["chain"], source_individual=str(d["id"])),
            Provenance(d["provenance"]),
            d.get("parent_id"),
        )


Population = list[Individual]


def check_individual(ind: Individual, boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES) -> Individual:
    """Shared postcondition for every operator: valid chain, consistent path."""
    report = validate_chain(ind.chain, boundaries)
    if not report.ok:
        raise IndividualError(f"{ind.id}: invalid chain ({report.violations[0]})")
    if ind.path != path_signature(ind.chain):
        raise IndividualError(f"{ind.id}: path does not match chain")
    if not ind.artifact:
        raise IndividualError(f"{ind.id}: empty artifact")
    return ind
