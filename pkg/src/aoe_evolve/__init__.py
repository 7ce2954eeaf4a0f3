"""Co-evolution of an architecture graph and executable reasoning workflows."""

from .chain import AoeChain, AoeEdgeRecord, EdgeKind, Phase, PhaseBoundaries, parse_chain, validate_chain
from .engine import EvolutionConfig, coevolve
from .graph import ArchGraph

__version__ = "0.1.0"

__all__ = [
    "AoeChain",
    "AoeEdgeRecord",
    "ArchGraph",
    "EdgeKind",
    "EvolutionConfig",
    "Phase",
    "PhaseBoundaries",
    "coevolve",
    "parse_chain",
    "validate_chain",
]
