"""Run configuration, checkpoints, run logs and graph export."""

from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

from .chain import Phase
from .engine import DEFAULT_TASK_CONTEXT, EvolutionConfig, GenerationReport, RunState
from .fitness import DEFAULT_SUBSET_WEIGHTS
from .graph import ArchGraph
from .individual import Individual

CHECKPOINT_FORMAT = 1

# flat config keys -> EvolutionConfig fields
CONFIG_ALIASES = {
    "population_size": "n",
    "iteration_depth": "t_max",
    "init_ratio": "alpha_init",
    "mutation_ratio": "beta_mut",
    "guidance_rate": "beta_learn",
    "scope_rate": "beta_strat",
    "architecture_rate": "alpha",
    "exploration_parameter": "gamma",
    "pruning_threshold": "tau",
    "elite_rate": "beta_elite",
}
_EVOLUTION_KEYS = {f.name for f in fields(EvolutionConfig)} - set(CONFIG_ALIASES.values())
_PATH_KEYS = ("dataset", "kb", "split", "out_dir", "transcript", "replay")


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    dataset: str = "dataset.jsonl"
    kb: str | None = None
    split: str | None = None
    train_size: int = 120
    split_seed: int = 0
    subset_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SUBSET_WEIGHTS))
    backend: str = "mock"
    out_dir: str = "runs/default"
    timeout_s: float = 120.0
    max_output_chars: int = 200_000
    task_context: str = DEFAULT_TASK_CONTEXT
    # mock backend
    utility_seed: int = 0
    perturbation: float = 0.0
    peak_fraction: float = 0.0
    # remote backend
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "LLM_API_KEY"
    temperature: float = 1.0
    max_tokens: int = 8192
    transcript: str | None = None
    replay: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "remote"):
            raise ConfigError(f"backend must be 'mock' or 'remote', got {self.backend!r}")
        if self.backend == "remote" and not (self.endpoint and self.model):
            raise ConfigError("remote backend needs 'endpoint' and 'model'")
        if self.train_size < 1:
            raise ConfigError("train_size must be positive")

    def to_flat(self) -> dict[str, Any]:
        inverse = {v: k for k, v in CONFIG_ALIASES.items()}
        out = {inverse.get(k, k): v for k, v in self.evolution.to_dict().items()}
        for f in fields(self):
            if f.name != "evolution":
                v = getattr(self, f.name)
                out[f.name] = dict(v) if isinstance(v, Mapping) else v
        return out

    def digest(self) -> str:
        """Hash of everything that shapes the run; output location is excluded."""
        flat = {k: v for k, v in self.to_flat().items() if k != "out_dir"}
        blob = json.dumps(flat, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def run_config_from_flat(data: Mapping[str, Any], base_dir: str | Path | None = None) -> RunConfig:
    """Build a RunConfig from a flat mapping; relative paths resolve against ``base_dir``."""
    evo: dict[str, Any] = {}
    rest: dict[str, Any] = {}
    run_names = {f.name for f in fields(RunConfig)} - {"evolution"}
    for key, value in data.items():
        if key in CONFIG_ALIASES:
            evo[CONFIG_ALIASES[key]] = value
        elif key in _EVOLUTION_KEYS:
            evo[key] = value
        elif key in run_names:
            rest[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if base_dir is not None:
        for key in _PATH_KEYS:
            if rest.get(key) and not os.path.isabs(rest[key]):
                rest[key] = str(Path(base_dir) / rest[key])
    try:
        return RunConfig(EvolutionConfig(**evo), **rest)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return run_config_from_flat(data, Path(path).resolve().parent)


def write_json(path: str | Path, data: Any) -> None:
    """Write via a temp file so readers never see a partial document."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


# -- run log -------------------------------------------------------------
def report_line(report: GenerationReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True) + "\n"


def append_report(path: str | Path, report: GenerationReport) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(report_line(report))


def read_run_log(path: str | Path) -> list[GenerationReport]:
    with open(path, encoding="utf-8") as fh:
        return [GenerationReport.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- checkpoints ---------------------------------------------------------
def checkpoint_path(out_dir: str | Path, generation: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"gen-{generation:03d}.json"


def state_to_dict(state: RunState, config_digest: str) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "generation": state.generation,
        "next_generation": state.generation + 1,
        "config_digest": config_digest,
        "population": [ind.to_dict() for ind in state.population],
        "fitness": state.fitness,
        "graph": state.graph.to_dict(),
        "reports": [r.to_dict() for r in state.reports],
        "fitness_cache": state.fitness_cache,
    }


def save_checkpoint(path: str | Path, state: RunState, config_digest: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_json(path, state_to_dict(state, config_digest))


def load_checkpoint(path: str | Path, config_digest: str | None = None) -> RunState:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {data.get('format')!r}")
    if config_digest is not None and data["config_digest"] != config_digest:
        raise CheckpointError(f"{path}: checkpoint was written under a different config")
    return RunState(
        generation=int(data["generation"]),
        population=[Individual.from_dict(d) for d in data["population"]],
        fitness={k: float(v) for k, v in data["fitness"].items()},
        graph=ArchGraph.from_dict(data["graph"]),
        reports=[GenerationReport.from_dict(r) for r in data["reports"]],
        fitness_cache={k: float(v) for k, v in data.get("fitness_cache", {}).items()},
    )


# -- graph export ----------------------------------------------------------
def graph_json(graph: ArchGraph) -> dict:
    d = graph.to_dict()
    return {
        "boundaries": d["boundaries"],
        "iteration": d["iteration"],
        "nodes": [{"id": n["id"], "label": n["label"], "phase": n["phase"]} for n in d["nodes"]],
        "edges": [
            {k: e[k] for k in ("src", "dst", "kind", "w_fit", "w_sparse", "count", "weak_streak")}
            for e in d["edges"]
        ],
    }


def _node_order(graph: ArchGraph) -> dict[str, tuple[int, str]]:
    """Breadth-first depth from the source, then id; unreachable nodes last."""
    depth = {graph.source_id: 0} if graph.source_id in graph.nodes else {}
    queue = deque(depth)
    while queue:
        cur = queue.popleft()
        for e in graph.out_edges(cur):
            if e.dst not in depth:
                depth[e.dst] = depth[cur] + 1
                queue.append(e.dst)
    far = len(graph.nodes) + 1
    return {nid: (depth.get(nid, far), nid) for nid in graph.nodes}


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_dot(graph: ArchGraph) -> str:
    order = _node_order(graph)
    lines = ["digraph architecture {", "  rankdir=LR;", "  node [shape=box, style=rounded];"]
    for phase in Phase:
        members = sorted((n for n in graph.nodes.values() if n.phase is phase), key=lambda n: order[n.id])
        lines.append(f"  subgraph cluster_phase{int(phase)} {{")
        lines.append(f"    label={_quote(phase.title)};")
        for n in members:
            lines.append(f"    {_quote(n.id)} [label={_quote(n.label)}];")
        lines.append("  }")
    edges = sorted(graph.edges.values(), key=lambda e: (order[e.src], order[e.dst], e.kind.value))
    for e in edges:
        label = f"{e.kind.value} w_fit={e.w_fit:.3f} count={e.count}"
        lines.append(f"  {_quote(e.src)} -> {_quote(e.dst)} [label={_quote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: ArchGraph, fmt: str) -> str:
    if fmt == "dot":
        return graph_dot(graph)
    if fmt == "json":
        return json.dumps(graph_json(graph), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown graph format {fmt!r}")


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
