"""Command-line entry points: evolve, eval, export-graph, validate-chain, init-config."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .backend.base import BackendError, ExecutionLimits, GenerationBackend, KnowledgeExcerpt
from .backend.mock import HillDomain, MockBackend
from .chain import (
    DEFAULT_BOUNDARIES,
    ChainParseError,
    PhaseBoundaries,
    parse_chain,
    validate_chain,
)
from .engine import EvolutionError, RunState, coevolve
from .evaluation import evaluate_on_split
from .fitness import DatasetError, SplitSpec, load_dataset, make_split, save_dataset, synthetic_dataset
from .individual import Individual, IndividualError
from .persistence import (
    CheckpointError,
    ConfigError,
    RunConfig,
    append_report,
    checkpoint_path,
    export_graph,
    load_checkpoint,
    load_run_config,
    report_line,
    save_checkpoint,
    write_json,
    write_lines,
)
from .variation import KnowledgeError, KnowledgeStore, load_kb, save_kb

log = logging.getLogger("aoe_evolve")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

SAMPLE_KB = KnowledgeStore(
    (
        KnowledgeExcerpt(
            "Transportation model",
            "Move goods from supply points to demand points at least total cost while respecting capacities.",
            "min sum_ij c_ij x_ij  s.t. sum_j x_ij <= s_i, sum_i x_ij >= d_j, x_ij >= 0",
        ),
        KnowledgeExcerpt(
            "Assignment model",
            "Match agents to tasks one-to-one with binary decisions.",
            "min sum_ij c_ij x_ij  s.t. sum_j x_ij = 1, sum_i x_ij = 1, x_ij in {0,1}",
        ),
        KnowledgeExcerpt(
            "Facility location with fixed costs",
            "Open facilities with a fixed charge and serve demand only from open sites, linking flows with big-M.",
            "min sum_i f_i y_i + sum_ij c_ij x_ij  s.t. x_ij <= M y_i, y_i in {0,1}",
        ),
        KnowledgeExcerpt(
            "Production planning",
            "Choose production quantities that maximize profit under shared resource limits.",
            "max sum_j p_j x_j  s.t. sum_j a_rj x_j <= b_r, x_j >= 0",
        ),
    )
)


class UsageError(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def build_backend(cfg: RunConfig) -> GenerationBackend:
    if cfg.backend == "mock":
        return MockBackend(
            HillDomain(utility_seed=cfg.utility_seed, peak_fraction=cfg.peak_fraction), perturbation=cfg.perturbation
        )
    from .backend.remote import RemoteBackend

    return RemoteBackend(
        endpoint=cfg.endpoint,
        model=cfg.model,
        api_key_env=cfg.api_key_env,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        timeout_s=cfg.timeout_s,
        transcript_path=cfg.transcript,
        replay_path=cfg.replay,
        task_context=cfg.task_context,
    )


def _limits(cfg: RunConfig) -> ExecutionLimits:
    return ExecutionLimits(cfg.timeout_s, cfg.max_output_chars)


def _load_inputs(cfg: RunConfig):
    if not Path(cfg.dataset).is_file():
        raise UsageError(f"dataset {cfg.dataset} not found")
    try:
        dataset = load_dataset(cfg.dataset)
        kb = load_kb(cfg.kb) if cfg.kb else KnowledgeStore()
    except (DatasetError, KnowledgeError, OSError) as exc:
        raise UsageError(str(exc)) from None
    return dataset, kb


def _load_split(path: str | Path) -> SplitSpec:
    try:
        return SplitSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read split {path}: {exc}") from None


def cmd_evolve(args: argparse.Namespace) -> int:
    try:
        cfg = load_run_config(args.config)
        overrides = {}
        if args.backend:
            overrides["backend"] = args.backend
        if args.out:
            overrides["out_dir"] = args.out
        if overrides:
            cfg = replace(cfg, **overrides)
        if args.seed is not None:
            cfg = replace(cfg, evolution=replace(cfg.evolution, seed=args.seed))
        dataset, kb = _load_inputs(cfg)
    except (ConfigError, UsageError, ValueError) as exc:
        return _fail(EXIT_USAGE, str(exc))

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    try:
        if cfg.split:
            split = _load_split(cfg.split)
        else:
            split = make_split(dataset, cfg.subset_weights, cfg.train_size, cfg.split_seed)
        write_json(out / "split.json", split.to_dict())
        resume = load_checkpoint(args.resume, digest) if args.resume else None
    except (UsageError, CheckpointError, ValueError, KeyError) as exc:
        return _fail(EXIT_USAGE, str(exc))

    log_path = out / "run_log.jsonl"
    # a resumed log restarts from the checkpoint's reports
    write_lines(log_path, [report_line(r) for r in resume.reports] if resume else [])

    def on_generation(state: RunState) -> None:
        append_report(log_path, state.reports[-1])
        save_checkpoint(checkpoint_path(out, state.generation), state, digest)
        r = state.reports[-1]
        log.info("generation %d best=%.4f mean=%.4f edges=%d", r.generation, r.best_wa, r.mean_wa, r.graph_edges)

    try:
        backend = build_backend(cfg)
        result = coevolve(
            cfg.evolution, split, dataset, kb, backend,
            limits=_limits(cfg), task_context=cfg.task_context, resume=resume, on_generation=on_generation,
        )
    except (EvolutionError, BackendError, IndividualError, OSError) as exc:
        return _fail(EXIT_FAILURE, f"run failed: {exc}")

    write_json(out / "final_population.json", [ind.to_dict() for ind in result.population])
    write_json(out / "best_individual.json", result.best.to_dict())
    (out / "graph.dot").write_text(export_graph(result.graph, "dot"), encoding="utf-8")
    (out / "graph.json").write_text(export_graph(result.graph, "json"), encoding="utf-8")
    print(json.dumps({"best_id": result.best.id, "train_wa": result.fitness[result.best.id],
                      "generations": len(result.reports), "out_dir": str(out)}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        if args.backend:
            cfg = replace(cfg, backend=args.backend)
        ind = Individual.from_dict(json.loads(Path(args.individual).read_text(encoding="utf-8")))
        dataset = load_dataset(args.dataset)
        split = _load_split(args.split)
    except (ConfigError, UsageError, DatasetError, OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    ids = split.train_ids if args.on == "train" else split.test_ids
    try:
        report = evaluate_on_split(
            ind, ids, dataset, build_backend(cfg), split.subset_weights,
            limits=_limits(cfg), delta=cfg.evolution.delta, epsilon_y=cfg.evolution.epsilon_y,
        )
    except (KeyError, BackendError) as exc:
        return _fail(EXIT_FAILURE, str(exc))
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_graph(args: argparse.Namespace) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_USAGE, str(exc))
    text = export_graph(state.graph, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate_chain(args: argparse.Namespace) -> int:
    boundaries = PhaseBoundaries(tuple(args.boundaries)) if args.boundaries else DEFAULT_BOUNDARIES
    try:
        text = Path(args.file).read_text(encoding="utf-8")
        chain = parse_chain(text)
    except OSError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except ChainParseError as exc:
        return _fail(EXIT_USAGE, str(exc))
    report = validate_chain(chain, boundaries)
    if report.ok:
        print(f"ok: {len(chain)} edges")
        return EXIT_OK
    for v in report.violations:
        print(v)
    return EXIT_FAILURE


def cmd_init_config(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    if cfg_path.exists() and not args.force:
        return _fail(EXIT_USAGE, f"{cfg_path} exists (use --force)")
    cfg = RunConfig(dataset="dataset.jsonl", kb="kb.json" if args.with_data else None, out_dir="run")
    write_json(cfg_path, cfg.to_flat())
    if args.with_data:
        save_dataset(synthetic_dataset(seed=args.data_seed), out / "dataset.jsonl")
        save_kb(SAMPLE_KB, out / "kb.json")
    print(cfg_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aoe-evolve", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evolve", help="run co-evolution from a config file")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--backend", choices=("mock", "remote"))
    e.add_argument("--resume", metavar="CHECKPOINT")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evolve)

    v = sub.add_parser("eval", help="score an individual on a split")
    v.add_argument("--individual", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--split", required=True)
    v.add_argument("--config")
    v.add_argument("--backend", choices=("mock", "remote"))
    v.add_argument("--on", choices=("test", "train"), default="test")
    v.set_defaults(func=cmd_eval)

    g = sub.add_parser("export-graph", help="export a checkpoint's architecture graph")
    g.add_argument("checkpoint")
    g.add_argument("--format", choices=("dot", "json"), default="dot")
    g.add_argument("--out")
    g.set_defaults(func=cmd_export_graph)

    c = sub.add_parser("validate-chain", help="check a chain document")
    c.add_argument("file")
    c.add_argument("--boundaries", nargs=4, metavar="LABEL")
    c.set_defaults(func=cmd_validate_chain)

    i = sub.add_parser("init-config", help="write a default config")
    i.add_argument("--out", default=".")
    i.add_argument("--with-data", action="store_true", help="also write a synthetic dataset and sample knowledge store")
    i.add_argument("--data-seed", type=int, default=0)
    i.add_argument("--force", action="store_true")
    i.set_defaults(func=cmd_init_config)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
