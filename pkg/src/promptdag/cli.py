"""Command-line interface.

Subcommands mirror the pipeline stages so each is exercisable on its own:

- ``optimize``  run the full loop from a config file
- ``solve``     one MAP selection from given score tables
- ``score``     build and dump the node/edge score tables
- ``inspect``   pretty-print a solve trace
- ``report``    regenerate report files from a snapshot
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config
from .errors import PromptDagError
from .executors import CommandExecutor, Executor, LLMExecutor, MockExecutor
from .gateway import ChatGateway
from .inference import SolveTrace, solve
from .orchestrator import (
    OptimizationState,
    build_score_tables,
    initialize,
    restore,
    run_loop,
    snapshot,
)
from .refinement import LanguageJudge, LLMJudge, MockJudge, TerminationPolicy
from .reporting import report as write_report
from .scoring import EdgeScoreTable, LLMRewardScorer, MockRewardScorer, NodeScoreTable, RewardScorer
from .tasks import ingest_tasks
from .topology import graph_from_document

log = logging.getLogger(__name__)


def _load_graph(path: Path):
    return graph_from_document(json.loads(path.read_text(encoding="utf-8")))


def _build_gateway(cfg: RunConfig, audit_dir: Path) -> ChatGateway:
    return ChatGateway(
        base_url=cfg.endpoint.base_url,
        api_key_env=cfg.endpoint.api_key_env,
        timeout=cfg.endpoint.timeout,
        max_attempts=cfg.endpoint.max_attempts,
        max_concurrency=cfg.endpoint.concurrency,
        audit_path=audit_dir / "chat_audit.jsonl",
    )


def build_components(cfg: RunConfig) -> tuple[RewardScorer, Executor, LanguageJudge]:
    gateway = None
    if "llm" in (cfg.scorer, cfg.executor, cfg.judge):
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        gateway = _build_gateway(cfg, cfg.output_dir)

    if cfg.scorer == "mock":
        scorer: RewardScorer = MockRewardScorer(targets=cfg.mock_targets)
    else:
        scorer = LLMRewardScorer(
            gateway,
            cfg.endpoint.model,
            temperature=cfg.endpoint.temperature,
            max_tokens=cfg.endpoint.max_tokens,
        )

    if cfg.executor == "mock":
        executor: Executor = MockExecutor(targets=cfg.mock_targets)
    elif cfg.executor == "command":
        executor = CommandExecutor(list(cfg.command))
    else:
        executor = LLMExecutor(
            gateway,
            cfg.endpoint.model,
            temperature=cfg.endpoint.temperature,
            max_tokens=cfg.endpoint.max_tokens,
        )

    if cfg.judge == "mock":
        judge: LanguageJudge = MockJudge()
    else:
        judge = LLMJudge(
            gateway,
            cfg.endpoint.model,
            temperature=cfg.endpoint.temperature,
            max_tokens=cfg.endpoint.max_tokens,
        )
    return scorer, executor, judge


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    for flag, attr in [
        ("k", "k"),
        ("patience", "patience"),
        ("epsilon", "epsilon"),
        ("max_iterations", "max_iterations"),
        ("seed", "seed"),
        ("scorer", "scorer"),
        ("executor", "executor"),
        ("judge", "judge"),
        ("workers", "workers"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            updates[attr] = value
    if getattr(args, "out", None):
        updates["output_dir"] = Path(args.out)
    return replace(cfg, **updates).validated() if updates else cfg


def _cmd_optimize(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    scorer, executor, judge = build_components(cfg)
    if args.resume:
        state = restore(json.loads(Path(args.resume).read_text(encoding="utf-8")))
    else:
        graph = _load_graph(cfg.graph_path)
        batch = ingest_tasks(cfg.tasks_path)
        base_prompts = {a.id: a.base_prompt for a in graph.agents}
        state = initialize(
            graph,
            base_prompts,
            batch,
            cfg.k,
            cfg.seed,
            judge,
            executor,
            bootstrap_draws=cfg.bootstrap_draws,
        )
    policy = TerminationPolicy(patience=cfg.patience, tolerance=cfg.epsilon)
    state = run_loop(
        state,
        scorer,
        executor,
        judge,
        policy=policy,
        max_iterations=cfg.max_iterations,
        max_workers=cfg.workers,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    snap_path = cfg.output_dir / "snapshot.json"
    snap_path.write_text(
        json.dumps(snapshot(state), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    files = write_report(state, cfg.output_dir)
    best = state.best
    print(f"completed {state.iteration} iteration(s); snapshot: {snap_path}")
    if best is not None:
        print(
            f"best: iteration {best.iteration}, pass-rate {best.pass_rate:.3f}, "
            f"joint score {best.joint_score:.3g}"
        )
    for path in files:
        print(f"wrote {path}")
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    graph = _load_graph(Path(args.graph))
    tables = json.loads(Path(args.tables).read_text(encoding="utf-8"))
    nodes = NodeScoreTable.from_document(tables["nodes"])
    edges = EdgeScoreTable.from_document(tables.get("edges", {}))
    sizes = nodes.pool_sizes()
    nodes.validate_complete(sizes)
    edges.validate_complete(sorted(graph.edges), sizes)
    trace = SolveTrace()
    assignment = solve(graph, nodes, edges, trace=trace)
    print(
        json.dumps(
            {"choices": dict(sorted(assignment.choices.items())), "score": assignment.score.value},
            indent=2,
        )
    )
    if args.trace:
        Path(args.trace).write_text(
            json.dumps(trace.to_document(), indent=2) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.trace}", file=sys.stderr)
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    scorer, executor, judge = build_components(cfg)
    if args.snapshot:
        state = restore(json.loads(Path(args.snapshot).read_text(encoding="utf-8")))
    else:
        graph = _load_graph(cfg.graph_path)
        batch = ingest_tasks(cfg.tasks_path)
        base_prompts = {a.id: a.base_prompt for a in graph.agents}
        state = initialize(
            graph,
            base_prompts,
            batch,
            cfg.k,
            cfg.seed,
            judge,
            executor,
            bootstrap_draws=cfg.bootstrap_draws,
        )
    nodes, edges = build_score_tables(state, scorer, executor)
    sizes = nodes.pool_sizes()
    doc = {"nodes": nodes.to_document(), "edges": edges.to_document(sizes)}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.trace).read_text(encoding="utf-8"))
    print(f"mode: {doc.get('mode')}")
    if doc.get("treewidth") is not None:
        print(f"treewidth: {doc['treewidth']}")
    if doc.get("cliques"):
        print("cliques: " + "; ".join("{" + ", ".join(c) + "}" for c in doc["cliques"]))
        print("separators: " + "; ".join("{" + ", ".join(s) + "}" for s in doc["separators"]))
    messages = doc.get("messages", [])
    print(f"messages ({len(messages)}):")
    for m in messages:
        scope = ",".join(m["scope"])
        head = f"  [{m['direction']:>4}] {m['sender']} -> {m['receiver']} over ({scope})"
        if m["direction"] == "up":
            table = ", ".join(f"{x:.4f}" for x in m["table"])
            print(f"{head} ops={m['ops']} offset={m['offset']:.4f}")
            print(f"         table: [{table}]")
        else:
            fixed = "; ".join(
                ", ".join(f"{a}#{k}" for a, k in w.items()) for w in m["witnesses"]
            )
            print(f"{head} fixes {fixed or '(nothing)'}")
    belief = doc.get("belief", [])
    if belief:
        scope = ",".join(doc.get("belief_scope", []))
        values = ", ".join(f"{x:.4f}" for x in belief)
        print(f"root belief over ({scope}): [{values}] offset={doc.get('belief_offset', 0):.4f}")
    assignment = doc.get("assignment")
    if assignment:
        chosen = ", ".join(f"{a}#{k}" for a, k in sorted(assignment["choices"].items()))
        print(f"assignment: {chosen} (score {assignment['score']:.6g})")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    state: OptimizationState = restore(
        json.loads(Path(args.snapshot).read_text(encoding="utf-8"))
    )
    files = write_report(state, Path(args.out))
    for path in files:
        print(f"wrote {path}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptdag",
        description="Joint prompt selection and refinement for multi-agent DAG pipelines.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run the full optimization loop")
    p_opt.add_argument("--config", required=True, help="path to the run config JSON")
    p_opt.add_argument("--resume", help="resume from a snapshot JSON")
    p_opt.add_argument("--out", help="override the output directory")
    p_opt.add_argument("--k", type=int, help="pool size per agent")
    p_opt.add_argument("--patience", type=int, help="termination window size")
    p_opt.add_argument("--epsilon", type=float, help="termination tolerance")
    p_opt.add_argument("--max-iterations", dest="max_iterations", type=int)
    p_opt.add_argument("--seed", type=int)
    p_opt.add_argument("--scorer", choices=["mock", "llm"])
    p_opt.add_argument("--executor", choices=["mock", "command", "llm"])
    p_opt.add_argument("--judge", choices=["mock", "llm"])
    p_opt.add_argument("--workers", type=int, help="concurrent task executions")
    p_opt.set_defaults(func=_cmd_optimize)

    p_solve = sub.add_parser("solve", help="one MAP selection from score tables")
    p_solve.add_argument("--graph", required=True, help="graph document JSON")
    p_solve.add_argument("--tables", required=True, help="score tables JSON")
    p_solve.add_argument("--trace", help="write the solve trace JSON here")
    p_solve.set_defaults(func=_cmd_solve)

    p_score = sub.add_parser("score", help="build and dump score tables")
    p_score.add_argument("--config", required=True)
    p_score.add_argument("--snapshot", help="score the pools of this snapshot")
    p_score.add_argument("--out", help="write tables here instead of stdout")
    p_score.set_defaults(func=_cmd_score)

    p_inspect = sub.add_parser("inspect", help="pretty-print a solve trace")
    p_inspect.add_argument("--trace", required=True)
    p_inspect.set_defaults(func=_cmd_inspect)

    p_report = sub.add_parser("report", help="write report files from a snapshot")
    p_report.add_argument("--snapshot", required=True)
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PromptDagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
