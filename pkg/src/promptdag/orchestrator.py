"""The select-execute-refine loop and its persistent state.

Each iteration builds fresh score tables from the current pools, solves for
the best joint assignment, runs it on the task batch, records the
validation pass-rate, reroutes preference exemplars, collects global and
per-agent feedback, and rewrites every pool around the selected prompt.
Iterations are atomic: they work on a copy and the caller's state is
untouched if any stage raises.
"""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import dataclass, field

from .errors import ExecutorFailure, FrozenStateError, SchemaMismatchError
from .executors import Executor, Verdict, execute_batch
from .inference import Assignment, SolveTrace, solve
from .refinement import (
    LanguageJudge,
    TerminationPolicy,
    collect_global_feedback,
    collect_local_feedback,
    mutate_pool,
    should_terminate,
    update_preferences,
)
from .scoring import (
    Demonstration,
    EdgeScoreTable,
    ExpectedIO,
    NodeScoreTable,
    PreferencePool,
    RewardScorer,
    Score,
)
from .tasks import TaskBatch, task_from_document
from .topology import (
    AgentGraph,
    AgentId,
    PromptCandidate,
    PromptPool,
    graph_from_document,
    graph_to_document,
)

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


def agent_demo_key(agent: AgentId) -> str:
    return f"agent:{agent}"


def edge_demo_key(edge: tuple[AgentId, AgentId]) -> str:
    return f"edge:{edge[0]}->{edge[1]}"


@dataclass(frozen=True)
class IterationRecord:
    """One trajectory row: what was chosen and how it scored."""

    iteration: int
    validation_score: float
    best_score: float
    joint_score: float
    choices: dict[AgentId, int]
    message_count: int
    passed: int
    total: int

    def to_document(self) -> dict:
        return {
            "iteration": self.iteration,
            "validation_score": self.validation_score,
            "best_score": self.best_score,
            "joint_score": self.joint_score,
            "choices": dict(self.choices),
            "message_count": self.message_count,
            "passed": self.passed,
            "total": self.total,
        }


@dataclass(frozen=True)
class BestSelection:
    """The best assignment seen so far, with its frozen prompt texts.

    Prompt texts are captured at selection time because pools mutate
    afterwards and candidate indices go stale.
    """

    iteration: int
    pass_rate: float
    joint_score: float
    choices: dict[AgentId, int]
    prompts: dict[AgentId, str]


@dataclass
class OptimizationState:
    graph: AgentGraph
    batch: TaskBatch
    k: int
    seed: int
    pools: dict[AgentId, PromptPool]
    demos: dict[str, PreferencePool]
    expected_io: dict[AgentId, ExpectedIO]
    history: list[float] = field(default_factory=list)
    records: list[IterationRecord] = field(default_factory=list)
    best: BestSelection | None = None
    iteration: int = 0
    frozen: bool = False


def initialize(
    graph: AgentGraph,
    base_prompts: dict[AgentId, str],
    batch: TaskBatch,
    k: int,
    seed: int,
    judge: LanguageJudge,
    executor: Executor,
    bootstrap_draws: int = 2,
) -> OptimizationState:
    """Build pools, demonstration pools, and initial expected IO.

    Pools hold each base prompt plus k-1 variations.  A few random draws
    run on the batch to collect successful traces as positive exemplars and
    a representative input/output pair per agent; synthetic negatives are
    degradations of the positives.  Without any successful draw, positives
    fall back to the base prompts, flagged provisional.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    missing = [a for a in graph.agent_ids() if a not in base_prompts]
    if missing:
        raise ValueError(f"base prompts missing for agents: {missing}")

    pools: dict[AgentId, PromptPool] = {}
    for agent in graph.agent_ids():
        base = base_prompts[agent]
        variants = judge.vary_prompt(base, k - 1)
        if len(variants) != k - 1:
            raise ValueError(f"initial variation returned {len(variants)} texts, wanted {k - 1}")
        candidates = [PromptCandidate(agent=agent, index=1, text=base)]
        candidates += [
            PromptCandidate(agent=agent, index=i + 2, text=text, parent_index=1)
            for i, text in enumerate(variants)
        ]
        pools[agent] = PromptPool(agent=agent, candidates=tuple(candidates), capacity=k)

    rng = random.Random(seed)
    passing: Verdict | None = None
    fallback: Verdict | None = None
    used_prompts: dict[AgentId, str] = {}
    for _ in range(max(1, bootstrap_draws)):
        choices = {agent: rng.randint(1, k) for agent in sorted(graph.agent_ids())}
        draw_prompts = {a: pools[a].get(c).text for a, c in choices.items()}
        assignment = Assignment(choices=choices, score=Score(0.0))
        verdicts = execute_batch(executor, graph, assignment, pools, batch)
        if fallback is None:
            fallback = verdicts[0]
            used_prompts = draw_prompts
        passing = next((v for v in verdicts if v.passed), None)
        if passing:
            used_prompts = draw_prompts
            break

    demos: dict[str, PreferencePool] = {}
    expected_io: dict[AgentId, ExpectedIO] = {}
    trace_source = passing or fallback
    outputs = {e.agent: e for e in (trace_source.transcript if trace_source else ())}
    for agent in graph.agent_ids():
        entry = outputs.get(agent)
        expected_io[agent] = ExpectedIO(
            agent=agent,
            input=entry.input if entry else "",
            response=entry.output if entry else "",
        )

    for agent in graph.agent_ids():
        pool = PreferencePool(key=agent_demo_key(agent))
        if passing:
            pool = pool.accept(
                Demonstration(prompt=used_prompts[agent], response=expected_io[agent].response)
            )
        else:
            pool = pool.accept(
                Demonstration(prompt=base_prompts[agent], response="", provisional=True)
            )
        goods = [d.prompt for d in pool.accepted]
        for bad in judge.degrade_examples(goods, "node", len(goods)):
            pool = pool.reject(Demonstration(prompt=bad, response=""))
        demos[agent_demo_key(agent)] = pool

    for i, j in sorted(graph.edges):
        pool = PreferencePool(key=edge_demo_key((i, j)))
        if passing:
            pool = pool.accept(
                Demonstration(
                    prompt=expected_io[i].response,
                    response=expected_io[j].response,
                )
            )
        else:
            pool = pool.accept(
                Demonstration(prompt=base_prompts[i], response=base_prompts[j], provisional=True)
            )
        goods = [[d.prompt, d.response] for d in pool.accepted]
        for bad_pair in judge.degrade_examples(goods, "edge", len(goods)):
            pool = pool.reject(Demonstration(prompt=bad_pair[0], response=bad_pair[1]))
        demos[edge_demo_key((i, j))] = pool

    if not passing:
        log.warning(
            "bootstrap found no passing task in any draw; seeding provisional "
            "positives from the base prompts"
        )

    return OptimizationState(
        graph=graph,
        batch=batch,
        k=k,
        seed=seed,
        pools=pools,
        demos=demos,
        expected_io=expected_io,
    )


def build_score_tables(
    state: OptimizationState, scorer: RewardScorer, executor: Executor
) -> tuple[NodeScoreTable, EdgeScoreTable]:
    nodes = NodeScoreTable()
    for agent in state.graph.agent_ids():
        pool = state.pools[agent]
        scores = scorer.score_nodes(
            agent, pool, state.expected_io[agent], state.demos[agent_demo_key(agent)]
        )
        if len(scores) != len(pool):
            raise ValueError(f"scorer returned {len(scores)} node scores for pool of {len(pool)}")
        for cand, score in zip(pool.candidates, scores):
            nodes.put(agent, cand.index, score)

    edges = EdgeScoreTable()
    for i, j in sorted(state.graph.edges):
        upstream_outputs = []
        for cand in state.pools[i].candidates:
            try:
                output = executor.run_agent(
                    state.graph.agent(i), cand.text, state.expected_io[i].input
                )
            except ExecutorFailure as exc:
                log.warning("upstream output for %s#%d unavailable: %s", i, cand.index, exc)
                output = ""
            upstream_outputs.append(output)
        matrix = scorer.score_edges(
            (i, j), upstream_outputs, state.pools[j], state.demos[edge_demo_key((i, j))]
        )
        for cand_k, row in zip(state.pools[i].candidates, matrix):
            for cand_l, score in zip(state.pools[j].candidates, row):
                edges.put((i, j), cand_k.index, cand_l.index, score)
    return nodes, edges


def run_iteration(
    state: OptimizationState,
    scorer: RewardScorer,
    executor: Executor,
    judge: LanguageJudge,
    max_workers: int = 1,
) -> OptimizationState:
    """One full cycle; returns a new state, leaving the input untouched."""
    if state.frozen:
        raise FrozenStateError("state is frozen; no further iterations allowed")
    state = copy.deepcopy(state)
    t = state.iteration

    nodes, edges = build_score_tables(state, scorer, executor)
    trace = SolveTrace()
    assignment = solve(state.graph, nodes, edges, trace=trace)
    selected_prompts = {
        a: state.pools[a].get(assignment.choices[a]).text for a in state.graph.agent_ids()
    }

    verdicts = execute_batch(
        executor, state.graph, assignment, state.pools, state.batch, max_workers=max_workers
    )
    passed = sum(1 for v in verdicts if v.passed)
    pass_rate = passed / len(verdicts)
    state.history.append(pass_rate)

    if state.best is None or pass_rate > state.best.pass_rate:
        state.best = BestSelection(
            iteration=t,
            pass_rate=pass_rate,
            joint_score=assignment.score.value,
            choices=dict(assignment.choices),
            prompts=dict(selected_prompts),
        )
    state.records.append(
        IterationRecord(
            iteration=t,
            validation_score=pass_rate,
            best_score=state.best.pass_rate,
            joint_score=assignment.score.value,
            choices=dict(assignment.choices),
            message_count=trace.message_count(),
            passed=passed,
            total=len(verdicts),
        )
    )

    first_passing = next((v for v in verdicts if v.passed), None)
    if first_passing is not None:
        for entry in first_passing.transcript:
            state.expected_io[entry.agent] = ExpectedIO(
                agent=entry.agent, input=entry.input, response=entry.output
            )
        trace_outputs = {e.agent: e.output for e in first_passing.transcript}
        for edge in sorted(state.graph.edges):
            key = edge_demo_key(edge)
            state.demos[key] = state.demos[key].accept(
                Demonstration(prompt=trace_outputs[edge[0]], response=trace_outputs[edge[1]])
            )

    for agent in state.graph.agent_ids():
        pool = state.pools[agent]
        scores = [nodes.get(agent, c.index) for c in pool.candidates]
        key = agent_demo_key(agent)
        state.demos[key] = update_preferences(
            judge, pool, scores, state.demos[key], response=state.expected_io[agent].response
        )

    errors = [v.error for v in verdicts if not v.passed]
    global_fb = collect_global_feedback(judge, errors)
    report_source = first_passing or verdicts[0]
    transcripts = {e.agent: (e.input, e.output) for e in report_source.transcript}
    local_fb = collect_local_feedback(
        judge, state.graph, global_fb, transcripts, selected_prompts
    )

    for agent in state.graph.agent_ids():
        selected = state.pools[agent].get(assignment.choices[agent])
        state.pools[agent] = mutate_pool(
            judge, selected, global_fb, local_fb[agent], n=state.k - 1
        )

    state.iteration = t + 1
    log.info(
        "iteration %d: pass-rate %.3f, joint score %.3g, best %.3f",
        t,
        pass_rate,
        assignment.score.value,
        state.best.pass_rate,
    )
    return state


def run_loop(
    state: OptimizationState,
    scorer: RewardScorer,
    executor: Executor,
    judge: LanguageJudge,
    policy: TerminationPolicy | None = None,
    max_iterations: int = 10,
    max_workers: int = 1,
) -> OptimizationState:
    """Iterate until the patience rule fires or the cap is hit, then freeze."""
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    policy = policy or TerminationPolicy()
    while state.iteration < max_iterations:
        state = run_iteration(state, scorer, executor, judge, max_workers=max_workers)
        if should_terminate(state.history, policy):
            break
    state = copy.deepcopy(state)
    state.frozen = True
    return state


# --------------------------------------------------------------------------
# Snapshots
# --------------------------------------------------------------------------


def snapshot(state: OptimizationState) -> dict:
    """Serializable document for resumable runs; caches are rebuildable and
    deliberately excluded."""

    def pool_doc(pool: PromptPool) -> dict:
        return {
            "capacity": pool.capacity,
            "candidates": [
                {
                    "index": c.index,
                    "text": c.text,
                    "parent_index": c.parent_index,
                    "action": c.action,
                }
                for c in pool.candidates
            ],
        }

    def demo_doc(pool: PreferencePool) -> dict:
        def side(rows):
            return [
                {"prompt": d.prompt, "response": d.response, "provisional": d.provisional}
                for d in rows
            ]

        return {
            "capacity": pool.capacity,
            "accepted": side(pool.accepted),
            "rejected": side(pool.rejected),
        }

    return {
        "schema_version": SNAPSHOT_VERSION,
        "graph": graph_to_document(state.graph),
        "batch": state.batch.to_documents(),
        "k": state.k,
        "seed": state.seed,
        "iteration": state.iteration,
        "frozen": state.frozen,
        "pools": {a: pool_doc(p) for a, p in sorted(state.pools.items())},
        "demos": {key: demo_doc(p) for key, p in sorted(state.demos.items())},
        "expected_io": {
            a: {"input": io.input, "response": io.response}
            for a, io in sorted(state.expected_io.items())
        },
        "history": list(state.history),
        "records": [r.to_document() for r in state.records],
        "best": None
        if state.best is None
        else {
            "iteration": state.best.iteration,
            "pass_rate": state.best.pass_rate,
            "joint_score": state.best.joint_score,
            "choices": dict(state.best.choices),
            "prompts": dict(state.best.prompts),
        },
    }


def restore(doc: dict) -> OptimizationState:
    """Inverse of :func:`snapshot`; SchemaMismatchError on drift."""
    if not isinstance(doc, dict):
        raise SchemaMismatchError("snapshot must be an object")
    if doc.get("schema_version") != SNAPSHOT_VERSION:
        raise SchemaMismatchError(
            f"snapshot version {doc.get('schema_version')!r} != {SNAPSHOT_VERSION}"
        )
    try:
        graph = graph_from_document(doc["graph"])
        batch = TaskBatch(tasks=tuple(task_from_document(t) for t in doc["batch"]))
        pools = {
            agent: PromptPool(
                agent=agent,
                capacity=entry["capacity"],
                candidates=tuple(
                    PromptCandidate(
                        agent=agent,
                        index=c["index"],
                        text=c["text"],
                        parent_index=c["parent_index"],
                        action=c["action"],
                    )
                    for c in entry["candidates"]
                ),
            )
            for agent, entry in doc["pools"].items()
        }
        demos = {
            key: PreferencePool(
                key=key,
                capacity=entry["capacity"],
                accepted=tuple(
                    Demonstration(d["prompt"], d["response"], d["provisional"])
                    for d in entry["accepted"]
                ),
                rejected=tuple(
                    Demonstration(d["prompt"], d["response"], d["provisional"])
                    for d in entry["rejected"]
                ),
            )
            for key, entry in doc["demos"].items()
        }
        expected_io = {
            agent: ExpectedIO(agent=agent, input=entry["input"], response=entry["response"])
            for agent, entry in doc["expected_io"].items()
        }
        records = [
            IterationRecord(
                iteration=r["iteration"],
                validation_score=r["validation_score"],
                best_score=r["best_score"],
                joint_score=r["joint_score"],
                choices=dict(r["choices"]),
                message_count=r["message_count"],
                passed=r["passed"],
                total=r["total"],
            )
            for r in doc["records"]
        ]
        best_doc = doc["best"]
        best = (
            None
            if best_doc is None
            else BestSelection(
                iteration=best_doc["iteration"],
                pass_rate=best_doc["pass_rate"],
                joint_score=best_doc["joint_score"],
                choices=dict(best_doc["choices"]),
                prompts=dict(best_doc["prompts"]),
            )
        )
        return OptimizationState(
            graph=graph,
            batch=batch,
            k=int(doc["k"]),
            seed=int(doc["seed"]),
            pools=pools,
            demos=demos,
            expected_io=expected_io,
            history=[float(x) for x in doc["history"]],
            records=records,
            best=best,
            iteration=int(doc["iteration"]),
            frozen=bool(doc["frozen"]),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaMismatchError(f"snapshot document is malformed: {exc!r}") from exc
