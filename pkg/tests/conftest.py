"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import random

import pytest

from promptdag import (
    Agent,
    AgentGraph,
    EdgeScoreTable,
    MockExecutor,
    MockJudge,
    MockRewardScorer,
    NodeScoreTable,
    Score,
    Task,
    TaskBatch,
    Verifier,
    make_graph,
)


@pytest.fixture
def chain3() -> AgentGraph:
    return make_graph(
        [
            Agent("a", role="planner", base_prompt="Plan the work."),
            Agent("b", role="writer", base_prompt="Draft the piece."),
            Agent("c", role="editor", base_prompt="Polish the result."),
        ],
        [("a", "b"), ("b", "c")],
    )


@pytest.fixture
def diamond() -> AgentGraph:
    return make_graph(
        [
            Agent("a", base_prompt="Route the request."),
            Agent("b", base_prompt="Summarize the facts."),
            Agent("c", base_prompt="Check the details."),
            Agent("d", base_prompt="Assemble the answer."),
        ],
        [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
    )


def random_tables(
    graph: AgentGraph, k: int, rng: random.Random, low: float = 0.05, high: float = 1.0
) -> tuple[NodeScoreTable, EdgeScoreTable]:
    nodes = NodeScoreTable()
    edges = EdgeScoreTable()
    for agent in graph.agent_ids():
        for idx in range(1, k + 1):
            nodes.put(agent, idx, Score(rng.uniform(low, high)))
    for edge in graph.edges:
        for ku in range(1, k + 1):
            for kd in range(1, k + 1):
                edges.put(edge, ku, kd, Score(rng.uniform(low, high)))
    return nodes, edges


def random_dag(rng: random.Random, max_n: int = 6, max_indegree: int = 3) -> AgentGraph:
    """Connected single-source DAG: every later node picks 1..3 earlier parents."""
    n = rng.randint(2, max_n)
    names = [chr(ord("a") + i) for i in range(n)]
    order = names[:]
    rng.shuffle(order)
    edges = []
    for pos in range(1, n):
        indegree = rng.randint(1, min(max_indegree, pos))
        parents = rng.sample(order[:pos], indegree)
        edges.extend((p, order[pos]) for p in parents)
    return make_graph([Agent(name) for name in names], edges, root=order[0])


def random_arborescence(rng: random.Random, max_n: int = 5) -> AgentGraph:
    """Random tree pipeline: every non-root node has exactly one parent."""
    n = rng.randint(1, max_n)
    names = [chr(ord("a") + i) for i in range(n)]
    edges = [(names[rng.randint(0, pos - 1)], names[pos]) for pos in range(1, n)]
    return make_graph([Agent(name) for name in names], edges, root=names[0])


def planted_batch(size: int = 3) -> TaskBatch:
    return TaskBatch(
        tasks=tuple(
            Task(id=f"t{i}", input=f"payload {i}", verifier=Verifier(kind="contains", value=":OK"))
            for i in range(size)
        )
    )


def planted_components(targets: dict[str, str]):
    return MockRewardScorer(targets=targets), MockExecutor(targets=targets), MockJudge()
