"""Node/edge score tables, the joint quality objective, and reward scorers.

The objective for a full prompt assignment is the product of every agent's
node score and every hand-off's edge score, all in [0, 1].  Products of many
small factors underflow, so everything is computed in log domain with a
floor of ``SCORE_FLOOR`` on raw values; the floor preserves rankings because
any floored factor still drags its product to the bottom.

Two scorer implementations share one contract: a deterministic mock for
tests and offline desk runs, and a model-backed scorer that renders the
reward payload templates and parses score-per-line replies.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
import threading
from dataclasses import dataclass, field
from typing import Protocol

from . import templates
from .errors import GatewayError, MalformedReplyError, MissingScoreError, ScorerUnavailableError
from .gateway import ChatGateway, ChatRequest
from .topology import AgentGraph, AgentId, PromptPool

log = logging.getLogger(__name__)

SCORE_FLOOR = 1e-9
DEMO_CAPACITY = 3


@dataclass(frozen=True)
class Score:
    """A quality value in [0, 1] with its floored log-domain companion."""

    value: float
    log: float = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not (isinstance(self.value, (int, float)) and math.isfinite(self.value)):
            raise ValueError(f"score must be a finite number, got {self.value!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"score {self.value} outside [0, 1]")
        object.__setattr__(self, "log", math.log(max(self.value, SCORE_FLOOR)))


@dataclass(frozen=True)
class ExpectedIO:
    """The representative input and desirable response for one agent."""

    agent: AgentId
    input: str = ""
    response: str = ""


@dataclass(frozen=True)
class Demonstration:
    """One preference exemplar: a prompt and the response it produced.

    ``provisional`` marks bootstrap positives that were seeded without an
    actual successful trace.
    """

    prompt: str
    response: str = ""
    provisional: bool = False


@dataclass(frozen=True)
class PreferencePool:
    """Accepted/rejected exemplars for one agent or edge, capped per side.

    The two sides are disjoint by prompt text; insertion evicts the oldest
    entry once a side is full, and re-classification moves an exemplar
    across sides rather than duplicating it.
    """

    key: str
    accepted: tuple[Demonstration, ...] = ()
    rejected: tuple[Demonstration, ...] = ()
    capacity: int = DEMO_CAPACITY

    def __post_init__(self):
        if len(self.accepted) > self.capacity or len(self.rejected) > self.capacity:
            raise ValueError(f"preference pool {self.key} exceeds capacity {self.capacity}")
        acc = {d.prompt for d in self.accepted}
        rej = {d.prompt for d in self.rejected}
        if len(acc) != len(self.accepted) or len(rej) != len(self.rejected):
            raise ValueError(f"preference pool {self.key} has duplicate exemplars")
        if acc & rej:
            raise ValueError(f"preference pool {self.key} has overlapping accepted/rejected")

    def accept(self, demo: Demonstration) -> PreferencePool:
        return self._insert(demo, accepted_side=True)

    def reject(self, demo: Demonstration) -> PreferencePool:
        return self._insert(demo, accepted_side=False)

    def _insert(self, demo: Demonstration, accepted_side: bool) -> PreferencePool:
        target = list(self.accepted if accepted_side else self.rejected)
        other = list(self.rejected if accepted_side else self.accepted)
        if any(d.prompt == demo.prompt for d in target):
            return self
        other = [d for d in other if d.prompt != demo.prompt]
        target.append(demo)
        if len(target) > self.capacity:
            target = target[-self.capacity :]
        acc, rej = (target, other) if accepted_side else (other, target)
        return PreferencePool(
            key=self.key, accepted=tuple(acc), rejected=tuple(rej), capacity=self.capacity
        )

    def demo_text(self) -> str:
        return templates.format_demonstrations(
            [(d.prompt, d.response) for d in self.accepted],
            [(d.prompt, d.response) for d in self.rejected],
        )


class NodeScoreTable:
    """Scores per (agent, candidate index); indices are 1-based."""

    def __init__(self, entries: dict[tuple[AgentId, int], Score] | None = None):
        self.entries: dict[tuple[AgentId, int], Score] = dict(entries or {})

    def put(self, agent: AgentId, index: int, score: Score) -> None:
        self.entries[(agent, index)] = score

    def get(self, agent: AgentId, index: int) -> Score:
        try:
            return self.entries[(agent, index)]
        except KeyError:
            raise MissingScoreError(f"no node score for {agent}#{index}") from None

    def log(self, agent: AgentId, index: int) -> float:
        return self.get(agent, index).log

    def pool_sizes(self) -> dict[AgentId, int]:
        sizes: dict[AgentId, int] = {}
        for agent, k in self.entries:
            sizes[agent] = max(sizes.get(agent, 0), k)
        return sizes

    def validate_complete(self, sizes: dict[AgentId, int]) -> None:
        for agent, size in sizes.items():
            for k in range(1, size + 1):
                self.get(agent, k)

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeScoreTable) and self.entries == other.entries

    def to_document(self) -> dict:
        doc: dict[str, list[float]] = {}
        for agent, size in sorted(self.pool_sizes().items()):
            doc[agent] = [self.get(agent, k).value for k in range(1, size + 1)]
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> NodeScoreTable:
        table = cls()
        for agent, values in doc.items():
            for k, v in enumerate(values, start=1):
                table.put(agent, k, Score(float(v)))
        return table


class EdgeScoreTable:
    """Scores per (edge, upstream index, downstream index); 1-based."""

    def __init__(self, entries: dict[tuple[tuple[AgentId, AgentId], int, int], Score] | None = None):
        self.entries: dict[tuple[tuple[AgentId, AgentId], int, int], Score] = dict(entries or {})

    def put(self, edge: tuple[AgentId, AgentId], k: int, l: int, score: Score) -> None:
        self.entries[(edge, k, l)] = score

    def put_matrix(self, edge: tuple[AgentId, AgentId], matrix: list[list[Score]]) -> None:
        for k, row in enumerate(matrix, start=1):
            for l, score in enumerate(row, start=1):
                self.put(edge, k, l, score)

    def get(self, edge: tuple[AgentId, AgentId], k: int, l: int) -> Score:
        try:
            return self.entries[(edge, k, l)]
        except KeyError:
            raise MissingScoreError(f"no edge score for {edge[0]}#{k} -> {edge[1]}#{l}") from None

    def log(self, edge: tuple[AgentId, AgentId], k: int, l: int) -> float:
        return self.get(edge, k, l).log

    def validate_complete(self, edges: list[tuple[AgentId, AgentId]], sizes: dict[AgentId, int]) -> None:
        for i, j in edges:
            for k in range(1, sizes[i] + 1):
                for l in range(1, sizes[j] + 1):
                    self.get((i, j), k, l)

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeScoreTable) and self.entries == other.entries

    def to_document(self, sizes: dict[AgentId, int]) -> dict:
        doc: dict[str, list[list[float]]] = {}
        for (i, j) in sorted({e for e, _, _ in self.entries}):
            doc[f"{i}->{j}"] = [
                [self.get((i, j), k, l).value for l in range(1, sizes[j] + 1)]
                for k in range(1, sizes[i] + 1)
            ]
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> EdgeScoreTable:
        table = cls()
        for label, matrix in doc.items():
            i, _, j = label.partition("->")
            table.put_matrix((i, j), [[Score(float(v)) for v in row] for row in matrix])
        return table


def joint_quality_score(
    assignment: dict[AgentId, int],
    nodes: NodeScoreTable,
    edges: EdgeScoreTable,
    graph: AgentGraph,
) -> Score:
    """Product of all node and edge factors under ``assignment``.

    Computed as a log-domain sum and exponentiated, so the factor order
    cannot change the result beyond float associativity noise.
    """
    total = 0.0
    for agent in graph.agent_ids():
        if agent not in assignment:
            raise MissingScoreError(f"assignment is missing agent {agent}")
        total += nodes.log(agent, assignment[agent])
    for i, j in graph.edges:
        total += edges.log((i, j), assignment[i], assignment[j])
    return Score(min(1.0, math.exp(total)))


def parse_score_lines(reply: str, expected_count: int) -> list[Score]:
    """Parse one float per non-empty line, in original order.

    Rejects count mismatches, non-numeric lines, and values outside [0, 1].
    """
    if expected_count < 1:
        raise ValueError("expected_count must be >= 1")
    lines = [line.strip() for line in reply.splitlines() if line.strip()]
    if len(lines) != expected_count:
        raise MalformedReplyError(
            f"expected {expected_count} score lines, got {len(lines)}"
        )
    scores = []
    for line in lines:
        try:
            value = float(line)
        except ValueError:
            raise MalformedReplyError(f"non-numeric score line {line!r}") from None
        if not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise MalformedReplyError(f"score {line!r} outside [0, 1]")
        scores.append(Score(value))
    return scores


class RewardScorer(Protocol):
    """Produces node scores for a pool and edge scores for a hand-off."""

    name: str

    def score_nodes(
        self, agent: AgentId, pool: PromptPool, io: ExpectedIO, demos: PreferencePool
    ) -> list[Score]: ...

    def score_edges(
        self,
        edge: tuple[AgentId, AgentId],
        upstream_outputs: list[str],
        downstream_pool: PromptPool,
        demos: PreferencePool,
    ) -> list[list[Score]]: ...


# Apostrophes only count inside a word ("don't"), never as quoting.
_WORD = re.compile(r"\w+(?:'\w+)*")


def text_tokens(text: str) -> set[str]:
    return set(_WORD.findall(text.lower()))


class MockRewardScorer:
    """Deterministic scorer for offline runs.

    Node scores are the Jaccard overlap between a candidate's tokens and a
    per-agent target text (falling back to the agent's desirable response).
    Edge scores are binary: 1.0 when the upstream output's token set covers
    every token the downstream candidate declares via ``needs:<token>``
    markers, else 0.0.  Pure function of its inputs: identical calls return
    identical scores.
    """

    name = "mock"

    def __init__(self, targets: dict[AgentId, str] | None = None, required_marker: str = "needs:"):
        self.targets = dict(targets or {})
        self.required_marker = required_marker

    def score_nodes(self, agent, pool, io, demos):
        if len(pool) < 1:
            raise ValueError("pool must be non-empty")
        target = self.targets.get(agent) or (io.response if io else "")
        target_tokens = text_tokens(target)
        scores = []
        for cand in pool.candidates:
            tokens = text_tokens(cand.text)
            union = tokens | target_tokens
            overlap = len(tokens & target_tokens) / len(union) if union else 0.0
            scores.append(Score(overlap))
        return scores

    def required_tokens(self, candidate_text: str) -> set[str]:
        marker = self.required_marker
        required = set()
        for raw in candidate_text.split():
            token = raw.lower().strip(".,;:!?'\"")
            if token.startswith(marker) and len(token) > len(marker):
                required.add(token[len(marker) :])
        return required

    def score_edges(self, edge, upstream_outputs, downstream_pool, demos):
        if not upstream_outputs or len(downstream_pool) < 1:
            raise ValueError("both sides of an edge must be non-empty")
        matrix = []
        for output in upstream_outputs:
            available = text_tokens(output)
            row = [
                Score(1.0 if self.required_tokens(cand.text) <= available else 0.0)
                for cand in downstream_pool.candidates
            ]
            matrix.append(row)
        return matrix


class ScoreCache:
    """Concurrent map from request fingerprints to parsed scores.

    Keys hash the full rendered payload, so any change to pools, expected
    IO, or demonstrations changes the key and invalidates naturally.
    """

    def __init__(self):
        self._data: dict[str, list[Score]] = {}
        self._lock = threading.Lock()

    @staticmethod
    def fingerprint(scorer_id: str, payload_text: str) -> str:
        digest = hashlib.sha256(payload_text.encode("utf-8")).hexdigest()
        return f"{scorer_id}:{digest}"

    def get(self, key: str) -> list[Score] | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, scores: list[Score]) -> None:
        with self._lock:
            self._data[key] = list(scores)

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)


_TWO_DECIMALS = re.compile(r"^[01]\.\d{2}$")


class LLMRewardScorer:
    """Reward scorer backed by a chat-completions endpoint.

    Renders the node/edge reward templates, demands score-per-line replies,
    and enforces the templates' two-decimal distinct-score contract.  A
    malformed reply is retried with the identical request up to
    ``max_parse_retries`` times; persistent failure aborts the call rather
    than inventing default scores.
    """

    name = "llm"

    def __init__(
        self,
        gateway: ChatGateway,
        model: str,
        temperature: float = 0.2,
        max_tokens: int = 2048,
        cache: ScoreCache | None = None,
        max_parse_retries: int = 3,
        fragment_limit: int = 4000,
    ):
        self.gateway = gateway
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.cache = cache if cache is not None else ScoreCache()
        self.max_parse_retries = max_parse_retries
        self.fragment_limit = fragment_limit

    def score_nodes(self, agent, pool, io, demos):
        if len(pool) < 1:
            raise ValueError("pool must be non-empty")
        payload = templates.node_reward_payload(
            templates.clip_tail(io.input, self.fragment_limit),
            templates.clip_tail(io.response, self.fragment_limit),
            demos.demo_text(),
            pool.texts(),
        )
        return self._scored_call(payload, len(pool))

    def score_edges(self, edge, upstream_outputs, downstream_pool, demos):
        if not upstream_outputs or len(downstream_pool) < 1:
            raise ValueError("both sides of an edge must be non-empty")
        matrix = []
        for output in upstream_outputs:
            payload = templates.edge_reward_payload(
                edge[0],
                edge[1],
                demos.demo_text(),
                templates.clip_tail(output, self.fragment_limit),
                downstream_pool.texts(),
            )
            matrix.append(self._scored_call(payload, len(downstream_pool)))
        return matrix

    def _scored_call(self, payload: templates.RenderedPayload, count: int) -> list[Score]:
        key = ScoreCache.fingerprint(self.name, payload.as_text())
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        request = ChatRequest(
            model=self.model,
            messages=[
                {"role": "system", "content": payload.system},
                {"role": "user", "content": payload.user},
            ],
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )
        last_error: MalformedReplyError | None = None
        for attempt in range(1, self.max_parse_retries + 1):
            try:
                reply = self.gateway.chat(request)
            except GatewayError as exc:
                raise ScorerUnavailableError(f"reward endpoint failed: {exc}") from exc
            try:
                scores = parse_score_lines(reply.content, count)
                self._check_reply_format(reply.content, scores)
            except MalformedReplyError as exc:
                last_error = exc
                log.warning("malformed reward reply (attempt %d/%d): %s", attempt, self.max_parse_retries, exc)
                continue
            self.cache.put(key, scores)
            return scores
        raise MalformedReplyError(f"reward reply unusable after {self.max_parse_retries} attempts: {last_error}")

    @staticmethod
    def _check_reply_format(reply: str, scores: list[Score]) -> None:
        lines = [line.strip() for line in reply.splitlines() if line.strip()]
        for line in lines:
            if not _TWO_DECIMALS.match(line):
                raise MalformedReplyError(f"score line {line!r} is not a two-decimal value")
        values = [s.value for s in scores]
        if len(set(values)) != len(values):
            raise MalformedReplyError("scores are not pairwise distinct")
