"""Agent-graph topology: the fixed multi-agent pipeline under optimization.

The pipeline is a directed acyclic graph whose vertices are agents and whose
edges are hand-offs (the producer's output becomes part of the consumer's
input).  Graphs are immutable once constructed; every structural operation
returns a new graph and re-runs validation.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

from .errors import CycleError, GraphValidationError, UnknownAgentError

AgentId = str


@dataclass(frozen=True)
class Agent:
    """One pipeline member: an identifier, its role, and its seed prompt."""

    id: AgentId
    role: str = ""
    base_prompt: str = ""


@dataclass(frozen=True)
class PromptCandidate:
    """One entry of an agent's candidate pool.

    ``index`` is 1-based and unique within the pool.  ``parent_index`` and
    ``action`` record mutation lineage: which pool member the candidate was
    edited from and which edit action produced it.
    """

    agent: AgentId
    index: int
    text: str
    parent_index: int | None = None
    action: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise GraphValidationError(f"candidate {self.agent}#{self.index} has empty text")
        if self.index < 1:
            raise GraphValidationError(f"candidate index must be >= 1, got {self.index}")


@dataclass(frozen=True)
class PromptPool:
    """An agent's candidate set, capped at ``capacity`` entries."""

    agent: AgentId
    candidates: tuple[PromptCandidate, ...]
    capacity: int

    def __post_init__(self):
        if not 1 <= len(self.candidates) <= self.capacity:
            raise GraphValidationError(
                f"pool for {self.agent} holds {len(self.candidates)} candidates, "
                f"capacity {self.capacity}"
            )
        indices = [c.index for c in self.candidates]
        if len(set(indices)) != len(indices):
            raise GraphValidationError(f"pool for {self.agent} has duplicate candidate indices")
        for c in self.candidates:
            if c.agent != self.agent:
                raise GraphValidationError(
                    f"candidate for {c.agent} placed in pool of {self.agent}"
                )

    def __len__(self) -> int:
        return len(self.candidates)

    def get(self, index: int) -> PromptCandidate:
        for c in self.candidates:
            if c.index == index:
                return c
        raise KeyError(f"no candidate #{index} in pool of {self.agent}")

    def texts(self) -> list[str]:
        return [c.text for c in self.candidates]


def pool_from_texts(agent: AgentId, texts: list[str], capacity: int) -> PromptPool:
    """Build a pool assigning indices 1..len(texts) in order."""
    cands = tuple(
        PromptCandidate(agent=agent, index=i + 1, text=t) for i, t in enumerate(texts)
    )
    return PromptPool(agent=agent, candidates=cands, capacity=capacity)


@dataclass(frozen=True)
class AgentGraph:
    """Immutable DAG of agents with a designated entry point ``root``.

    Invariants checked at construction: all edge endpoints exist, no
    duplicate or self edges, no directed cycles, and ``root`` names an
    existing agent.  Connectivity and the root being a source are runnable-
    pipeline requirements enforced by :func:`make_graph` and
    :func:`graph_from_document`, so edge-by-edge builders can pass through
    intermediate shapes and :func:`reverse` keeps the root designation,
    making ``reverse(reverse(g)) == g`` hold.
    """

    agents: tuple[Agent, ...]
    edges: tuple[tuple[AgentId, AgentId], ...]
    root: AgentId
    _order_cache: tuple[AgentId, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise GraphValidationError("duplicate agent ids")
        if not ids:
            raise GraphValidationError("graph has no agents")
        for a in self.agents:
            if not a.id.strip():
                raise GraphValidationError("agent id must be non-empty")
        known = set(ids)
        seen = set()
        for i, j in self.edges:
            if i not in known or j not in known:
                raise UnknownAgentError(f"edge ({i}, {j}) references unknown agent")
            if i == j:
                raise GraphValidationError(f"self edge on {i}")
            if (i, j) in seen:
                raise GraphValidationError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        if self.root not in known:
            raise UnknownAgentError(f"root {self.root!r} is not an agent")
        # Raises CycleError on a cycle; also warms the deterministic order.
        order = _kahn_order(known, self.edges)
        object.__setattr__(self, "_order_cache", tuple(order))

    def is_connected(self) -> bool:
        if len(self.agents) <= 1:
            return True
        adj: dict[AgentId, set[AgentId]] = {a.id: set() for a in self.agents}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        stack = [self.agents[0].id]
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(adj[v] - seen)
        return len(seen) == len(self.agents)

    # -- lookups ---------------------------------------------------------

    def agent(self, agent_id: AgentId) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise UnknownAgentError(f"unknown agent {agent_id!r}")

    def agent_ids(self) -> list[AgentId]:
        return [a.id for a in self.agents]

    def parents(self, agent_id: AgentId) -> list[AgentId]:
        """Direct upstream producers, ascending by identifier."""
        if agent_id not in {a.id for a in self.agents}:
            raise UnknownAgentError(f"unknown agent {agent_id!r}")
        return sorted(i for i, j in self.edges if j == agent_id)

    def children(self, agent_id: AgentId) -> list[AgentId]:
        """Direct downstream consumers, ascending by identifier."""
        if agent_id not in {a.id for a in self.agents}:
            raise UnknownAgentError(f"unknown agent {agent_id!r}")
        return sorted(j for i, j in self.edges if i == agent_id)

    def sources(self) -> list[AgentId]:
        targets = {j for _, j in self.edges}
        return sorted(a.id for a in self.agents if a.id not in targets)

    def sinks(self) -> list[AgentId]:
        origins = {i for i, _ in self.edges}
        return sorted(a.id for a in self.agents if a.id not in origins)


def add_edge(graph: AgentGraph, from_id: AgentId, to_id: AgentId) -> AgentGraph:
    """Return ``graph`` with the edge (from_id, to_id) added.

    Raises UnknownAgentError if an endpoint is missing, GraphValidationError
    if the edge already exists, and CycleError if it would close a cycle.
    """
    known = {a.id for a in graph.agents}
    if from_id not in known or to_id not in known:
        raise UnknownAgentError(f"edge ({from_id}, {to_id}) references unknown agent")
    if (from_id, to_id) in graph.edges:
        raise GraphValidationError(f"edge ({from_id}, {to_id}) already present")
    return replace(graph, edges=graph.edges + ((from_id, to_id),), _order_cache=())


def topological_order(graph: AgentGraph) -> list[AgentId]:
    """Agents ordered so every edge points forward.

    Deterministic: among ready agents the lowest identifier goes first.
    """
    if graph._order_cache:
        return list(graph._order_cache)
    return _kahn_order({a.id for a in graph.agents}, graph.edges)


def _kahn_order(ids: set[AgentId], edges: tuple[tuple[AgentId, AgentId], ...]) -> list[AgentId]:
    indegree = {v: 0 for v in ids}
    out: dict[AgentId, list[AgentId]] = {v: [] for v in ids}
    for i, j in edges:
        indegree[j] += 1
        out[i].append(j)
    ready = [v for v in ids if indegree[v] == 0]
    heapq.heapify(ready)
    order: list[AgentId] = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in out[v]:
            indegree[w] -= 1
            if indegree[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != len(ids):
        raise CycleError("graph contains a directed cycle")
    return order


def reverse(graph: AgentGraph) -> AgentGraph:
    """Flip every edge; agents and the root designation are unchanged.

    Used for blame propagation, where feedback flows against the data flow.
    """
    flipped = tuple((j, i) for i, j in graph.edges)
    return AgentGraph(agents=graph.agents, edges=flipped, root=graph.root)


def make_graph(
    agents: list[Agent],
    edges: list[tuple[AgentId, AgentId]],
    root: AgentId | None = None,
) -> AgentGraph:
    """Validated construction for runnable pipelines.

    On top of the structural invariants, a runnable pipeline must be
    connected, and its entry point must have no incoming edges.  When
    ``root`` is omitted the graph must have exactly one source; with
    several sources the caller has to name the entry explicitly.
    """
    graph = AgentGraph(agents=tuple(agents), edges=tuple(edges), root=root or agents[0].id)
    if not graph.is_connected():
        raise GraphValidationError("graph is not connected")
    sources = graph.sources()
    if root is None:
        if len(sources) != 1:
            raise GraphValidationError(
                f"graph has sources {sources}; name the entry point explicitly"
            )
        graph = replace(graph, root=sources[0], _order_cache=graph._order_cache)
    elif root not in sources:
        raise GraphValidationError(f"root {root!r} has incoming edges; it is not an entry point")
    return graph


_AGENT_KEYS = {"id", "role", "base_prompt"}
_EDGE_KEYS = {"from", "to"}
_GRAPH_KEYS = {"agents", "edges", "root"}


def graph_from_document(doc: dict) -> AgentGraph:
    """Load a graph from its JSON document form. Unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise GraphValidationError("graph document must be an object")
    unknown = set(doc) - _GRAPH_KEYS
    if unknown:
        raise GraphValidationError(f"unknown graph keys: {sorted(unknown)}")
    raw_agents = doc.get("agents")
    if not isinstance(raw_agents, list) or not raw_agents:
        raise GraphValidationError("graph document needs a non-empty 'agents' list")
    agents = []
    for entry in raw_agents:
        if not isinstance(entry, dict) or "id" not in entry:
            raise GraphValidationError("each agent entry needs at least an 'id'")
        unknown = set(entry) - _AGENT_KEYS
        if unknown:
            raise GraphValidationError(f"unknown agent keys: {sorted(unknown)}")
        agents.append(
            Agent(
                id=str(entry["id"]),
                role=str(entry.get("role", "")),
                base_prompt=str(entry.get("base_prompt", "")),
            )
        )
    edges = []
    for entry in doc.get("edges", []):
        if not isinstance(entry, dict):
            raise GraphValidationError("each edge entry must be an object")
        unknown = set(entry) - _EDGE_KEYS
        if unknown:
            raise GraphValidationError(f"unknown edge keys: {sorted(unknown)}")
        if "from" not in entry or "to" not in entry:
            raise GraphValidationError("each edge entry needs 'from' and 'to'")
        edges.append((str(entry["from"]), str(entry["to"])))
    root = doc.get("root")
    return make_graph(agents, edges, root=str(root) if root is not None else None)


def graph_to_document(graph: AgentGraph) -> dict:
    return {
        "agents": [
            {"id": a.id, "role": a.role, "base_prompt": a.base_prompt} for a in graph.agents
        ],
        "edges": [{"from": i, "to": j} for i, j in graph.edges],
        "root": graph.root,
    }
