"""Exact MAP selection over the agent graph.

Arborescent pipelines are solved directly with max-product message passing:
one upward message per edge carrying, for each choice of the receiving
parent, the best achievable log-score of the sender's whole subtree plus an
argmax witness, then a downward pass that fixes choices from the recorded
witnesses.  Pipelines whose moral graph is not a tree are first converted
to a junction tree (moralize, min-fill triangulate, maximal cliques,
max-weight spanning tree over separator sizes) and the same max-product
scheme runs at clique level, which is exact for any DAG.

All tables are log domain; every message is normalized by its max entry
with the offset tracked separately, so deep pipelines cannot underflow and
argmax choices are unaffected.  Ties always resolve to the lowest candidate
index, with agents considered in ascending identifier order.

``brute_force_map`` is the independent oracle: exhaustive enumeration of
the full assignment space, guarded against blow-up.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FactorHomelessError,
    GraphValidationError,
    MissingScoreError,
    TooLargeError,
)
from .scoring import EdgeScoreTable, NodeScoreTable, Score, joint_quality_score
from .topology import AgentGraph, AgentId, topological_order

BRUTE_FORCE_GUARD = 10**6
CLIQUE_TENSOR_GUARD = 10**7


@dataclass(frozen=True)
class Assignment:
    """A total choice of one candidate index (1-based) per agent."""

    choices: dict[AgentId, int]
    score: Score


@dataclass
class MessageRecord:
    """One message of a solve, kept for tracing and complexity assertions.

    ``table`` holds max-normalized log values indexed by the receiver-side
    choice space (flattened row-major for clique messages); ``offset`` is
    the subtracted max.  ``witnesses`` maps every table entry to the
    sender-side argmax choices.  ``ops`` counts candidate combinations
    examined while building the table (0 for downward notifications, which
    only look up a recorded witness).
    """

    sender: str
    receiver: str
    direction: str
    scope: tuple[AgentId, ...]
    table: list[float]
    offset: float
    witnesses: list[dict[AgentId, int]]
    ops: int

    def to_document(self) -> dict:
        return {
            "sender": self.sender,
            "receiver": self.receiver,
            "direction": self.direction,
            "scope": list(self.scope),
            "table": self.table,
            "offset": self.offset,
            "witnesses": self.witnesses,
            "ops": self.ops,
        }


@dataclass
class SolveTrace:
    """Structured record of one solve, consumable by the CLI inspector."""

    mode: str = ""
    messages: list[MessageRecord] = field(default_factory=list)
    belief_scope: tuple[AgentId, ...] = ()
    belief: list[float] = field(default_factory=list)
    belief_offset: float = 0.0
    cliques: list[tuple[AgentId, ...]] = field(default_factory=list)
    separators: list[tuple[AgentId, ...]] = field(default_factory=list)
    treewidth: int | None = None
    assignment: Assignment | None = None

    def message_count(self) -> int:
        return len(self.messages)

    def to_document(self) -> dict:
        return {
            "mode": self.mode,
            "messages": [m.to_document() for m in self.messages],
            "belief_scope": list(self.belief_scope),
            "belief": self.belief,
            "belief_offset": self.belief_offset,
            "cliques": [list(c) for c in self.cliques],
            "separators": [list(s) for s in self.separators],
            "treewidth": self.treewidth,
            "assignment": None
            if self.assignment is None
            else {
                "choices": dict(self.assignment.choices),
                "score": self.assignment.score.value,
            },
        }


def message_count(trace: SolveTrace) -> int:
    """Total messages exchanged in a completed, traced solve."""
    return trace.message_count()


# --------------------------------------------------------------------------
# Moralization and triangulation
# --------------------------------------------------------------------------


def moralize(graph: AgentGraph) -> dict[AgentId, set[AgentId]]:
    """Undirected skeleton plus an edge between every co-parent pair."""
    adj: dict[AgentId, set[AgentId]] = {a: set() for a in graph.agent_ids()}
    for i, j in graph.edges:
        adj[i].add(j)
        adj[j].add(i)
    for agent in graph.agent_ids():
        parents = graph.parents(agent)
        for a, b in itertools.combinations(parents, 2):
            adj[a].add(b)
            adj[b].add(a)
    return adj


def triangulate(adj: dict[AgentId, set[AgentId]]) -> tuple[
    dict[AgentId, set[AgentId]], list[AgentId], list[tuple[AgentId, AgentId]]
]:
    """Min-fill triangulation; ties break on the lowest identifier.

    Returns the chordal graph, the elimination order, and the fill edges
    that were added.
    """
    work = {v: set(ns) for v, ns in adj.items()}
    chordal = {v: set(ns) for v, ns in adj.items()}
    order: list[AgentId] = []
    fill: list[tuple[AgentId, AgentId]] = []
    while work:
        best_v = None
        best_cost = None
        for v in sorted(work):
            ns = sorted(work[v])
            cost = sum(
                1
                for a, b in itertools.combinations(ns, 2)
                if b not in work[a]
            )
            if best_cost is None or cost < best_cost:
                best_v, best_cost = v, cost
        ns = sorted(work[best_v])
        for a, b in itertools.combinations(ns, 2):
            if b not in work[a]:
                work[a].add(b)
                work[b].add(a)
                chordal[a].add(b)
                chordal[b].add(a)
                fill.append((a, b))
        for n in ns:
            work[n].discard(best_v)
        del work[best_v]
        order.append(best_v)
    return chordal, order, fill


def elimination_cliques(
    chordal: dict[AgentId, set[AgentId]], order: list[AgentId]
) -> list[tuple[AgentId, ...]]:
    """Maximal cliques of a chordal graph from its elimination order."""
    remaining = set(chordal)
    clusters: list[frozenset[AgentId]] = []
    for v in order:
        remaining.discard(v)
        cluster = frozenset({v} | (chordal[v] & remaining))
        clusters.append(cluster)
    maximal = [c for c in clusters if not any(c < other for other in clusters)]
    unique = sorted({c for c in maximal}, key=lambda c: tuple(sorted(c)))
    return [tuple(sorted(c)) for c in unique]


# --------------------------------------------------------------------------
# Junction tree
# --------------------------------------------------------------------------


@dataclass
class Clique:
    """A variable cluster with its log-domain potential tensor.

    ``members`` are sorted ascending and index the tensor axes in order.
    ``factors`` lists the node/edge factors absorbed here; each graph
    factor lives in exactly one clique.
    """

    members: tuple[AgentId, ...]
    potential: np.ndarray
    factors: list[tuple] = field(default_factory=list)


@dataclass
class JunctionTree:
    """Clique tree with separators, satisfying the running intersection property."""

    cliques: list[Clique]
    separators: list[tuple[int, int, tuple[AgentId, ...]]]
    sizes: dict[AgentId, int]

    @property
    def treewidth(self) -> int:
        return max(len(c.members) for c in self.cliques) - 1

    def separator_log_potential(self, index: int) -> float:
        # No factor is assigned to a separator, so its potential is the
        # empty product: 1 in linear domain, 0 in log domain.
        return 0.0

    def log_ratio(self, assignment: dict[AgentId, int]) -> float:
        """log of (product of clique potentials / product of separator potentials)."""
        total = 0.0
        for clique in self.cliques:
            idx = tuple(assignment[m] - 1 for m in clique.members)
            total += float(clique.potential[idx])
        for sep_index in range(len(self.separators)):
            total -= self.separator_log_potential(sep_index)
        return total

    def verify_running_intersection(self) -> bool:
        """Exhaustively check that each agent's cliques form a connected subtree."""
        adj: dict[int, set[int]] = {i: set() for i in range(len(self.cliques))}
        for a, b, _ in self.separators:
            adj[a].add(b)
            adj[b].add(a)
        for agent in self.sizes:
            holding = {i for i, c in enumerate(self.cliques) if agent in c.members}
            if not holding:
                return False
            stack = [min(holding)]
            seen: set[int] = set()
            while stack:
                v = stack.pop()
                if v in seen:
                    continue
                seen.add(v)
                stack.extend(w for w in adj[v] if w in holding and w not in seen)
            if seen != holding:
                return False
        return True


def _pool_sizes_for(graph: AgentGraph, nodes: NodeScoreTable) -> dict[AgentId, int]:
    sizes = nodes.pool_sizes()
    for agent in graph.agent_ids():
        if agent not in sizes:
            raise MissingScoreError(f"no node scores for agent {agent}")
    return {agent: sizes[agent] for agent in graph.agent_ids()}


def build_junction_tree(
    graph: AgentGraph, nodes: NodeScoreTable, edges: EdgeScoreTable
) -> JunctionTree:
    """Moralize, triangulate, and assemble the clique tree with potentials."""
    sizes = _pool_sizes_for(graph, nodes)
    chordal, order, _ = triangulate(moralize(graph))
    members_list = elimination_cliques(chordal, order)

    cliques: list[Clique] = []
    for members in members_list:
        table_size = 1
        for m in members:
            table_size *= sizes[m]
        if table_size > CLIQUE_TENSOR_GUARD:
            raise TooLargeError(
                f"clique {members} needs a tensor of {table_size} entries "
                f"(guard {CLIQUE_TENSOR_GUARD})"
            )
        shape = tuple(sizes[m] for m in members)
        cliques.append(Clique(members=members, potential=np.zeros(shape)))

    # Max-weight spanning tree over pairwise separator sizes (Kruskal,
    # deterministic by weight then clique order).
    candidates = []
    for a, b in itertools.combinations(range(len(cliques)), 2):
        common = tuple(sorted(set(cliques[a].members) & set(cliques[b].members)))
        if common:
            candidates.append((-len(common), a, b, common))
    candidates.sort()
    parent = list(range(len(cliques)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    separators: list[tuple[int, int, tuple[AgentId, ...]]] = []
    for _, a, b, common in candidates:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            separators.append((a, b, common))
    if len(separators) != len(cliques) - 1:
        raise FactorHomelessError("clique graph is not connected")  # pragma: no cover

    # Absorb each factor into the first clique containing its variables.
    def assign(factor_vars: tuple[AgentId, ...], add):
        for clique in cliques:
            if set(factor_vars) <= set(clique.members):
                add(clique)
                return
        raise FactorHomelessError(f"no clique contains factor over {factor_vars}")

    for agent in graph.agent_ids():
        logs = np.array([nodes.log(agent, k) for k in range(1, sizes[agent] + 1)])

        def add_node(clique, agent=agent, logs=logs):
            axis = clique.members.index(agent)
            shape = [1] * len(clique.members)
            shape[axis] = len(logs)
            clique.potential += logs.reshape(shape)
            clique.factors.append(("node", agent))

        assign((agent,), add_node)

    for i, j in graph.edges:
        matrix = np.array(
            [
                [edges.log((i, j), k, l) for l in range(1, sizes[j] + 1)]
                for k in range(1, sizes[i] + 1)
            ]
        )

        def add_edge(clique, i=i, j=j, matrix=matrix):
            ai = clique.members.index(i)
            aj = clique.members.index(j)
            shape = [1] * len(clique.members)
            shape[ai] = matrix.shape[0]
            shape[aj] = matrix.shape[1]
            block = matrix if ai < aj else matrix.T
            clique.potential += block.reshape(shape)
            clique.factors.append(("edge", i, j))

        assign((i, j), add_edge)

    return JunctionTree(cliques=cliques, separators=separators, sizes=sizes)


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------


def _is_arborescence(graph: AgentGraph) -> bool:
    """True when the moral graph is a tree: one source, all others in-degree 1."""
    sources = graph.sources()
    if len(sources) != 1:
        return False
    entry = sources[0]
    return all(len(graph.parents(a)) == 1 for a in graph.agent_ids() if a != entry)


def solve_tree(
    graph: AgentGraph,
    nodes: NodeScoreTable,
    edges: EdgeScoreTable,
    root: AgentId | None = None,
    trace: SolveTrace | None = None,
) -> Assignment:
    """Max-product selection on an arborescent pipeline.

    The upward pass sends, per edge, the best subtree log-score for every
    parent choice; the root belief combines the root's own score with all
    incoming messages exactly once; the downward pass replays witnesses.
    """
    if not _is_arborescence(graph):
        raise GraphValidationError("solve_tree requires an arborescent pipeline")
    entry = graph.sources()[0]
    if root is not None and root != entry:
        raise GraphValidationError(f"root {root!r} is not the entry point {entry!r}")
    root = entry
    sizes = _pool_sizes_for(graph, nodes)
    order = topological_order(graph)

    node_logs = {
        a: np.array([nodes.log(a, k) for k in range(1, sizes[a] + 1)]) for a in order
    }
    inbox = {a: np.zeros(sizes[a]) for a in order}
    witnesses: dict[AgentId, list[int]] = {}

    for v in reversed(order):
        if v == root:
            continue
        p = graph.parents(v)[0]
        base = node_logs[v] + inbox[v]
        edge_logs = np.array(
            [
                [edges.log((p, v), l, k) for k in range(1, sizes[v] + 1)]
                for l in range(1, sizes[p] + 1)
            ]
        )
        values = edge_logs + base  # rows: parent choice, cols: own choice
        best = values.argmax(axis=1)
        table = values[np.arange(sizes[p]), best]
        witnesses[v] = [int(k) + 1 for k in best]
        inbox[p] += table
        if trace is not None:
            offset = float(table.max())
            trace.messages.append(
                MessageRecord(
                    sender=v,
                    receiver=p,
                    direction="up",
                    scope=(p,),
                    table=[float(x - offset) for x in table],
                    offset=offset,
                    witnesses=[{v: w} for w in witnesses[v]],
                    ops=int(values.size),
                )
            )

    belief = node_logs[root] + inbox[root]
    choices = {root: int(belief.argmax()) + 1}
    for v in order:
        for c in graph.children(v):
            choices[c] = witnesses[c][choices[v] - 1]
            if trace is not None:
                trace.messages.append(
                    MessageRecord(
                        sender=v,
                        receiver=c,
                        direction="down",
                        scope=(c,),
                        table=[],
                        offset=0.0,
                        witnesses=[{c: choices[c]}],
                        ops=0,
                    )
                )

    assignment = Assignment(choices=choices, score=joint_quality_score(choices, nodes, edges, graph))
    if trace is not None:
        trace.mode = "tree"
        trace.belief_scope = (root,)
        offset = float(belief.max())
        trace.belief = [float(x - offset) for x in belief]
        trace.belief_offset = offset
        trace.treewidth = 1 if graph.edges else 0
        trace.assignment = assignment
    return assignment


def _axis_expand(table: np.ndarray, src: tuple[AgentId, ...], dst: tuple[AgentId, ...]) -> np.ndarray:
    """Broadcast a tensor over ``src`` variables onto the axes of ``dst``."""
    # Reorder table axes to follow dst order, then insert singleton axes.
    positions = [dst.index(v) for v in src]
    out_shape = [1] * len(dst)
    for axis, pos in enumerate(positions):
        out_shape[pos] = table.shape[axis]
    reordered = np.transpose(table, axes=np.argsort(positions))
    return reordered.reshape(out_shape)


def solve_junction_tree(
    graph: AgentGraph,
    nodes: NodeScoreTable,
    edges: EdgeScoreTable,
    trace: SolveTrace | None = None,
    tree: JunctionTree | None = None,
) -> Assignment:
    """Clique-level max-product over the junction tree of a general DAG."""
    jt = tree if tree is not None else build_junction_tree(graph, nodes, edges)
    n = len(jt.cliques)

    adj: dict[int, list[tuple[int, tuple[AgentId, ...]]]] = {i: [] for i in range(n)}
    for a, b, common in jt.separators:
        adj[a].append((b, common))
        adj[b].append((a, common))

    root_idx = min(i for i, c in enumerate(jt.cliques) if graph.root in c.members)
    parent_of: dict[int, tuple[int, tuple[AgentId, ...]] | None] = {root_idx: None}
    bfs = [root_idx]
    visit_order = []
    while bfs:
        v = bfs.pop(0)
        visit_order.append(v)
        for w, common in sorted(adj[v]):
            if w not in parent_of:
                parent_of[w] = (v, common)
                bfs.append(w)

    combined: dict[int, np.ndarray] = {
        i: jt.cliques[i].potential.copy() for i in range(n)
    }
    up_witness: dict[int, tuple[tuple[AgentId, ...], np.ndarray]] = {}

    for v in reversed(visit_order):
        if parent_of[v] is None:
            continue
        p, sep = parent_of[v]
        clique = jt.cliques[v]
        keep_axes = tuple(clique.members.index(m) for m in sep)
        elim = tuple(m for m in clique.members if m not in sep)
        elim_axes = tuple(clique.members.index(m) for m in elim)
        moved = np.transpose(combined[v], axes=keep_axes + elim_axes)
        sep_shape = moved.shape[: len(keep_axes)]
        flat = moved.reshape(sep_shape + (-1,)) if elim else moved.reshape(sep_shape + (1,))
        best_flat = flat.argmax(axis=-1)
        table = np.take_along_axis(flat, best_flat[..., None], axis=-1)[..., 0]
        up_witness[v] = (elim, best_flat)
        expanded = _axis_expand(table, sep, jt.cliques[p].members)
        combined[p] = combined[p] + expanded
        if trace is not None:
            offset = float(table.max())
            wit_docs = []
            elim_shape = tuple(jt.sizes[m] for m in elim)
            for flat_idx in best_flat.reshape(-1):
                if elim:
                    per_axis = np.unravel_index(int(flat_idx), elim_shape)
                    wit_docs.append({m: int(ix) + 1 for m, ix in zip(elim, per_axis)})
                else:
                    wit_docs.append({})
            trace.messages.append(
                MessageRecord(
                    sender="|".join(clique.members),
                    receiver="|".join(jt.cliques[p].members),
                    direction="up",
                    scope=sep,
                    table=[float(x - offset) for x in table.reshape(-1)],
                    offset=offset,
                    witnesses=wit_docs,
                    ops=int(combined[v].size),
                )
            )

    root_belief = combined[root_idx]
    flat_best = int(root_belief.argmax())
    root_members = jt.cliques[root_idx].members
    root_choice = np.unravel_index(flat_best, root_belief.shape)
    choices: dict[AgentId, int] = {
        m: int(ix) + 1 for m, ix in zip(root_members, root_choice)
    }

    for v in visit_order:
        if parent_of[v] is None:
            continue
        _, sep = parent_of[v]
        clique = jt.cliques[v]
        elim, best_flat = up_witness[v]
        sep_idx = tuple(choices[m] - 1 for m in sep)
        flat_idx = int(best_flat[sep_idx]) if sep else int(best_flat)
        fixed: dict[AgentId, int] = {}
        if elim:
            elim_shape = tuple(jt.sizes[m] for m in elim)
            per_axis = np.unravel_index(flat_idx, elim_shape)
            for m, ix in zip(elim, per_axis):
                fixed[m] = int(ix) + 1
        for m, k in fixed.items():
            choices.setdefault(m, k)
        if trace is not None:
            parent_members = jt.cliques[parent_of[v][0]].members
            trace.messages.append(
                MessageRecord(
                    sender="|".join(parent_members),
                    receiver="|".join(clique.members),
                    direction="down",
                    scope=tuple(elim),
                    table=[],
                    offset=0.0,
                    witnesses=[dict(fixed)],
                    ops=0,
                )
            )

    assignment = Assignment(choices=choices, score=joint_quality_score(choices, nodes, edges, graph))
    if trace is not None:
        trace.mode = "junction_tree"
        trace.belief_scope = root_members
        offset = float(root_belief.max())
        trace.belief = [float(x - offset) for x in root_belief.reshape(-1)]
        trace.belief_offset = offset
        trace.cliques = [c.members for c in jt.cliques]
        trace.separators = [common for _, _, common in jt.separators]
        trace.treewidth = jt.treewidth
        trace.assignment = assignment
    return assignment


def solve(
    graph: AgentGraph,
    nodes: NodeScoreTable,
    edges: EdgeScoreTable,
    trace: SolveTrace | None = None,
) -> Assignment:
    """Exact MAP assignment; routes to the tree or junction-tree solver."""
    if _is_arborescence(graph) and graph.root == graph.sources()[0]:
        return solve_tree(graph, nodes, edges, root=graph.root, trace=trace)
    return solve_junction_tree(graph, nodes, edges, trace=trace)


def brute_force_map(
    graph: AgentGraph,
    nodes: NodeScoreTable,
    edges: EdgeScoreTable,
    guard: int = BRUTE_FORCE_GUARD,
) -> Assignment:
    """Exhaustive argmax of the joint quality score; the verification oracle.

    Iterates assignments in lexicographic order over agents sorted by
    identifier, keeping the first maximum, which matches the solvers'
    lowest-index tie-break.
    """
    sizes = _pool_sizes_for(graph, nodes)
    agents = sorted(graph.agent_ids())
    space = 1
    for a in agents:
        space *= sizes[a]
    if space > guard:
        raise TooLargeError(f"assignment space {space} exceeds guard {guard}")

    node_logs = {
        a: [nodes.log(a, k) for k in range(1, sizes[a] + 1)] for a in agents
    }
    edge_logs = {
        (i, j): [
            [edges.log((i, j), k, l) for l in range(1, sizes[j] + 1)]
            for k in range(1, sizes[i] + 1)
        ]
        for i, j in graph.edges
    }

    best_choices: dict[AgentId, int] | None = None
    best_log = -math.inf
    for combo in itertools.product(*(range(1, sizes[a] + 1) for a in agents)):
        choices = dict(zip(agents, combo))
        total = sum(node_logs[a][choices[a] - 1] for a in agents)
        for i, j in graph.edges:
            total += edge_logs[(i, j)][choices[i] - 1][choices[j] - 1]
        if total > best_log:
            best_log = total
            best_choices = choices
    assert best_choices is not None
    return Assignment(
        choices=best_choices,
        score=joint_quality_score(best_choices, nodes, edges, graph),
    )
