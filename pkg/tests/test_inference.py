"""Moralization, triangulation, junction trees, and the MAP solvers."""

from __future__ import annotations

import itertools
import math
import random

import pytest

from promptdag import (
    Agent,
    EdgeScoreTable,
    GraphValidationError,
    MissingScoreError,
    NodeScoreTable,
    Score,
    SolveTrace,
    TooLargeError,
    brute_force_map,
    build_junction_tree,
    make_graph,
    message_count,
    moralize,
    solve,
    solve_junction_tree,
    solve_tree,
    triangulate,
)
from promptdag.inference import elimination_cliques
from conftest import random_arborescence, random_dag, random_tables


def vee() -> "AgentGraph":  # noqa: F821 - fixture-style helper
    return make_graph([Agent("i"), Agent("j"), Agent("k")], [("i", "j"), ("k", "j")], root="i")


# -- moralization -------------------------------------------------------------


def test_moralize_vee_marries_parents():
    adj = moralize(vee())
    assert adj["i"] == {"j", "k"}
    assert adj["k"] == {"j", "i"}


def test_moralize_chain_no_fill(chain3):
    adj = moralize(chain3)
    assert adj == {"a": {"b"}, "b": {"a", "c"}, "c": {"b"}}


def test_moralize_diamond_marries_bc(diamond):
    adj = moralize(diamond)
    assert "c" in adj["b"] and "b" in adj["c"]


# -- triangulation -------------------------------------------------------------


def four_cycle_adj():
    return {"a": {"b", "d"}, "b": {"a", "c"}, "c": {"b", "d"}, "d": {"a", "c"}}


def fill_in_for_order(adj, order) -> int:
    """Oracle: count of fill edges produced by eliminating in this order."""
    work = {v: set(ns) for v, ns in adj.items()}
    fills = 0
    for v in order:
        ns = sorted(work[v])
        for x, y in itertools.combinations(ns, 2):
            if y not in work[x]:
                work[x].add(y)
                work[y].add(x)
                fills += 1
        for n in ns:
            work[n].discard(v)
        del work[v]
    return fills


def test_triangulate_four_cycle_single_chord():
    adj = four_cycle_adj()
    best = min(fill_in_for_order(adj, order) for order in itertools.permutations("abcd"))
    assert best == 1  # enumeration oracle over all 24 elimination orders
    chordal, order, fill = triangulate(adj)
    assert len(fill) == 1
    cliques = elimination_cliques(chordal, order)
    assert max(len(c) for c in cliques) - 1 == 2


def test_triangulate_triangle_no_fill():
    adj = {"a": {"b", "c"}, "b": {"a", "c"}, "c": {"a", "b"}}
    _, _, fill = triangulate(adj)
    assert fill == []


def test_triangulate_tree_no_fill(chain3):
    chordal, order, fill = triangulate(moralize(chain3))
    assert fill == []
    assert max(len(c) for c in elimination_cliques(chordal, order)) - 1 == 1


# -- junction tree --------------------------------------------------------------


def test_junction_tree_chain(chain3):
    nodes, edges = random_tables(chain3, 2, random.Random(0))
    jt = build_junction_tree(chain3, nodes, edges)
    assert [c.members for c in jt.cliques] == [("a", "b"), ("b", "c")]
    assert jt.separators == [(0, 1, ("b",))]
    assert jt.treewidth == 1


def test_junction_tree_diamond_width_two(diamond):
    nodes, edges = random_tables(diamond, 2, random.Random(1))
    jt = build_junction_tree(diamond, nodes, edges)
    assert {c.members for c in jt.cliques} == {("a", "b", "c"), ("b", "c", "d")}
    assert [sep for _, _, sep in jt.separators] == [("b", "c")]
    assert jt.treewidth == 2


def test_junction_tree_three_parents_width_three():
    graph = make_graph(
        [Agent("p"), Agent("q"), Agent("r"), Agent("x")],
        [("p", "x"), ("q", "x"), ("r", "x")],
        root="p",
    )
    nodes, edges = random_tables(graph, 2, random.Random(2))
    jt = build_junction_tree(graph, nodes, edges)
    assert jt.treewidth == 3
    assert any(len(c.members) == 4 for c in jt.cliques)


def test_junction_tree_factor_multiset_is_exact(diamond):
    nodes, edges = random_tables(diamond, 2, random.Random(3))
    jt = build_junction_tree(diamond, nodes, edges)
    factors = [f for c in jt.cliques for f in c.factors]
    expected = [("node", a) for a in diamond.agent_ids()]
    expected += [("edge", i, j) for i, j in diamond.edges]
    assert sorted(map(str, factors)) == sorted(map(str, expected))


def raw_log_joint(graph, nodes, edges, assignment) -> float:
    total = sum(nodes.log(a, assignment[a]) for a in graph.agent_ids())
    total += sum(edges.log(e, assignment[e[0]], assignment[e[1]]) for e in graph.edges)
    return total


def test_junction_tree_ratio_identity_random_instances():
    rng = random.Random(9)
    for _ in range(20):
        graph = random_dag(rng)
        k = rng.randint(1, 4)
        nodes, edges = random_tables(graph, k, rng)
        jt = build_junction_tree(graph, nodes, edges)
        assert jt.verify_running_intersection()
        for _ in range(20):
            assignment = {a: rng.randint(1, k) for a in graph.agent_ids()}
            expected = raw_log_joint(graph, nodes, edges, assignment)
            assert jt.log_ratio(assignment) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_clique_tensor_guard():
    graph = make_graph(
        [Agent("p"), Agent("q"), Agent("r"), Agent("x")],
        [("p", "x"), ("q", "x"), ("r", "x")],
        root="p",
    )
    nodes, edges = random_tables(graph, 100, random.Random(4))
    with pytest.raises(TooLargeError) as err:
        build_junction_tree(graph, nodes, edges)
    assert "clique" in str(err.value)


# -- solve_tree ------------------------------------------------------------------


def test_solve_tree_single_node():
    graph = make_graph([Agent("a")], [])
    nodes = NodeScoreTable()
    for k, v in enumerate([0.2, 0.9, 0.5], start=1):
        nodes.put("a", k, Score(v))
    trace = SolveTrace()
    result = solve_tree(graph, nodes, EdgeScoreTable(), trace=trace)
    assert result.choices == {"a": 2}
    assert result.score.value == pytest.approx(0.9)
    assert trace.message_count() == 0


def test_solve_tree_chain_matches_brute_force(chain3):
    rng = random.Random(7)
    for _ in range(10):
        nodes, edges = random_tables(chain3, 2, rng)
        fast = solve_tree(chain3, nodes, edges)
        slow = brute_force_map(chain3, nodes, edges)
        assert fast.score.value == pytest.approx(slow.score.value, rel=1e-9)
        assert fast.choices == slow.choices


def test_solve_tree_star_matches_brute_force():
    graph = make_graph(
        [Agent("r"), Agent("x"), Agent("y"), Agent("z")],
        [("r", "x"), ("r", "y"), ("r", "z")],
    )
    rng = random.Random(8)
    for _ in range(10):
        nodes, edges = random_tables(graph, 3, rng)
        fast = solve_tree(graph, nodes, edges)
        slow = brute_force_map(graph, nodes, edges)
        assert fast.score.value == pytest.approx(slow.score.value, rel=1e-9)
        assert fast.choices == slow.choices


def test_solve_tree_rejects_non_tree(diamond):
    nodes, edges = random_tables(diamond, 2, random.Random(9))
    with pytest.raises(GraphValidationError):
        solve_tree(diamond, nodes, edges)


def test_solve_tree_missing_score(chain3):
    nodes, edges = random_tables(chain3, 2, random.Random(10))
    del edges.entries[(("a", "b"), 1, 2)]
    with pytest.raises(MissingScoreError):
        solve_tree(chain3, nodes, edges)


# -- solve -----------------------------------------------------------------------


def test_solve_diamond_matches_brute_force(diamond):
    rng = random.Random(11)
    for _ in range(10):
        nodes, edges = random_tables(diamond, 2, rng)
        fast = solve(diamond, nodes, edges)
        slow = brute_force_map(diamond, nodes, edges)
        assert fast.score.value == pytest.approx(slow.score.value, rel=1e-9)
        assert fast.choices == slow.choices


def test_solve_delegates_to_tree(chain3):
    nodes, edges = random_tables(chain3, 3, random.Random(12))
    trace = SolveTrace()
    routed = solve(chain3, nodes, edges, trace=trace)
    direct = solve_tree(chain3, nodes, edges)
    assert trace.mode == "tree"
    assert routed == direct


def test_solve_all_equal_scores_takes_lowest_indices(diamond):
    nodes, edges = random_tables(diamond, 3, random.Random(13), low=0.7, high=0.7)
    result = solve(diamond, nodes, edges)
    assert result.choices == {a: 1 for a in diamond.agent_ids()}
    assert result.score.value == pytest.approx(0.7 ** (4 + 4))
    tree_result = solve_junction_tree(diamond, nodes, edges)
    assert tree_result.choices == result.choices


def test_solve_deterministic(diamond):
    nodes, edges = random_tables(diamond, 3, random.Random(14))
    first = solve(diamond, nodes, edges)
    second = solve(diamond, nodes, edges)
    assert first == second


# -- brute force ------------------------------------------------------------------


def test_brute_force_single_node_matches_tree():
    graph = make_graph([Agent("a")], [])
    nodes = NodeScoreTable()
    for k, v in enumerate([0.3, 0.8], start=1):
        nodes.put("a", k, Score(v))
    assert brute_force_map(graph, nodes, EdgeScoreTable()) == solve_tree(
        graph, nodes, EdgeScoreTable()
    )


def test_brute_force_guard():
    rng = random.Random(15)
    graph = random_dag(rng, max_n=6)
    k = 4
    nodes, edges = random_tables(graph, k, rng)
    brute_force_map(graph, nodes, edges)  # 4^n <= 4096, under guard
    with pytest.raises(TooLargeError):
        brute_force_map(graph, nodes, edges, guard=10)


# -- messages and trace --------------------------------------------------------------


def test_message_count_chain_two_per_edge(chain3):
    nodes, edges = random_tables(chain3, 2, random.Random(16))
    trace = SolveTrace()
    solve(chain3, nodes, edges, trace=trace)
    assert message_count(trace) == 2 * len(chain3.edges) == 4


def test_message_count_diamond_junction(diamond):
    nodes, edges = random_tables(diamond, 2, random.Random(17))
    trace = SolveTrace()
    solve(diamond, nodes, edges, trace=trace)
    assert trace.mode == "junction_tree"
    assert message_count(trace) == 2  # one separator edge, one message each way


def test_message_count_single_node():
    graph = make_graph([Agent("a")], [])
    nodes = NodeScoreTable()
    nodes.put("a", 1, Score(0.5))
    trace = SolveTrace()
    solve(graph, nodes, EdgeScoreTable(), trace=trace)
    assert message_count(trace) == 0


def test_upward_messages_are_max_normalized(chain3):
    nodes, edges = random_tables(chain3, 3, random.Random(18))
    trace = SolveTrace()
    solve(chain3, nodes, edges, trace=trace)
    ups = [m for m in trace.messages if m.direction == "up"]
    assert ups and all(max(m.table) == pytest.approx(0.0, abs=1e-12) for m in ups)
    assert all(len(m.witnesses) == len(m.table) for m in ups)


def test_trace_document_shape(diamond):
    nodes, edges = random_tables(diamond, 2, random.Random(19))
    trace = SolveTrace()
    solve(diamond, nodes, edges, trace=trace)
    doc = trace.to_document()
    assert doc["mode"] == "junction_tree"
    assert doc["treewidth"] == 2
    assert doc["assignment"]["choices"]
    assert len(doc["messages"]) == 2
    up = next(m for m in trace.messages if m.direction == "up")
    assert len(up.witnesses) == len(up.table)
    assert all(up.witnesses)  # every entry names the eliminated choices


def test_solve_multi_source_vee_matches_brute_force():
    graph = make_graph(
        [Agent("i"), Agent("j"), Agent("k")], [("i", "j"), ("k", "j")], root="i"
    )
    rng = random.Random(23)
    for _ in range(10):
        nodes, edges = random_tables(graph, 3, rng)
        trace = SolveTrace()
        fast = solve(graph, nodes, edges, trace=trace)
        slow = brute_force_map(graph, nodes, edges)
        assert trace.mode == "junction_tree"
        assert fast.score.value == pytest.approx(slow.score.value, rel=1e-9)
        assert fast.choices == slow.choices


# -- the optimal-subtree property ------------------------------------------------------


def subtree_nodes(graph, root_of_subtree):
    stack, seen = [root_of_subtree], set()
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        stack.extend(graph.children(v))
    return seen


def conditional_subtree_max(graph, nodes, edges, child, parent, parent_choice, k):
    """Brute-force max over the subtree at ``child`` given the parent's choice."""
    members = sorted(subtree_nodes(graph, child))
    best = -math.inf
    for combo in itertools.product(*(range(1, k + 1) for _ in members)):
        choice = dict(zip(members, combo))
        total = edges.log((parent, child), parent_choice, choice[child])
        total += sum(nodes.log(v, choice[v]) for v in members)
        total += sum(
            edges.log((i, j), choice[i], choice[j])
            for i, j in graph.edges
            if i in choice and j in choice
        )
        best = max(best, total)
    return best


def test_optimal_subtree_property_random_trees():
    rng = random.Random(20)
    checked = 0
    for _ in range(25):
        graph = random_arborescence(rng, max_n=5)
        if not graph.edges:
            continue
        k = rng.randint(1, 3)
        nodes, edges = random_tables(graph, k, rng)
        trace = SolveTrace()
        solve_tree(graph, nodes, edges, trace=trace)
        for msg in trace.messages:
            if msg.direction != "up":
                continue
            child, parent = msg.sender, msg.receiver
            for idx, normalized in enumerate(msg.table):
                value = normalized + msg.offset
                expected = conditional_subtree_max(
                    graph, nodes, edges, child, parent, idx + 1, k
                )
                assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)
                checked += 1
    assert checked > 50


# -- oracle equivalence over random DAGs -----------------------------------------------


def test_solver_matches_oracle_on_random_instances():
    rng = random.Random(21)
    for _ in range(40):
        graph = random_dag(rng)
        k = rng.randint(1, 4)
        nodes, edges = random_tables(graph, k, rng)
        fast = solve(graph, nodes, edges)
        slow = brute_force_map(graph, nodes, edges)
        assert fast.score.value == pytest.approx(slow.score.value, rel=1e-9)


def test_solver_matches_oracle_beyond_small_instances():
    """Larger graphs than the acceptance envelope: N in 7..9, K=3."""
    rng = random.Random(99)
    for _ in range(20):
        n = rng.randint(7, 9)
        names = [chr(ord("a") + i) for i in range(n)]
        order = names[:]
        rng.shuffle(order)
        edge_list = []
        for pos in range(1, n):
            parents = rng.sample(order[:pos], rng.randint(1, min(3, pos)))
            edge_list += [(p, order[pos]) for p in parents]
        graph = make_graph([Agent(x) for x in names], edge_list, root=order[0])
        nodes, edges = random_tables(graph, 3, rng)
        fast = solve(graph, nodes, edges)
        slow = brute_force_map(graph, nodes, edges)
        assert fast.score.value == pytest.approx(slow.score.value, rel=1e-9)


def test_deep_chain_stays_stable():
    """A 20-agent chain with K=8 must not underflow or blow up."""
    agents = [Agent(f"n{i:02d}") for i in range(20)]
    edge_list = [(f"n{i:02d}", f"n{i + 1:02d}") for i in range(19)]
    graph = make_graph(agents, edge_list)
    nodes, edges = random_tables(graph, 8, random.Random(100))
    trace = SolveTrace()
    tree_result = solve(graph, nodes, edges, trace=trace)
    assert trace.mode == "tree" and trace.message_count() == 2 * 19
    assert tree_result.score.value > 0.0
    junction_result = solve_junction_tree(graph, nodes, edges)
    assert junction_result.choices == tree_result.choices


def test_junction_message_count_is_two_per_separator():
    rng = random.Random(22)
    seen_junction = 0
    for _ in range(30):
        graph = random_dag(rng)
        nodes, edges = random_tables(graph, 2, rng)
        trace = SolveTrace()
        solve(graph, nodes, edges, trace=trace)
        if trace.mode != "junction_tree":
            continue
        seen_junction += 1
        jt = build_junction_tree(graph, nodes, edges)
        assert message_count(trace) == 2 * (len(jt.cliques) - 1)
    assert seen_junction >= 5
