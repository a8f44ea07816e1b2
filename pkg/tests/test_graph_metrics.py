from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from app.core.errors import DegenerateError
from app.schemas.features import (
    ConductanceBoundary,
    Coverage,
    ExpertRepliesMode,
    StationaryMode,
)
from app.services import graph_metrics
from app.services.reply_graph_service import reply_graph_service
from tests.conftest import make_graph

CLIQUE_A = ["a1", "a2", "a3", "e"]
CLIQUE_B = ["b1", "b2", "b3", "b4"]


def atlas_graphs(max_nodes=6):
    for graph in nx.graph_atlas_g():
        if 2 <= graph.number_of_nodes() <= max_nodes and nx.is_connected(graph):
            yield nx.relabel_nodes(graph, {n: f"n{n}" for n in graph.nodes})


def reply_graph_from(graph: nx.Graph):
    return make_graph([(u, v) for u, v in graph.edges], vertices=graph.nodes)


def google_stationary(graph, teleport=0.15):
    nodes = sorted(graph.vertices)
    index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    matrix = np.zeros((n, n))
    for v in nodes:
        for y, p in graph_metrics.transition_row(graph, v, StationaryMode.TELEPORT).items():
            matrix[index[v], index[y]] = p
    system = np.vstack([matrix.T - np.eye(n), np.ones(n)])
    rhs = np.concatenate([np.zeros(n), [1.0]])
    pi = np.linalg.lstsq(system, rhs, rcond=None)[0]
    return nodes, matrix, pi


def two_cliques():
    edges = [pair for members in (CLIQUE_A, CLIQUE_B) for pair in combinations(members, 2)]
    edges.append(("a3", "b1"))
    return make_graph(edges)


def test_stationary_distribution_hand_cases():
    pi = graph_metrics.stationary_distribution(make_graph([("A", "B")]))
    assert pi["A"] == pi["B"] == 0.5

    star = graph_metrics.stationary_distribution(make_graph([("c", "l1"), ("l2", "c"), ("c", "l3")]))
    assert star["c"] == pytest.approx(0.5)
    assert star["l1"] == pytest.approx(1 / 6)

    cycle = graph_metrics.stationary_distribution(make_graph([("A", "B"), ("B", "A")]), StationaryMode.TELEPORT)
    assert cycle["A"] == pytest.approx(0.5, abs=1e-12)


def test_stationary_distribution_rejects_edgeless_graph():
    with pytest.raises(DegenerateError):
        graph_metrics.stationary_distribution(make_graph([], vertices=["A", "B"]))


def test_conductance_matches_cut_over_volume_on_all_small_graphs():
    checked = 0
    for graph in atlas_graphs():
        reply = reply_graph_from(graph)
        nodes = sorted(graph.nodes)
        for size in range(1, len(nodes)):
            for subset in combinations(nodes, size):
                expected = nx.cut_size(graph, subset) / nx.volume(graph, subset)
                value = graph_metrics.graph_conductance(reply, subset)
                assert value.coverage == Coverage.COMPUTED
                assert value.value == pytest.approx(expected, rel=1e-12, abs=1e-12)
                checked += 1
    assert checked > 5000


@pytest.mark.parametrize("seed", range(10))
def test_teleport_conductance_matches_dense_random_walk(seed):
    digraph = nx.gnp_random_graph(6, 0.4, seed=seed, directed=True)
    if digraph.number_of_edges() == 0:
        pytest.skip("edgeless draw")
    graph = make_graph([(f"n{u}", f"n{v}") for u, v in digraph.edges], vertices=[f"n{v}" for v in digraph.nodes])
    nodes, matrix, pi = google_stationary(graph)

    stationary = graph_metrics.stationary_distribution(graph, StationaryMode.TELEPORT)
    assert sum(stationary.probabilities.values()) == pytest.approx(1.0, abs=1e-10)
    for i, v in enumerate(nodes):
        assert stationary[v] == pytest.approx(pi[i], abs=1e-9)

    experts = {"n0", "n1"}
    inside = [i for i, v in enumerate(nodes) if v in experts]
    outside = [i for i, v in enumerate(nodes) if v not in experts]
    expected = sum(pi[x] * matrix[x, y] for x in inside for y in outside) / pi[inside].sum()
    value = graph_metrics.graph_conductance(graph, experts, mode=StationaryMode.TELEPORT)
    assert value.value == pytest.approx(expected, rel=1e-8)


def test_transition_rows_are_distributions():
    graph = make_graph([("A", "B"), ("A", "C"), ("C", "A")], vertices=["D"])
    for mode in StationaryMode:
        for node in ("A", "B", "C"):
            assert sum(graph_metrics.transition_row(graph, node, mode).values()) == pytest.approx(1.0)
    assert graph_metrics.transition_row(graph, "D", StationaryMode.UNDIRECTED_DEGREE) == {}
    dangling = graph_metrics.transition_row(graph, "B", StationaryMode.TELEPORT)
    assert set(dangling.values()) == {0.25}


def test_conductance_current_boundary_counts_only_current_users():
    graph = make_graph([("e", "x"), ("e", "y")])
    merged = graph_metrics.graph_conductance(graph, {"e"})
    current = graph_metrics.graph_conductance(graph, {"e"}, boundary=ConductanceBoundary.CURRENT,
                                              current_vertices={"e", "x"})
    assert merged.value == 1.0
    assert current.value == pytest.approx(0.5)


def test_conductance_coverage_flags():
    graph = make_graph([("A", "B")], vertices=["lonely"])
    assert graph_metrics.graph_conductance(graph, {"nobody"}).coverage == Coverage.NO_EXPERTS
    assert graph_metrics.graph_conductance(graph, {"A", "B", "lonely"}).coverage == Coverage.NO_BOUNDARY
    assert graph_metrics.graph_conductance(graph, {"lonely"}).coverage == Coverage.NO_BOUNDARY
    edgeless = make_graph([], vertices=["A", "B"])
    empty = graph_metrics.graph_conductance(edgeless, {"A"})
    assert empty.coverage == Coverage.EMPTY_GRAPH
    assert empty.value == 0.0


def test_avg_shortest_path_to_nearest_current_user():
    graph = make_graph([("e1", "a"), ("a", "b"), ("e2", "b"), ("e2", "e1")], vertices=["e3"])
    value = graph_metrics.avg_shortest_path(graph, {"e1", "e2", "e3"}, current_vertices={"b", "e1"})
    assert value.value == pytest.approx(1.5)
    assert value.detail == "1 unreachable"


def test_avg_shortest_path_flags():
    graph = make_graph([("b", "e1")])
    assert graph_metrics.avg_shortest_path(graph, {"e1"}, {"b"}).coverage == Coverage.UNREACHABLE
    assert graph_metrics.avg_shortest_path(graph, set(), {"b"}).coverage == Coverage.NO_EXPERTS
    assert graph_metrics.avg_shortest_path(graph, {"e1"}, {"e1"}).coverage == Coverage.NO_BOUNDARY


def test_expert_replies_counts_distinct_targets():
    graph = make_graph([("e1", "a"), ("e1", "b"), ("e2", "a"), ("a", "e1")])
    assert graph_metrics.expert_replies(graph, {"e1", "e2"}).value == 1.5
    assert graph_metrics.expert_replies(graph, {"e1", "e2"}, ExpertRepliesMode.TOTAL).value == 3.0
    assert graph_metrics.expert_replies(graph, {"e1", "e2", "absent"}).value == 1.0
    assert graph_metrics.expert_replies(graph, set()).coverage == Coverage.NO_EXPERTS


def test_louvain_splits_bridged_cliques():
    assignment = graph_metrics.louvain_communities(two_cliques(), seed=0, experts={"e"})
    assert assignment.n_communities() == 2
    assert {assignment.community_of(v) for v in CLIQUE_A} == {0}
    assert {assignment.community_of(v) for v in CLIQUE_B} == {1}
    assert assignment.expert_communities == frozenset({0})


def test_louvain_is_deterministic_for_a_seed(small_synthetic, params):
    posts = small_synthetic.corpus.forum_posts("forum00")
    graph = reply_graph_service.create_graph(posts, params, forum_id="forum00")
    first = graph_metrics.louvain_communities(graph, seed=11)
    second = graph_metrics.louvain_communities(graph, seed=11)
    assert first == second
    assert set(first.communities) == graph.vertices


def test_louvain_on_edgeless_and_empty_graphs():
    singletons = graph_metrics.louvain_communities(make_graph([], vertices=["A", "B", "C"]))
    assert singletons.n_communities() == 3
    assert graph_metrics.louvain_communities(make_graph([])).communities == {}


@pytest.mark.parametrize(
    "current_edges, expected",
    [
        ([("e", "n1")], 1),
        ([("a1", "n2")], 2),
        # b1 sits outside the expert community but a3 replies to it across the bridge
        ([("b1", "n3")], 1),
        ([("b2", "b3")], 0),
        ([("n4", "n5")], 0),
        ([("n6", "e"), ("e", "n6")], 1),
        ([("e", "b4")], 1),
        ([("a2", "a3"), ("a3", "n7"), ("n7", "n8")], 3),
        ([("n9", "a1")], 1),
        ([("b4", "n10"), ("a1", "n10")], 2),
    ],
)
def test_common_communities_traces(current_edges, expected):
    history = two_cliques()
    assignment = graph_metrics.louvain_communities(history, seed=0, experts={"e"})
    current = make_graph(current_edges)
    merged = reply_graph_service.merge(history, current)
    value = graph_metrics.common_communities({"e"}, assignment, history, merged, current.vertices)
    assert value.value == expected


def test_common_communities_without_experts():
    history = two_cliques()
    assignment = graph_metrics.louvain_communities(history)
    value = graph_metrics.common_communities(set(), assignment, history, history, {"a1"})
    assert value.coverage == Coverage.NO_EXPERTS


@pytest.mark.parametrize("seed", range(10))
def test_avg_shortest_path_matches_single_source_lengths(seed):
    random_graph = nx.gnp_random_graph(9, 0.25, seed=seed, directed=True)
    graph = make_graph([(str(u), str(v)) for u, v in random_graph.edges],
                       vertices=[str(n) for n in random_graph.nodes])
    experts, current = {"0", "1", "2"}, {"1", "3", "4", "5"}
    nearest = []
    for expert in sorted(experts):
        lengths = nx.single_source_shortest_path_length(random_graph, int(expert))
        reach = [lengths[int(t)] for t in current - experts if int(t) in lengths]
        if reach:
            nearest.append(min(reach))
    value = graph_metrics.avg_shortest_path(graph, experts, current)
    if nearest:
        assert value.value == pytest.approx(np.mean(nearest))
    else:
        assert value.coverage == Coverage.UNREACHABLE


def test_undirected_walk_with_a_self_reply_keeps_its_stationary_distribution():
    graph = make_graph([("A", "A"), ("A", "B"), ("B", "C"), ("C", "A")])
    pi = graph_metrics.stationary_distribution(graph)
    assert pi["A"] == pytest.approx(0.5)
    rows = {x: graph_metrics.transition_row(graph, x, StationaryMode.UNDIRECTED_DEGREE) for x in "ABC"}
    for y in "ABC":
        assert sum(pi[x] * rows[x].get(y, 0.0) for x in "ABC") == pytest.approx(pi[y])
