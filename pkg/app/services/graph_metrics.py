import logging
from typing import Dict, Iterable, Optional

import networkx as nx
import numpy as np

from app.core.errors import DegenerateError
from app.schemas.features import (
    CommunityAssignment,
    ConductanceBoundary,
    Coverage,
    ExpertRepliesMode,
    FeatureValue,
    StationaryDistribution,
    StationaryMode,
)
from app.schemas.graph import ReplyGraph

logger = logging.getLogger(__name__)

TELEPORT = 0.15
PAGERANK_TOLERANCE = 1e-12
CONDUCTANCE_SLACK = 1e-9


def stationary_distribution(graph: ReplyGraph,
                            mode: StationaryMode = StationaryMode.UNDIRECTED_DEGREE) -> StationaryDistribution:
    if len(graph) == 0:
        raise DegenerateError(detail="degenerate graph: no edges")

    if mode == StationaryMode.UNDIRECTED_DEGREE:
        degrees = dict(graph.undirected.degree())
        total = float(sum(degrees.values()))
        probabilities = {v: degrees[v] / total for v in sorted(graph.vertices)}
    else:
        n = len(graph.vertices)
        # networkx stops when the L1 change drops below n * tol
        probabilities = nx.pagerank(
            graph.graph, alpha=1.0 - TELEPORT, tol=PAGERANK_TOLERANCE / n, max_iter=100000
        )
    return StationaryDistribution(probabilities=dict(probabilities), mode=mode)


def transition_row(graph: ReplyGraph, node: str, mode: StationaryMode) -> Dict[str, float]:
    """Single-step random-walk probabilities out of node, keyed by target."""
    if mode == StationaryMode.UNDIRECTED_DEGREE:
        neighbors = graph.undirected_neighbors(node)
        if not neighbors:
            return {}
        # a self-loop adds 2 to the degree
        degree = graph.undirected.degree(node)
        return {y: (2.0 if y == node else 1.0) / degree for y in neighbors}

    n = len(graph.vertices)
    out = graph.out_neighbors(node)
    if not out:
        return {y: 1.0 / n for y in graph.vertices}
    row = {y: TELEPORT / n for y in graph.vertices}
    for y in out:
        row[y] += (1.0 - TELEPORT) / len(out)
    return row


def graph_conductance(
    graph: ReplyGraph,
    experts: Iterable[str],
    mode: StationaryMode = StationaryMode.UNDIRECTED_DEGREE,
    boundary: ConductanceBoundary = ConductanceBoundary.MERGED,
    current_vertices: Optional[Iterable[str]] = None,
) -> FeatureValue:
    """
    Probability mass leaving the expert set in one random-walk step,
    normalised by the stationary mass on the experts.
    """
    exp = set(experts) & graph.vertices
    if not exp:
        return FeatureValue(coverage=Coverage.NO_EXPERTS)
    if len(graph) == 0:
        return FeatureValue(coverage=Coverage.EMPTY_GRAPH)

    if boundary == ConductanceBoundary.CURRENT:
        outside = set(current_vertices or ()) - exp
    else:
        outside = graph.vertices - exp
    if not outside:
        return FeatureValue(coverage=Coverage.NO_BOUNDARY, detail="every node is an expert")

    pi = stationary_distribution(graph, mode)
    pi_exp = pi.mass(exp)
    if pi_exp <= 0:
        return FeatureValue(coverage=Coverage.NO_BOUNDARY, detail="experts carry no stationary mass")

    flow = 0.0
    for x in sorted(exp):
        row = transition_row(graph, x, mode)
        flow += pi[x] * sum(p for y, p in row.items() if y in outside)
    phi = flow / pi_exp
    if phi > 1.0 + CONDUCTANCE_SLACK:
        raise DegenerateError(detail=f"conductance {phi} exceeds 1")
    return FeatureValue(value=float(min(max(phi, 0.0), 1.0)))


def avg_shortest_path(graph: ReplyGraph, experts: Iterable[str], current_vertices: Iterable[str]) -> FeatureValue:
    """Mean over experts of the directed hop count to the nearest current non-expert."""
    exp = set(experts)
    if not exp:
        return FeatureValue(coverage=Coverage.NO_EXPERTS)
    targets = set(current_vertices) - exp
    if not targets:
        return FeatureValue(coverage=Coverage.NO_BOUNDARY)

    # hop counts to the nearest target, read off the reversed graph
    sources = sorted(targets & graph.vertices)
    reach = nx.multi_source_dijkstra_path_length(graph.graph.reverse(copy=False), sources) if sources else {}
    lengths = []
    unreachable = 0
    for expert in sorted(exp):
        distance = reach.get(expert)
        if distance is None:
            unreachable += 1
        else:
            lengths.append(distance)
    if not lengths:
        return FeatureValue(coverage=Coverage.UNREACHABLE, detail=f"{unreachable} experts reach no current user")
    detail = f"{unreachable} unreachable" if unreachable else ""
    return FeatureValue(value=float(np.mean(lengths)), detail=detail)


def expert_replies(graph: ReplyGraph, experts: Iterable[str],
                   mode: ExpertRepliesMode = ExpertRepliesMode.MEAN) -> FeatureValue:
    exp = sorted(set(experts))
    if not exp:
        return FeatureValue(coverage=Coverage.NO_EXPERTS)
    out_degrees = [graph.out_degree(e) for e in exp]
    if mode == ExpertRepliesMode.TOTAL:
        return FeatureValue(value=float(sum(out_degrees)))
    return FeatureValue(value=float(np.mean(out_degrees)))


def louvain_communities(graph: ReplyGraph, seed: int = 0, experts: Iterable[str] = ()) -> CommunityAssignment:
    """Louvain partition of the undirected projection; communities numbered by their smallest member."""
    projection = graph.undirected
    if projection.number_of_nodes() == 0:
        return CommunityAssignment()
    partition = nx.community.louvain_communities(projection, seed=seed)
    ordered = sorted(partition, key=min)
    communities = {node: index for index, members in enumerate(ordered) for node in members}
    expert_communities = frozenset(communities[e] for e in experts if e in communities)
    return CommunityAssignment(communities=communities, expert_communities=expert_communities)


def common_communities(
    experts: Iterable[str],
    assignment: CommunityAssignment,
    history: ReplyGraph,
    merged: ReplyGraph,
    current_vertices: Iterable[str],
) -> FeatureValue:
    """
    Count current non-experts sharing a community with the experts.

    Historical users are read off the Louvain assignment. Anyone else counts
    when an expert replied to them or when one of their in-neighbours sits in
    an expert community. Each user counts at most once.
    """
    exp = set(experts)
    if not exp:
        return FeatureValue(coverage=Coverage.NO_EXPERTS)
    expert_communities = assignment.expert_communities

    count = 0
    for u in sorted(set(current_vertices) - exp):
        if u in history.vertices and assignment.community_of(u) in expert_communities:
            count += 1
            continue
        # Condition 1
        if any(merged.has_edge(v, u) for v in exp):
            count += 1
            continue
        # Condition 2
        if any(assignment.community_of(n) in expert_communities for n in merged.in_neighbors(u)):
            count += 1
    return FeatureValue(value=float(count))
