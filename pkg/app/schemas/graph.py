from datetime import datetime
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Set, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field

from app.schemas.corpus import TimeWindow


class CreateMode(str, Enum):
    VERBATIM = "verbatim"
    MONOTONE = "monotone"


class ReplyEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    replier: str
    replied_to: str
    reply_time: datetime


class ConstructionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    thresh_spat: int = Field(10, ge=1, description="Prior posts reachable by a reply")
    thresh_temp_minutes: float = Field(15.0, gt=0)
    mode: CreateMode = CreateMode.VERBATIM
    allow_self_replies: bool = False

    @property
    def thresh_temp_seconds(self) -> float:
        return self.thresh_temp_minutes * 60.0


class WindowPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: TimeWindow
    history: TimeWindow


class WindowSchedule(BaseModel):
    subsequences: List[WindowPair]
    tau_months: int = 1
    history_months: int = 3

    def pair_for(self, day) -> Optional[WindowPair]:
        for pair in self.subsequences:
            if pair.tau.contains(day):
                return pair
        return None

    @property
    def start(self):
        return self.subsequences[0].tau.start

    @property
    def end(self):
        return self.subsequences[-1].tau.end


class ReplyGraph:
    """Directed, unweighted reply network on top of an nx.DiGraph.

    Edges are keyed by (replier, replied_to); the reply_time attribute holds
    the earliest reply seen for that pair. Treated as immutable once built.
    """

    def __init__(
        self,
        vertices: Iterable[str] = (),
        edges: Optional[Mapping[Tuple[str, str], datetime]] = None,
        span: Optional[TimeWindow] = None,
        forum_id: Optional[str] = None,
    ) -> None:
        edge_map = dict(edges or {})
        nodes = set(vertices)
        for u, v in edge_map:
            nodes.update((u, v))
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(sorted(nodes))
        self.graph.add_edges_from((u, v, {"reply_time": rt}) for (u, v), rt in sorted(edge_map.items()))
        self.span = span
        self.forum_id = forum_id

    @classmethod
    def from_edges(cls, edges: Iterable[ReplyEdge], vertices: Iterable[str] = (), **kwargs) -> "ReplyGraph":
        edge_map: Dict[Tuple[str, str], datetime] = {}
        for edge in edges:
            key = (edge.replier, edge.replied_to)
            current = edge_map.get(key)
            if current is None or edge.reply_time < current:
                edge_map[key] = edge.reply_time
        return cls(vertices=vertices, edges=edge_map, **kwargs)

    @classmethod
    def from_digraph(cls, graph: nx.DiGraph, **kwargs) -> "ReplyGraph":
        """Wrap a DiGraph whose edges carry reply_time. The graph is not copied."""
        reply_graph = cls(**kwargs)
        reply_graph.graph = graph
        return reply_graph

    def __len__(self) -> int:
        return self.graph.number_of_edges()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReplyGraph):
            return NotImplemented
        return self.vertices == other.vertices and self.edge_map == other.edge_map

    def __repr__(self) -> str:
        return f"<ReplyGraph(forum='{self.forum_id}', |V|={len(self.vertices)}, |E|={len(self)})>"

    @cached_property
    def vertices(self) -> FrozenSet[str]:
        return frozenset(self.graph.nodes)

    @cached_property
    def edge_map(self) -> Mapping[Tuple[str, str], datetime]:
        return {(u, v): rt for u, v, rt in self.graph.edges(data="reply_time")}

    @cached_property
    def undirected(self) -> nx.Graph:
        """Undirected unweighted projection; u->v and v->u collapse to one edge."""
        graph = nx.Graph()
        graph.add_nodes_from(sorted(self.graph.nodes))
        graph.add_edges_from(sorted(self.graph.edges))
        return graph

    def edges(self) -> Iterator[ReplyEdge]:
        for (u, v), rt in sorted(self.edge_map.items()):
            yield ReplyEdge(replier=u, replied_to=v, reply_time=rt)

    def edge_pairs(self) -> FrozenSet[Tuple[str, str]]:
        return frozenset(self.graph.edges)

    def has_edge(self, replier: str, replied_to: str) -> bool:
        return self.graph.has_edge(replier, replied_to)

    def in_degree(self, user: str) -> int:
        return self.graph.in_degree(user) if user in self.graph else 0

    def out_degree(self, user: str) -> int:
        return self.graph.out_degree(user) if user in self.graph else 0

    def out_neighbors(self, user: str) -> Set[str]:
        return set(self.graph.successors(user)) if user in self.graph else set()

    def in_neighbors(self, user: str) -> Set[str]:
        return set(self.graph.predecessors(user)) if user in self.graph else set()

    def undirected_neighbors(self, user: str) -> Set[str]:
        return set(self.undirected.neighbors(user)) if user in self.undirected else set()

    def in_degree_sequence(self) -> List[int]:
        return [self.graph.in_degree(v) for v in sorted(self.graph.nodes)]
