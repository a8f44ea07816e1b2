from datetime import date
from enum import Enum
from typing import Dict, FrozenSet, List

from pydantic import BaseModel, ConfigDict, Field, model_validator


class FeatureId(str, Enum):
    CONDUCTANCE = "conductance"
    SHORTEST_PATH = "shortest_path"
    EXPERT_REPLIES = "expert_replies"
    COMMON_COMMUNITIES = "common_communities"
    N_THREADS = "n_threads"
    N_USERS = "n_users"
    N_EXPERT_THREADS = "n_expert_threads"
    N_CVE_MENTIONS = "n_cve_mentions"

    @property
    def is_graph_feature(self) -> bool:
        return self in GRAPH_FEATURES


GRAPH_FEATURES = frozenset(
    {FeatureId.CONDUCTANCE, FeatureId.SHORTEST_PATH, FeatureId.EXPERT_REPLIES, FeatureId.COMMON_COMMUNITIES}
)


class Coverage(str, Enum):
    COMPUTED = "computed"
    EMPTY_GRAPH = "empty-graph"
    NO_EXPERTS = "no-experts"
    NO_BOUNDARY = "no-boundary"
    UNREACHABLE = "unreachable"


class StationaryMode(str, Enum):
    UNDIRECTED_DEGREE = "undirected-degree"
    TELEPORT = "teleport-random-walk"


class ConductanceBoundary(str, Enum):
    MERGED = "merged"
    CURRENT = "current"


class ExpertRepliesMode(str, Enum):
    MEAN = "mean"
    TOTAL = "total"


class FeatureValue(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = 0.0
    coverage: Coverage = Coverage.COMPUTED
    detail: str = ""


class FeatureSeries(BaseModel):
    feature_id: FeatureId
    forum_id: str
    days: List[date]
    values: List[float]
    coverage: List[Coverage]

    @model_validator(mode="after")
    def aligned(self) -> "FeatureSeries":
        if not len(self.days) == len(self.values) == len(self.coverage):
            raise ValueError("days, values and coverage must align")
        for value, flag in zip(self.values, self.coverage):
            if flag != Coverage.COMPUTED and value != 0.0:
                raise ValueError("flagged days carry value 0")
        return self


class StationaryDistribution(BaseModel):
    model_config = ConfigDict(frozen=True)

    probabilities: Dict[str, float]
    mode: StationaryMode = StationaryMode.UNDIRECTED_DEGREE

    def __getitem__(self, node: str) -> float:
        return self.probabilities.get(node, 0.0)

    def mass(self, nodes) -> float:
        return float(sum(self.probabilities.get(n, 0.0) for n in nodes))


class CommunityAssignment(BaseModel):
    model_config = ConfigDict(frozen=True)

    communities: Dict[str, int] = Field(default_factory=dict)
    expert_communities: FrozenSet[int] = frozenset()

    def community_of(self, node: str):
        return self.communities.get(node)

    def n_communities(self) -> int:
        return len(set(self.communities.values()))
