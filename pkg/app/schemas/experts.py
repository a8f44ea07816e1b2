from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.corpus import TimeWindow


class CpeRelation(str, Enum):
    SUBSET = "subset"
    SUPERSET = "superset"
    EQUAL = "equal"
    NONE = "none"


class CpeGroupRanking(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: Optional[TimeWindow] = None
    ranked_groups: List[Tuple[str, int]] = Field(default_factory=list)
    top_k: int = Field(5, ge=1)

    @property
    def top_set(self) -> FrozenSet[str]:
        return frozenset(group for group, _ in self.ranked_groups[: self.top_k])


class ExpertProvenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    user_id: str
    cve_mentions: int
    mapped_cves: List[str]
    theta: List[str] = Field(..., description="CPE groups of the user's mentioned CVEs")
    cpe_relation: CpeRelation
    in_degree: int


class ExpertSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: TimeWindow
    forum_id: str
    members: FrozenSet[str] = frozenset()
    indeg_threshold: int = 10
    provenance: Dict[str, ExpertProvenance] = Field(default_factory=dict)
    alternates: FrozenSet[str] = Field(
        frozenset(), description="Users with a CVE mention failing the CPE or in-degree constraint"
    )

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.members

    def __len__(self) -> int:
        return len(self.members)


class TTestResult(BaseModel):
    t_statistic: float
    p_value: float
    alpha: float
    reject: bool
    n_experts: int
    n_alternates: int
