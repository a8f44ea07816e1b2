from datetime import date, datetime, timedelta
from enum import Enum
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class EventType(str, Enum):
    MALICIOUS_EMAIL = "malicious-email"
    ENDPOINT_MALWARE = "endpoint-malware"
    MALICIOUS_DESTINATION = "malicious-destination"


class WindowKind(str, Enum):
    SUBSEQUENCE = "subsequence"
    HISTORY = "history"
    LAG = "lag"


class Post(BaseModel):
    model_config = ConfigDict(frozen=True)

    forum_id: str = Field(..., min_length=1)
    thread_id: str = Field(..., min_length=1)
    post_id: int
    user_id: str = Field(..., min_length=1, description="Scoped to one forum")
    timestamp: datetime = Field(..., description="UTC, second resolution")
    cve_mentions: FrozenSet[str] = frozenset()

    @property
    def day(self) -> date:
        return self.timestamp.date()

    def sort_key(self) -> Tuple[datetime, int]:
        return (self.timestamp, self.post_id)


class Diagnostic(BaseModel):
    path: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.message}"


class Corpus(BaseModel):
    """Posts grouped forum -> thread, each thread in (timestamp, post_id) order."""

    model_config = ConfigDict(frozen=True)

    forums: Dict[str, Dict[str, Tuple[Post, ...]]] = Field(default_factory=dict)

    def forum_ids(self) -> List[str]:
        return sorted(self.forums)

    def threads(self, forum_id: str) -> Dict[str, Tuple[Post, ...]]:
        return self.forums.get(forum_id, {})

    def forum_posts(self, forum_id: str) -> List[Post]:
        return [post for thread in self.threads(forum_id).values() for post in thread]

    def iter_posts(self) -> Iterator[Post]:
        for forum_id in self.forum_ids():
            yield from self.forum_posts(forum_id)

    def post_count(self, forum_id: Optional[str] = None) -> int:
        if forum_id is not None:
            return sum(len(thread) for thread in self.threads(forum_id).values())
        return sum(self.post_count(f) for f in self.forums)

    def span(self) -> Optional[Tuple[date, date]]:
        days = [post.day for post in self.iter_posts()]
        if not days:
            return None
        return min(days), max(days)

    def restrict(self, start: Optional[date] = None, end: Optional[date] = None,
                 forum_ids: Optional[List[str]] = None) -> "Corpus":
        keep = set(forum_ids) if forum_ids is not None else set(self.forums)
        forums: Dict[str, Dict[str, Tuple[Post, ...]]] = {}
        for forum_id, threads in self.forums.items():
            if forum_id not in keep:
                continue
            kept_threads = {}
            for thread_id, posts in threads.items():
                selected = tuple(
                    p for p in posts
                    if (start is None or p.day >= start) and (end is None or p.day <= end)
                )
                if selected:
                    kept_threads[thread_id] = selected
            if kept_threads:
                forums[forum_id] = kept_threads
        return Corpus(forums=forums)


class PostLoadResult(BaseModel):
    corpus: Corpus
    diagnostics: List[Diagnostic] = Field(default_factory=list)


class CpeMapping(BaseModel):
    model_config = ConfigDict(frozen=True)

    cve_id: str
    cpe_groups: FrozenSet[str]

    @field_validator("cpe_groups")
    @classmethod
    def non_empty(cls, value: FrozenSet[str]) -> FrozenSet[str]:
        if not value:
            raise ValueError("a mapped CVE needs at least one CPE group")
        return value


class CpeTable(BaseModel):
    """CVE -> CPE groups. Unlisted CVEs answer None (unmapped)."""

    model_config = ConfigDict(frozen=True)

    entries: Dict[str, CpeMapping] = Field(default_factory=dict)
    diagnostics: List[Diagnostic] = Field(default_factory=list)

    def lookup(self, cve_id: str) -> Optional[FrozenSet[str]]:
        mapping = self.entries.get(cve_id)
        return mapping.cpe_groups if mapping else None

    def is_mapped(self, cve_id: str) -> bool:
        return cve_id in self.entries

    def unmapped(self, cve_ids) -> List[str]:
        return sorted(c for c in set(cve_ids) if c not in self.entries)


class AttackRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    event_type: EventType
    occurred_date: date


class AttackLabels(BaseModel):
    """Per event type: day-indexed 0/1 labels and raw incident counts over [start, end]."""

    start: date
    end: date
    counts: Dict[EventType, List[int]] = Field(default_factory=dict)
    diagnostics: List[Diagnostic] = Field(default_factory=list)

    @model_validator(mode="after")
    def lengths_match_span(self) -> "AttackLabels":
        if self.start > self.end:
            raise ValueError("label span start after end")
        for event_type, series in self.counts.items():
            if len(series) != self.n_days:
                raise ValueError(f"{event_type.value}: {len(series)} counts for a {self.n_days}-day span")
        return self

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    def days(self) -> List[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def label_series(self, event_type: EventType) -> pd.Series:
        counts = self.count_series(event_type)
        return (counts >= 1).astype(int)

    def count_series(self, event_type: EventType) -> pd.Series:
        values = self.counts.get(event_type, [0] * self.n_days)
        return pd.Series(values, index=pd.Index(self.days(), name="day"), dtype=int)

    def totals(self) -> Dict[EventType, int]:
        return {event_type: int(sum(values)) for event_type, values in self.counts.items()}


class TimeWindow(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: date
    end: date
    kind: WindowKind = WindowKind.SUBSEQUENCE

    @model_validator(mode="after")
    def ordered(self) -> "TimeWindow":
        if self.start > self.end:
            raise ValueError(f"window start {self.start} after end {self.end}")
        return self

    def contains(self, day: date) -> bool:
        return self.start <= day <= self.end

    def days(self) -> List[date]:
        return [self.start + timedelta(days=i) for i in range((self.end - self.start).days + 1)]

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


class SyntheticScenario(BaseModel):
    n_forums: int = Field(10, ge=1)
    n_users_per_forum: int = Field(300, ge=20)
    n_days: int = Field(540, ge=1)
    start_date: date = date(2016, 1, 1)
    planted_attack_days: List[int] = Field(default_factory=list, description="Day offsets from start_date")
    n_planted_attacks: int = Field(20, ge=0, description="Used when planted_attack_days is empty")
    burst_lead: int = Field(8, description="Days between burst start and attack")
    burst_factor: float = Field(4.0, gt=1.0)
    burst_forums: int = Field(3, ge=1, description="Forums carrying each burst")
    noise_rate: float = Field(30.0, gt=0, description="Mean background posts per forum per day")
    experts_per_forum: int = Field(8, ge=1)
    n_cves: int = Field(400, ge=10)
    n_cpe_groups: int = Field(24, ge=6)
    seed: int = 7

    @field_validator("planted_attack_days", mode="before")
    @classmethod
    def split_days(cls, value):
        if isinstance(value, str):
            return [int(item) for item in value.split(",") if item.strip()]
        return value

    @model_validator(mode="after")
    def consistent(self) -> "SyntheticScenario":
        if self.burst_lead <= 0:
            raise ValueError("burst_lead must be positive")
        if self.burst_forums > self.n_forums:
            raise ValueError("burst_forums exceeds n_forums")
        if self.experts_per_forum * 4 > self.n_users_per_forum:
            raise ValueError("experts_per_forum too large for n_users_per_forum")
        if self.n_planted_attacks > self.n_days - self.burst_lead:
            raise ValueError("n_planted_attacks exceeds the days available after burst_lead")
        for day in self.planted_attack_days:
            if not self.burst_lead <= day < self.n_days:
                raise ValueError(
                    f"planted attack day {day} outside [{self.burst_lead}, {self.n_days})"
                )
        return self

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=self.n_days - 1)


class PlantedBurst(BaseModel):
    attack_day: date
    forums: List[str]
    cohorts: Dict[str, List[str]] = Field(default_factory=dict)
    expert_posts: Dict[str, int] = Field(default_factory=dict, description="Burst expert posts per forum")


class SyntheticPlan(BaseModel):
    """Planted truth of a synthetic corpus."""

    scenario: SyntheticScenario
    attack_days: List[date] = Field(default_factory=list)
    experts: Dict[str, List[str]] = Field(default_factory=dict)
    cve_posters: Dict[str, List[str]] = Field(default_factory=dict)
    hot_cpe_groups: List[str] = Field(default_factory=list)
    background_expert_posts_per_day: float = 0.0
    bursts: List[PlantedBurst] = Field(default_factory=list)


class SyntheticCorpus(BaseModel):
    corpus: Corpus
    labels: AttackLabels
    cpe_table: CpeTable
    plan: SyntheticPlan
