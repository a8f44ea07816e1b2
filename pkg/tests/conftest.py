from datetime import date, datetime, timedelta, timezone
from typing import Iterable, List, Optional, Tuple

import pytest

from app.schemas.corpus import CpeMapping, CpeTable, Post, SyntheticScenario
from app.schemas.graph import ConstructionParams, ReplyGraph

EPOCH = datetime(2016, 3, 1, 12, 0, tzinfo=timezone.utc)


def make_post(user: str, minute: float, post_id: int = 1, thread: str = "t1", forum: str = "f1",
              cves: Iterable[str] = (), base: datetime = EPOCH) -> Post:
    return Post(
        forum_id=forum,
        thread_id=thread,
        post_id=post_id,
        user_id=user,
        timestamp=base + timedelta(minutes=minute),
        cve_mentions=frozenset(cves),
    )


def make_thread(timeline: List[Tuple[str, float]], thread: str = "t1", forum: str = "f1",
                base: datetime = EPOCH) -> List[Post]:
    """[(user, minute), ...] in post order."""
    return [make_post(user, minute, post_id=i, thread=thread, forum=forum, base=base)
            for i, (user, minute) in enumerate(timeline, start=1)]


def make_graph(edges: Iterable[Tuple[str, str]], vertices: Iterable[str] = (),
               forum_id: Optional[str] = "f1") -> ReplyGraph:
    return ReplyGraph(vertices=vertices, edges={pair: EPOCH for pair in edges}, forum_id=forum_id)


def make_cpe_table(groups: dict) -> CpeTable:
    return CpeTable(entries={cve: CpeMapping(cve_id=cve, cpe_groups=frozenset(g)) for cve, g in groups.items()})


@pytest.fixture
def params() -> ConstructionParams:
    return ConstructionParams(thresh_spat=10, thresh_temp_minutes=15)


@pytest.fixture
def small_scenario() -> SyntheticScenario:
    return SyntheticScenario(
        n_forums=3,
        n_users_per_forum=60,
        n_days=200,
        start_date=date(2016, 1, 1),
        planted_attack_days=[90, 120, 150, 180],
        burst_forums=2,
        noise_rate=16,
        experts_per_forum=4,
        n_cves=60,
        n_cpe_groups=10,
        seed=3,
    )


@pytest.fixture
def small_synthetic(small_scenario):
    from app.services.synthetic_service import synthetic_service

    return synthetic_service.synthesize_corpus(small_scenario)


@pytest.fixture
def synthetic_files(tmp_path, small_synthetic):
    from app.services.synthetic_service import synthetic_service

    paths = synthetic_service.write_corpus(small_synthetic, tmp_path / "data")
    return paths
