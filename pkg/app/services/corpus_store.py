import logging
from datetime import timezone
from typing import Optional, Tuple

from sqlalchemy import delete

from app.core.database import create_store_engine, get_db, session_factory
from app.core.errors import DataError
from app.models.corpus import AttackIncidentRow, CpeEntryRow, PostRow
from app.schemas.corpus import AttackLabels, Corpus, CpeMapping, CpeTable, EventType, Post
from app.services.corpus_service import corpus_service

logger = logging.getLogger(__name__)


class CorpusStore:
    """Validated corpus persisted through SQLAlchemy; written by ingest, read by later stages."""

    def __init__(self, database_url: str):
        self.database_url = database_url
        self.engine = create_store_engine(database_url)
        self.SessionLocal = session_factory(self.engine)

    def write(self, corpus: Corpus, labels: AttackLabels, cpe_table: CpeTable) -> None:
        with get_db(self.SessionLocal) as db:
            try:
                # a store holds exactly one ingested corpus
                db.execute(delete(PostRow))
                db.execute(delete(AttackIncidentRow))
                db.execute(delete(CpeEntryRow))

                db.add_all(
                    PostRow(
                        forum_id=post.forum_id,
                        thread_id=post.thread_id,
                        post_id=post.post_id,
                        user_id=post.user_id,
                        timestamp=post.timestamp.astimezone(timezone.utc).replace(tzinfo=None),
                        cve_mentions=",".join(sorted(post.cve_mentions)),
                    )
                    for post in corpus.iter_posts()
                )
                for event_type, counts in labels.counts.items():
                    for day, count in zip(labels.days(), counts):
                        db.add_all(
                            AttackIncidentRow(event_type=event_type.value, occurred_date=day) for _ in range(count)
                        )
                db.add_all(
                    CpeEntryRow(cve_id=cve_id, cpe_groups=";".join(sorted(mapping.cpe_groups)))
                    for cve_id, mapping in cpe_table.entries.items()
                )
                db.commit()
            except Exception:
                db.rollback()
                raise
        logger.info(f"Stored {corpus.post_count()} posts, {sum(labels.totals().values())} incidents and "
                    f"{len(cpe_table.entries)} CPE rows in {self.database_url}")

    def read(self) -> Tuple[Corpus, AttackLabels, CpeTable]:
        with get_db(self.SessionLocal) as db:
            post_rows = db.query(PostRow).all()
            if not post_rows:
                raise DataError(detail=f"Corpus store {self.database_url} is empty; run ingest first")
            posts = [
                Post(
                    forum_id=row.forum_id,
                    thread_id=row.thread_id,
                    post_id=row.post_id,
                    user_id=row.user_id,
                    # SQLite drops the offset; stored values are UTC
                    timestamp=row.timestamp.replace(tzinfo=timezone.utc),
                    cve_mentions=frozenset(c for c in row.cve_mentions.split(",") if c),
                )
                for row in post_rows
            ]
            records = [(EventType(row.event_type), row.occurred_date) for row in db.query(AttackIncidentRow).all()]
            entries = {
                row.cve_id: CpeMapping(cve_id=row.cve_id, cpe_groups=frozenset(row.cpe_groups.split(";")))
                for row in db.query(CpeEntryRow).order_by(CpeEntryRow.cve_id).all()
            }

        corpus = corpus_service.group_posts(posts)
        if records:
            labels = corpus_service.labels_from_records(records)
        else:
            start, end = corpus.span()
            labels = AttackLabels(start=start, end=end, counts={e: [0] * ((end - start).days + 1) for e in EventType})
        return corpus, labels, CpeTable(entries=entries)


def open_store(database_url: Optional[str]) -> CorpusStore:
    if not database_url:
        raise DataError(detail="No corpus store configured")
    return CorpusStore(database_url)
