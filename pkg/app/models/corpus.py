from sqlalchemy import Column, Date, DateTime, Integer, String, UniqueConstraint

from app.core.database import Base


class PostRow(Base):
    __tablename__ = "posts"
    __table_args__ = (UniqueConstraint("forum_id", "thread_id", "post_id", name="uq_post_in_thread"),)

    id = Column(Integer, primary_key=True, autoincrement=True)
    forum_id = Column(String(255), index=True, nullable=False)
    thread_id = Column(String(255), nullable=False)
    post_id = Column(Integer, nullable=False)
    user_id = Column(String(255), nullable=False)
    timestamp = Column(DateTime(timezone=True), nullable=False)
    # comma-separated, sorted
    cve_mentions = Column(String, nullable=False, default="")

    def __repr__(self):
        return f"<PostRow(forum='{self.forum_id}', thread='{self.thread_id}', post={self.post_id})>"


class AttackIncidentRow(Base):
    __tablename__ = "attack_incidents"

    id = Column(Integer, primary_key=True, autoincrement=True)
    event_type = Column(String(50), index=True, nullable=False)
    occurred_date = Column(Date, nullable=False)


class CpeEntryRow(Base):
    __tablename__ = "cpe_entries"

    cve_id = Column(String(50), primary_key=True)
    # semicolon-separated, sorted
    cpe_groups = Column(String, nullable=False)
