import logging
import re
import statistics
from collections import Counter, defaultdict
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

from app.core.errors import DataError
from app.schemas.corpus import (
    AttackLabels,
    Corpus,
    CpeMapping,
    CpeTable,
    Diagnostic,
    EventType,
    Post,
    PostLoadResult,
)
from app.schemas.pipeline import FilterStage

logger = logging.getLogger(__name__)

CVE_PATTERN = re.compile(r"CVE-\d{4}-\d{4,}")


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 to an aware UTC datetime at second resolution. Naive input is read as UTC."""
    value = text.strip()
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    parsed = datetime.fromisoformat(value)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _read_lines(path: Path) -> List[str]:
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(detail=f"Cannot read {path}: {e}")


class CorpusService:
    def load_posts(self, path, extract_cves: bool = False) -> PostLoadResult:
        """
        Parse a line-delimited posts file.

        Each line: forum_id, thread_id, post_id, user_id, ISO-8601 timestamp and
        a comma-separated CVE list, tab separated. Malformed lines and duplicate
        post ids within a thread are rejected and reported; loading continues.

        Args:
            path: posts file
            extract_cves: read the CVE field as free text and pull identifiers
                matching CVE-YYYY-NNNN from it

        Returns:
            PostLoadResult: thread-grouped corpus plus line diagnostics
        """
        path = Path(path)
        diagnostics: List[Diagnostic] = []
        threads: Dict[Tuple[str, str], Dict[int, Post]] = defaultdict(dict)

        for line_no, raw in enumerate(_read_lines(path), start=1):
            if not raw.strip():
                continue
            fields = raw.split("\t")
            if len(fields) == 5:
                fields.append("")
            if len(fields) != 6:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"expected 6 fields, got {len(fields)}"))
                continue
            forum_id, thread_id, post_id_text, user_id, ts_text, cve_text = (f.strip() for f in fields)
            try:
                post_id = int(post_id_text)
            except ValueError:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"bad post_id '{post_id_text}'"))
                continue
            try:
                timestamp = parse_timestamp(ts_text)
            except ValueError:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"bad timestamp '{ts_text}'"))
                continue
            if not forum_id or not thread_id or not user_id:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message="empty forum, thread or user id"))
                continue
            if extract_cves:
                cves = frozenset(CVE_PATTERN.findall(cve_text))
            else:
                cves = frozenset(c.strip() for c in cve_text.split(",") if c.strip())

            thread = threads[(forum_id, thread_id)]
            if post_id in thread:
                diagnostics.append(
                    Diagnostic(path=str(path), line=line_no, message=f"duplicate post_id {post_id} in thread {forum_id}/{thread_id}")
                )
                continue
            thread[post_id] = Post(
                forum_id=forum_id,
                thread_id=thread_id,
                post_id=post_id,
                user_id=user_id,
                timestamp=timestamp,
                cve_mentions=cves,
            )

        for diagnostic in diagnostics:
            logger.warning(f"Rejected post record: {diagnostic}")

        posts = (p for t in threads.values() for p in t.values())
        return PostLoadResult(corpus=self.group_posts(posts), diagnostics=diagnostics)

    def group_posts(self, posts: Iterable[Post]) -> Corpus:
        grouped: Dict[str, Dict[str, List[Post]]] = defaultdict(lambda: defaultdict(list))
        for post in posts:
            grouped[post.forum_id][post.thread_id].append(post)
        forums = {
            forum_id: {
                thread_id: tuple(sorted(thread, key=Post.sort_key))
                for thread_id, thread in sorted(threads.items())
            }
            for forum_id, threads in sorted(grouped.items())
        }
        return Corpus(forums=forums)

    def load_attacks(self, path, span: Optional[Tuple[date, date]] = None) -> AttackLabels:
        path = Path(path)
        diagnostics: List[Diagnostic] = []
        records: List[Tuple[EventType, date]] = []

        for line_no, raw in enumerate(_read_lines(path), start=1):
            if not raw.strip():
                continue
            fields = [f.strip() for f in raw.split("\t")]
            if len(fields) != 2:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"expected 2 fields, got {len(fields)}"))
                continue
            try:
                event_type = EventType(fields[0])
            except ValueError:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"unknown event_type '{fields[0]}'"))
                continue
            try:
                occurred = date.fromisoformat(fields[1])
            except ValueError:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"bad date '{fields[1]}'"))
                continue
            records.append((event_type, occurred))

        for diagnostic in diagnostics:
            logger.warning(f"Rejected attack record: {diagnostic}")
        if not records:
            if span is None:
                raise DataError(detail=f"No valid attack records in {path}")
            logger.warning(f"No attack records in {path}; every day of {span[0]}..{span[1]} is labelled 0")
            n_days = (span[1] - span[0]).days + 1
            return AttackLabels(start=span[0], end=span[1], counts={e: [0] * n_days for e in EventType},
                                diagnostics=diagnostics)

        labels = self.labels_from_records(records, diagnostics=diagnostics)
        totals = ", ".join(f"{e.value}={n}" for e, n in labels.totals().items())
        logger.info(f"Loaded {len(records)} incidents over {labels.start}..{labels.end} ({totals})")
        return labels

    def labels_from_records(
        self,
        records: List[Tuple[EventType, date]],
        start: Optional[date] = None,
        end: Optional[date] = None,
        diagnostics: Optional[List[Diagnostic]] = None,
    ) -> AttackLabels:
        days = [d for _, d in records]
        start = start or min(days)
        end = end or max(days)
        n_days = (end - start).days + 1
        counts = {event_type: [0] * n_days for event_type in EventType}
        for event_type, occurred in records:
            offset = (occurred - start).days
            if 0 <= offset < n_days:
                counts[event_type][offset] += 1
        return AttackLabels(start=start, end=end, counts=counts, diagnostics=diagnostics or [])

    def align_labels(self, labels: AttackLabels, start: date, end: date) -> AttackLabels:
        """Re-index onto [start, end]; days outside the record span carry no incident."""
        records = []
        for event_type, values in labels.counts.items():
            for day, count in zip(labels.days(), values):
                records.extend([(event_type, day)] * count)
        if not records:
            n_days = (end - start).days + 1
            return AttackLabels(start=start, end=end, counts={e: [0] * n_days for e in EventType})
        return self.labels_from_records(records, start=start, end=end, diagnostics=labels.diagnostics)

    def load_cpe_map(self, path) -> CpeTable:
        path = Path(path)
        diagnostics: List[Diagnostic] = []
        groups: Dict[str, Set[str]] = {}

        for line_no, raw in enumerate(_read_lines(path), start=1):
            if not raw.strip():
                continue
            fields = [f.strip() for f in raw.split("\t")]
            if len(fields) != 2 or not fields[0]:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message="expected cve_id and CPE groups"))
                continue
            cve_id, group_text = fields
            row_groups = {g.strip() for g in group_text.split(";") if g.strip()}
            if not row_groups:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"{cve_id} has no CPE group"))
                continue
            if cve_id in groups:
                diagnostics.append(Diagnostic(path=str(path), line=line_no, message=f"duplicate row for {cve_id}, groups merged"))
                groups[cve_id] |= row_groups
            else:
                groups[cve_id] = row_groups

        for diagnostic in diagnostics:
            logger.warning(f"CPE map: {diagnostic}")

        entries = {cve: CpeMapping(cve_id=cve, cpe_groups=frozenset(g)) for cve, g in sorted(groups.items())}
        return CpeTable(entries=entries, diagnostics=diagnostics)

    def write_posts(self, corpus: Corpus, path) -> Path:
        path = Path(path)
        lines = []
        for forum_id in corpus.forum_ids():
            for thread_id, posts in corpus.threads(forum_id).items():
                for post in posts:
                    lines.append(
                        "\t".join([
                            post.forum_id,
                            post.thread_id,
                            str(post.post_id),
                            post.user_id,
                            format_timestamp(post.timestamp),
                            ",".join(sorted(post.cve_mentions)),
                        ])
                    )
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path

    def write_attacks(self, labels: AttackLabels, path) -> Path:
        path = Path(path)
        lines = []
        for day_index, day in enumerate(labels.days()):
            for event_type in EventType:
                count = labels.counts.get(event_type, [0] * labels.n_days)[day_index]
                lines.extend([f"{event_type.value}\t{day.isoformat()}"] * count)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path

    def write_cpe_map(self, table: CpeTable, path) -> Path:
        path = Path(path)
        lines = [f"{cve}\t{';'.join(sorted(m.cpe_groups))}" for cve, m in sorted(table.entries.items())]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path

    def filter_forums(
        self,
        corpus: Corpus,
        min_posts: int,
        stage: FilterStage = FilterStage.AFTER_TRIM,
        study_start: Optional[date] = None,
        study_end: Optional[date] = None,
    ) -> Corpus:
        if stage == FilterStage.BEFORE_TRIM:
            kept = [f for f in corpus.forum_ids() if corpus.post_count(f) > min_posts]
            result = corpus.restrict(study_start, study_end, forum_ids=kept)
        else:
            trimmed = corpus.restrict(study_start, study_end)
            kept = [f for f in trimmed.forum_ids() if trimmed.post_count(f) > min_posts]
            result = trimmed.restrict(forum_ids=kept)
        dropped = len(corpus.forum_ids()) - len(result.forum_ids())
        logger.info(f"Forum filter (> {min_posts} posts, {stage.value}): kept {len(result.forum_ids())}, dropped {dropped}")
        return result

    def summarize(self, corpus: Corpus, cpe_table: Optional[CpeTable] = None,
                  labels: Optional[AttackLabels] = None) -> Dict[str, object]:
        mentions = Counter(cve for post in corpus.iter_posts() for cve in post.cve_mentions)
        per_cve = sorted(mentions.values())
        summary: Dict[str, object] = {
            "forums": len(corpus.forum_ids()),
            "threads": sum(len(corpus.threads(f)) for f in corpus.forum_ids()),
            "posts": corpus.post_count(),
            "users": len({(p.forum_id, p.user_id) for p in corpus.iter_posts()}),
            "distinct_cves": len(mentions),
            "cve_mention_events": sum(per_cve),
            "mean_mentions_per_cve": round(statistics.fmean(per_cve), 6) if per_cve else 0.0,
            "median_mentions_per_cve": statistics.median(per_cve) if per_cve else 0,
        }
        span = corpus.span()
        if span:
            summary["first_day"], summary["last_day"] = span[0].isoformat(), span[1].isoformat()
        if cpe_table is not None:
            summary["mapped_cves"] = len(cpe_table.entries)
            summary["unmapped_mentioned_cves"] = len(cpe_table.unmapped(mentions))
        if labels is not None:
            for event_type, total in labels.totals().items():
                summary[f"incidents_{event_type.value}"] = total
        return summary


# Create a singleton instance
corpus_service = CorpusService()
