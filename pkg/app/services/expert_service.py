import logging
from collections import Counter, defaultdict
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import stats

from app.core.errors import DataError, DegenerateError
from app.schemas.corpus import AttackLabels, Corpus, CpeTable, EventType, Post, TimeWindow, WindowKind
from app.schemas.experts import CpeGroupRanking, CpeRelation, ExpertProvenance, ExpertSet, TTestResult
from app.schemas.graph import ConstructionParams, ReplyGraph, WindowSchedule
from app.services.reply_graph_service import reply_graph_service

logger = logging.getLogger(__name__)

# interaction graph preceding an event week
INTERACTION_WEEKS = 3


def cpe_relation(theta: Set[str], top: Set[str]) -> CpeRelation:
    if theta == top:
        return CpeRelation.EQUAL
    if theta <= top:
        return CpeRelation.SUBSET
    if top <= theta:
        return CpeRelation.SUPERSET
    return CpeRelation.NONE


def satisfies_cpe_constraint(theta: Set[str], top: Set[str], top_k: int) -> bool:
    """θ ⊆ top below top_k groups, top ⊆ θ above it; at exactly top_k only θ == top can hold both."""
    if not theta or not top:
        return False
    if len(theta) < top_k:
        return theta <= top
    if len(theta) > top_k:
        return top <= theta
    return theta == top or theta <= top


class ExpertService:
    def rank_cpe_groups(self, posts: Iterable[Post], cpe_table: CpeTable, top_k: int = 5,
                        window: Optional[TimeWindow] = None) -> CpeGroupRanking:
        totals: Counter = Counter()
        for post in posts:
            if window is not None and not window.contains(post.day):
                continue
            for cve in post.cve_mentions:
                for group in cpe_table.lookup(cve) or ():
                    totals[group] += 1
        ranked = sorted(totals.items(), key=lambda item: (-item[1], item[0]))
        return CpeGroupRanking(window=window, ranked_groups=ranked, top_k=top_k)

    def extract_experts(
        self,
        graph: ReplyGraph,
        posts: Iterable[Post],
        ranking: CpeGroupRanking,
        cpe_table: CpeTable,
        indeg_threshold: int = 10,
        window: Optional[TimeWindow] = None,
        forum_id: Optional[str] = None,
    ) -> ExpertSet:
        """
        Users of the history graph who (1) mentioned a CVE, (2) whose CPE groups
        agree with the top ranked groups and (3) whose in-degree reaches
        indeg_threshold.

        Users meeting (1) but failing (2) or (3) are kept as alternates.
        """
        mentions: Dict[str, List[str]] = defaultdict(list)
        for post in posts:
            if window is not None and not window.contains(post.day):
                continue
            mentions[post.user_id].extend(sorted(post.cve_mentions))

        top = set(ranking.top_set)
        members: Set[str] = set()
        alternates: Set[str] = set()
        provenance: Dict[str, ExpertProvenance] = {}
        for user_id, cves in sorted(mentions.items()):
            if not cves:
                continue
            mapped = sorted({c for c in cves if cpe_table.is_mapped(c)})
            theta: Set[str] = set()
            for cve in mapped:
                theta |= cpe_table.lookup(cve)
            in_degree = graph.in_degree(user_id)
            if satisfies_cpe_constraint(theta, top, ranking.top_k) and in_degree >= indeg_threshold:
                members.add(user_id)
                provenance[user_id] = ExpertProvenance(
                    user_id=user_id,
                    cve_mentions=len(cves),
                    mapped_cves=mapped,
                    theta=sorted(theta),
                    cpe_relation=cpe_relation(theta, top),
                    in_degree=in_degree,
                )
            else:
                alternates.add(user_id)

        window = window or graph.span or TimeWindow(start=date.min, end=date.max)
        forum_id = forum_id or graph.forum_id or ""
        logger.debug(f"Forum {forum_id} {window}: {len(members)} experts, {len(alternates)} alternates")
        return ExpertSet(
            window=window,
            forum_id=forum_id,
            members=frozenset(members),
            indeg_threshold=indeg_threshold,
            provenance=provenance,
            alternates=frozenset(alternates),
        )

    def expert_interaction_ttest(self, expert_degrees: Sequence[float], alternate_degrees: Sequence[float],
                                 alpha: float = 0.01) -> TTestResult:
        """One-sided Welch test of H1: experts interact more than alternates."""
        exp = np.asarray(expert_degrees, dtype=float)
        alt = np.asarray(alternate_degrees, dtype=float)
        if exp.size == 0 or alt.size == 0:
            raise DataError(detail="Interaction t-test needs non-empty expert and alternate vectors")

        if np.var(exp) == 0 and np.var(alt) == 0:
            difference = float(exp.mean() - alt.mean())
            if difference == 0:
                t_statistic, p_value = 0.0, 0.5
            elif exp.size >= 2 and alt.size >= 2:
                t_statistic = float(np.sign(difference) * np.inf)
                p_value = 0.0 if difference > 0 else 1.0
            else:
                raise DegenerateError(detail="Interaction t-test needs at least two values per vector")
        elif exp.size < 2 or alt.size < 2:
            raise DegenerateError(detail="Interaction t-test needs at least two values per vector")
        else:
            result = stats.ttest_ind(exp, alt, equal_var=False, alternative="greater")
            t_statistic, p_value = float(result.statistic), float(result.pvalue)

        return TTestResult(
            t_statistic=t_statistic,
            p_value=p_value,
            alpha=alpha,
            reject=p_value < alpha,
            n_experts=int(exp.size),
            n_alternates=int(alt.size),
        )

    def sample_alternates(self, alternates: Iterable[str], n: int, rng: np.random.Generator) -> List[str]:
        pool = sorted(alternates)
        if len(pool) <= n:
            return pool
        picked = rng.choice(len(pool), size=n, replace=False)
        return sorted(pool[i] for i in picked)

    def interaction_degrees(self, graph: ReplyGraph, users: Iterable[str]) -> List[int]:
        """In plus out degree, sorted descending."""
        return sorted((graph.in_degree(u) + graph.out_degree(u) for u in users), reverse=True)

    def experts_for_window(self, corpus: Corpus, forum_id: str, history: TimeWindow, cpe_table: CpeTable,
                           params: ConstructionParams, top_k: int, indeg_threshold: int) -> Tuple[ReplyGraph, ExpertSet]:
        posts = [p for p in corpus.forum_posts(forum_id) if history.contains(p.day)]
        graph = reply_graph_service.create_graph(posts, params, window=history, forum_id=forum_id)
        ranking = self.rank_cpe_groups(posts, cpe_table, top_k=top_k, window=history)
        experts = self.extract_experts(graph, posts, ranking, cpe_table, indeg_threshold,
                                       window=history, forum_id=forum_id)
        return graph, experts

    def run_interaction_ttest(
        self,
        corpus: Corpus,
        cpe_table: CpeTable,
        labels: AttackLabels,
        schedule: WindowSchedule,
        params: ConstructionParams,
        event_types: Sequence[EventType],
        top_k: int = 5,
        indeg_threshold: int = 10,
        alpha: float = 0.01,
        seed: int = 0,
        control: bool = False,
    ) -> Tuple[TTestResult, List[Dict[str, object]]]:
        """
        Pool expert and alternate interaction degrees over event days and forums.

        Experts come from the history window of each event day; degrees are read
        from the reply graph of the three weeks before the event's ISO week. With
        control=True the same number of days is drawn from weeks without events.
        """
        rng = np.random.default_rng(seed)
        event_days = sorted({
            day for event_type in event_types
            for day, flag in labels.label_series(event_type).items() if flag and schedule.pair_for(day)
        })
        if control:
            event_weeks = {(d - timedelta(days=d.weekday())) for d in event_days}
            quiet = [
                d for d in labels.days()
                if schedule.pair_for(d) and d.weekday() == 0 and d not in event_weeks
            ]
            if not quiet:
                raise DegenerateError(detail="No event-free weeks available for the control run")
            picked = rng.choice(len(quiet), size=min(len(event_days), len(quiet)), replace=False)
            event_days = sorted(quiet[i] for i in picked)
        if not event_days:
            raise DegenerateError(detail="No event days fall inside the window schedule")

        expert_cache: Dict[Tuple[str, date], ExpertSet] = {}
        pooled_exp: List[int] = []
        pooled_alt: List[int] = []
        rows: List[Dict[str, object]] = []
        for day in event_days:
            pair = schedule.pair_for(day)
            week_start = day - timedelta(days=day.weekday())
            interaction_window = TimeWindow(
                start=week_start - timedelta(weeks=INTERACTION_WEEKS),
                end=week_start - timedelta(days=1),
                kind=WindowKind.LAG,
            )
            for forum_id in corpus.forum_ids():
                key = (forum_id, pair.history.start)
                if key not in expert_cache:
                    _, expert_cache[key] = self.experts_for_window(
                        corpus, forum_id, pair.history, cpe_table, params, top_k, indeg_threshold
                    )
                experts = expert_cache[key]
                if not experts.members:
                    continue
                graph = reply_graph_service.create_graph(
                    corpus.forum_posts(forum_id), params, window=interaction_window, forum_id=forum_id
                )
                alternates = self.sample_alternates(experts.alternates, len(experts.members), rng)
                exp_degrees = self.interaction_degrees(graph, sorted(experts.members))
                alt_degrees = self.interaction_degrees(graph, alternates)
                pooled_exp.extend(exp_degrees)
                pooled_alt.extend(alt_degrees)
                rows.append({
                    "day": day.isoformat(),
                    "forum": forum_id,
                    "n_experts": len(exp_degrees),
                    "n_alternates": len(alt_degrees),
                    "mean_expert_degree": float(np.mean(exp_degrees)),
                    "mean_alternate_degree": float(np.mean(alt_degrees)) if alt_degrees else "",
                })

        result = self.expert_interaction_ttest(pooled_exp, pooled_alt, alpha)
        label = "control" if control else "event"
        logger.info(f"Interaction t-test ({label}, {len(event_days)} days): t={result.t_statistic:.4f}, "
                    f"p={result.p_value:.4g}, reject={result.reject}")
        return result, rows

    def write_experts(self, expert_sets: Iterable[ExpertSet], path) -> Path:
        path = Path(path)
        lines = ["window\tforum\tuser_id\tindeg\tcpe_relation"]
        for expert_set in expert_sets:
            for user_id in sorted(expert_set.members):
                record = expert_set.provenance[user_id]
                lines.append(
                    f"{expert_set.window}\t{expert_set.forum_id}\t{user_id}\t{record.in_degree}\t{record.cpe_relation.value}"
                )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


# Create a singleton instance
expert_service = ExpertService()
