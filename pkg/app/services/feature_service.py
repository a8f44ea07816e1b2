import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from app.core.errors import DataError
from app.schemas.corpus import Corpus, CpeTable, Post
from app.schemas.experts import ExpertSet
from app.schemas.features import (
    CommunityAssignment,
    Coverage,
    FeatureId,
    FeatureSeries,
    FeatureValue,
    GRAPH_FEATURES,
)
from app.schemas.graph import ReplyGraph, WindowSchedule
from app.schemas.pipeline import PipelineConfig
from app.services import graph_metrics
from app.services.expert_service import expert_service
from app.services.reply_graph_service import reply_graph_service

logger = logging.getLogger(__name__)

FEATURES_FILE = "features.csv"
FLAGS_FILE = "feature_flags.csv"
COLUMN_SEPARATOR = "/"


class FeatureService:
    def metadata_features(self, posts: Iterable[Post], experts: Iterable[str] = ()) -> Dict[FeatureId, FeatureValue]:
        posts = list(posts)
        expert_ids = set(experts)
        threads = {(p.forum_id, p.thread_id) for p in posts}
        users = {p.user_id for p in posts}
        expert_threads = {(p.forum_id, p.thread_id) for p in posts if p.user_id in expert_ids}
        cves = {cve for p in posts for cve in p.cve_mentions}
        return {
            FeatureId.N_THREADS: FeatureValue(value=float(len(threads))),
            FeatureId.N_USERS: FeatureValue(value=float(len(users))),
            FeatureId.N_EXPERT_THREADS: FeatureValue(value=float(len(expert_threads))),
            FeatureId.N_CVE_MENTIONS: FeatureValue(value=float(len(cves))),
        }

    def graph_features(
        self,
        history: ReplyGraph,
        current: ReplyGraph,
        experts: ExpertSet,
        assignment: Optional[CommunityAssignment],
        config: PipelineConfig,
        features: Sequence[FeatureId],
    ) -> Dict[FeatureId, FeatureValue]:
        wanted = [f for f in features if f in GRAPH_FEATURES]
        if not current.vertices:
            return {f: FeatureValue(coverage=Coverage.EMPTY_GRAPH, detail="no posts") for f in wanted}

        merged = reply_graph_service.merge(history, current)
        members = experts.members
        values: Dict[FeatureId, FeatureValue] = {}
        for feature in wanted:
            if feature == FeatureId.CONDUCTANCE:
                values[feature] = graph_metrics.graph_conductance(
                    merged, members, config.stationary_mode, config.conductance_boundary, current.vertices
                )
            elif feature == FeatureId.SHORTEST_PATH:
                values[feature] = graph_metrics.avg_shortest_path(merged, members, current.vertices)
            elif feature == FeatureId.EXPERT_REPLIES:
                values[feature] = graph_metrics.expert_replies(merged, members, config.expert_replies_mode)
            elif feature == FeatureId.COMMON_COMMUNITIES:
                values[feature] = graph_metrics.common_communities(
                    members, assignment or CommunityAssignment(), history, merged, current.vertices
                )
        return values

    def compute_feature_series(
        self,
        corpus: Corpus,
        forum_id: str,
        schedule: WindowSchedule,
        cpe_table: CpeTable,
        config: PipelineConfig,
        features: Optional[Sequence[FeatureId]] = None,
        days: Optional[Sequence[date]] = None,
    ) -> Tuple[List[FeatureSeries], List[ExpertSet]]:
        """
        Daily feature series of one forum.

        Experts and communities are built once per subsequence from its history
        graph; each day's graph is merged onto that history before the graph
        features are read.
        """
        features = list(features or config.features)
        if days is None:
            days = [d for pair in schedule.subsequences for d in pair.tau.days()]
        outside = [d for d in days if schedule.pair_for(d) is None]
        if outside:
            raise DataError(detail=f"{len(outside)} requested days fall outside the window schedule, first {outside[0]}")

        by_day: Dict[date, List[Post]] = defaultdict(list)
        for post in corpus.forum_posts(forum_id):
            by_day[post.day].append(post)

        params = config.construction
        values: Dict[FeatureId, List[float]] = {f: [] for f in features}
        coverage: Dict[FeatureId, List[Coverage]] = {f: [] for f in features}
        expert_sets: List[ExpertSet] = []
        cache: Dict[date, Tuple[ReplyGraph, ExpertSet, Optional[CommunityAssignment]]] = {}

        for day in days:
            pair = schedule.pair_for(day)
            if pair.tau.start not in cache:
                history, experts = expert_service.experts_for_window(
                    corpus, forum_id, pair.history, cpe_table, params, config.top_k_cpe, config.indeg_threshold
                )
                assignment = None
                if FeatureId.COMMON_COMMUNITIES in features:
                    assignment = graph_metrics.louvain_communities(history, seed=config.seed, experts=experts.members)
                cache[pair.tau.start] = (history, experts, assignment)
                expert_sets.append(experts)
                logger.debug(f"Forum {forum_id} {pair.tau}: |V_H|={len(history.vertices)}, experts={len(experts)}")
            history, experts, assignment = cache[pair.tau.start]

            posts = by_day.get(day, [])
            current = reply_graph_service.create_graph(posts, params, forum_id=forum_id)
            day_values = self.metadata_features(posts, experts.members)
            day_values.update(self.graph_features(history, current, experts, assignment, config, features))
            for feature in features:
                value = day_values[feature]
                values[feature].append(value.value)
                coverage[feature].append(value.coverage)

        series = [
            FeatureSeries(feature_id=f, forum_id=forum_id, days=list(days), values=values[f], coverage=coverage[f])
            for f in features
        ]
        return series, expert_sets

    def compute_all(
        self,
        corpus: Corpus,
        schedule: WindowSchedule,
        cpe_table: CpeTable,
        config: PipelineConfig,
    ) -> Tuple[List[FeatureSeries], List[ExpertSet]]:
        forum_ids = corpus.forum_ids()
        logger.info(f"Computing {len(config.features)} features for {len(forum_ids)} forums "
                    f"over {schedule.start}..{schedule.end} with {config.threads} threads")

        def run(forum_id: str):
            return self.compute_feature_series(corpus, forum_id, schedule, cpe_table, config)

        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run, forum_ids))

        series = [s for forum_series, _ in results for s in forum_series]
        expert_sets = [e for _, forum_experts in results for e in forum_experts]
        return series, expert_sets

    def to_frames(self, series: Sequence[FeatureSeries]) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Wide tables: one row per day, one column per feature/forum."""
        values, flags = {}, {}
        for s in sorted(series, key=lambda s: (s.feature_id.value, s.forum_id)):
            column = f"{s.feature_id.value}{COLUMN_SEPARATOR}{s.forum_id}"
            index = pd.Index(s.days, name="day")
            values[column] = pd.Series(s.values, index=index, dtype=float)
            flags[column] = pd.Series([c.value for c in s.coverage], index=index)
        return pd.DataFrame(values), pd.DataFrame(flags)

    def write_tables(self, values: pd.DataFrame, flags: pd.DataFrame, output_dir: Path) -> Tuple[Path, Path]:
        output_dir.mkdir(parents=True, exist_ok=True)
        values_path, flags_path = output_dir / FEATURES_FILE, output_dir / FLAGS_FILE
        values.to_csv(values_path, index_label="day")
        flags.to_csv(flags_path, index_label="day")
        return values_path, flags_path

    def read_tables(self, output_dir: Path) -> Tuple[pd.DataFrame, pd.DataFrame]:
        values_path, flags_path = output_dir / FEATURES_FILE, output_dir / FLAGS_FILE
        if not values_path.exists():
            raise DataError(detail=f"Feature table {values_path} not found; run features first")
        values = pd.read_csv(values_path, index_col="day")
        values.index = pd.Index([date.fromisoformat(d) for d in values.index], name="day")
        flags = None
        if flags_path.exists():
            flags = pd.read_csv(flags_path, index_col="day")
            flags.index = values.index
        return values, flags

    def feature_frame(self, values: pd.DataFrame, feature: FeatureId) -> pd.DataFrame:
        """Day x forum block of one feature."""
        prefix = f"{feature.value}{COLUMN_SEPARATOR}"
        columns = [c for c in values.columns if c.startswith(prefix)]
        if not columns:
            raise DataError(detail=f"Feature {feature.value} missing from the feature table")
        block = values[columns].copy()
        block.columns = [c[len(prefix):] for c in columns]
        return block

    def available_features(self, values: pd.DataFrame) -> List[FeatureId]:
        present = {c.split(COLUMN_SEPARATOR, 1)[0] for c in values.columns}
        return [f for f in FeatureId if f.value in present]


# Create a singleton instance
feature_service = FeatureService()
