import logging
from collections import defaultdict
from datetime import date, timedelta
from itertools import pairwise
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
import powerlaw

from app.core.errors import DataError, DegenerateError
from app.schemas.corpus import Corpus, Post, TimeWindow, WindowKind
from app.schemas.graph import ConstructionParams, CreateMode, ReplyEdge, ReplyGraph, WindowPair, WindowSchedule
from app.schemas.pipeline import FitMethod
from app.services.corpus_service import format_timestamp, parse_timestamp

logger = logging.getLogger(__name__)


def _mean_gap(candidates: Sequence[Post]) -> float:
    gaps = [(b.timestamp - a.timestamp).total_seconds() for a, b in pairwise(candidates)]
    return float(np.mean(gaps))


def add_months(day: date, months: int) -> date:
    return (pd.Timestamp(day) + pd.DateOffset(months=months)).date()


class ReplyGraphService:
    def create_thread_edges(self, posts: Sequence[Post], params: ConstructionParams) -> Set[ReplyEdge]:
        """
        Infer who replied to whom inside one thread.

        Post i may reply to any of the thresh_spat posts before it. If the earliest
        of them is within thresh_temp of post i, all of them are linked. Otherwise
        the earliest candidate is dropped until the mean successive gap of the
        remaining candidates is below the gap between the latest candidate and
        post i, or the earliest remaining candidate falls within thresh_temp.
        A single remaining candidate is always linked.
        """
        edges: Set[ReplyEdge] = set()
        temp = params.thresh_temp_seconds

        for i in range(1, len(posts)):
            post = posts[i]
            candidates = list(posts[max(0, i - params.thresh_spat):i])

            while len(candidates) > 1:
                if (post.timestamp - candidates[0].timestamp).total_seconds() < temp:
                    break
                mean_gap = _mean_gap(candidates)
                delta_t = (post.timestamp - candidates[-1].timestamp).total_seconds()
                if mean_gap < delta_t:
                    break
                if params.mode == CreateMode.MONOTONE and len(candidates) > 2 and _mean_gap(candidates[1:]) > mean_gap:
                    break
                candidates = candidates[1:]

            for candidate in candidates:
                if candidate.user_id == post.user_id and not params.allow_self_replies:
                    continue
                edges.add(ReplyEdge(replier=post.user_id, replied_to=candidate.user_id, reply_time=post.timestamp))
        return edges

    def create_graph(
        self,
        posts: Iterable[Post],
        params: ConstructionParams,
        window: Optional[TimeWindow] = None,
        forum_id: Optional[str] = None,
    ) -> ReplyGraph:
        threads: Dict[Tuple[str, str], List[Post]] = defaultdict(list)
        for post in posts:
            if window is not None and not window.contains(post.day):
                continue
            threads[(post.forum_id, post.thread_id)].append(post)

        edges: List[ReplyEdge] = []
        vertices: Set[str] = set()
        for thread in threads.values():
            thread.sort(key=Post.sort_key)
            vertices.update(p.user_id for p in thread)
            edges.extend(self.create_thread_edges(thread, params))
        return ReplyGraph.from_edges(edges, vertices=vertices, span=window, forum_id=forum_id)

    def merge(self, historical: ReplyGraph, current: ReplyGraph) -> ReplyGraph:
        """Union of both graphs; a shared edge keeps its earliest reply time."""
        graph = historical.graph.copy()
        graph.add_nodes_from(sorted(current.vertices - historical.vertices))
        for u, v, reply_time in sorted(current.graph.edges(data="reply_time")):
            if not graph.has_edge(u, v) or reply_time < graph[u][v]["reply_time"]:
                graph.add_edge(u, v, reply_time=reply_time)
        span = None
        spans = [g.span for g in (historical, current) if g.span is not None]
        if spans:
            span = TimeWindow(start=min(s.start for s in spans), end=max(s.end for s in spans))
        return ReplyGraph.from_digraph(graph, span=span, forum_id=historical.forum_id or current.forum_id)

    def build_window_schedule(self, start: date, end: date, tau_months: int = 1,
                              history_months: int = 3) -> WindowSchedule:
        """
        Calendar-month schedule: the first history_months complete months seed the
        first history window, every following tau_months block is a subsequence
        paired with the history_months months right before it. The last
        subsequence is clipped to the span end.
        """
        anchor = start if start.day == 1 else add_months(start.replace(day=1), 1)
        first_tau = add_months(anchor, history_months)
        required_end = add_months(first_tau, tau_months) - timedelta(days=1)
        if required_end > end:
            raise DegenerateError(
                detail=f"Span {start}..{end} too short: need {history_months + tau_months} complete months "
                       f"({anchor}..{required_end})"
            )

        pairs: List[WindowPair] = []
        tau_start = first_tau
        while tau_start <= end:
            tau_end = min(add_months(tau_start, tau_months) - timedelta(days=1), end)
            history = TimeWindow(
                start=add_months(tau_start, -history_months),
                end=tau_start - timedelta(days=1),
                kind=WindowKind.HISTORY,
            )
            pairs.append(WindowPair(tau=TimeWindow(start=tau_start, end=tau_end), history=history))
            tau_start = add_months(tau_start, tau_months)

        logger.info(f"Window schedule: {len(pairs)} subsequences from {pairs[0].tau.start} to {pairs[-1].tau.end}")
        return WindowSchedule(subsequences=pairs, tau_months=tau_months, history_months=history_months)

    def powerlaw_fit_error(self, in_degrees: Iterable[int], exponent: float,
                           method: FitMethod = FitMethod.LEAST_SQUARES) -> Optional[float]:
        """
        Distance between an in-degree sample (k >= 1) and p(k) ~ k^-exponent.

        lsq: mean squared residual of log CCDF against a line of slope
        -(exponent - 1) with a free intercept, over distinct observed k.
        mle: |alpha_hat - exponent| for the discrete maximum-likelihood fit with xmin = 1.
        Returns None when the sample cannot be fitted.
        """
        k = np.asarray([d for d in in_degrees if d >= 1], dtype=float)
        if k.size == 0 or np.unique(k).size < 2:
            return None

        if method == FitMethod.MLE:
            fit = powerlaw.Fit(k, discrete=True, xmin=1, estimate_discrete=False, verbose=False)
            return float(abs(fit.power_law.alpha - exponent))

        values, ccdf = powerlaw.ccdf(k)
        residuals = np.log(ccdf) + (exponent - 1.0) * np.log(values)
        return float(np.mean((residuals - residuals.mean()) ** 2))

    def calibrate_thresholds(
        self,
        corpus: Corpus,
        spat_grid: Sequence[int],
        temp_grid_minutes: Sequence[float],
        exponent: float = 1.35,
        method: FitMethod = FitMethod.LEAST_SQUARES,
        base: Optional[ConstructionParams] = None,
    ) -> Tuple[ConstructionParams, List[Dict[str, object]]]:
        if not spat_grid or not temp_grid_minutes:
            raise DataError(detail="Calibration grid is empty")
        base = base or ConstructionParams()

        results: List[Dict[str, object]] = []
        best: Optional[Tuple[float, int, float]] = None
        for spat in sorted(set(spat_grid)):
            for temp in sorted(set(temp_grid_minutes)):
                params = base.model_copy(update={"thresh_spat": spat, "thresh_temp_minutes": temp})
                degrees: List[int] = []
                for forum_id in corpus.forum_ids():
                    graph = self.create_graph(corpus.forum_posts(forum_id), params, forum_id=forum_id)
                    degrees.extend(graph.in_degree_sequence())
                error = self.powerlaw_fit_error(degrees, exponent, method)
                results.append({"thresh_spat": spat, "thresh_temp_minutes": temp,
                                "fit_error": "" if error is None else error})
                if error is None:
                    logger.warning(f"Calibration pair ({spat}, {temp}min) yields a degenerate in-degree sample")
                    continue
                logger.info(f"Calibration pair ({spat}, {temp}min): fit error {error:.6g}")
                if best is None or (error, spat, temp) < best:
                    best = (error, spat, temp)

        if best is None:
            raise DegenerateError(detail="Every calibration pair yields a degenerate reply graph")
        _, spat, temp = best
        logger.info(f"Calibrated thresholds: thresh_spat={spat}, thresh_temp={temp}min")
        return base.model_copy(update={"thresh_spat": spat, "thresh_temp_minutes": temp}), results

    def write_snapshot(self, graph: ReplyGraph, path) -> Path:
        path = Path(path)
        span = str(graph.span) if graph.span else ""
        lines = [f"# forum={graph.forum_id or ''}\tspan={span}"]
        lines.extend(f"{e.replier}\t{e.replied_to}\t{format_timestamp(e.reply_time)}" for e in graph.edges())
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def read_snapshot(self, path) -> ReplyGraph:
        path = Path(path)
        forum_id, span, edges = None, None, []
        for raw in path.read_text(encoding="utf-8").splitlines():
            if raw.startswith("#"):
                for item in raw.lstrip("# ").split("\t"):
                    key, _, value = item.partition("=")
                    if key == "forum" and value:
                        forum_id = value
                    elif key == "span" and value:
                        first, last = value.split("..")
                        span = TimeWindow(start=date.fromisoformat(first), end=date.fromisoformat(last))
                continue
            if raw.strip():
                u, v, rt = raw.split("\t")
                edges.append(ReplyEdge(replier=u, replied_to=v, reply_time=parse_timestamp(rt)))
        return ReplyGraph.from_edges(edges, span=span, forum_id=forum_id)



# Create a singleton instance
reply_graph_service = ReplyGraphService()
