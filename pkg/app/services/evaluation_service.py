import logging
import math
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table
from sklearn import metrics

from app.core.errors import DataError, DegenerateError
from app.schemas.corpus import TimeWindow
from app.schemas.evaluation import DayMask, MetricsReport, RocCurve, SplitSpec
from app.services.reply_graph_service import add_months

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["precision", "recall", "f1", "auc", "baseline_f1_prior"]


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def uniform_baseline_f1(positive_rate: float) -> float:
    """Expected F1 of coin-flip predictions: precision = positive rate, recall = 0.5."""
    return f1_score(positive_rate, 0.5)


class EvaluationService:
    def chrono_split(self, start: date, end: date, ratio: float = 0.7) -> SplitSpec:
        """Split at the calendar-month edge nearest to ratio of the span's months."""
        n_months = (end.year - start.year) * 12 + end.month - start.month + 1
        if n_months < 2:
            raise DegenerateError(detail=f"Span {start}..{end} covers {n_months} month; a split needs two")
        boundary = min(max(math.floor(ratio * n_months + 0.5), 1), n_months - 1)
        test_start = add_months(start.replace(day=1), boundary)
        return SplitSpec(
            train=TimeWindow(start=start, end=test_start - timedelta(days=1)),
            test=TimeWindow(start=test_start, end=end),
            ratio=ratio,
            train_months=boundary,
            test_months=n_months - boundary,
        )

    def roc_auc(self, scores: Sequence[float], labels: Sequence[int],
                thresholds: Optional[Sequence[float]] = None) -> RocCurve:
        """
        ROC over every distinct score, or over an explicit threshold grid with
        the (0, 0) and (1, 1) corners added. On a grid a day counts as positive
        when its score exceeds the threshold.
        """
        scores = np.asarray(scores, dtype=float)
        labels = np.asarray(labels, dtype=int)
        if scores.shape != labels.shape:
            raise DataError(detail="scores and labels differ in length")
        positives, negatives = int(labels.sum()), int((labels == 0).sum())
        if positives == 0 or negatives == 0:
            raise DegenerateError(detail="ROC needs both classes among the evaluated days")

        if thresholds is None:
            fpr, tpr, grid = metrics.roc_curve(labels, scores, drop_intermediate=False)
            return RocCurve(thresholds=grid, tpr=tpr, fpr=fpr, auc=float(metrics.auc(fpr, tpr)))

        grid = np.sort(np.asarray(thresholds, dtype=float))[::-1]
        counts = np.array([
            metrics.confusion_matrix(labels, (scores > t).astype(int), labels=[0, 1]).ravel() for t in grid
        ]).reshape(-1, 4)
        fpr = counts[:, 1] / negatives
        tpr = counts[:, 3] / positives
        xs = np.concatenate([[0.0], fpr, [1.0]])
        ys = np.concatenate([[0.0], tpr, [1.0]])
        return RocCurve(thresholds=grid, tpr=tpr, fpr=fpr, auc=float(metrics.auc(xs, ys)))

    def prf1(self, predictions: Sequence[int], labels: Sequence[int], n_unpredictable: int = 0,
             auc: Optional[float] = None, config: Optional[Dict[str, str]] = None) -> MetricsReport:
        predictions = np.asarray(predictions, dtype=int)
        labels = np.asarray(labels, dtype=int)
        if predictions.shape != labels.shape:
            raise DataError(detail=f"{predictions.size} predictions for {labels.size} labels")
        if labels.size == 0:
            return MetricsReport(auc=auc, n_unpredictable=n_unpredictable, config=dict(config or {}))

        tn, fp, fn, tp = metrics.confusion_matrix(labels, predictions, labels=[0, 1]).ravel()
        precision, recall, f1, _ = metrics.precision_recall_fscore_support(
            labels, predictions, average="binary", pos_label=1, zero_division=0
        )
        positive_rate = float(labels.mean())
        return MetricsReport(
            precision=float(precision),
            recall=float(recall),
            f1=float(f1),
            auc=auc,
            tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn),
            positive_rate=positive_rate,
            baseline_f1_uniform=uniform_baseline_f1(positive_rate),
            baseline_f1_prior=positive_rate,
            n_days=int(labels.size),
            n_unpredictable=n_unpredictable,
            config=dict(config or {}),
        )

    def sampled_baseline_f1(self, labels: Sequence[int], seed: int = 0, draws: int = 1000,
                            prior: bool = False) -> float:
        """Mean F1 of random predictions: fair coin, or Bernoulli(positive rate) with prior=True."""
        labels = np.asarray(labels, dtype=int)
        rng = np.random.default_rng(seed)
        p = labels.mean() if prior else 0.5
        guesses = (rng.random((draws, labels.size)) < p).astype(int)
        tp = guesses @ labels
        # F1 = 2 tp / (predicted positives + actual positives)
        denominator = guesses.sum(axis=1) + labels.sum()
        f1 = np.divide(2.0 * tp, denominator, out=np.zeros(draws), where=denominator > 0)
        return float(f1.mean())

    def high_activity_filter(self, counts: pd.Series, min_attacks: int = 5) -> DayMask:
        """Select days of ISO weeks whose incident total exceeds min_attacks."""
        weeks = [d.isocalendar()[:2] for d in counts.index]
        totals: Dict[tuple, int] = {}
        for week, count in zip(weeks, counts.to_numpy()):
            totals[week] = totals.get(week, 0) + int(count)
        selected = [totals[week] > min_attacks for week in weeks]
        if not any(selected):
            logger.warning(f"No ISO week has more than {min_attacks} incidents")
        return DayMask(days=list(counts.index), selected=selected)

    def write_reports(self, reports: Sequence[MetricsReport], path: Path) -> Path:
        frame = pd.DataFrame([r.row() for r in reports])
        frame.to_csv(path, index=False)
        return path

    def write_roc(self, curves: Dict[str, RocCurve], path: Path) -> Path:
        rows = []
        for name, curve in curves.items():
            for t, tpr, fpr in zip(curve.thresholds, curve.tpr, curve.fpr):
                rows.append({"curve": name, "threshold": t, "tpr": tpr, "fpr": fpr, "auc": curve.auc})
        pd.DataFrame(rows, columns=["curve", "threshold", "tpr", "fpr", "auc"]).to_csv(path, index=False)
        return path

    def render(self, reports: Sequence[MetricsReport], title: str, console: Optional[Console] = None) -> None:
        console = console or Console()
        if not reports:
            return
        keys = list(reports[0].config)
        table = Table(title=title)
        for column in keys + ["precision", "recall", "f1", "auc", "baseline_f1_prior"]:
            table.add_column(column)
        for report in reports:
            row = report.row()
            table.add_row(*[str(row.get(k, "")) for k in keys + METRIC_COLUMNS])
        console.print(table)


# Create a singleton instance
evaluation_service = EvaluationService()
