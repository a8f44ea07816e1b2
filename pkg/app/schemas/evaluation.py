from datetime import date
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.schemas.corpus import TimeWindow


class SplitSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    train: TimeWindow
    test: TimeWindow
    ratio: float = 0.7
    train_months: int
    test_months: int


class RocCurve(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


class MetricsReport(BaseModel):
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    auc: Optional[float] = None
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    positive_rate: float = 0.0
    baseline_f1_uniform: float = 0.0
    baseline_f1_prior: float = 0.0
    n_days: int = 0
    n_unpredictable: int = 0
    config: Dict[str, str] = Field(default_factory=dict)

    def row(self) -> Dict[str, object]:
        row: Dict[str, object] = dict(self.config)
        row.update(
            precision=round(self.precision, 6),
            recall=round(self.recall, 6),
            f1=round(self.f1, 6),
            auc="" if self.auc is None else round(self.auc, 6),
            tp=self.tp, fp=self.fp, tn=self.tn, fn=self.fn,
            positive_rate=round(self.positive_rate, 6),
            baseline_f1_uniform=round(self.baseline_f1_uniform, 6),
            baseline_f1_prior=round(self.baseline_f1_prior, 6),
            n_days=self.n_days,
            n_unpredictable=self.n_unpredictable,
        )
        return row


class DayMask(BaseModel):
    days: List[date]
    selected: List[bool]

    def selected_days(self) -> List[date]:
        return [d for d, keep in zip(self.days, self.selected) if keep]
