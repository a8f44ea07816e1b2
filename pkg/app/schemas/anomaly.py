from datetime import date
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class MeasurementMatrix(BaseModel):
    """Rows are days, columns are forums; one feature's values."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    feature_id: str
    days: List[date]
    forums: List[str]
    values: np.ndarray
    column_means: np.ndarray

    @model_validator(mode="after")
    def rectangular(self) -> "MeasurementMatrix":
        if self.values.shape != (len(self.days), len(self.forums)):
            raise ValueError(f"matrix shape {self.values.shape} does not match days x forums")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("measurement matrix has missing entries")
        return self

    def rows_for(self, days: List[date]) -> np.ndarray:
        index = {d: i for i, d in enumerate(self.days)}
        return self.values[[index[d] for d in days]]


class SubspaceModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    feature_id: str
    axes: np.ndarray = Field(..., description="K x F, rows orthonormal, decreasing variance")
    singular_values: np.ndarray
    n_train_rows: int
    r: int
    column_means: np.ndarray

    @property
    def n_columns(self) -> int:
        return int(self.column_means.shape[0])

    @property
    def normal_axes(self) -> np.ndarray:
        return self.axes[: self.r]

    @property
    def normal_projector(self) -> np.ndarray:
        P = self.normal_axes.T
        return P @ P.T

    @property
    def residual_projector(self) -> np.ndarray:
        return np.eye(self.n_columns) - self.normal_projector

    def explained_variance(self) -> np.ndarray:
        denominator = max(self.n_train_rows - 1, 1)
        return self.singular_values**2 / denominator


class ThresholdKind(str, Enum):
    ABSOLUTE = "absolute"
    QUANTILE = "quantile"
    Q_STATISTIC = "q-statistic"


class ThresholdSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ThresholdKind = ThresholdKind.QUANTILE
    value: float = 0.95

    @model_validator(mode="after")
    def in_range(self) -> "ThresholdSpec":
        if self.kind == ThresholdKind.ABSOLUTE and self.value < 0:
            raise ValueError("absolute SPE threshold must be non-negative")
        if self.kind in (ThresholdKind.QUANTILE, ThresholdKind.Q_STATISTIC) and not 0 < self.value < 1:
            raise ValueError(f"{self.kind.value} threshold needs a value in (0, 1)")
        return self

    @classmethod
    def parse(cls, text: str) -> "ThresholdSpec":
        """'quantile:0.95', 'absolute:2.5', 'q-statistic:0.01' or a bare number (absolute)."""
        if ":" not in text:
            return cls(kind=ThresholdKind.ABSOLUTE, value=float(text))
        kind, value = text.split(":", 1)
        return cls(kind=ThresholdKind(kind.strip()), value=float(value))

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.value}"


class ResidualSeries(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    feature_id: str
    days: List[date]
    spe: np.ndarray
    threshold: Optional[float] = None
    flags: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def consistent(self) -> "ResidualSeries":
        if len(self.days) != self.spe.shape[0]:
            raise ValueError("one SPE value per day")
        if np.any(self.spe < 0):
            raise ValueError("SPE is non-negative")
        return self


class UnsupervisedPrediction(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    days: List[date]
    predictions: np.ndarray
    scores: np.ndarray
    predictable: np.ndarray
    eta: int
    delta: int
    zeta: int
