from datetime import date
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class Oversampling(str, Enum):
    NONE = "none"
    SMOTE = "smote"


class Regularization(str, Enum):
    RIDGE = "ridge"
    GROUP_LASSO = "group-lasso"


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: int = Field(7, ge=1)
    delta: int = Field(8, ge=0)
    initial_step: float = Field(1.0, gt=0)
    backtrack: float = Field(0.5, gt=0, lt=1)
    max_iter: int = Field(20000, ge=1)
    tolerance: float = Field(1e-12, gt=0)
    oversampling: Oversampling = Oversampling.NONE
    smote_k: int = Field(5, ge=1)
    smote_ratio: float = Field(1.0, gt=0, le=1.0)
    standardize: bool = False
    seed: int = 0


class LagDesign(BaseModel):
    """Design matrix of lagged features; columns feature-major, lags descending."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    X: np.ndarray
    y: np.ndarray
    days: List[date]
    columns: List[Tuple[str, int]]
    excluded_days: List[date] = Field(default_factory=list)
    eta: int
    delta: int

    def lag_groups(self) -> List[np.ndarray]:
        """One index set per lag, covering every feature at that lag."""
        lags = sorted({lag for _, lag in self.columns}, reverse=True)
        return [np.array([i for i, (_, l) in enumerate(self.columns) if l == lag]) for lag in lags]


class LogitModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    intercept: float
    weights: np.ndarray
    columns: List[Tuple[str, int]]
    groups: List[List[int]] = Field(default_factory=list)
    regularization: Regularization = Regularization.RIDGE
    penalties: Dict[str, float] = Field(default_factory=dict)
    feature_ids: List[str]
    eta: int
    delta: int
    event_type: Optional[str] = None
    decision_threshold: float = 0.5
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    objective: Optional[float] = None
    iterations: int = 0

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.center is None or self.scale is None:
            return X
        return (X - self.center) / self.scale


class Prediction(BaseModel):
    probability: float
    label: int
