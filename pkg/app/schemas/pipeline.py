from datetime import date
from enum import Enum
from typing import Iterator, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from app.schemas.anomaly import ThresholdSpec
from app.schemas.corpus import EventType
from app.schemas.features import ConductanceBoundary, ExpertRepliesMode, FeatureId, StationaryMode
from app.schemas.graph import ConstructionParams, CreateMode
from app.schemas.supervised import Oversampling, TrainConfig


class FilterStage(str, Enum):
    AFTER_TRIM = "after_trim"
    BEFORE_TRIM = "before_trim"


class SupervisedKind(str, Enum):
    RIDGE = "ridge"
    GROUP_LASSO = "group-lasso"
    BOTH = "both"


class FitMethod(str, Enum):
    LEAST_SQUARES = "lsq"
    MLE = "mle"


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class PipelineConfig(BaseModel):
    # Paths
    posts_path: Optional[str] = None
    attacks_path: Optional[str] = None
    cpe_path: Optional[str] = None
    output_dir: str = "out"

    # Ingestion
    forum_min_posts: int = Field(5000, ge=0)
    forum_filter_stage: FilterStage = FilterStage.AFTER_TRIM
    study_start: Optional[date] = None
    study_end: Optional[date] = None
    extract_cves: bool = False

    # Reply network construction
    thresh_spat: int = Field(10, ge=1)
    thresh_temp_minutes: float = Field(15.0, gt=0)
    create_mode: CreateMode = CreateMode.VERBATIM
    allow_self_replies: bool = False
    tau_months: int = Field(1, ge=1)
    history_months: int = Field(3, ge=1)

    # Calibration
    calibrate_spat: List[int] = Field(default_factory=lambda: [5, 10, 15, 20])
    calibrate_temp_minutes: List[float] = Field(default_factory=lambda: [5.0, 10.0, 15.0, 30.0, 60.0])
    power_law_exponent: float = Field(1.35, gt=1.0)
    fit_method: FitMethod = FitMethod.LEAST_SQUARES

    # Experts and features
    top_k_cpe: int = Field(5, ge=1)
    indeg_threshold: int = Field(10, ge=0)
    features: List[FeatureId] = Field(default_factory=lambda: list(FeatureId))
    stationary_mode: StationaryMode = StationaryMode.UNDIRECTED_DEGREE
    conductance_boundary: ConductanceBoundary = ConductanceBoundary.MERGED
    expert_replies_mode: ExpertRepliesMode = ExpertRepliesMode.MEAN
    ttest_alpha: float = Field(0.01, gt=0, lt=1)

    # Prediction window
    eta: int = Field(7, ge=1)
    delta: int = Field(8, ge=0)
    zeta: int = Field(1, ge=1)

    # Unsupervised
    anomaly_components: int = Field(8, ge=1)
    anomaly_normal_axes: int = Field(3, ge=0)
    anomaly_threshold: ThresholdSpec = Field(default_factory=ThresholdSpec)

    # Supervised
    supervised_model: SupervisedKind = SupervisedKind.BOTH
    ridge_lambda: float = Field(1.0, ge=0)
    gl_m: float = Field(0.3, ge=0)
    gl_l: float = Field(0.3, ge=0)
    gl_g: float = Field(0.1, ge=0)
    oversampling: Oversampling = Oversampling.NONE
    smote_k: int = Field(5, ge=1)
    smote_ratio: float = Field(1.0, gt=0, le=1.0)
    decision_threshold: float = Field(0.5, gt=0, lt=1)
    supervised_standardize: bool = True
    max_iter: int = Field(5000, ge=1)
    tolerance: float = Field(1e-10, gt=0)

    # Evaluation
    event_type: Optional[EventType] = None
    train_ratio: float = Field(0.7, gt=0, lt=1)
    high_activity_min: int = Field(5, ge=0)
    lag_sweep: List[str] = Field(default_factory=list, description="eta:delta pairs")

    # Runtime
    seed: int = 0
    threads: int = Field(1, ge=1)

    @field_validator("calibrate_spat", "calibrate_temp_minutes", "features", "lag_sweep", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)

    @field_validator("anomaly_threshold", mode="before")
    @classmethod
    def parse_threshold(cls, value):
        if isinstance(value, str):
            return ThresholdSpec.parse(value)
        return value

    @field_validator("event_type", mode="before")
    @classmethod
    def all_event_types(cls, value):
        if value in ("", "all"):
            return None
        return value

    @property
    def construction(self) -> ConstructionParams:
        return ConstructionParams(
            thresh_spat=self.thresh_spat,
            thresh_temp_minutes=self.thresh_temp_minutes,
            mode=self.create_mode,
            allow_self_replies=self.allow_self_replies,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            eta=self.eta,
            delta=self.delta,
            max_iter=self.max_iter,
            tolerance=self.tolerance,
            oversampling=self.oversampling,
            smote_k=self.smote_k,
            smote_ratio=self.smote_ratio,
            standardize=self.supervised_standardize,
            seed=self.seed,
        )

    def event_types(self) -> List[EventType]:
        return [self.event_type] if self.event_type else list(EventType)

    def lag_pairs(self) -> List[Tuple[int, int]]:
        pairs = []
        for item in self.lag_sweep:
            eta, delta = item.split(":")
            pairs.append((int(eta), int(delta)))
        return pairs

    def flat_items(self) -> Iterator[Tuple[str, str]]:
        for key in type(self).model_fields:
            value = getattr(self, key)
            if value is None:
                text = ""
            elif isinstance(value, list):
                text = ",".join(item.value if isinstance(item, Enum) else str(item) for item in value)
            elif isinstance(value, Enum):
                text = value.value
            else:
                text = str(value)
            yield key, text
