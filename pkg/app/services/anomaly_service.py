import logging
import math
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.core.errors import DataError, DegenerateError
from app.schemas.anomaly import (
    MeasurementMatrix,
    ResidualSeries,
    SubspaceModel,
    ThresholdKind,
    ThresholdSpec,
    UnsupervisedPrediction,
)

logger = logging.getLogger(__name__)


def _fmt(values) -> str:
    return ",".join(f"{float(v):.17g}" for v in np.ravel(values))


def _parse(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v], dtype=float)


def required_flags(zeta: int) -> int:
    """Smallest integer count satisfying N >= max(1, zeta/7)."""
    return math.ceil(max(1.0, zeta / 7.0))


class AnomalyService:
    def assemble_matrix(self, frame: pd.DataFrame, feature_id: str,
                        days: Optional[Sequence[date]] = None) -> MeasurementMatrix:
        """frame: day x forum values of one feature."""
        if days is not None:
            missing = [d for d in days if d not in frame.index]
            if missing:
                raise DataError(detail=f"Feature {feature_id} does not cover {missing[0]} ({len(missing)} days missing)")
            frame = frame.loc[list(days)]
        values = frame.to_numpy(dtype=float)
        return MeasurementMatrix(
            feature_id=feature_id,
            days=list(frame.index),
            forums=[str(c) for c in frame.columns],
            values=values,
            column_means=values.mean(axis=0) if values.size else np.zeros(values.shape[1]),
        )

    def fit_subspace(self, Y: np.ndarray, n_components: int = 8, n_normal: int = 3,
                     feature_id: str = "") -> SubspaceModel:
        """
        Principal axes of the column-centred training matrix.

        The largest-magnitude entry of each axis is made positive so the fit is
        reproducible. n_components axes are kept in the model file and cap the
        normal axes; the first n_normal of them span the normal subspace, so the
        SPE depends on n_components only through that cap.
        """
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] < 2:
            raise DegenerateError(detail=f"Feature {feature_id}: need at least two training rows, got {Y.shape}")
        means = Y.mean(axis=0)
        centered = Y - means
        _, singular_values, vt = np.linalg.svd(centered, full_matrices=False)

        k = min(n_components, vt.shape[0])
        if k < n_components:
            logger.warning(f"Feature {feature_id}: {n_components} components requested, only {k} available")
        r = n_normal
        if r > k:
            logger.warning(f"Feature {feature_id}: {r} normal axes exceed {k} components, using {k}")
            r = k
        rank = int(np.linalg.matrix_rank(centered)) if centered.any() else 0
        if r >= rank:
            logger.warning(f"Feature {feature_id}: r={r} >= rank {rank}, residual subspace carries no training variance")

        axes = vt[:k].copy()
        for i, axis in enumerate(axes):
            if axis[np.argmax(np.abs(axis))] < 0:
                axes[i] = -axis

        return SubspaceModel(
            feature_id=feature_id,
            axes=axes,
            singular_values=singular_values,
            n_train_rows=Y.shape[0],
            r=r,
            column_means=means,
        )

    def spe_series(self, model: SubspaceModel, rows: np.ndarray, days: Sequence[date]) -> ResidualSeries:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != model.n_columns:
            raise DataError(detail=f"Rows have {rows.shape[1]} columns, model expects {model.n_columns}")
        residual = (rows - model.column_means) @ model.residual_projector
        spe = np.einsum("ij,ij->i", residual, residual)
        return ResidualSeries(feature_id=model.feature_id, days=list(days), spe=spe)

    def q_statistic_threshold(self, model: SubspaceModel, alpha: float) -> float:
        """SPE control limit at confidence 1 - alpha from the residual eigenvalues."""
        eigenvalues = model.explained_variance()[model.r:]
        phi = [float(np.sum(eigenvalues ** i)) for i in (1, 2, 3)]
        if phi[0] <= 0 or phi[1] <= 0:
            return 0.0
        h0 = 1.0 - 2.0 * phi[0] * phi[2] / (3.0 * phi[1] ** 2)
        c_alpha = stats.norm.ppf(1.0 - alpha / 2.0)
        base = c_alpha * np.sqrt(2.0 * phi[1] * h0 ** 2) / phi[0] + 1.0 + phi[1] * h0 * (h0 - 1.0) / phi[0] ** 2
        return float(phi[0] * base ** (1.0 / h0))

    def resolve_threshold(self, spec: ThresholdSpec, train_spe: Optional[np.ndarray] = None,
                          model: Optional[SubspaceModel] = None) -> float:
        if spec.kind == ThresholdKind.ABSOLUTE:
            return float(spec.value)
        if spec.kind == ThresholdKind.QUANTILE:
            if train_spe is None or len(train_spe) == 0:
                raise DataError(detail="Quantile threshold needs training SPE values")
            return float(np.quantile(train_spe, spec.value))
        if model is None:
            raise DataError(detail="Q-statistic threshold needs the fitted model")
        return self.q_statistic_threshold(model, spec.value)

    def flag_anomalies(self, series: ResidualSeries, threshold: float) -> ResidualSeries:
        return series.model_copy(update={"threshold": threshold, "flags": series.spe > threshold})

    def window_scores(self, spe: np.ndarray, eta: int, delta: int, zeta: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """
        Score of day t: the m-th largest SPE over days [t-eta-delta, t-delta],
        m = ceil(max(1, zeta/7)). Thresholding the score reproduces the
        flag-count rule. Days without a full window score -inf.
        """
        spe = np.asarray(spe, dtype=float)
        m = required_flags(zeta)
        scores = np.full(spe.shape[0], -np.inf)
        predictable = np.zeros(spe.shape[0], dtype=bool)
        for t in range(eta + delta, spe.shape[0]):
            window = spe[t - eta - delta: t - delta + 1]
            predictable[t] = True
            if m <= window.size:
                scores[t] = np.sort(window)[-m]
        return scores, predictable

    def predict_attacks_unsupervised(self, flags: np.ndarray, days: Sequence[date], eta: int, delta: int,
                                     zeta: int = 1) -> UnsupervisedPrediction:
        flags = np.asarray(flags, dtype=bool)
        counts = np.zeros(flags.shape[0], dtype=float)
        predictable = np.zeros(flags.shape[0], dtype=bool)
        for t in range(eta + delta, flags.shape[0]):
            counts[t] = flags[t - eta - delta: t - delta + 1].sum()
            predictable[t] = True
        predictions = (predictable & (counts >= required_flags(zeta))).astype(int)
        return UnsupervisedPrediction(
            days=list(days),
            predictions=predictions,
            scores=counts,
            predictable=predictable,
            eta=eta,
            delta=delta,
            zeta=zeta,
        )

    def write_model(self, model: SubspaceModel, forums: Sequence[str], path) -> Path:
        path = Path(path)
        lines = [
            f"feature_id={model.feature_id}",
            f"forums={','.join(forums)}",
            f"r={model.r}",
            f"n_train_rows={model.n_train_rows}",
            f"column_means={_fmt(model.column_means)}",
            f"singular_values={_fmt(model.singular_values)}",
        ]
        lines.extend(f"axis_{i}={_fmt(axis)}" for i, axis in enumerate(model.axes))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def read_model(self, path) -> Tuple[SubspaceModel, List[str]]:
        entries: Dict[str, str] = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            if "=" in raw:
                key, value = raw.split("=", 1)
                entries[key] = value
        axes = [_parse(entries[k]) for k in sorted((k for k in entries if k.startswith("axis_")),
                                                    key=lambda k: int(k.split("_")[1]))]
        model = SubspaceModel(
            feature_id=entries["feature_id"],
            axes=np.vstack(axes),
            singular_values=_parse(entries["singular_values"]),
            n_train_rows=int(entries["n_train_rows"]),
            r=int(entries["r"]),
            column_means=_parse(entries["column_means"]),
        )
        return model, [f for f in entries["forums"].split(",") if f]


# Create a singleton instance
anomaly_service = AnomalyService()
