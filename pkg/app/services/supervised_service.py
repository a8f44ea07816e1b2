import logging
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from imblearn.over_sampling import SMOTE
from scipy.special import expit

from app.core.errors import DataError, DegenerateError
from app.schemas.supervised import LagDesign, LogitModel, Prediction, Regularization, TrainConfig

logger = logging.getLogger(__name__)

MIN_STEP = 1e-20
GRADIENT_TOLERANCE = 1e-10


def _split(theta: np.ndarray) -> Tuple[float, np.ndarray]:
    return theta[0], theta[1:]


def logistic_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    b, w = _split(theta)
    z = b + X @ w
    return float(np.sum(np.logaddexp(0.0, z) - y * z))


def logistic_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    b, w = _split(theta)
    residual = expit(b + X @ w) - y
    return np.concatenate([[residual.sum()], X.T @ residual])


def ridge_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    _, w = _split(theta)
    return logistic_loss(theta, X, y) + lam * float(w @ w)


def ridge_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    gradient = logistic_gradient(theta, X, y)
    gradient[1:] += 2.0 * lam * theta[1:]
    return gradient


def group_penalty(w: np.ndarray, groups: Sequence[np.ndarray]) -> float:
    return float(sum(np.linalg.norm(w[g]) for g in groups))


def group_lasso_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, m: float, l: float, g: float,
                          groups: Sequence[np.ndarray]) -> float:
    _, w = _split(theta)
    return (logistic_loss(theta, X, y) + 0.5 * m * float(w @ w) + l * float(np.abs(w).sum())
            + g * group_penalty(w, groups))


def group_lasso_smooth_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, m: float) -> np.ndarray:
    gradient = logistic_gradient(theta, X, y)
    gradient[1:] += m * theta[1:]
    return gradient


def group_lasso_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, m: float, l: float, g: float,
                         groups: Sequence[np.ndarray]) -> np.ndarray:
    """Gradient where the objective is differentiable (no zero weight, no zero group)."""
    gradient = group_lasso_smooth_gradient(theta, X, y, m)
    w = theta[1:]
    gradient[1:] += l * np.sign(w)
    for group in groups:
        norm = np.linalg.norm(w[group])
        if norm > 0:
            gradient[1:][group] += g * w[group] / norm
    return gradient


def l1_prox(w: np.ndarray, reg: float) -> np.ndarray:
    return np.sign(w) * np.maximum(0.0, np.abs(w) - reg)


def l2_prox(w: np.ndarray, reg: float) -> np.ndarray:
    """Proximal map of reg * ||w||_2."""
    norm = np.linalg.norm(w)
    if norm == 0:
        return 0 * w
    return max(0.0, 1.0 - reg / norm) * w


def group_l2_prox(w: np.ndarray, reg: float, groups: Sequence[np.ndarray]) -> np.ndarray:
    w = w.copy()
    for group in groups:
        w[group] = l2_prox(w[group], reg)
    return w


def sparse_group_prox(w: np.ndarray, l1_reg: float, group_reg: float, groups: Sequence[np.ndarray]) -> np.ndarray:
    return group_l2_prox(l1_prox(w, l1_reg), group_reg, groups)


def _bb_step(s: np.ndarray, r: np.ndarray, fallback: float) -> float:
    curvature = float(s @ r)
    if curvature <= 0:
        return fallback
    return float(np.clip(float(s @ s) / curvature, 1e-10, 1e10))


def _require_two_classes(y: np.ndarray) -> None:
    if y.size == 0 or y.min() == y.max():
        raise DegenerateError(detail="degenerate training set: labels hold a single class")


class SupervisedService:
    def forum_average(self, frames: Dict[str, pd.DataFrame]) -> pd.DataFrame:
        """Day x feature table of per-day means across forums. Flagged zeros stay in the mean."""
        return pd.DataFrame({name: frame.mean(axis=1) for name, frame in frames.items()})

    def build_lag_features(self, series: pd.DataFrame, labels: Optional[pd.Series], eta: int, delta: int,
                           days: Sequence[date]) -> LagDesign:
        """
        One row per target day t: for every feature, x[t-k] for k from delta+eta
        down to delta. Days whose lag window leaves the series are excluded.
        """
        lags = list(range(delta + eta, delta - 1, -1))
        columns = [(str(feature), lag) for feature in series.columns for lag in lags]
        available = set(series.index)
        rows, targets, kept, excluded = [], [], [], []
        for day in days:
            lagged = [day - timedelta(days=lag) for lag in lags]
            if any(d not in available for d in lagged):
                excluded.append(day)
                continue
            block = series.loc[lagged]
            rows.append(block.to_numpy(dtype=float).T.ravel())
            kept.append(day)
            if labels is not None:
                targets.append(int(labels.get(day, 0)))
        if excluded:
            logger.info(f"Lag design (eta={eta}, delta={delta}): {len(excluded)} days lack full history")
        X = np.vstack(rows) if rows else np.zeros((0, len(columns)))
        return LagDesign(X=X, y=np.asarray(targets, dtype=int), days=kept, columns=columns,
                         excluded_days=excluded, eta=eta, delta=delta)

    def _standardizer(self, X: np.ndarray, config: TrainConfig):
        if not config.standardize:
            return None, None
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return center, scale

    def train_ridge_logit(self, X: np.ndarray, y: np.ndarray, lam: float, config: TrainConfig = TrainConfig(),
                          columns: Optional[List[Tuple[str, int]]] = None, theta0: Optional[np.ndarray] = None,
                          trace: Optional[List[float]] = None, **metadata) -> LogitModel:
        """Minimise the ridge-penalised logistic loss by gradient descent with Armijo backtracking."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        _require_two_classes(y)
        center, scale = self._standardizer(X, config)
        Xt = X if center is None else (X - center) / scale

        objective = lambda t: ridge_objective(t, Xt, y, lam)
        gradient = lambda t: ridge_gradient(t, Xt, y, lam)

        theta = np.zeros(X.shape[1] + 1) if theta0 is None else np.asarray(theta0, dtype=float).copy()
        value, grad = objective(theta), gradient(theta)
        step = config.initial_step
        iterations = 0
        if trace is not None:
            trace.append(value)
        for iterations in range(1, config.max_iter + 1):
            if np.linalg.norm(grad) <= GRADIENT_TOLERANCE:
                break
            while True:
                candidate = theta - step * grad
                candidate_value = objective(candidate)
                if candidate_value <= value - 0.5 * step * float(grad @ grad) or step < MIN_STEP:
                    break
                step *= config.backtrack
            if candidate_value > value:
                break
            candidate_grad = gradient(candidate)
            decrease = value - candidate_value
            step = _bb_step(candidate - theta, candidate_grad - grad, config.initial_step)
            theta, value, grad = candidate, candidate_value, candidate_grad
            if trace is not None:
                trace.append(value)
            if decrease <= config.tolerance * max(1.0, abs(value)):
                break

        logger.debug(f"Ridge logit: objective {value:.10g} after {iterations} iterations")
        return LogitModel(
            intercept=float(theta[0]),
            weights=theta[1:].copy(),
            columns=columns or [(f"x{i}", 0) for i in range(X.shape[1])],
            regularization=Regularization.RIDGE,
            penalties={"lambda": lam},
            objective=value,
            iterations=iterations,
            center=center,
            scale=scale,
            eta=metadata.pop("eta", config.eta),
            delta=metadata.pop("delta", config.delta),
            feature_ids=metadata.pop("feature_ids", sorted({c[0] for c in (columns or [])})),
            **metadata,
        )

    def train_group_lasso_logit(self, X: np.ndarray, y: np.ndarray, m: float, l: float, g: float,
                                groups: Sequence[np.ndarray], config: TrainConfig = TrainConfig(),
                                columns: Optional[List[Tuple[str, int]]] = None,
                                trace: Optional[List[float]] = None, **metadata) -> LogitModel:
        """
        Proximal gradient on logistic loss + (m/2)||w||^2 with an L1 step
        followed by per-group shrinkage. The intercept is never penalised.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        _require_two_classes(y)
        groups = [np.asarray(group, dtype=int) for group in groups]
        center, scale = self._standardizer(X, config)
        Xt = X if center is None else (X - center) / scale

        smooth = lambda t: logistic_loss(t, Xt, y) + 0.5 * m * float(t[1:] @ t[1:])
        smooth_gradient = lambda t: group_lasso_smooth_gradient(t, Xt, y, m)
        full = lambda t: group_lasso_objective(t, Xt, y, m, l, g, groups)

        def prox(point: np.ndarray, step: float) -> np.ndarray:
            result = point.copy()
            result[1:] = sparse_group_prox(point[1:], step * l, step * g, groups)
            return result

        theta = np.zeros(X.shape[1] + 1)
        smooth_value, grad = smooth(theta), smooth_gradient(theta)
        value = full(theta)
        step = config.initial_step
        iterations = 0
        if trace is not None:
            trace.append(value)
        for iterations in range(1, config.max_iter + 1):
            while True:
                candidate = prox(theta - step * grad, step)
                difference = candidate - theta
                candidate_smooth = smooth(candidate)
                bound = smooth_value + float(grad @ difference) + float(difference @ difference) / (2.0 * step)
                if candidate_smooth <= bound + 1e-12 * max(1.0, abs(bound)) or step < MIN_STEP:
                    break
                step *= config.backtrack
            candidate_value = full(candidate)
            if candidate_value > value:
                break
            candidate_grad = smooth_gradient(candidate)
            decrease = value - candidate_value
            mapping_norm = np.linalg.norm(difference) / step
            step = _bb_step(difference, candidate_grad - grad, config.initial_step)
            theta, value, smooth_value, grad = candidate, candidate_value, candidate_smooth, candidate_grad
            if trace is not None:
                trace.append(value)
            if mapping_norm <= GRADIENT_TOLERANCE or decrease <= config.tolerance * max(1.0, abs(value)):
                break

        zeroed = sum(1 for group in groups if not np.any(theta[1:][group]))
        logger.debug(f"Group-lasso logit: objective {value:.10g}, {zeroed}/{len(groups)} groups zero, "
                     f"{iterations} iterations")
        return LogitModel(
            intercept=float(theta[0]),
            weights=theta[1:].copy(),
            columns=columns or [(f"x{i}", 0) for i in range(X.shape[1])],
            groups=[group.tolist() for group in groups],
            regularization=Regularization.GROUP_LASSO,
            penalties={"m": m, "l": l, "g": g},
            objective=value,
            iterations=iterations,
            center=center,
            scale=scale,
            eta=metadata.pop("eta", config.eta),
            delta=metadata.pop("delta", config.delta),
            feature_ids=metadata.pop("feature_ids", sorted({c[0] for c in (columns or [])})),
            **metadata,
        )

    def smote_oversample(self, X: np.ndarray, y: np.ndarray, k: int = 5, ratio: float = 1.0,
                         seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """
        Add SMOTE rows until the minority reaches ratio times the majority count.
        Original rows come first, synthetic rows are appended after them.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        classes, counts = np.unique(y, return_counts=True)
        if classes.size < 2:
            raise DegenerateError(detail="degenerate training set: labels hold a single class")
        n_minority, n_majority = int(counts.min()), int(counts.max())
        n_synthetic = int(ratio * n_majority - n_minority)
        if n_synthetic <= 0:
            return X, y
        if n_minority <= k:
            raise DataError(detail=f"SMOTE needs more than k={k} minority rows, got {n_minority}; lower smote_k")

        smote = SMOTE(sampling_strategy=ratio, k_neighbors=k, random_state=seed)
        X_new, y_new = smote.fit_resample(X, y)

        logger.info(f"SMOTE: {len(y_new) - len(y)} synthetic rows added to {n_minority} minority rows (k={k})")
        return np.asarray(X_new, dtype=float), np.asarray(y_new, dtype=int)

    def predict_proba(self, model: LogitModel, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != model.weights.shape[0]:
            raise DataError(detail=f"Feature vector has {X.shape[1]} entries, model expects {model.weights.shape[0]}")
        return expit(model.intercept + model.transform(X) @ model.weights)

    def predict(self, model: LogitModel, x: np.ndarray) -> Prediction:
        probability = float(self.predict_proba(model, np.asarray(x, dtype=float).reshape(1, -1))[0])
        return Prediction(probability=probability, label=int(probability > model.decision_threshold))

    def predict_labels(self, model: LogitModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        probabilities = self.predict_proba(model, X)
        return probabilities, (probabilities > model.decision_threshold).astype(int)

    def write_model(self, model: LogitModel, path) -> Path:
        path = Path(path)
        fmt = lambda v: f"{float(v):.17g}"
        lines = [
            f"event_type={model.event_type or ''}",
            f"eta={model.eta}",
            f"delta={model.delta}",
            f"regularization={model.regularization.value}",
            f"feature_ids={','.join(model.feature_ids)}",
            f"decision_threshold={fmt(model.decision_threshold)}",
            f"intercept={fmt(model.intercept)}",
            f"objective={'' if model.objective is None else fmt(model.objective)}",
            f"iterations={model.iterations}",
        ]
        lines.extend(f"penalty_{key}={fmt(value)}" for key, value in sorted(model.penalties.items()))
        if model.groups:
            lines.append("groups=" + ";".join(",".join(str(i) for i in group) for group in model.groups))
        for index, ((feature, lag), weight) in enumerate(zip(model.columns, model.weights)):
            scaling = ""
            if model.center is not None:
                scaling = f"\t{fmt(model.center[index])}\t{fmt(model.scale[index])}"
            lines.append(f"weight\t{feature}\t{lag}\t{fmt(weight)}{scaling}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def read_model(self, path) -> LogitModel:
        header, columns, weights, center, scale = {}, [], [], [], []
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            if raw.startswith("weight\t"):
                fields = raw.split("\t")
                columns.append((fields[1], int(fields[2])))
                weights.append(float(fields[3]))
                if len(fields) == 6:
                    center.append(float(fields[4]))
                    scale.append(float(fields[5]))
            elif "=" in raw:
                key, value = raw.split("=", 1)
                header[key] = value
        penalties = {k[len("penalty_"):]: float(v) for k, v in header.items() if k.startswith("penalty_")}
        groups = []
        if header.get("groups"):
            groups = [[int(i) for i in g.split(",") if i] for g in header["groups"].split(";")]
        return LogitModel(
            intercept=float(header["intercept"]),
            weights=np.asarray(weights, dtype=float),
            columns=columns,
            groups=groups,
            regularization=Regularization(header["regularization"]),
            penalties=penalties,
            feature_ids=[f for f in header["feature_ids"].split(",") if f],
            eta=int(header["eta"]),
            delta=int(header["delta"]),
            event_type=header.get("event_type") or None,
            decision_threshold=float(header["decision_threshold"]),
            center=np.asarray(center) if center else None,
            scale=np.asarray(scale) if scale else None,
            objective=float(header["objective"]) if header.get("objective") else None,
            iterations=int(header.get("iterations", 0)),
        )


# Create a singleton instance
supervised_service = SupervisedService()
