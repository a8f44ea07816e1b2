import logging
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.config import settings, write_resolved_config
from app.core.errors import ConfigError, DataError, DegenerateError, ForumcastError
from app.schemas.corpus import AttackLabels, Corpus, EventType, SyntheticCorpus, SyntheticScenario
from app.schemas.evaluation import MetricsReport, RocCurve, SplitSpec
from app.schemas.experts import TTestResult
from app.schemas.features import Coverage, FeatureId
from app.schemas.graph import ConstructionParams, WindowSchedule
from app.schemas.pipeline import PipelineConfig, SupervisedKind
from app.schemas.supervised import LagDesign, LogitModel, Oversampling, Regularization
from app.services.anomaly_service import anomaly_service
from app.services.corpus_service import corpus_service
from app.services.corpus_store import CorpusStore, open_store
from app.services.evaluation_service import evaluation_service
from app.services.expert_service import expert_service
from app.services.feature_service import feature_service
from app.services.reply_graph_service import reply_graph_service
from app.services.supervised_service import supervised_service
from app.services.synthetic_service import synthetic_service

logger = logging.getLogger(__name__)

MODELS_DIR = "models"
SUMMARY_FILE = "corpus_summary.csv"
EXPERTS_FILE = "experts.tsv"
SPE_FILE = "spe.csv"
ANOMALY_FLAGS_FILE = "anomaly_flags.csv"
UNSUPERVISED_FILE = "unsupervised_predictions.csv"
DETECT_METRICS_FILE = "detect_metrics.csv"
DETECT_ROC_FILE = "detect_roc.csv"
TRAIN_PROBABILITIES_FILE = "train_probabilities.csv"
PREDICTIONS_FILE = "predictions.csv"
EVALUATION_FILE = "evaluation.csv"
EVALUATION_ROC_FILE = "evaluation_roc.csv"
LAG_SWEEP_FILE = "lag_sweep.csv"
CALIBRATION_FILE = "calibration.csv"
CALIBRATED_FILE = "calibrated.env"
TTEST_FILE = "ttest.csv"
TTEST_SUMMARY_FILE = "ttest_summary.csv"

LOGIT_PATTERNS = ("ridge.*.model", "group-lasso.*.model")


def model_name(regularization: Regularization, event_type: EventType, features: Sequence[str]) -> str:
    if regularization == Regularization.RIDGE:
        return f"ridge.{event_type.value}.{features[0]}"
    return f"group-lasso.{event_type.value}"


class PipelineService:
    """Runs the stages behind the command-line tools; every stage reads and writes under output_dir."""

    def output_dir(self, config: PipelineConfig) -> Path:
        path = Path(config.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def store(self, config: PipelineConfig) -> CorpusStore:
        return open_store(settings.database_url(str(self.output_dir(config))))

    def _require_path(self, value: Optional[str], key: str) -> Path:
        if not value:
            raise ConfigError(detail=f"{key} is not set")
        path = Path(value)
        if not path.is_file():
            raise ConfigError(detail=f"{key} {value} does not exist")
        return path

    def schedule(self, config: PipelineConfig, corpus: Corpus) -> WindowSchedule:
        start, end = corpus.span()
        if config.study_start and config.study_start > start:
            start = config.study_start
        if config.study_end and config.study_end < end:
            end = config.study_end
        return reply_graph_service.build_window_schedule(start, end, config.tau_months, config.history_months)

    def _features(self, config: PipelineConfig, values: pd.DataFrame) -> List[FeatureId]:
        available = feature_service.available_features(values)
        missing = [f.value for f in config.features if f not in available]
        if missing:
            logger.warning(f"Features not in the feature table, skipped: {', '.join(missing)}")
        selected = [f for f in config.features if f in available]
        if not selected:
            raise DataError(detail="None of the configured features is in the feature table")
        return selected

    def _feature_inputs(self, config: PipelineConfig) -> Tuple[pd.DataFrame, AttackLabels, SplitSpec]:
        _, labels, _ = self.store(config).read()
        values, _ = feature_service.read_tables(self.output_dir(config))
        days = list(values.index)
        labels = corpus_service.align_labels(labels, days[0], days[-1])
        split = evaluation_service.chrono_split(days[0], days[-1], config.train_ratio)
        logger.info(f"Chronological split: train {split.train} ({split.train_months} months), "
                    f"test {split.test} ({split.test_months} months)")
        return values, labels, split

    def ingest(self, config: PipelineConfig) -> Dict[str, object]:
        posts_path = self._require_path(config.posts_path, "posts_path")
        attacks_path = self._require_path(config.attacks_path, "attacks_path")
        cpe_path = self._require_path(config.cpe_path, "cpe_path")

        loaded = corpus_service.load_posts(posts_path, extract_cves=config.extract_cves)
        if loaded.corpus.post_count() == 0:
            raise DataError(detail=f"No valid posts in {posts_path}")
        corpus = corpus_service.filter_forums(
            loaded.corpus, config.forum_min_posts, config.forum_filter_stage, config.study_start, config.study_end
        )
        if not corpus.forum_ids():
            raise DataError(detail=f"No forum keeps more than {config.forum_min_posts} posts")
        start, end = corpus.span()
        labels = corpus_service.align_labels(corpus_service.load_attacks(attacks_path, span=(start, end)), start, end)
        cpe_table = corpus_service.load_cpe_map(cpe_path)

        self.store(config).write(corpus, labels, cpe_table)
        summary = corpus_service.summarize(corpus, cpe_table, labels)
        summary["rejected_posts"] = len(loaded.diagnostics)
        summary["rejected_cpe_rows"] = len(cpe_table.diagnostics)

        output_dir = self.output_dir(config)
        pd.Series(summary, name="value").to_csv(output_dir / SUMMARY_FILE, index_label="key")
        write_resolved_config(config, output_dir)
        return summary

    def features(self, config: PipelineConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
        corpus, _, cpe_table = self.store(config).read()
        schedule = self.schedule(config, corpus)
        series, expert_sets = feature_service.compute_all(corpus, schedule, cpe_table, config)
        values, flags = feature_service.to_frames(series)

        output_dir = self.output_dir(config)
        feature_service.write_tables(values, flags, output_dir)
        expert_service.write_experts(
            sorted(expert_sets, key=lambda e: (e.window.start, e.forum_id)), output_dir / EXPERTS_FILE
        )
        write_resolved_config(config, output_dir)
        flagged = int((flags != Coverage.COMPUTED.value).to_numpy().sum())
        logger.info(f"Wrote {values.shape[1]} feature series over {values.shape[0]} days, {flagged} flagged values")
        return values, flags

    def detect(self, config: PipelineConfig) -> List[MetricsReport]:
        """
        Fit one subspace model per feature on the training days, flag SPE above
        the threshold and turn flag counts over each lag window into predictions.
        A feature that fails is reported and skipped.
        """
        values, labels, split = self._feature_inputs(config)
        days = list(values.index)
        train_days = [d for d in days if split.train.contains(d)]
        test_mask = np.array([split.test.contains(d) for d in days])
        output_dir = self.output_dir(config)
        models_dir = output_dir / MODELS_DIR
        models_dir.mkdir(parents=True, exist_ok=True)

        reports: List[MetricsReport] = []
        curves: Dict[str, RocCurve] = {}
        spe_columns: Dict[str, np.ndarray] = {}
        flag_columns: Dict[str, np.ndarray] = {}
        prediction_frames: List[pd.DataFrame] = []

        for feature in self._features(config, values):
            try:
                matrix = anomaly_service.assemble_matrix(feature_service.feature_frame(values, feature), feature.value)
                train_rows = matrix.rows_for(train_days)
                model = anomaly_service.fit_subspace(
                    train_rows, config.anomaly_components, config.anomaly_normal_axes, feature.value
                )
                train_spe = anomaly_service.spe_series(model, train_rows, train_days).spe
                threshold = anomaly_service.resolve_threshold(config.anomaly_threshold, train_spe, model)
                series = anomaly_service.flag_anomalies(anomaly_service.spe_series(model, matrix.values, days), threshold)
                prediction = anomaly_service.predict_attacks_unsupervised(
                    series.flags, days, config.eta, config.delta, config.zeta
                )
                scores, _ = anomaly_service.window_scores(series.spe, config.eta, config.delta, config.zeta)
            except ForumcastError as e:
                logger.error(f"Feature {feature.value}: detection failed: {e.detail}")
                reports.append(MetricsReport(config={"feature": feature.value, "event_type": "", "error": e.detail}))
                continue

            anomaly_service.write_model(model, matrix.forums, models_dir / f"anomaly.{feature.value}.model")
            logger.info(f"Feature {feature.value}: threshold {threshold:.6g}, "
                        f"{int(series.flags.sum())} flagged days, {int(prediction.predictions.sum())} predicted attacks")
            spe_columns[feature.value] = series.spe
            flag_columns[feature.value] = series.flags.astype(int)
            prediction_frames.append(pd.DataFrame({
                "day": days,
                "feature": feature.value,
                "score": np.where(np.isfinite(scores), scores, np.nan),
                "flag_count": prediction.scores.astype(int),
                "prediction": prediction.predictions,
                "predictable": prediction.predictable.astype(int),
            }))

            evaluated = test_mask & prediction.predictable
            n_unpredictable = int((test_mask & ~prediction.predictable).sum())
            for event_type in config.event_types():
                y = labels.label_series(event_type).to_numpy()
                auc = None
                try:
                    curve = evaluation_service.roc_auc(scores[evaluated], y[evaluated])
                    curves[f"{feature.value}/{event_type.value}"] = curve
                    auc = curve.auc
                except DegenerateError as e:
                    logger.warning(f"Feature {feature.value}, {event_type.value}: no ROC ({e.detail})")
                reports.append(evaluation_service.prf1(
                    prediction.predictions[evaluated], y[evaluated], n_unpredictable, auc,
                    config={"feature": feature.value, "event_type": event_type.value,
                            "threshold": str(config.anomaly_threshold)},
                ))

        if not spe_columns:
            raise DegenerateError(detail="Detection failed for every feature")

        index = pd.Index(days, name="day")
        pd.DataFrame(spe_columns, index=index).to_csv(output_dir / SPE_FILE)
        pd.DataFrame(flag_columns, index=index).to_csv(output_dir / ANOMALY_FLAGS_FILE)
        pd.concat(prediction_frames, ignore_index=True).to_csv(output_dir / UNSUPERVISED_FILE, index=False)
        evaluation_service.write_reports(reports, output_dir / DETECT_METRICS_FILE)
        evaluation_service.write_roc(curves, output_dir / DETECT_ROC_FILE)
        write_resolved_config(config, output_dir)
        return reports

    def _average_table(self, values: pd.DataFrame, features: Sequence[FeatureId]) -> pd.DataFrame:
        return supervised_service.forum_average({f.value: feature_service.feature_frame(values, f) for f in features})

    def _fit(self, design: LagDesign, regularization: Regularization, config: PipelineConfig,
             event_type: EventType) -> LogitModel:
        X, y = design.X, design.y
        if config.oversampling == Oversampling.SMOTE:
            X, y = supervised_service.smote_oversample(X, y, config.smote_k, config.smote_ratio, config.seed)
        train_config = config.train_config().model_copy(update={"eta": design.eta, "delta": design.delta})
        metadata = dict(
            event_type=event_type.value,
            decision_threshold=config.decision_threshold,
            feature_ids=list(dict.fromkeys(feature for feature, _ in design.columns)),
        )
        if regularization == Regularization.RIDGE:
            return supervised_service.train_ridge_logit(
                X, y, config.ridge_lambda, train_config, columns=design.columns, **metadata
            )
        return supervised_service.train_group_lasso_logit(
            X, y, config.gl_m, config.gl_l, config.gl_g, design.lag_groups(), train_config,
            columns=design.columns, **metadata
        )

    def _jobs(self, config: PipelineConfig, features: Sequence[FeatureId]) -> List[Tuple[Regularization, List[str]]]:
        jobs: List[Tuple[Regularization, List[str]]] = []
        if config.supervised_model in (SupervisedKind.RIDGE, SupervisedKind.BOTH):
            jobs.extend((Regularization.RIDGE, [f.value]) for f in features)
        if config.supervised_model in (SupervisedKind.GROUP_LASSO, SupervisedKind.BOTH):
            jobs.append((Regularization.GROUP_LASSO, [f.value for f in features]))
        return jobs

    def train(self, config: PipelineConfig) -> List[LogitModel]:
        """One ridge model per feature and one group-lasso model over all features, per event type."""
        values, labels, split = self._feature_inputs(config)
        features = self._features(config, values)
        table = self._average_table(values, features)
        train_days = [d for d in table.index if split.train.contains(d)]
        output_dir = self.output_dir(config)
        models_dir = output_dir / MODELS_DIR
        models_dir.mkdir(parents=True, exist_ok=True)
        for pattern in LOGIT_PATTERNS:
            for stale in models_dir.glob(pattern):
                stale.unlink()

        models: List[LogitModel] = []
        failures: List[str] = []
        rows: List[Dict[str, object]] = []
        for event_type in config.event_types():
            y = labels.label_series(event_type)
            for regularization, columns in self._jobs(config, features):
                name = model_name(regularization, event_type, columns)
                design = supervised_service.build_lag_features(table[columns], y, config.eta, config.delta, train_days)
                try:
                    model = self._fit(design, regularization, config, event_type)
                except ForumcastError as e:
                    logger.error(f"Model {name} ({event_type.value}) not trained: {e.detail}")
                    failures.append(name)
                    continue
                supervised_service.write_model(model, models_dir / f"{name}.model")
                probabilities = supervised_service.predict_proba(model, design.X)
                rows.extend(
                    {"day": day, "event_type": event_type.value, "model": name, "probability": p}
                    for day, p in zip(design.days, probabilities)
                )
                models.append(model)
                logger.info(f"Model {name}: {design.X.shape[0]} training days, {int(design.y.sum())} positive, "
                            f"objective {model.objective:.6g}")

        if not models:
            raise DegenerateError(detail=f"No model could be trained: {', '.join(failures)}")
        pd.DataFrame(rows, columns=["day", "event_type", "model", "probability"]).to_csv(
            output_dir / TRAIN_PROBABILITIES_FILE, index=False
        )
        write_resolved_config(config, output_dir)
        return models

    def predict(self, config: PipelineConfig) -> pd.DataFrame:
        output_dir = self.output_dir(config)
        values, _ = feature_service.read_tables(output_dir)
        models_dir = output_dir / MODELS_DIR
        paths = [path for pattern in LOGIT_PATTERNS for path in sorted(models_dir.glob(pattern))]
        if not paths:
            raise DataError(detail=f"No trained models in {models_dir}; run train first")
        table = self._average_table(values, feature_service.available_features(values))
        days = list(table.index)

        frames: List[pd.DataFrame] = []
        for path in paths:
            model = supervised_service.read_model(path)
            missing = [f for f in model.feature_ids if f not in table.columns]
            if missing:
                raise DataError(detail=f"Model {path.name} needs features missing from the table: {', '.join(missing)}")
            design = supervised_service.build_lag_features(table[model.feature_ids], None, model.eta, model.delta, days)
            if design.columns != model.columns:
                raise DataError(detail=f"Model {path.name} columns do not match the lag design")
            probabilities, predicted = supervised_service.predict_labels(model, design.X)
            frames.append(pd.DataFrame({
                "day": design.days,
                "event_type": model.event_type or "",
                "model": path.stem,
                "probability": probabilities,
                "label": predicted,
            }))
        predictions = pd.concat(frames, ignore_index=True)
        predictions.to_csv(output_dir / PREDICTIONS_FILE, index=False)
        write_resolved_config(config, output_dir)
        logger.info(f"Wrote {len(predictions)} predictions from {len(paths)} models")
        return predictions

    def _score_subset(self, name: str, event_type: EventType, subset: str, scores: np.ndarray,
                      predictions: np.ndarray, y: np.ndarray, n_unpredictable: int,
                      curves: Dict[str, RocCurve]) -> MetricsReport:
        auc = None
        try:
            curve = evaluation_service.roc_auc(scores, y)
            curves[f"{name}/{event_type.value}/{subset}"] = curve
            auc = curve.auc
        except DegenerateError as e:
            logger.warning(f"{name} ({event_type.value}, {subset}): no ROC ({e.detail})")
        return evaluation_service.prf1(
            predictions, y, n_unpredictable, auc,
            config={"model": name, "event_type": event_type.value, "days": subset},
        )

    def evaluate(self, config: PipelineConfig) -> List[MetricsReport]:
        """Score stored predictions on the test days, overall and on high-activity weeks."""
        values, labels, split = self._feature_inputs(config)
        output_dir = self.output_dir(config)
        test_days = [d for d in values.index if split.test.contains(d)]

        sources: List[pd.DataFrame] = []
        supervised_path = output_dir / PREDICTIONS_FILE
        if supervised_path.exists():
            frame = pd.read_csv(supervised_path)
            sources.append(frame.rename(columns={"probability": "score", "label": "prediction"}))
        unsupervised_path = output_dir / UNSUPERVISED_FILE
        if unsupervised_path.exists():
            frame = pd.read_csv(unsupervised_path)
            frame = frame[frame["predictable"] == 1].assign(model="pca-spe." + frame["feature"], event_type="")
            sources.append(frame[["day", "event_type", "model", "score", "prediction"]])
        if not sources:
            raise DataError(detail=f"No predictions in {output_dir}; run predict or detect first")
        predictions = pd.concat(sources, ignore_index=True)
        predictions["day"] = [date.fromisoformat(d) for d in predictions["day"]]
        predictions["event_type"] = predictions["event_type"].fillna("")

        reports: List[MetricsReport] = []
        curves: Dict[str, RocCurve] = {}
        for event_type in config.event_types():
            y_series = labels.label_series(event_type)
            high = set(evaluation_service.high_activity_filter(
                labels.count_series(event_type), config.high_activity_min
            ).selected_days())
            relevant = predictions[predictions["event_type"].isin(["", event_type.value])]
            for name, rows in relevant.groupby("model", sort=True):
                rows = rows.set_index("day")
                high_days = [d for d in test_days if d in high]
                for subset, subset_days in (("test", test_days), ("high-activity", high_days)):
                    if not subset_days:
                        continue
                    scored = [d for d in subset_days if d in rows.index]
                    reports.append(self._score_subset(
                        name, event_type, subset,
                        rows.loc[scored, "score"].to_numpy(dtype=float),
                        rows.loc[scored, "prediction"].to_numpy(dtype=int),
                        y_series.loc[scored].to_numpy(dtype=int),
                        len(subset_days) - len(scored),
                        curves,
                    ))

        evaluation_service.write_reports(reports, output_dir / EVALUATION_FILE)
        evaluation_service.write_roc(curves, output_dir / EVALUATION_ROC_FILE)
        if config.lag_sweep:
            sweep = self.lag_sweep(config, values, labels, split)
            evaluation_service.write_reports(sweep, output_dir / LAG_SWEEP_FILE)
        write_resolved_config(config, output_dir)
        return reports

    def lag_sweep(self, config: PipelineConfig, values: pd.DataFrame, labels: AttackLabels,
                  split: SplitSpec) -> List[MetricsReport]:
        """Single-feature ridge models trained and tested for every configured (eta, delta) pair."""
        table = self._average_table(values, self._features(config, values))
        train_days = [d for d in table.index if split.train.contains(d)]
        test_days = [d for d in table.index if split.test.contains(d)]
        reports: List[MetricsReport] = []
        for eta, delta in config.lag_pairs():
            for event_type in config.event_types():
                y = labels.label_series(event_type)
                for feature in table.columns:
                    train = supervised_service.build_lag_features(table[[feature]], y, eta, delta, train_days)
                    test = supervised_service.build_lag_features(table[[feature]], y, eta, delta, test_days)
                    sweep_config = {
                        "feature": feature, "event_type": event_type.value, "eta": str(eta), "delta": str(delta),
                    }
                    try:
                        model = self._fit(train, Regularization.RIDGE, config, event_type)
                    except ForumcastError as e:
                        logger.warning(f"Lag sweep eta={eta}, delta={delta}, {feature}: {e.detail}")
                        reports.append(MetricsReport(config={**sweep_config, "error": e.detail}))
                        continue
                    _, predicted = supervised_service.predict_labels(model, test.X)
                    reports.append(evaluation_service.prf1(predicted, test.y, len(test.excluded_days),
                                                           config=sweep_config))
        return reports

    def calibrate(self, config: PipelineConfig) -> ConstructionParams:
        corpus, _, _ = self.store(config).read()
        params, rows = reply_graph_service.calibrate_thresholds(
            corpus, config.calibrate_spat, config.calibrate_temp_minutes, config.power_law_exponent,
            config.fit_method, base=config.construction,
        )
        output_dir = self.output_dir(config)
        pd.DataFrame(rows, columns=["thresh_spat", "thresh_temp_minutes", "fit_error"]).to_csv(
            output_dir / CALIBRATION_FILE, index=False
        )
        (output_dir / CALIBRATED_FILE).write_text(
            f"thresh_spat={params.thresh_spat}\nthresh_temp_minutes={params.thresh_temp_minutes}\n", encoding="utf-8"
        )
        write_resolved_config(config, output_dir)
        return params

    def ttest(self, config: PipelineConfig, control: bool = False) -> TTestResult:
        corpus, labels, cpe_table = self.store(config).read()
        result, rows = expert_service.run_interaction_ttest(
            corpus, cpe_table, labels, self.schedule(config, corpus), config.construction, config.event_types(),
            top_k=config.top_k_cpe, indeg_threshold=config.indeg_threshold, alpha=config.ttest_alpha,
            seed=config.seed, control=control,
        )
        output_dir = self.output_dir(config)
        suffix = "_control" if control else ""
        pd.DataFrame(rows).to_csv(output_dir / TTEST_FILE.replace(".csv", f"{suffix}.csv"), index=False)
        pd.DataFrame([result.model_dump()]).to_csv(
            output_dir / TTEST_SUMMARY_FILE.replace(".csv", f"{suffix}.csv"), index=False
        )
        write_resolved_config(config, output_dir)
        return result

    def simulate(self, scenario: SyntheticScenario, output_dir: Path) -> SyntheticCorpus:
        synthetic = synthetic_service.synthesize_corpus(scenario)
        synthetic_service.write_corpus(synthetic, output_dir)
        return synthetic


# Create a singleton instance
pipeline_service = PipelineService()
