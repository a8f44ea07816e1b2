from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from app.core.errors import DataError, DegenerateError
from app.schemas.anomaly import SubspaceModel, ThresholdKind, ThresholdSpec
from app.services.anomaly_service import anomaly_service, required_flags

START = date(2016, 4, 1)


def days(n):
    return [START + timedelta(days=i) for i in range(n)]


def test_projection_identities_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        Y = rng.normal(size=(50, 8)) @ rng.normal(size=(8, 8))
        model = anomaly_service.fit_subspace(Y, n_components=8, n_normal=3)
        C, C_res = model.normal_projector, model.residual_projector
        np.testing.assert_allclose(C @ C, C, atol=1e-9)
        np.testing.assert_allclose(C + C_res, np.eye(8), atol=1e-9)
        centered = Y - model.column_means
        normal, residual = centered @ C, centered @ C_res
        np.testing.assert_allclose(
            (normal**2).sum(axis=1) + (residual**2).sum(axis=1), (centered**2).sum(axis=1), rtol=1e-9
        )
        np.testing.assert_allclose(model.axes @ model.axes.T, np.eye(8), atol=1e-9)


def test_axes_are_sign_normalised():
    rng = np.random.default_rng(1)
    model = anomaly_service.fit_subspace(rng.normal(size=(30, 5)), n_components=5, n_normal=2)
    for axis in model.axes:
        assert axis[np.argmax(np.abs(axis))] > 0
    assert np.all(np.diff(model.singular_values) <= 0)


def test_duplicate_columns_leave_no_training_residual():
    rng = np.random.default_rng(2)
    base = rng.normal(size=(50, 2))
    Y = np.hstack([base, base, base[:, :1]])
    model = anomaly_service.fit_subspace(Y, n_components=5, n_normal=3)
    series = anomaly_service.spe_series(model, Y, days(50))
    np.testing.assert_allclose(series.spe, 0.0, atol=1e-10)


def test_planted_off_subspace_row_stands_out():
    rng = np.random.default_rng(3)
    latent = rng.normal(size=(60, 1))
    Y = latent @ np.ones((1, 6)) + 0.01 * rng.normal(size=(60, 6))
    model = anomaly_service.fit_subspace(Y, n_components=6, n_normal=1)
    spike = Y.mean(axis=0) + np.array([3.0, -3.0, 0, 0, 0, 0])
    series = anomaly_service.spe_series(model, np.vstack([Y, spike]), days(61))
    assert series.spe[-1] > 100 * series.spe[:-1].max()


def test_fit_needs_two_rows_and_matching_columns():
    with pytest.raises(DegenerateError):
        anomaly_service.fit_subspace(np.ones((1, 4)))
    model = anomaly_service.fit_subspace(np.random.default_rng(4).normal(size=(10, 4)), n_components=4, n_normal=1)
    with pytest.raises(DataError):
        anomaly_service.spe_series(model, np.ones((2, 3)), days(2))


def test_more_components_than_columns_are_clipped():
    model = anomaly_service.fit_subspace(np.random.default_rng(5).normal(size=(20, 3)), n_components=8, n_normal=5)
    assert model.axes.shape == (3, 3)
    assert model.r == 3
    np.testing.assert_allclose(model.residual_projector, 0.0, atol=1e-12)


def test_component_count_sets_stored_axes_and_caps_normal_axes():
    rng = np.random.default_rng(6)
    Y = rng.normal(size=(40, 6))
    rows = rng.normal(size=(5, 6))
    wide = anomaly_service.fit_subspace(Y, n_components=6, n_normal=2)
    narrow = anomaly_service.fit_subspace(Y, n_components=2, n_normal=2)
    assert wide.axes.shape == (6, 6)
    assert narrow.axes.shape == (2, 6)
    np.testing.assert_allclose(anomaly_service.spe_series(wide, rows, days(5)).spe,
                               anomaly_service.spe_series(narrow, rows, days(5)).spe, atol=1e-10)

    capped = anomaly_service.fit_subspace(Y, n_components=1, n_normal=3)
    assert capped.r == 1
    np.testing.assert_allclose(anomaly_service.spe_series(capped, rows, days(5)).spe,
                               anomaly_service.spe_series(
                                   anomaly_service.fit_subspace(Y, n_components=6, n_normal=1), rows, days(5)).spe,
                               atol=1e-10)


def test_q_statistic_matches_simulated_residual_quantile():
    # n_train_rows=2 makes the explained variance equal the squared singular values
    eigenvalues = np.array([9.0, 2.0, 1.5, 1.0, 1.0, 0.5])
    model = SubspaceModel(feature_id="x", axes=np.eye(6), singular_values=np.sqrt(eigenvalues),
                          n_train_rows=2, r=1, column_means=np.zeros(6))
    alpha = 0.1
    threshold = anomaly_service.q_statistic_threshold(model, alpha)
    rng = np.random.default_rng(6)
    draws = (rng.normal(size=(200000, 5)) ** 2) @ eigenvalues[1:]
    exceed = float(np.mean(draws > threshold))
    assert 0.03 < exceed < 0.07
    assert anomaly_service.q_statistic_threshold(model, 0.01) > threshold


def test_q_statistic_without_residual_variance_is_zero():
    model = SubspaceModel(feature_id="x", axes=np.eye(2), singular_values=np.array([1.0, 0.0]),
                          n_train_rows=2, r=1, column_means=np.zeros(2))
    assert anomaly_service.q_statistic_threshold(model, 0.05) == 0.0


def test_threshold_resolution():
    train = np.arange(101, dtype=float)
    assert anomaly_service.resolve_threshold(ThresholdSpec(kind=ThresholdKind.ABSOLUTE, value=2.5)) == 2.5
    assert anomaly_service.resolve_threshold(ThresholdSpec(value=0.9), train_spe=train) == pytest.approx(90.0)
    with pytest.raises(DataError):
        anomaly_service.resolve_threshold(ThresholdSpec(value=0.9))
    with pytest.raises(DataError):
        anomaly_service.resolve_threshold(ThresholdSpec(kind=ThresholdKind.Q_STATISTIC, value=0.01))


def test_threshold_spec_parsing():
    assert ThresholdSpec.parse("quantile:0.99") == ThresholdSpec(kind=ThresholdKind.QUANTILE, value=0.99)
    assert ThresholdSpec.parse("3") == ThresholdSpec(kind=ThresholdKind.ABSOLUTE, value=3.0)
    assert str(ThresholdSpec.parse("q-statistic:0.01")) == "q-statistic:0.01"
    with pytest.raises(ValueError):
        ThresholdSpec.parse("quantile:1.5")


@pytest.mark.parametrize("zeta, expected", [(1, 1), (7, 1), (8, 2), (14, 2), (20, 3)])
def test_required_flags(zeta, expected):
    assert required_flags(zeta) == expected


@pytest.mark.parametrize("zeta", [1, 8, 20])
def test_window_score_threshold_reproduces_flag_rule(zeta):
    rng = np.random.default_rng(zeta)
    spe = rng.exponential(size=120)
    threshold = float(np.quantile(spe, 0.8))
    eta, delta = 7, 8
    scores, predictable = anomaly_service.window_scores(spe, eta, delta, zeta)
    prediction = anomaly_service.predict_attacks_unsupervised(spe > threshold, days(120), eta, delta, zeta)
    np.testing.assert_array_equal(predictable, prediction.predictable)
    np.testing.assert_array_equal((scores > threshold).astype(int), prediction.predictions)
    assert not predictable[: eta + delta].any()
    assert predictable[eta + delta:].all()


def test_flag_window_counts_the_lagged_days():
    flags = np.zeros(30, dtype=bool)
    flags[10] = True
    prediction = anomaly_service.predict_attacks_unsupervised(flags, days(30), eta=3, delta=2)
    # day t looks at flags t-5 .. t-2
    assert list(np.flatnonzero(prediction.predictions)) == [12, 13, 14, 15]


def test_zero_anomaly_run_predicts_nothing():
    prediction = anomaly_service.predict_attacks_unsupervised(np.zeros(40, dtype=bool), days(40), 7, 8)
    assert prediction.predictions.sum() == 0
    series = anomaly_service.spe_series(
        anomaly_service.fit_subspace(np.tile(np.arange(3.0), (10, 1)), n_components=3, n_normal=1),
        np.tile(np.arange(3.0), (10, 1)), days(10),
    )
    flagged = anomaly_service.flag_anomalies(series, threshold=0.0)
    assert not flagged.flags.any()


def test_assemble_matrix_checks_coverage():
    frame = pd.DataFrame({"forum00": [1.0, 2.0], "forum01": [3.0, 4.0]}, index=days(2))
    matrix = anomaly_service.assemble_matrix(frame, "conductance")
    assert matrix.forums == ["forum00", "forum01"]
    np.testing.assert_array_equal(matrix.rows_for([START]), [[1.0, 3.0]])
    with pytest.raises(DataError):
        anomaly_service.assemble_matrix(frame, "conductance", days=days(3))
    with pytest.raises(ValueError):
        anomaly_service.assemble_matrix(frame.replace(4.0, np.nan), "conductance")


def test_model_file_round_trip(tmp_path):
    model = anomaly_service.fit_subspace(np.random.default_rng(7).normal(size=(40, 5)), n_components=4,
                                         n_normal=2, feature_id="conductance")
    path = anomaly_service.write_model(model, ["f0", "f1", "f2", "f3", "f4"], tmp_path / "anomaly.model")
    loaded, forums = anomaly_service.read_model(path)
    assert forums == ["f0", "f1", "f2", "f3", "f4"]
    assert loaded.feature_id == "conductance" and loaded.r == 2 and loaded.n_train_rows == 40
    np.testing.assert_array_equal(loaded.axes, model.axes)
    np.testing.assert_array_equal(loaded.column_means, model.column_means)
    np.testing.assert_array_equal(loaded.singular_values, model.singular_values)
