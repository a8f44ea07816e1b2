from datetime import date

import pandas as pd
import pytest

from app.core.errors import DataError
from app.schemas.corpus import TimeWindow
from app.schemas.experts import ExpertSet
from app.schemas.features import Coverage, FeatureId, GRAPH_FEATURES
from app.schemas.pipeline import PipelineConfig
from app.services.feature_service import feature_service
from app.services.reply_graph_service import reply_graph_service
from tests.conftest import make_graph, make_post

SMALL_FEATURES = [FeatureId.CONDUCTANCE, FeatureId.N_THREADS, FeatureId.COMMON_COMMUNITIES]


@pytest.fixture
def small_schedule(small_scenario):
    return reply_graph_service.build_window_schedule(small_scenario.start_date, small_scenario.end_date)


@pytest.fixture
def feature_config():
    return PipelineConfig(indeg_threshold=5, forum_min_posts=0)


def test_metadata_features_count_distinct_entities():
    posts = [
        make_post("A", 0, 1, thread="h1", cves=["CVE-2016-0001"]),
        make_post("B", 1, 2, thread="h1", cves=["CVE-2016-0001"]),
        make_post("A", 2, 1, thread="h2", cves=["CVE-2016-0002"]),
    ]
    values = feature_service.metadata_features(posts, experts={"B"})
    assert values[FeatureId.N_THREADS].value == 2
    assert values[FeatureId.N_USERS].value == 2
    assert values[FeatureId.N_EXPERT_THREADS].value == 1
    assert values[FeatureId.N_CVE_MENTIONS].value == 2


def test_metadata_features_of_a_quiet_day():
    values = feature_service.metadata_features([])
    assert all(v.value == 0.0 and v.coverage == Coverage.COMPUTED for v in values.values())


def test_graph_features_flag_an_empty_day():
    history = make_graph([("e", "a"), ("a", "e")])
    experts = ExpertSet(window=TimeWindow(start=date(2016, 1, 1), end=date(2016, 3, 31)), forum_id="f1",
                        members=frozenset({"e"}))
    values = feature_service.graph_features(history, make_graph([]), experts, None, PipelineConfig(),
                                            list(FeatureId))
    assert set(values) == GRAPH_FEATURES
    assert all(v.coverage == Coverage.EMPTY_GRAPH and v.value == 0.0 for v in values.values())


def test_feature_series_covers_requested_days(small_synthetic, small_schedule, feature_config):
    days = [date(2016, 4, 1), date(2016, 4, 2), date(2016, 4, 3)]
    series, expert_sets = feature_service.compute_feature_series(
        small_synthetic.corpus, "forum00", small_schedule, small_synthetic.cpe_table, feature_config,
        features=SMALL_FEATURES, days=days,
    )
    assert [s.feature_id for s in series] == SMALL_FEATURES
    assert all(s.days == days and len(s.values) == 3 for s in series)
    assert len(expert_sets) == 1
    assert expert_sets[0].window == small_schedule.subsequences[0].history
    conductance = series[0]
    for value, flag in zip(conductance.values, conductance.coverage):
        if flag == Coverage.COMPUTED:
            assert 0.0 <= value <= 1.0


def test_feature_series_rejects_days_outside_the_schedule(small_synthetic, small_schedule, feature_config):
    with pytest.raises(DataError):
        feature_service.compute_feature_series(
            small_synthetic.corpus, "forum00", small_schedule, small_synthetic.cpe_table, feature_config,
            days=[date(2016, 1, 5)],
        )


def test_compute_all_yields_one_column_per_feature_and_forum(small_synthetic, small_schedule, feature_config):
    series, expert_sets = feature_service.compute_all(
        small_synthetic.corpus, small_schedule, small_synthetic.cpe_table, feature_config
    )
    values, flags = feature_service.to_frames(series)
    n_days = sum(len(pair.tau.days()) for pair in small_schedule.subsequences)
    assert values.shape == (n_days, len(FeatureId) * 3)
    assert flags.shape == values.shape
    assert len(expert_sets) == 3 * len(small_schedule.subsequences)
    assert feature_service.available_features(values) == list(FeatureId)
    threads = feature_service.feature_frame(values, FeatureId.N_THREADS)
    assert list(threads.columns) == ["forum00", "forum01", "forum02"]
    assert (threads.sum() > 0).all()


def test_threaded_computation_is_deterministic(small_synthetic, small_schedule):
    single = PipelineConfig(indeg_threshold=5, features=SMALL_FEATURES, threads=1)
    pooled = single.model_copy(update={"threads": 3})
    first, _ = feature_service.compute_all(small_synthetic.corpus, small_schedule, small_synthetic.cpe_table, single)
    second, _ = feature_service.compute_all(small_synthetic.corpus, small_schedule, small_synthetic.cpe_table, pooled)
    pd.testing.assert_frame_equal(feature_service.to_frames(first)[0], feature_service.to_frames(second)[0],
                                  check_exact=True)


def test_tables_round_trip(tmp_path, small_synthetic, small_schedule):
    config = PipelineConfig(indeg_threshold=5, features=[FeatureId.N_USERS, FeatureId.EXPERT_REPLIES])
    series, _ = feature_service.compute_all(small_synthetic.corpus, small_schedule, small_synthetic.cpe_table, config)
    values, flags = feature_service.to_frames(series)
    feature_service.write_tables(values, flags, tmp_path)
    read_values, read_flags = feature_service.read_tables(tmp_path)
    pd.testing.assert_frame_equal(read_values, values)
    assert read_flags.equals(flags)


def test_missing_tables_and_features_are_data_errors(tmp_path):
    with pytest.raises(DataError):
        feature_service.read_tables(tmp_path)
    frame = pd.DataFrame({"n_users/forum00": [1.0]})
    with pytest.raises(DataError):
        feature_service.feature_frame(frame, FeatureId.CONDUCTANCE)
