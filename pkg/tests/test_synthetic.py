from concurrent.futures import ThreadPoolExecutor
from datetime import timedelta

import pytest
from pydantic import ValidationError

from app.schemas.corpus import EventType, SyntheticScenario
from app.services.corpus_service import corpus_service
from app.services.synthetic_service import SyntheticService, synthetic_service


def expert_posts_per_day(synthetic, forum_id, days):
    experts = set(synthetic.plan.experts[forum_id])
    wanted = set(days)
    count = sum(1 for p in synthetic.corpus.forum_posts(forum_id) if p.user_id in experts and p.day in wanted)
    return count / len(days)


def test_same_seed_same_corpus(small_scenario):
    first = synthetic_service.synthesize_corpus(small_scenario)
    second = synthetic_service.synthesize_corpus(small_scenario)
    assert first.corpus == second.corpus
    assert first.plan == second.plan


def test_other_seed_other_corpus(small_scenario):
    first = synthetic_service.synthesize_corpus(small_scenario)
    second = synthetic_service.synthesize_corpus(small_scenario.model_copy(update={"seed": 4}))
    assert first.corpus != second.corpus


def test_planted_days_carry_incidents(small_synthetic, small_scenario):
    labels = small_synthetic.labels
    planted = {small_scenario.start_date + timedelta(days=o) for o in small_scenario.planted_attack_days}
    assert set(small_synthetic.plan.attack_days) == planted
    assert (labels.start, labels.end) == (small_scenario.start_date, small_scenario.end_date)
    for event_type in EventType:
        series = labels.label_series(event_type)
        assert {d for d, flag in series.items() if flag} == planted


def test_bursts_raise_expert_volume_before_attacks(small_synthetic, small_scenario):
    lead = small_scenario.burst_lead
    for burst in small_synthetic.plan.bursts:
        assert len(burst.forums) == small_scenario.burst_forums
        for forum_id in burst.forums:
            burst_days = [burst.attack_day - timedelta(days=lead - j) for j in range(lead)]
            volume = expert_posts_per_day(small_synthetic, forum_id, burst_days)
            baseline = small_synthetic.plan.background_expert_posts_per_day
            assert volume >= baseline * (1 + 0.75 * small_scenario.burst_factor)
            assert len(burst.cohorts[forum_id]) == 12


def test_hot_groups_are_mentioned_by_experts(small_synthetic):
    table = small_synthetic.cpe_table
    hot = set(small_synthetic.plan.hot_cpe_groups)
    for forum_id, experts in small_synthetic.plan.experts.items():
        for post in small_synthetic.corpus.forum_posts(forum_id):
            if post.user_id in experts:
                for cve in post.cve_mentions:
                    assert table.lookup(cve) <= hot


def test_zero_attack_scenario_has_no_incidents(small_scenario):
    scenario = small_scenario.model_copy(update={"planted_attack_days": [], "n_planted_attacks": 0})
    synthetic = synthetic_service.synthesize_corpus(scenario)
    assert sum(synthetic.labels.totals().values()) == 0
    assert synthetic.plan.bursts == []


def test_auto_placed_attacks_keep_their_distance(small_scenario):
    scenario = small_scenario.model_copy(update={"planted_attack_days": [], "n_planted_attacks": 5})
    synthetic = synthetic_service.synthesize_corpus(scenario)
    days = synthetic.plan.attack_days
    assert len(days) == 5
    assert all((b - a).days >= 17 for a, b in zip(days, days[1:]))
    assert days[0] >= scenario.start_date + timedelta(days=scenario.burst_lead)
    assert days[-1] <= scenario.end_date


def test_write_corpus_files_load_back(tmp_path, small_synthetic):
    paths = synthetic_service.write_corpus(small_synthetic, tmp_path)
    loaded = corpus_service.load_posts(paths["posts"])
    assert loaded.diagnostics == []
    assert loaded.corpus.post_count() == small_synthetic.corpus.post_count()
    assert corpus_service.load_cpe_map(paths["cpe"]).entries == small_synthetic.cpe_table.entries
    assert synthetic_service.read_plan(paths["plan"]) == small_synthetic.plan


def test_invalid_scenarios_are_rejected():
    with pytest.raises(ValidationError):
        SyntheticScenario(n_forums=2, burst_forums=3)
    with pytest.raises(ValidationError):
        SyntheticScenario(n_days=100, planted_attack_days=[3])
    assert SyntheticScenario(planted_attack_days="20, 40").planted_attack_days == [20, 40]


def test_plant_attack_days_on_a_fresh_service(small_scenario):
    scenario = small_scenario.model_copy(update={"planted_attack_days": [], "n_planted_attacks": 4})
    days = SyntheticService().plant_attack_days(scenario)
    assert days == SyntheticService().plant_attack_days(scenario)
    assert len(days) == 4 and days == sorted(days)
    assert all(scenario.burst_lead <= d < scenario.n_days for d in days)


def test_concurrent_synthesis_stays_deterministic(small_scenario):
    expected = synthetic_service.synthesize_corpus(small_scenario)
    with ThreadPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(synthetic_service.synthesize_corpus, [small_scenario, small_scenario]))
    for synthetic in results:
        assert synthetic.corpus == expected.corpus
        assert synthetic.plan == expected.plan
