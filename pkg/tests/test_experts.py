from datetime import date

import numpy as np
import pytest
from scipy import stats

from app.core.errors import DataError, DegenerateError
from app.schemas.experts import CpeGroupRanking, CpeRelation
from app.schemas.graph import ConstructionParams
from app.services.expert_service import cpe_relation, expert_service, satisfies_cpe_constraint
from app.services.reply_graph_service import reply_graph_service
from tests.conftest import make_cpe_table, make_graph, make_post

TABLE = make_cpe_table({
    "CVE-a": {"A"},
    "CVE-b": {"B"},
    "CVE-c": {"C"},
    "CVE-ab": {"A", "B"},
    "CVE-g": {"G"},
})


def mention_posts(counts):
    posts, post_id = [], 0
    for cve, n in counts.items():
        for _ in range(n):
            post_id += 1
            posts.append(make_post("u", post_id, post_id=post_id, cves=[cve]))
    return posts


def test_rank_cpe_groups_top_k():
    ranking = expert_service.rank_cpe_groups(mention_posts({"CVE-a": 10, "CVE-b": 5, "CVE-c": 1}), TABLE, top_k=2)
    assert ranking.ranked_groups == [("A", 10), ("B", 5), ("C", 1)]
    assert ranking.top_set == {"A", "B"}


def test_multi_group_cve_counts_for_each_group():
    ranking = expert_service.rank_cpe_groups(mention_posts({"CVE-ab": 3}), TABLE)
    assert ranking.ranked_groups == [("A", 3), ("B", 3)]


def test_ranking_ties_break_by_name_and_ignore_post_order():
    posts = mention_posts({"CVE-c": 2, "CVE-b": 2, "CVE-a": 2})
    forward = expert_service.rank_cpe_groups(posts, TABLE, top_k=2)
    backward = expert_service.rank_cpe_groups(list(reversed(posts)), TABLE, top_k=2)
    assert forward == backward
    assert forward.top_set == {"A", "B"}


def test_unmapped_mentions_rank_nothing():
    ranking = expert_service.rank_cpe_groups(mention_posts({"CVE-zzz": 4}), TABLE)
    assert ranking.ranked_groups == []


@pytest.mark.parametrize("theta, top, k, expected", [
    ({"A"}, {"A", "B"}, 2, True),
    ({"G"}, {"A", "B"}, 2, False),
    ({"A", "B", "G"}, {"A", "B"}, 2, True),
    ({"A", "G", "H"}, {"A", "B"}, 2, False),
    ({"A", "B"}, {"A", "B"}, 2, True),
    ({"A", "G"}, {"A", "B"}, 2, False),
    (set(), {"A", "B"}, 2, False),
])
def test_cpe_constraint(theta, top, k, expected):
    assert satisfies_cpe_constraint(theta, top, k) is expected


def test_cpe_relation_names():
    assert cpe_relation({"A"}, {"A", "B"}) == CpeRelation.SUBSET
    assert cpe_relation({"A", "B", "C"}, {"A", "B"}) == CpeRelation.SUPERSET
    assert cpe_relation({"A", "B"}, {"A", "B"}) == CpeRelation.EQUAL
    assert cpe_relation({"G"}, {"A"}) == CpeRelation.NONE


def expert_fixture(indeg_expert=12, indeg_low=9):
    """expert mentions CVE-a, low has one reply too few, outsider mentions an untracked group."""
    edges = [(f"r{i}", "expert") for i in range(indeg_expert)]
    edges += [(f"r{i}", "low") for i in range(indeg_low)]
    edges += [(f"r{i}", "outsider") for i in range(15)]
    graph = make_graph(edges)
    posts = [
        make_post("expert", 1, post_id=1, cves=["CVE-a"]),
        make_post("low", 2, post_id=2, cves=["CVE-a"]),
        make_post("outsider", 3, post_id=3, cves=["CVE-g"]),
        make_post("r0", 4, post_id=4),
    ]
    ranking = CpeGroupRanking(ranked_groups=[("A", 5), ("B", 3)], top_k=2)
    return graph, posts, ranking


def test_extract_experts_applies_all_three_constraints():
    graph, posts, ranking = expert_fixture()
    experts = expert_service.extract_experts(graph, posts, ranking, TABLE, indeg_threshold=10, forum_id="f1")

    assert experts.members == {"expert"}
    assert experts.alternates == {"low", "outsider"}
    record = experts.provenance["expert"]
    assert record.in_degree == 12
    assert record.theta == ["A"]
    assert record.cpe_relation == CpeRelation.SUBSET
    assert "r0" not in experts.alternates


def test_provenance_replays_against_the_graph():
    graph, posts, ranking = expert_fixture()
    experts = expert_service.extract_experts(graph, posts, ranking, TABLE, indeg_threshold=10)
    for user_id, record in experts.provenance.items():
        assert graph.in_degree(user_id) == record.in_degree >= experts.indeg_threshold
        assert satisfies_cpe_constraint(set(record.theta), set(ranking.top_set), ranking.top_k)
        assert record.cve_mentions >= 1


def test_raising_indeg_threshold_never_grows_experts(small_synthetic):
    corpus, cpe_table = small_synthetic.corpus, small_synthetic.cpe_table
    schedule = reply_graph_service.build_window_schedule(*corpus.span())
    pair = schedule.subsequences[0]
    sizes = []
    previous = None
    for threshold in (5, 10, 20):
        _, experts = expert_service.experts_for_window(
            corpus, "forum00", pair.history, cpe_table, ConstructionParams(), 5, threshold
        )
        if previous is not None:
            assert experts.members <= previous
        previous = experts.members
        sizes.append(len(experts))
    assert sizes == sorted(sizes, reverse=True)
    assert sizes[0] > 0


def test_planted_experts_are_recovered(small_synthetic):
    corpus, cpe_table = small_synthetic.corpus, small_synthetic.cpe_table
    schedule = reply_graph_service.build_window_schedule(*corpus.span())
    pair = schedule.subsequences[-1]
    _, experts = expert_service.experts_for_window(
        corpus, "forum01", pair.history, cpe_table, ConstructionParams(), 5, 5
    )
    planted = set(small_synthetic.plan.experts["forum01"])
    assert experts.members
    assert experts.members <= planted


def test_ttest_identical_vectors():
    result = expert_service.expert_interaction_ttest([4, 4, 4], [4, 4, 4], alpha=0.01)
    assert (result.t_statistic, result.p_value, result.reject) == (0.0, 0.5, False)


def test_ttest_matches_welch_by_hand():
    exp, alt = np.array([50.0, 40.0, 30.0]), np.array([5.0, 4.0, 3.0])
    result = expert_service.expert_interaction_ttest(exp, alt, alpha=0.01)

    se2 = exp.var(ddof=1) / 3 + alt.var(ddof=1) / 3
    t = (exp.mean() - alt.mean()) / np.sqrt(se2)
    df = se2 ** 2 / ((exp.var(ddof=1) / 3) ** 2 / 2 + (alt.var(ddof=1) / 3) ** 2 / 2)
    assert result.t_statistic == pytest.approx(t)
    assert result.p_value == pytest.approx(stats.t.sf(t, df))
    assert result.reject


def test_ttest_rejects_nothing_in_the_wrong_direction():
    result = expert_service.expert_interaction_ttest([1, 2, 3], [10, 20, 30], alpha=0.01)
    assert result.t_statistic < 0
    assert not result.reject


def test_ttest_input_errors():
    with pytest.raises(DataError):
        expert_service.expert_interaction_ttest([], [1, 2])
    with pytest.raises(DegenerateError):
        expert_service.expert_interaction_ttest([5], [1, 2, 3])


def test_sample_alternates_is_sorted_and_sized():
    rng = np.random.default_rng(0)
    picked = expert_service.sample_alternates([f"u{i}" for i in range(20)], 5, rng)
    assert len(picked) == 5
    assert picked == sorted(picked)
    assert expert_service.sample_alternates(["b", "a"], 5, rng) == ["a", "b"]


def test_interaction_degrees_ignore_direction():
    graph = make_graph([("a", "b"), ("c", "a"), ("a", "d")])
    assert expert_service.interaction_degrees(graph, ["a", "b", "z"]) == [3, 1, 0]


def test_planted_experts_interact_more(small_synthetic):
    corpus, labels, cpe_table = small_synthetic.corpus, small_synthetic.labels, small_synthetic.cpe_table
    schedule = reply_graph_service.build_window_schedule(*corpus.span())
    result, rows = expert_service.run_interaction_ttest(
        corpus, cpe_table, labels, schedule, ConstructionParams(), list(labels.counts),
        top_k=5, indeg_threshold=5, alpha=0.01, seed=0,
    )
    assert rows
    assert result.n_experts == sum(r["n_experts"] for r in rows)
    assert result.reject


def test_experts_export(tmp_path):
    graph, posts, ranking = expert_fixture()
    experts = expert_service.extract_experts(graph, posts, ranking, TABLE, indeg_threshold=10, forum_id="f1")
    path = expert_service.write_experts([experts], tmp_path / "experts.tsv")
    lines = path.read_text().splitlines()
    assert lines[0] == "window\tforum\tuser_id\tindeg\tcpe_relation"
    assert lines[1].split("\t")[1:] == ["f1", "expert", "12", "subset"]
