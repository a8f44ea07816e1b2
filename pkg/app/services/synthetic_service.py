import logging
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.schemas.corpus import (
    CpeMapping,
    CpeTable,
    EventType,
    PlantedBurst,
    Post,
    SyntheticCorpus,
    SyntheticPlan,
    SyntheticScenario,
)
from app.services.corpus_service import corpus_service

logger = logging.getLogger(__name__)

POSTS_FILE = "posts.tsv"
ATTACKS_FILE = "attacks.tsv"
CPE_FILE = "cpe_map.tsv"
PLAN_FILE = "plan.json"

HOT_GROUPS = 5
EXPERT_THREAD_SHARE = 0.15
EXPERT_REPLY_SHARE = 0.05
MEAN_EXTRA_REPLIES = 3
REPLY_GAP_SECONDS = 600.0
BURST_GAP_SECONDS = 120.0
BURST_COHORT = 12
# expert and cohort slots of one burst thread
BURST_PATTERN = "ECCECCECC"
POSTER_SHARE = 0.2
POSTER_MENTION_RATE = 0.08
WARMUP_DAYS = 120
MIN_ATTACK_GAP = 17
UNMAPPED_SHARE = 0.05


class SyntheticService:
    """Seeded forum corpus with expert-attention bursts planted ahead of attack days."""

    def plant_attack_days(self, scenario: SyntheticScenario,
                          rng: Optional[np.random.Generator] = None) -> List[int]:
        """Attack day offsets; auto-placed days draw from rng, or from the scenario seed when none is given."""
        if scenario.planted_attack_days:
            return sorted(set(scenario.planted_attack_days))
        n = scenario.n_planted_attacks
        if n == 0:
            return []
        low = max(scenario.burst_lead, min(WARMUP_DAYS, scenario.n_days // 4))
        if scenario.n_days - low < n:
            low = scenario.burst_lead
        available = scenario.n_days - low
        gap = min(MIN_ATTACK_GAP, max(1, available // n))
        slack = available - (n - 1) * gap
        rng = rng if rng is not None else np.random.default_rng(scenario.seed)
        offsets = np.sort(rng.integers(0, slack, size=n))
        return [int(low + offset + i * gap) for i, offset in enumerate(offsets)]

    def _cpe_table(self, scenario: SyntheticScenario,
                   rng: np.random.Generator) -> Tuple[CpeTable, List[str], List[str], List[str]]:
        groups = [f"vendor{g:02d} product{g:02d}" for g in range(scenario.n_cpe_groups)]
        hot_groups, cold_groups = groups[:HOT_GROUPS], groups[HOT_GROUPS:]
        n_hot = min(HOT_GROUPS * 8, scenario.n_cves // 2)
        cves = [f"CVE-{2014 + j % 3}-{10000 + j}" for j in range(scenario.n_cves)]
        hot_cves, cold_cves = cves[:n_hot], cves[n_hot:]

        entries: Dict[str, CpeMapping] = {}
        for j, cve in enumerate(hot_cves):
            entries[cve] = CpeMapping(cve_id=cve, cpe_groups=frozenset({hot_groups[j % HOT_GROUPS]}))
        n_unmapped = int(len(cold_cves) * UNMAPPED_SHARE)
        for cve in cold_cves[: len(cold_cves) - n_unmapped]:
            size = 1 + int(rng.random() < 0.3)
            picked = rng.choice(len(cold_groups), size=size, replace=False)
            entries[cve] = CpeMapping(cve_id=cve, cpe_groups=frozenset(cold_groups[i] for i in picked))
        return CpeTable(entries=dict(sorted(entries.items()))), hot_cves, cold_cves, hot_groups

    def synthesize_corpus(self, scenario: SyntheticScenario) -> SyntheticCorpus:
        """
        Background threads arrive at noise_rate posts per forum and day; a share
        of them is opened by the forum's experts with CVEs of the hot CPE groups.
        Before every planted attack, burst_forums forums receive dense expert
        threads answered by a fixed cohort, front-loaded over burst_lead days.
        Random CVE mentions come only from a fixed set of quiet crowd users.
        """
        rng = np.random.default_rng(scenario.seed)
        cpe_table, hot_cves, cold_cves, hot_groups = self._cpe_table(scenario, rng)
        cold_weights = 1.0 / np.arange(1, len(cold_cves) + 1) ** 1.1
        cold_weights /= cold_weights.sum()

        forum_ids = [f"forum{f:02d}" for f in range(scenario.n_forums)]
        experts: Dict[str, List[str]] = {}
        crowds: Dict[str, Tuple[List[str], np.ndarray]] = {}
        posters: Dict[str, List[str]] = {}
        for forum_id in forum_ids:
            users = [f"{forum_id}-u{i:04d}" for i in range(scenario.n_users_per_forum)]
            experts[forum_id] = users[: scenario.experts_per_forum]
            crowd = users[scenario.experts_per_forum:]
            weights = 1.0 / (rng.permutation(len(crowd)) + 1.0) ** 0.7
            crowds[forum_id] = (crowd, weights / weights.sum())
            quiet = np.argsort(weights)[: max(1, len(crowd) // 2)]
            size = min(len(quiet), max(1, int(len(crowd) * POSTER_SHARE)))
            posters[forum_id] = sorted(crowd[i] for i in rng.choice(quiet, size=size, replace=False))

        poster_sets = {forum_id: set(users) for forum_id, users in posters.items()}
        attack_offsets = self.plant_attack_days(scenario, rng)
        attack_days = [scenario.start_date + timedelta(days=o) for o in attack_offsets]
        threads_per_day = scenario.noise_rate / (1 + MEAN_EXTRA_REPLIES)
        background_rate = threads_per_day * (EXPERT_THREAD_SHARE + MEAN_EXTRA_REPLIES * EXPERT_REPLY_SHARE)

        posts: List[Post] = []
        counters = {forum_id: 0 for forum_id in forum_ids}

        def new_thread(forum_id: str) -> str:
            counters[forum_id] += 1
            return f"t{counters[forum_id]:07d}"

        def crowd_user(forum_id: str) -> str:
            crowd, weights = crowds[forum_id]
            return crowd[rng.choice(len(crowd), p=weights)]

        def crowd_mentions(forum_id: str, user_id: str) -> frozenset:
            if user_id in poster_sets[forum_id] and rng.random() < POSTER_MENTION_RATE:
                return frozenset({cold_cves[rng.choice(len(cold_cves), p=cold_weights)]})
            return frozenset()

        def expert_mentions(count: int) -> frozenset:
            return frozenset(hot_cves[i] for i in rng.choice(len(hot_cves), size=count, replace=False))

        def emit(forum_id: str, thread_id: str, authors: List[Tuple[str, frozenset]], start: datetime,
                 gap_seconds: float) -> None:
            moment = start
            for post_id, (user_id, cves) in enumerate(authors, start=1):
                if post_id > 1:
                    moment += timedelta(seconds=1 + int(rng.exponential(gap_seconds)))
                posts.append(Post(forum_id=forum_id, thread_id=thread_id, post_id=post_id,
                                  user_id=user_id, timestamp=moment, cve_mentions=cves))

        for offset in range(scenario.n_days):
            day = scenario.start_date + timedelta(days=offset)
            midnight = datetime.combine(day, time(0, 0), tzinfo=timezone.utc)
            for forum_id in forum_ids:
                for _ in range(rng.poisson(threads_per_day)):
                    if rng.random() < EXPERT_THREAD_SHARE:
                        authors = [(experts[forum_id][rng.integers(len(experts[forum_id]))],
                                    expert_mentions(1 + int(rng.random() < 0.5)))]
                    else:
                        user_id = crowd_user(forum_id)
                        authors = [(user_id, crowd_mentions(forum_id, user_id))]
                    for _ in range(rng.poisson(MEAN_EXTRA_REPLIES)):
                        if rng.random() < EXPERT_REPLY_SHARE:
                            expert = experts[forum_id][rng.integers(len(experts[forum_id]))]
                            authors.append((expert, expert_mentions(1) if rng.random() < 0.5 else frozenset()))
                        else:
                            user_id = crowd_user(forum_id)
                            authors.append((user_id, crowd_mentions(forum_id, user_id)))
                    start = midnight + timedelta(seconds=int(rng.integers(0, 18 * 3600)))
                    emit(forum_id, new_thread(forum_id), authors, start, REPLY_GAP_SECONDS)

        bursts: List[PlantedBurst] = []
        profile = 0.5 ** np.arange(scenario.burst_lead)
        profile = profile / profile.sum()
        extra_total = scenario.burst_factor * background_rate * scenario.burst_lead
        for attack_day in attack_days:
            chosen = sorted(rng.choice(len(forum_ids), size=scenario.burst_forums, replace=False))
            burst = PlantedBurst(attack_day=attack_day, forums=[forum_ids[i] for i in chosen])
            for forum_id in burst.forums:
                crowd, weights = crowds[forum_id]
                quiet = np.argsort(weights)[: max(BURST_COHORT, len(crowd) // 2)]
                cohort = sorted(crowd[i] for i in rng.choice(quiet, size=BURST_COHORT, replace=False))
                burst.cohorts[forum_id] = cohort
                forum_experts = experts[forum_id]
                n_expert_posts = 0
                for j, share in enumerate(profile):
                    day = attack_day - timedelta(days=scenario.burst_lead - j)
                    midnight = datetime.combine(day, time(0, 0), tzinfo=timezone.utc)
                    n_threads = max(1, round(extra_total * share / BURST_PATTERN.count("E")))
                    for _ in range(n_threads):
                        replace = len(forum_experts) < BURST_PATTERN.count("E")
                        thread_experts = iter(rng.choice(forum_experts, size=BURST_PATTERN.count("E"), replace=replace))
                        authors = []
                        for slot in BURST_PATTERN:
                            if slot == "E":
                                mentions = expert_mentions(1) if not authors else frozenset()
                                authors.append((str(next(thread_experts)), mentions))
                                n_expert_posts += 1
                            else:
                                authors.append((cohort[rng.integers(len(cohort))], frozenset()))
                        start = midnight + timedelta(seconds=int(rng.integers(0, 20 * 3600)))
                        emit(forum_id, new_thread(forum_id), authors, start, BURST_GAP_SECONDS)
                burst.expert_posts[forum_id] = n_expert_posts
            bursts.append(burst)

        records = []
        for attack_day in attack_days:
            records.extend([(EventType.MALICIOUS_EMAIL, attack_day)] * (1 + int(rng.integers(0, 3))))
            records.extend([(EventType.ENDPOINT_MALWARE, attack_day)] * (1 + int(rng.integers(0, 2))))
            records.extend([(EventType.MALICIOUS_DESTINATION, attack_day)] * (1 + int(rng.integers(0, 2))))
        labels = corpus_service.labels_from_records(records, start=scenario.start_date, end=scenario.end_date)

        plan = SyntheticPlan(
            scenario=scenario,
            attack_days=attack_days,
            experts=experts,
            cve_posters=posters,
            hot_cpe_groups=hot_groups,
            background_expert_posts_per_day=background_rate,
            bursts=bursts,
        )
        corpus = corpus_service.group_posts(posts)
        logger.info(f"Synthesized {corpus.post_count()} posts in {len(forum_ids)} forums over {scenario.n_days} days "
                    f"with {len(attack_days)} planted attacks")
        return SyntheticCorpus(corpus=corpus, labels=labels, cpe_table=cpe_table, plan=plan)

    def write_corpus(self, synthetic: SyntheticCorpus, output_dir: Path) -> Dict[str, Path]:
        output_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "posts": corpus_service.write_posts(synthetic.corpus, output_dir / POSTS_FILE),
            "attacks": corpus_service.write_attacks(synthetic.labels, output_dir / ATTACKS_FILE),
            "cpe": corpus_service.write_cpe_map(synthetic.cpe_table, output_dir / CPE_FILE),
        }
        plan_path = output_dir / PLAN_FILE
        plan_path.write_text(synthetic.plan.model_dump_json(indent=2) + "\n", encoding="utf-8")
        paths["plan"] = plan_path
        return paths

    def read_plan(self, path) -> SyntheticPlan:
        return SyntheticPlan.model_validate_json(Path(path).read_text(encoding="utf-8"))


# Create a singleton instance
synthetic_service = SyntheticService()
