import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streetpulse.qa import (
    agreement,
    filter_duplicates,
    filter_one_sided,
    games_multiplier,
    group_agreement,
    qa_report,
    usable_games,
    write_qa_report,
)
from streetpulse.records import Rater, Vote

import oracles

_counter = iter(range(1, 10_000_000))


def vote(session, left="a", right="b", choice="left", ts=0.0, kind="fresh", vid=None):
    return Vote(
        vote_id=vid if vid is not None else next(_counter),
        session_id=session,
        left_image=left,
        right_image=right,
        choice=choice,
        pair_kind=kind,
        client_ts=None,
        server_ts=float(ts),
    )


def session_votes(sid, n_left, n_right, start_ts=0.0, gap=120.0):
    votes = []
    t = start_ts
    for i in range(n_left):
        votes.append(vote(sid, left=f"L{i}", right=f"R{i}", choice="left", ts=t))
        t += gap
    for i in range(n_right):
        votes.append(vote(sid, left=f"l{i}", right=f"r{i}", choice="right", ts=t))
        t += gap
    return votes


class TestOneSided:
    def test_all_left_ten_games_removed(self):
        votes = session_votes("biased", 10, 0)
        kept, removed, flagged = filter_one_sided(votes, threshold=0.9)
        assert flagged == {"biased"}
        assert kept == [] and len(removed) == 10

    def test_nine_of_ten_kept_at_strict_boundary(self):
        votes = session_votes("edge", 9, 1)  # exactly 0.9, not > 0.9
        kept, removed, flagged = filter_one_sided(votes, threshold=0.9)
        assert flagged == set()
        assert len(kept) == 10 and removed == []

    def test_small_sessions_never_flagged(self):
        votes = session_votes("tiny", 9, 0)  # fewer than min_games
        _, _, flagged = filter_one_sided(votes, threshold=0.9, min_games=10)
        assert flagged == set()

    def test_matches_recount_on_mixed_population(self):
        rng = np.random.default_rng(0)
        votes = []
        for s in range(40):
            n = int(rng.integers(1, 40))
            lefts = int(rng.binomial(n, rng.uniform(0.2, 0.98)))
            votes.extend(session_votes(f"s{s}", lefts, n - lefts))
        _, _, flagged = filter_one_sided(votes, threshold=0.9, min_games=10)
        assert flagged == oracles.one_sided_recount(votes, 0.9, 10)

    def test_flagged_session_loses_all_votes(self):
        votes = session_votes("biased", 12, 0)
        votes.append(vote("biased", choice="not_shown", ts=9999.0))
        kept, removed, _ = filter_one_sided(votes)
        assert kept == []
        assert len(removed) == 13

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            filter_one_sided([], threshold=0.5)


class TestDuplicates:
    def test_second_vote_30s_apart_removed(self):
        votes = [vote("s", ts=0.0), vote("s", ts=30.0)]
        kept, removed = filter_duplicates(votes, window_s=60.0)
        assert [v.server_ts for v in kept] == [0.0]
        assert [v.server_ts for v in removed] == [30.0]

    def test_votes_120s_apart_both_kept(self):
        votes = [vote("s", ts=0.0), vote("s", ts=120.0)]
        kept, removed = filter_duplicates(votes, window_s=60.0)
        assert len(kept) == 2 and removed == []

    def test_exact_window_gap_kept(self):
        votes = [vote("s", ts=0.0), vote("s", ts=60.0)]
        kept, _ = filter_duplicates(votes, window_s=60.0)
        assert len(kept) == 2

    def test_different_pairs_or_sessions_not_duplicates(self):
        votes = [
            vote("s", left="a", right="b", ts=0.0),
            vote("s", left="c", right="d", ts=1.0),
            vote("t", left="a", right="b", ts=2.0),
        ]
        kept, _ = filter_duplicates(votes)
        assert len(kept) == 3

    def test_orientation_does_not_matter(self):
        votes = [vote("s", left="a", right="b", ts=0.0), vote("s", left="b", right="a", ts=5.0)]
        kept, _ = filter_duplicates(votes)
        assert len(kept) == 1

    def test_matches_quadratic_scan_on_random_timestamps(self):
        rng = np.random.default_rng(1)
        votes = []
        for s in range(12):
            for p in range(4):
                for t in sorted(rng.uniform(0, 400, size=rng.integers(1, 6))):
                    votes.append(
                        vote(f"s{s}", left=f"p{p}a", right=f"p{p}b", ts=float(t))
                    )
        kept, removed = filter_duplicates(votes, window_s=60.0)
        removed_oracle = oracles.duplicate_scan(votes, 60.0)
        assert {v.vote_id for v in removed} == removed_oracle


class TestPipeline:
    def population(self):
        votes = []
        votes.extend(session_votes("ok1", 6, 6))
        votes.extend(session_votes("biased", 20, 0))
        votes.extend(session_votes("ok2", 5, 7))
        votes.append(vote("ok1", left="X", right="Y", choice="not_comparable", ts=5000.0))
        votes.append(vote("ok2", left="X", right="Y", choice="not_shown", ts=6000.0))
        # duplicate game inside the window for ok1
        votes.append(vote("ok1", left="D", right="E", ts=7000.0))
        votes.append(vote("ok1", left="D", right="E", ts=7030.0))
        return votes

    def test_accounting_identity(self):
        votes = self.population()
        usable = usable_games(votes)
        assert usable.total_raw == len(votes)
        p = usable.provenance
        assert p["not_comparable"] == 1
        assert p["not_shown"] == 1
        assert p["duplicate"] == 1
        assert p["one_sided"] == 20

    def test_filters_idempotent(self):
        votes = self.population()
        games = [v for v in votes if v.choice in ("left", "right")]
        once, _ = filter_duplicates(games)
        twice, removed_again = filter_duplicates(once)
        assert twice == once and removed_again == []
        kept1, _, _ = filter_one_sided(once)
        kept2, removed2, _ = filter_one_sided(kept1)
        assert kept2 == kept1 and removed2 == []

    def test_duplicates_filtered_before_bias_fractions(self):
        # 10 left votes, 3 of them rapid replays of the same game: after
        # dedup only 7 games remain, below min_games, so the session stays.
        # Running the one-sided filter first would have removed it.
        votes = []
        for i in range(7):
            votes.append(vote("s", left=f"p{i}a", right=f"p{i}b", choice="left", ts=i * 300.0))
        for i in range(3):
            votes.append(vote("s", left="p0a", right="p0b", choice="left", ts=10.0 + i))
        usable = usable_games(votes, threshold=0.9, min_games=8)
        assert usable.provenance["duplicate"] == 3
        assert usable.provenance["one_sided"] == 0
        assert len(usable.votes) == 7

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0, 300)), max_size=25))
    def test_duplicate_filter_idempotent_property(self, raw):
        votes = [
            vote(f"s{s}", left=f"p{p}a", right=f"p{p}b", ts=round(t, 3))
            for s, p, t in raw
        ]
        once, _ = filter_duplicates(votes)
        twice, removed = filter_duplicates(once)
        assert removed == [] and twice == once


class TestAgreement:
    def repeated(self, pair, lefts, rights, sid_start=0):
        votes = []
        for i in range(lefts):
            votes.append(
                vote(f"u{sid_start + i}", left=pair[0], right=pair[1], choice="left", kind="repeated")
            )
        for i in range(rights):
            votes.append(
                vote(
                    f"u{sid_start + lefts + i}",
                    left=pair[0],
                    right=pair[1],
                    choice="right",
                    kind="repeated",
                )
            )
        return votes

    def test_unanimous_pair(self):
        report = agreement(self.repeated(("a", "b"), 11, 0), min_games=10)
        assert report.per_pair[("a", "b")].fraction == 1.0

    def test_majority_convention_point_eight(self):
        report = agreement(self.repeated(("a", "b"), 16, 4), min_games=10)
        pa = report.per_pair[("a", "b")]
        assert pa.fraction == pytest.approx(0.8)
        assert pa.majority_image == "a"

    def test_exactly_min_games_excluded(self):
        report = agreement(self.repeated(("a", "b"), 6, 4), min_games=10)
        assert report.per_pair == {}
        assert report.mean is None

    def test_counts_follow_chosen_image_not_slot(self):
        votes = self.repeated(("a", "b"), 8, 0)
        # four more servings with flipped slots, still choosing image a
        for i in range(4):
            votes.append(vote(f"f{i}", left="b", right="a", choice="right", kind="repeated"))
        report = agreement(votes, min_games=10)
        assert report.per_pair[("a", "b")].fraction == 1.0

    def test_mean_across_pairs_unweighted(self):
        votes = self.repeated(("a", "b"), 11, 0) + self.repeated(("c", "d"), 8, 4, sid_start=50)
        report = agreement(votes, min_games=10)
        assert report.mean == pytest.approx((1.0 + 8 / 12) / 2)


class TestGroupAgreement:
    def test_single_group_reduces_to_plain_agreement(self):
        votes = TestAgreement().repeated(("a", "b"), 12, 3)
        sessions = [Rater(f"u{i}", 0.0, {"location": "london"}) for i in range(15)]
        table = group_agreement(votes, sessions, "location")
        assert table["london"].mean == agreement(votes).mean
        assert table["not_london"].per_pair == {}

    def test_opposite_unanimous_majorities_both_full(self):
        votes = []
        for i in range(11):
            votes.append(vote(f"lon{i}", choice="left", kind="repeated"))
        for i in range(11):
            votes.append(vote(f"out{i}", choice="right", kind="repeated"))
        sessions = [Rater(f"lon{i}", 0.0, {"location": "london"}) for i in range(11)]
        sessions += [Rater(f"out{i}", 0.0, {"location": "not_london"}) for i in range(11)]
        table = group_agreement(votes, sessions, "location")
        assert table["london"].per_pair[("a", "b")].fraction == 1.0
        assert table["not_london"].per_pair[("a", "b")].fraction == 1.0

    def test_unknown_grouping_rejected(self):
        with pytest.raises(KeyError):
            group_agreement([], [], "favourite_colour")

    def test_planted_consensus_recovered(self):
        rng = np.random.default_rng(2)
        sessions = []
        votes = []
        uid = 0
        for level, prob in (("high", 0.9), ("low", 0.6)):
            for pair_idx in range(50):
                pair = (f"p{pair_idx}x", f"p{pair_idx}y")
                for _ in range(30):
                    sessions.append(Rater(f"u{uid}", 0.0, {"activity": level}))
                    choice = "left" if rng.random() < prob else "right"
                    votes.append(
                        vote(f"u{uid}", left=pair[0], right=pair[1], choice=choice, kind="repeated")
                    )
                    uid += 1
        table = group_agreement(votes, sessions, "activity")
        # planted consensus, allowing majority-side folding near 0.5
        assert table["high"].mean == pytest.approx(0.9, abs=0.05)
        assert table["low"].mean == pytest.approx(0.625, abs=0.06)


class TestGamesMultiplier:
    def test_zero_votes(self):
        assert games_multiplier([], 100) == 0.0

    def test_ratio(self):
        votes = session_votes("s", 3, 2)
        assert games_multiplier(votes, 5) == pytest.approx(1.0)
        votes = [vote("s", ts=i * 100) for i in range(4650)]
        assert games_multiplier(votes, 1000) == pytest.approx(4.65)

    def test_non_answers_excluded(self):
        votes = [vote("s", choice="not_shown"), vote("s", choice="left", ts=100.0)]
        assert games_multiplier(votes, 2) == pytest.approx(0.5)

    def test_zero_images_rejected(self):
        with pytest.raises(ValueError):
            games_multiplier([], 0)


def test_qa_report_written_and_consistent(tmp_path):
    votes = TestPipeline().population()
    sessions = [
        Rater("ok1", 0.0, {"source": "network"}),
        Rater("ok2", 1.0, {"source": "amt"}),
        Rater("biased", 2.0, None),
    ]
    report = qa_report(votes, sessions, n_images=60)
    assert report["pairwise_ratings"] == len(votes)
    assert (
        report["usable_games"]
        + report["not_comparable"]
        + report["not_shown"]
        + report["one_sided"]
        + report["duplicates"]
        == len(votes)
    )
    assert report["users"] == 3
    assert report["users_with_demographics"] == 2
    path = tmp_path / "qa_report.json"
    write_qa_report(report, path)
    assert path.read_text().startswith("{")
