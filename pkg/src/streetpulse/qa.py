"""Vote quality assurance: filters, agreement and throughput statistics.

Raw votes become usable games in a fixed order: the non-answer categories
(not_comparable, not_shown) are split off, then near-simultaneous
duplicate games are dropped, then sessions with a heavy one-sided click
bias are removed entirely. Side-bias fractions are therefore computed on
deduplicated votes. All functions are pure over immutable vote lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .records import DEMOGRAPHIC_FIELDS, Rater, Vote

DEFAULT_ONE_SIDED_THRESHOLD = 0.9
DEFAULT_MIN_GAMES = 10
DEFAULT_DUPLICATE_WINDOW_S = 60.0


@dataclass
class UsableGames:
    """Left/right votes surviving all filters, with removal provenance."""

    votes: list[Vote]
    provenance: dict[str, int] = field(default_factory=dict)

    @property
    def total_raw(self) -> int:
        return len(self.votes) + sum(self.provenance.values())


@dataclass(frozen=True)
class PairAgreement:
    n_games: int
    fraction: float  # majority share, always >= 0.5
    majority_image: str


@dataclass
class AgreementReport:
    per_pair: dict[tuple[str, str], PairAgreement]

    @property
    def mean(self) -> float | None:
        if not self.per_pair:
            return None
        return sum(p.fraction for p in self.per_pair.values()) / len(self.per_pair)


def split_categories(votes: Sequence[Vote]) -> tuple[list[Vote], list[Vote], list[Vote]]:
    """Partition votes into (left/right games, not_comparable, not_shown)."""
    games = [v for v in votes if v.choice in ("left", "right")]
    ncomp = [v for v in votes if v.choice == "not_comparable"]
    nshow = [v for v in votes if v.choice == "not_shown"]
    return games, ncomp, nshow


def filter_duplicates(
    votes: Sequence[Vote], window_s: float = DEFAULT_DUPLICATE_WINDOW_S
) -> tuple[list[Vote], list[Vote]]:
    """Drop re-plays of the same game landing within ``window_s``.

    A vote is a duplicate when the same session voted on the same unordered
    pair strictly less than ``window_s`` earlier (server_ts); only the
    earliest of such a cluster survives. Returns (kept, removed) in the
    original order.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    by_game: dict[tuple[str, frozenset], list[Vote]] = {}
    for v in votes:
        by_game.setdefault((v.session_id, v.pair), []).append(v)

    removed_ids: set[int] = set()
    for group in by_game.values():
        group = sorted(group, key=lambda v: (v.server_ts, v.vote_id))
        for i, v in enumerate(group):
            for earlier in group[:i]:
                if v.server_ts - earlier.server_ts < window_s:
                    removed_ids.add(v.vote_id)
                    break
    kept = [v for v in votes if v.vote_id not in removed_ids]
    removed = [v for v in votes if v.vote_id in removed_ids]
    return kept, removed


def filter_one_sided(
    votes: Sequence[Vote],
    threshold: float = DEFAULT_ONE_SIDED_THRESHOLD,
    min_games: int = DEFAULT_MIN_GAMES,
) -> tuple[list[Vote], list[Vote], set[str]]:
    """Remove every vote of sessions biased to one side.

    A session is flagged when it has at least ``min_games`` left/right
    votes and the larger side fraction strictly exceeds ``threshold``.
    Small sessions cannot be meaningfully one-sided and are never flagged.
    """
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must be in (0.5, 1]")
    sides: dict[str, list[int]] = {}
    for v in votes:
        if v.choice in ("left", "right"):
            counts = sides.setdefault(v.session_id, [0, 0])
            counts[0 if v.choice == "left" else 1] += 1

    flagged = {
        sid
        for sid, (left, right) in sides.items()
        if left + right >= min_games and max(left, right) / (left + right) > threshold
    }
    kept = [v for v in votes if v.session_id not in flagged]
    removed = [v for v in votes if v.session_id in flagged]
    return kept, removed, flagged


def usable_games(
    votes: Sequence[Vote],
    threshold: float = DEFAULT_ONE_SIDED_THRESHOLD,
    min_games: int = DEFAULT_MIN_GAMES,
    window_s: float = DEFAULT_DUPLICATE_WINDOW_S,
) -> UsableGames:
    """Run the full filter pipeline; provenance counts account for every raw vote."""
    games, ncomp, nshow = split_categories(votes)
    deduped, dup_removed = filter_duplicates(games, window_s)
    kept, bias_removed, _ = filter_one_sided(deduped, threshold, min_games)
    return UsableGames(
        votes=kept,
        provenance={
            "not_comparable": len(ncomp),
            "not_shown": len(nshow),
            "duplicate": len(dup_removed),
            "one_sided": len(bias_removed),
        },
    )


def agreement(votes: Sequence[Vote], min_games: int = DEFAULT_MIN_GAMES) -> AgreementReport:
    """Majority-share agreement per unordered pair with more than ``min_games`` games.

    Only left/right votes count, and the share is taken for the image the
    rater picked (placement may differ between servings), reported for the
    majority side. Pairs with exactly ``min_games`` games are excluded.
    """
    if min_games < 1:
        raise ValueError("min_games must be >= 1")
    tallies: dict[tuple[str, str], dict[str, int]] = {}
    for v in votes:
        chosen = v.chosen_image
        if chosen is None:
            continue
        key = tuple(sorted(v.pair))
        tallies.setdefault(key, {}).setdefault(chosen, 0)
        tallies[key][chosen] += 1

    per_pair: dict[tuple[str, str], PairAgreement] = {}
    for key, counts in tallies.items():
        n = sum(counts.values())
        if n <= min_games:
            continue
        majority = max(sorted(counts), key=lambda img: counts[img])
        per_pair[key] = PairAgreement(n, counts[majority] / n, majority)
    return AgreementReport(per_pair=per_pair)


def group_agreement(
    votes: Sequence[Vote],
    sessions: Iterable[Rater],
    grouping: str,
    min_games: int = DEFAULT_MIN_GAMES,
) -> dict[str, AgreementReport]:
    """Agreement computed separately within each subgroup of ``grouping``.

    Sessions lacking the attribute form the ``unstated`` subgroup.
    Subgroups with no qualifying pair yield an empty report.
    """
    if grouping not in DEMOGRAPHIC_FIELDS:
        raise KeyError(f"unknown grouping {grouping!r}; expected one of {tuple(DEMOGRAPHIC_FIELDS)}")
    level_of: dict[str, str] = {}
    for s in sessions:
        level_of[s.session_id] = s.group(grouping) or "unstated"

    by_level: dict[str, list[Vote]] = {}
    for v in votes:
        level = level_of.get(v.session_id, "unstated")
        by_level.setdefault(level, []).append(v)

    levels = list(DEMOGRAPHIC_FIELDS[grouping])
    if "unstated" in by_level:
        levels.append("unstated")
    return {level: agreement(by_level.get(level, []), min_games) for level in levels}


def games_multiplier(votes: Sequence[Vote], n_images: int) -> float:
    """Usable left/right games per image in the survey set."""
    if n_images <= 0:
        raise ValueError("n_images must be positive")
    games = sum(1 for v in votes if v.choice in ("left", "right"))
    return games / n_images


def qa_report(
    votes: Sequence[Vote],
    sessions: Sequence[Rater],
    n_images: int,
    threshold: float = DEFAULT_ONE_SIDED_THRESHOLD,
    min_games: int = DEFAULT_MIN_GAMES,
    window_s: float = DEFAULT_DUPLICATE_WINDOW_S,
) -> dict:
    """Counts, filters, agreement and throughput in one JSON-ready payload."""
    usable = usable_games(votes, threshold, min_games, window_s)
    repeated = [v for v in usable.votes if v.pair_kind == "repeated"]
    agree = agreement(repeated, min_games)

    per_session: dict[str, int] = {}
    for v in usable.votes:
        per_session[v.session_id] = per_session.get(v.session_id, 0) + 1

    report: dict = {
        "images": n_images,
        "pairwise_ratings": len(votes),
        "not_comparable": usable.provenance["not_comparable"],
        "not_shown": usable.provenance["not_shown"],
        "one_sided": usable.provenance["one_sided"],
        "duplicates": usable.provenance["duplicate"],
        "usable_games": len(usable.votes),
        "users": len(sessions),
        "users_with_demographics": sum(1 for s in sessions if s.demographics),
        "games_per_user_mean": (
            sum(per_session.values()) / len(per_session) if per_session else 0.0
        ),
        "games_multiplier": games_multiplier(usable.votes, n_images) if n_images else 0.0,
        "repeated_pairs_qualifying": len(agree.per_pair),
        "games_per_repeated_pair_mean": (
            sum(p.n_games for p in agree.per_pair.values()) / len(agree.per_pair)
            if agree.per_pair
            else 0.0
        ),
        "repeated_agreement_mean": agree.mean,
    }
    if sessions:
        report["group_agreement"] = {
            attr: {
                level: {"mean": rep.mean, "pairs": len(rep.per_pair)}
                for level, rep in group_agreement(usable.votes, sessions, attr, min_games).items()
            }
            for attr in DEMOGRAPHIC_FIELDS
        }
    return report


def write_qa_report(report: Mapping, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
