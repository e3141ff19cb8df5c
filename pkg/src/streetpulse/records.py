"""Core survey records (votes, rater sessions) and their CSV formats."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

CHOICES = ("left", "right", "not_comparable", "not_shown")
PAIR_KINDS = ("fresh", "repeated")

# Demographic attributes and their allowed values.
DEMOGRAPHIC_FIELDS: dict[str, tuple[str, ...]] = {
    "location": ("london", "not_london"),
    "gender": ("female", "male", "other"),
    "activity": ("high", "low"),
    "source": ("amt", "network"),
}


class InvalidDemographics(ValueError):
    pass


def validate_demographics(demographics: dict[str, str] | None) -> dict[str, str] | None:
    """Check enum values; unknown keys or values are rejected."""
    if demographics is None:
        return None
    out: dict[str, str] = {}
    for key, value in demographics.items():
        allowed = DEMOGRAPHIC_FIELDS.get(key)
        if allowed is None:
            raise InvalidDemographics(f"unknown demographic field {key!r}")
        if value not in allowed:
            raise InvalidDemographics(f"{key} must be one of {allowed}, got {value!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class Rater:
    session_id: str
    created_at: float  # epoch seconds, UTC
    demographics: dict[str, str] | None = None

    def group(self, attribute: str) -> str | None:
        if attribute not in DEMOGRAPHIC_FIELDS:
            raise KeyError(f"unknown grouping attribute {attribute!r}")
        return (self.demographics or {}).get(attribute)


@dataclass(frozen=True)
class Vote:
    vote_id: int
    session_id: str
    left_image: str
    right_image: str
    choice: str  # one of CHOICES
    pair_kind: str  # one of PAIR_KINDS
    client_ts: float | None
    server_ts: float  # epoch seconds, UTC; non-decreasing in vote_id

    def __post_init__(self) -> None:
        if self.left_image == self.right_image:
            raise ValueError("a vote needs two distinct images")
        if self.choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}: {self.choice!r}")
        if self.pair_kind not in PAIR_KINDS:
            raise ValueError(f"pair_kind must be one of {PAIR_KINDS}: {self.pair_kind!r}")

    @property
    def pair(self) -> frozenset:
        return frozenset((self.left_image, self.right_image))

    @property
    def chosen_image(self) -> str | None:
        """The image the rater picked; None for the non-answer categories."""
        if self.choice == "left":
            return self.left_image
        if self.choice == "right":
            return self.right_image
        return None


def iso_utc(ts: float) -> str:
    """Epoch seconds -> ISO-8601 UTC string at microsecond precision."""
    return datetime.fromtimestamp(round(ts, 6), tz=timezone.utc).isoformat()


def parse_ts(text: str) -> float:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()


def write_votes_csv(votes: Iterable[Vote], path: str | Path) -> None:
    """Dump votes in vote_id order; byte-stable for identical content."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "vote_id",
                "session_id",
                "left_image",
                "right_image",
                "choice",
                "pair_kind",
                "client_ts",
                "server_ts",
            ]
        )
        for v in sorted(votes, key=lambda v: v.vote_id):
            writer.writerow(
                [
                    v.vote_id,
                    v.session_id,
                    v.left_image,
                    v.right_image,
                    v.choice,
                    v.pair_kind,
                    iso_utc(v.client_ts) if v.client_ts is not None else "",
                    iso_utc(v.server_ts),
                ]
            )


def read_votes_csv(path: str | Path) -> list[Vote]:
    votes: list[Vote] = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            votes.append(
                Vote(
                    vote_id=int(rec["vote_id"]),
                    session_id=rec["session_id"],
                    left_image=rec["left_image"],
                    right_image=rec["right_image"],
                    choice=rec["choice"],
                    pair_kind=rec["pair_kind"],
                    client_ts=parse_ts(rec["client_ts"]) if rec["client_ts"] else None,
                    server_ts=parse_ts(rec["server_ts"]),
                )
            )
    return votes


def write_sessions_csv(sessions: Iterable[Rater], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "created_at", "location", "gender", "activity", "source"])
        for s in sessions:
            demo = s.demographics or {}
            writer.writerow(
                [
                    s.session_id,
                    iso_utc(s.created_at),
                    demo.get("location", ""),
                    demo.get("gender", ""),
                    demo.get("activity", ""),
                    demo.get("source", ""),
                ]
            )


def read_sessions_csv(path: str | Path) -> list[Rater]:
    sessions: list[Rater] = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            demo = {
                key: rec[key]
                for key in DEMOGRAPHIC_FIELDS
                if rec.get(key)
            }
            sessions.append(
                Rater(
                    session_id=rec["session_id"],
                    created_at=parse_ts(rec["created_at"]),
                    demographics=validate_demographics(demo) if demo else None,
                )
            )
    return sessions


def sessions_by_id(sessions: Sequence[Rater]) -> dict[str, Rater]:
    return {s.session_id: s for s in sessions}
