"""Survey back-end state machine.

Registers rater sessions, serves image pairs, and records votes. Every
state change is appended to a durable event log before it is acknowledged,
so a crash never loses an acked vote; restart replays the log (plus an
optional snapshot) and resumes. One coarse lock serialises mutations,
which keeps the vote log totally ordered and is ample for survey-scale
traffic.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .records import (
    CHOICES,
    Rater,
    Vote,
    validate_demographics,
    write_sessions_csv,
    write_votes_csv,
)
from .scheduler import PairScheduler, PoolExhausted, SchedulerConfig
from .store import EventLog


class UnknownSession(KeyError):
    pass


class StaleToken(Exception):
    """The submitted pair token does not match the session's outstanding pair."""


class DemographicsConflict(Exception):
    """Demographics are immutable once set."""


@dataclass(frozen=True)
class ServedPair:
    token: str
    left: str
    right: str
    kind: str


class SurveyService:
    def __init__(
        self,
        store_dir: str | Path,
        image_ids: Sequence[str],
        clusters: Mapping[str, int] | None = None,
        config: SchedulerConfig | None = None,
        clock: Callable[[], float] = time.time,
        id_factory: Callable[[], str] | None = None,
        fsync: bool = True,
        snapshot_every: int = 1000,
    ) -> None:
        self._lock = threading.RLock()
        self._clock = clock
        self._id_factory = id_factory or (lambda: secrets.token_hex(12))
        self._snapshot_every = snapshot_every

        self._scheduler = PairScheduler(image_ids, clusters, config or SchedulerConfig())
        self._n_images = len(set(image_ids))

        self._sessions: dict[str, Rater] = {}
        self._session_order: list[str] = []
        self._votes: list[Vote] = []
        self._token_votes: dict[str, int] = {}
        self._outstanding: dict[str, ServedPair] = {}
        self._served_repeats: dict[str, list[list[str]]] = {}
        self._next_vote_id = 1
        self._pair_serial = 0
        self._last_ts = 0.0

        self._log = EventLog(store_dir, fsync=fsync)
        self._recover()

    # recovery -------------------------------------------------------------

    def _recover(self) -> None:
        state, offset = self._log.read_snapshot()
        if state is not None:
            self._load_state(state)
        for event in self._log.replay(offset):
            self._apply(event)

    def _apply(self, event: dict[str, Any]) -> None:
        kind = event["type"]
        if kind == "session":
            rater = Rater(
                session_id=event["session_id"],
                created_at=event["created_at"],
                demographics=event.get("demographics"),
            )
            self._sessions[rater.session_id] = rater
            self._session_order.append(rater.session_id)
        elif kind == "demographics":
            sid = event["session_id"]
            self._sessions[sid] = replace(self._sessions[sid], demographics=event["demographics"])
        elif kind == "pair":
            sid = event["session_id"]
            pair = ServedPair(event["token"], event["left"], event["right"], event["kind"])
            self._outstanding[sid] = pair
            self._pair_serial = max(self._pair_serial, event["serial"])
            if pair.kind == "repeated":
                self._served_repeats.setdefault(sid, []).append([pair.left, pair.right])
                self._scheduler.mark_repeat_served(sid, pair.left, pair.right)
        elif kind == "vote":
            vote = Vote(
                vote_id=event["vote_id"],
                session_id=event["session_id"],
                left_image=event["left"],
                right_image=event["right"],
                choice=event["choice"],
                pair_kind=event["kind"],
                client_ts=event.get("client_ts"),
                server_ts=event["server_ts"],
            )
            self._votes.append(vote)
            self._token_votes[event["token"]] = vote.vote_id
            self._scheduler.record_vote(vote.session_id, vote.left_image, vote.right_image)
            self._outstanding.pop(vote.session_id, None)
            self._next_vote_id = max(self._next_vote_id, vote.vote_id + 1)
            self._last_ts = max(self._last_ts, vote.server_ts)

    def _state_dict(self) -> dict[str, Any]:
        return {
            "sessions": [
                {
                    "session_id": sid,
                    "created_at": self._sessions[sid].created_at,
                    "demographics": self._sessions[sid].demographics,
                }
                for sid in self._session_order
            ],
            "votes": [
                {
                    "vote_id": v.vote_id,
                    "session_id": v.session_id,
                    "left": v.left_image,
                    "right": v.right_image,
                    "choice": v.choice,
                    "kind": v.pair_kind,
                    "client_ts": v.client_ts,
                    "server_ts": v.server_ts,
                }
                for v in self._votes
            ],
            "token_votes": self._token_votes,
            "outstanding": {
                sid: [p.token, p.left, p.right, p.kind] for sid, p in self._outstanding.items()
            },
            "served_repeats": self._served_repeats,
            "next_vote_id": self._next_vote_id,
            "pair_serial": self._pair_serial,
            "last_ts": self._last_ts,
        }

    def _load_state(self, state: dict[str, Any]) -> None:
        for rec in state["sessions"]:
            rater = Rater(rec["session_id"], rec["created_at"], rec.get("demographics"))
            self._sessions[rater.session_id] = rater
            self._session_order.append(rater.session_id)
        for rec in state["votes"]:
            vote = Vote(
                vote_id=rec["vote_id"],
                session_id=rec["session_id"],
                left_image=rec["left"],
                right_image=rec["right"],
                choice=rec["choice"],
                pair_kind=rec["kind"],
                client_ts=rec.get("client_ts"),
                server_ts=rec["server_ts"],
            )
            self._votes.append(vote)
            self._scheduler.record_vote(vote.session_id, vote.left_image, vote.right_image)
        self._token_votes = dict(state["token_votes"])
        for sid, (token, left, right, kind) in state["outstanding"].items():
            self._outstanding[sid] = ServedPair(token, left, right, kind)
        self._served_repeats = {sid: list(pairs) for sid, pairs in state["served_repeats"].items()}
        for sid, pairs in self._served_repeats.items():
            for left, right in pairs:
                self._scheduler.mark_repeat_served(sid, left, right)
        self._next_vote_id = state["next_vote_id"]
        self._pair_serial = state["pair_serial"]
        self._last_ts = state["last_ts"]

    # session lifecycle ------------------------------------------------------

    def create_session(
        self, demographics: dict[str, str] | None = None, session_id: str | None = None
    ) -> str:
        demographics = validate_demographics(demographics)
        with self._lock:
            sid = session_id or self._id_factory()
            if sid in self._sessions:
                raise ValueError(f"session id collision: {sid!r}")
            created_at = round(self._clock(), 6)
            self._log.append(
                {
                    "type": "session",
                    "session_id": sid,
                    "created_at": created_at,
                    "demographics": demographics,
                }
            )
            self._apply_session(sid, created_at, demographics)
            return sid

    def _apply_session(self, sid: str, created_at: float, demo: dict[str, str] | None) -> None:
        self._sessions[sid] = Rater(sid, created_at, demo)
        self._session_order.append(sid)

    def set_demographics(self, session_id: str, demographics: dict[str, str]) -> None:
        demographics = validate_demographics(demographics)
        with self._lock:
            rater = self._sessions.get(session_id)
            if rater is None:
                raise UnknownSession(session_id)
            if rater.demographics is not None:
                raise DemographicsConflict(session_id)
            self._log.append(
                {"type": "demographics", "session_id": session_id, "demographics": demographics}
            )
            self._sessions[session_id] = replace(rater, demographics=demographics)

    def get_session(self, session_id: str) -> Rater:
        with self._lock:
            rater = self._sessions.get(session_id)
            if rater is None:
                raise UnknownSession(session_id)
            return rater

    # pair / vote state machine ----------------------------------------------

    def get_pair(self, session_id: str) -> ServedPair | None:
        """Current pair for the session; None once its pool is exhausted.

        Idempotent: repeated calls re-serve the outstanding pair until a
        vote for it lands.
        """
        with self._lock:
            if session_id not in self._sessions:
                raise UnknownSession(session_id)
            pair = self._outstanding.get(session_id)
            if pair is not None:
                return pair
            try:
                left, right, kind = self._scheduler.next_pair(session_id)
            except PoolExhausted:
                return None
            self._pair_serial += 1
            token = f"{session_id}.{self._pair_serial}"
            self._log.append(
                {
                    "type": "pair",
                    "session_id": session_id,
                    "token": token,
                    "left": left,
                    "right": right,
                    "kind": kind,
                    "serial": self._pair_serial,
                }
            )
            pair = ServedPair(token, left, right, kind)
            self._outstanding[session_id] = pair
            if kind == "repeated":
                self._served_repeats.setdefault(session_id, []).append([left, right])
            return pair

    def post_vote(
        self,
        session_id: str,
        pair_token: str,
        choice: str,
        client_ts: float | None = None,
    ) -> int:
        """Durably record a vote; returns its id. Replays of a token are idempotent."""
        if choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}: {choice!r}")
        with self._lock:
            if session_id not in self._sessions:
                raise UnknownSession(session_id)
            existing = self._token_votes.get(pair_token)
            if existing is not None:
                prior = self._votes[existing - 1]
                if prior.session_id != session_id:
                    raise StaleToken(pair_token)
                return existing
            pair = self._outstanding.get(session_id)
            if pair is None or pair.token != pair_token:
                raise StaleToken(pair_token)

            vote_id = self._next_vote_id
            server_ts = round(max(self._clock(), self._last_ts), 6)
            event = {
                "type": "vote",
                "vote_id": vote_id,
                "session_id": session_id,
                "token": pair_token,
                "left": pair.left,
                "right": pair.right,
                "choice": choice,
                "kind": pair.kind,
                "client_ts": client_ts,
                "server_ts": server_ts,
            }
            self._log.append(event)  # durable before the ack
            self._votes.append(
                Vote(
                    vote_id=vote_id,
                    session_id=session_id,
                    left_image=pair.left,
                    right_image=pair.right,
                    choice=choice,
                    pair_kind=pair.kind,
                    client_ts=client_ts,
                    server_ts=server_ts,
                )
            )
            self._token_votes[pair_token] = vote_id
            self._scheduler.record_vote(session_id, pair.left, pair.right)
            del self._outstanding[session_id]
            self._next_vote_id = vote_id + 1
            self._last_ts = server_ts
            if vote_id % self._snapshot_every == 0:
                self._log.write_snapshot(self._state_dict(), self._log.offset)
            return vote_id

    # reporting / export -------------------------------------------------------

    def stats(self) -> dict[str, Any]:
        with self._lock:
            by_choice = {c: 0 for c in CHOICES}
            for v in self._votes:
                by_choice[v.choice] += 1
            games = by_choice["left"] + by_choice["right"]
            return {
                "sessions": len(self._sessions),
                "images": self._n_images,
                "votes": by_choice,
                "total_votes": len(self._votes),
                "games_multiplier": games / self._n_images if self._n_images else 0.0,
            }

    def votes(self) -> list[Vote]:
        with self._lock:
            return list(self._votes)

    def sessions(self) -> list[Rater]:
        with self._lock:
            return [self._sessions[sid] for sid in self._session_order]

    def export_votes(self, path: str | Path) -> None:
        write_votes_csv(self.votes(), path)

    def export_sessions(self, path: str | Path) -> None:
        write_sessions_csv(self.sessions(), path)

    def close(self) -> None:
        self._log.close()
