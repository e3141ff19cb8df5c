"""Pair scheduling for survey sessions.

Pairs are mostly drawn fresh, biased toward images from the same visual
cluster by a mixing coefficient ``alpha``; a small fraction of requests
serve designated repeated pairs so inter-rater agreement can be measured.
Every session has its own RNG derived from (global seed, session id), so a
run is reproducible given the seed and the request sequence.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

DEFAULT_REPEAT_RATE = 0.05
_REJECTION_TRIES = 200


class PoolExhausted(Exception):
    """The session has voted on every available pair."""


@dataclass(frozen=True)
class SchedulerConfig:
    alpha: float = 0.0
    repeat_rate: float = DEFAULT_REPEAT_RATE
    repeated_pairs: tuple[tuple[str, str], ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1]: {self.alpha}")
        if not 0.0 <= self.repeat_rate <= 1.0:
            raise ValueError(f"repeat_rate must be in [0, 1]: {self.repeat_rate}")
        for a, b in self.repeated_pairs:
            if a == b:
                raise ValueError(f"repeated pair has identical members: {a!r}")


@dataclass
class _SessionState:
    rng: random.Random
    voted: set[frozenset] = field(default_factory=set)
    repeats_served: set[frozenset] = field(default_factory=set)


class PairScheduler:
    """Draws the next image pair for each session.

    Draw procedure per request: with probability ``repeat_rate`` serve a
    not-yet-seen repeated pair (uniformly); otherwise with probability
    ``alpha`` pick one cluster uniformly and draw both images from it, else
    draw both images from the whole set. Pairs the session has already
    voted on are rejected and the whole procedure re-runs. Left/right
    placement is a fair coin.
    """

    def __init__(
        self,
        image_ids: Sequence[str],
        clusters: Mapping[str, int] | None,
        config: SchedulerConfig,
    ) -> None:
        self.config = config
        self._ids = sorted(set(image_ids))
        if len(self._ids) < 2:
            raise ValueError("survey set needs at least 2 images")
        known = set(self._ids)
        for a, b in config.repeated_pairs:
            if a not in known or b not in known:
                raise ValueError(f"repeated pair ({a!r}, {b!r}) references unknown images")

        members: dict[int, list[str]] = {}
        for img in self._ids:
            label = clusters.get(img, 0) if clusters else 0
            members.setdefault(label, []).append(img)
        # clusters of one can never produce a pair
        self._clusters = [members[c] for c in sorted(members) if len(members[c]) >= 2]
        self._sessions: dict[str, _SessionState] = {}

    def _state(self, session_id: str) -> _SessionState:
        if session_id not in self._sessions:
            rng = random.Random(f"{self.config.seed}:{session_id}")
            self._sessions[session_id] = _SessionState(rng=rng)
        return self._sessions[session_id]

    def next_pair(self, session_id: str) -> tuple[str, str, str]:
        """Return (left_image, right_image, kind) with kind fresh|repeated."""
        st = self._state(session_id)
        n = len(self._ids)
        if len(st.voted) >= n * (n - 1) // 2:
            raise PoolExhausted(session_id)

        pair, kind = self._draw(st)
        if pair is None:
            pair = self._scan_unseen(st)
            if pair is None:
                raise PoolExhausted(session_id)
            kind = "fresh"

        if kind == "repeated":
            st.repeats_served.add(frozenset(pair))
        a, b = pair
        if st.rng.random() < 0.5:
            a, b = b, a
        return a, b, kind

    def _draw(self, st: _SessionState) -> tuple[tuple[str, str] | None, str]:
        rng = st.rng
        for _ in range(_REJECTION_TRIES):
            if self.config.repeated_pairs and rng.random() < self.config.repeat_rate:
                unused = [
                    p
                    for p in self.config.repeated_pairs
                    if frozenset(p) not in st.repeats_served and frozenset(p) not in st.voted
                ]
                if unused:
                    return unused[rng.randrange(len(unused))], "repeated"
            if self.config.alpha > 0 and self._clusters and rng.random() < self.config.alpha:
                pool = self._clusters[rng.randrange(len(self._clusters))]
            else:
                pool = self._ids
            pair = tuple(rng.sample(pool, 2))
            if frozenset(pair) not in st.voted:
                return pair, "fresh"
        return None, "fresh"

    def _scan_unseen(self, st: _SessionState) -> tuple[str, str] | None:
        # rejection sampling stalled: the pool is nearly exhausted, so an
        # ordered scan is cheap relative to what remains
        for i, a in enumerate(self._ids):
            for b in self._ids[i + 1 :]:
                if frozenset((a, b)) not in st.voted:
                    return a, b
        return None

    def record_vote(self, session_id: str, left: str, right: str) -> None:
        """Mark an unordered pair as consumed for this session."""
        self._state(session_id).voted.add(frozenset((left, right)))

    def mark_repeat_served(self, session_id: str, left: str, right: str) -> None:
        """Replay hook: note that a repeated pair was already served."""
        self._state(session_id).repeats_served.add(frozenset((left, right)))

    def has_voted(self, session_id: str, left: str, right: str) -> bool:
        return frozenset((left, right)) in self._state(session_id).voted


def calibrate_alpha(
    cluster_sizes: Sequence[int], target_within_fraction: float
) -> float:
    """Mixing coefficient that yields a target within-cluster pair fraction.

    With cluster probabilities p_c, uniform pairing already produces a
    within-cluster fraction of sum(p_c^2); forcing a within-cluster draw
    with probability alpha gives alpha + (1 - alpha) * sum(p_c^2). Solving
    for alpha requires target >= baseline.
    """
    total = sum(cluster_sizes)
    if total <= 0:
        raise ValueError("cluster sizes must sum to a positive count")
    baseline = sum((s / total) ** 2 for s in cluster_sizes)
    if target_within_fraction < baseline - 1e-12:
        raise ValueError(
            f"target {target_within_fraction} is below the uniform baseline {baseline:.6f}"
        )
    if 1.0 - baseline < 1e-12:  # single cluster: already all-within
        return 0.0
    return min(1.0, (target_within_fraction - baseline) / (1.0 - baseline))


def load_repeated_pairs(path: str | Path) -> tuple[tuple[str, str], ...]:
    """Load designated repeated pairs from CSV ``left_id,right_id``."""
    pairs: list[tuple[str, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            pairs.append((rec["left_id"], rec["right_id"]))
    return tuple(pairs)


def load_scheduler_config(path: str | Path) -> SchedulerConfig:
    """Parse a ``key = value`` config file.

    Recognised keys: alpha, repeat_rate, seed, repeated_pairs (path to a
    CSV, resolved relative to the config file). '#' starts a comment.
    """
    path = Path(path)
    values: dict[str, str] = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val

    pairs: tuple[tuple[str, str], ...] = ()
    if "repeated_pairs" in values:
        pairs = load_repeated_pairs(path.parent / values["repeated_pairs"])
    return SchedulerConfig(
        alpha=float(values.get("alpha", 0.0)),
        repeat_rate=float(values.get("repeat_rate", DEFAULT_REPEAT_RATE)),
        repeated_pairs=pairs,
        seed=int(values.get("seed", 0)),
    )
