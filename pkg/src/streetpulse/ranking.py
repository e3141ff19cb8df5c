"""Two-player Gaussian skill ratings over pairwise games, plus score scaling.

Each image holds a Gaussian belief (mu, sigma) starting at (25, 25/3).
A win pulls the winner's mu up and the loser's down by an amount that
grows with how surprising the outcome was, and both sigmas shrink; the
update is the exact moment-matched posterior for the win/loss factor.
Draws are disabled: non-answer vote categories never reach this module.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from scipy.special import log_ndtr

from .records import Vote

MU0 = 25.0
SIGMA0 = 25.0 / 3.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SkillScore:
    mu: float = MU0
    sigma: float = SIGMA0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError("skill scores must be finite")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class RankingParams:
    mu0: float = MU0
    sigma0: float = SIGMA0
    beta: float = SIGMA0 / 2.0  # performance noise
    tau: float = 0.0  # dynamics noise; images are static, so none by default
    epsilon: float = 0.0  # draw margin, unused while draws are disabled

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


def _v_and_w(t: float) -> tuple[float, float]:
    """Truncated-Gaussian correction terms v(t) = pdf(t)/cdf(t), w = v(v+t).

    Computed in log space so deep-tail t (a very surprising win) cannot
    underflow the denominator.
    """
    log_pdf = -0.5 * t * t - _LOG_SQRT_2PI
    v = math.exp(log_pdf - log_ndtr(t))
    return v, v * (v + t)


def update(
    winner: SkillScore, loser: SkillScore, params: RankingParams | None = None
) -> tuple[SkillScore, SkillScore]:
    """Posterior (winner, loser) beliefs after one win/loss game."""
    params = params or RankingParams()
    var_w = winner.sigma**2 + params.tau**2
    var_l = loser.sigma**2 + params.tau**2
    c2 = var_w + var_l + 2.0 * params.beta**2
    c = math.sqrt(c2)

    t = (winner.mu - loser.mu) / c
    v, w = _v_and_w(t)

    new_winner = SkillScore(
        mu=winner.mu + (var_w / c) * v,
        sigma=math.sqrt(var_w * max(1.0 - (var_w / c2) * w, 1e-15)),
    )
    new_loser = SkillScore(
        mu=loser.mu - (var_l / c) * v,
        sigma=math.sqrt(var_l * max(1.0 - (var_l / c2) * w, 1e-15)),
    )
    return new_winner, new_loser


def rank_all(
    votes: Sequence[Vote],
    image_ids: Sequence[str],
    params: RankingParams | None = None,
) -> dict[str, SkillScore]:
    """Score every image from usable games, replayed in server-time order.

    Votes are applied chronologically by (server_ts, vote_id), which pins
    the order-sensitive updates to a reproducible sequence. Non-answer
    votes are ignored. Unknown image ids are an error.
    """
    params = params or RankingParams()
    scores = {img: SkillScore(params.mu0, params.sigma0) for img in image_ids}
    for vote in sorted(votes, key=lambda v: (v.server_ts, v.vote_id)):
        chosen = vote.chosen_image
        if chosen is None:
            continue
        other = vote.right_image if chosen == vote.left_image else vote.left_image
        if chosen not in scores or other not in scores:
            missing = chosen if chosen not in scores else other
            raise KeyError(f"vote {vote.vote_id} references unknown image {missing!r}")
        scores[chosen], scores[other] = update(scores[chosen], scores[other], params)
    return scores


def mean_sigma(scores: Mapping[str, SkillScore]) -> float:
    if not scores:
        raise ValueError("empty score map")
    return sum(s.sigma for s in scores.values()) / len(scores)


def _mu_of(value: SkillScore | float) -> float:
    return value.mu if isinstance(value, SkillScore) else float(value)


def scale_scores(scores: Mapping[str, SkillScore | float]) -> dict[str, float]:
    """Min-max scale score means onto [0, 10]."""
    if len(scores) < 2:
        raise ValueError("need at least 2 scores to scale")
    mus = {img: _mu_of(s) for img, s in scores.items()}
    lo, hi = min(mus.values()), max(mus.values())
    if hi == lo:
        raise ValueError("degenerate score range: all means identical")
    # ratio first: endpoints land exactly on 0 and 10
    return {img: 10.0 * ((m - lo) / (hi - lo)) for img, m in mus.items()}


def decile_buckets(values: Mapping[str, float], n_buckets: int = 10) -> dict[str, int]:
    """Quantile bucket (1..n_buckets) per key, lower-closed on value.

    Bucket edges sit at the k/n quantiles of the value multiset; an item
    lands in the highest bucket whose lower edge it reaches. Repeated
    values always share a bucket, so heavy ties produce uneven (possibly
    empty) buckets by design.
    """
    if not values:
        return {}
    ordered = sorted(values.values())
    n = len(ordered)
    edges = [ordered[math.ceil(k * n / n_buckets)] for k in range(1, n_buckets)]
    return {
        key: 1 + sum(1 for e in edges if val >= e) for key, val in values.items()
    }


def decile_weights(scaled_scores: Mapping[str, float]) -> dict[str, float]:
    """Oversampling weights that equalise the expected mass per decile.

    weight_i = N / (10 * n_decile(i)), so every populated decile carries
    total weight N/10. Fewer than 10 distinct values collapses buckets;
    that is allowed but warned about.
    """
    if len(scaled_scores) < 10:
        raise ValueError("need at least 10 images for decile weights")
    if len(set(scaled_scores.values())) < 10:
        warnings.warn("fewer than 10 distinct scores: decile buckets collapse", stacklevel=2)
    buckets = decile_buckets(scaled_scores)
    counts: dict[int, int] = {}
    for b in buckets.values():
        counts[b] = counts.get(b, 0) + 1
    n = len(scaled_scores)
    return {img: n / (10.0 * counts[buckets[img]]) for img in scaled_scores}


def write_scores_csv(scores: Mapping[str, SkillScore], path: str | Path) -> None:
    """Full score table: ``image_id,mu,sigma,scaled,decile,weight``."""
    scaled = scale_scores(scores)
    weights = decile_weights(scaled)
    buckets = decile_buckets(scaled)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "mu", "sigma", "scaled", "decile", "weight"])
        for img in sorted(scores):
            s = scores[img]
            writer.writerow(
                [img, repr(s.mu), repr(s.sigma), repr(scaled[img]), buckets[img], repr(weights[img])]
            )


def read_scores_csv(path: str | Path, column: str = "scaled") -> dict[str, float]:
    """Read a per-image score map; accepts the full table or ``image_id,score``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        col = column if column in fields else "score"
        if col not in fields:
            raise ValueError(f"{path}: no {column!r} or 'score' column")
        return {rec["image_id"]: float(rec[col]) for rec in reader}
