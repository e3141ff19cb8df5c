"""Image corpus: feature ingestion, clustering, stratified survey draws.

Feature vectors arrive precomputed (one dense embedding per image); this
module only stores them, groups images into built-environment strata with
k-means, and draws the survey subset proportionally to stratum sizes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geo import GeoPoint

DEFAULT_K = 8
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 300


class CorpusError(ValueError):
    pass


@dataclass
class Corpus:
    """Immutable-after-ingest image table; rows align across all arrays."""

    image_ids: list[str]
    locations: list[GeoPoint]
    years: list[int]
    features: np.ndarray  # (n, d)

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def dim(self) -> int | None:
        return None if len(self) == 0 else int(self.features.shape[1])

    def index_of(self) -> dict[str, int]:
        return {img: i for i, img in enumerate(self.image_ids)}


def ingest_features(path: str | Path) -> Corpus:
    """Load a corpus from CSV ``image_id,lat,lon,year,f0,...,f{d-1}``.

    Raises CorpusError naming the offending line for ragged rows and for
    duplicate image ids. A header-only file yields an empty corpus.
    """
    ids: list[str] = []
    locs: list[GeoPoint] = []
    years: list[int] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim: int | None = None

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CorpusError(f"{path}: empty file, expected a header row")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) < 4:
                raise CorpusError(f"{path}:{lineno}: expected image_id,lat,lon,year,features...")
            img = rec[0]
            if img in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate image_id {img!r}")
            feats = [float(v) for v in rec[4:]]
            if dim is None:
                dim = len(feats)
            elif len(feats) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: row has {len(feats)} feature values, expected {dim}"
                )
            seen.add(img)
            ids.append(img)
            locs.append(GeoPoint(float(rec[1]), float(rec[2])))
            years.append(int(rec[3]))
            rows.append(feats)

    features = np.array(rows, dtype=float) if rows else np.zeros((0, 0))
    return Corpus(image_ids=ids, locations=locs, years=years, features=features)


@dataclass
class KMeansResult:
    k: int
    seed: int
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,) int
    n_iter: int
    inertia: float
    inertia_history: list[float] = field(default_factory=list)

    def labels_by_id(self, image_ids: Sequence[str]) -> dict[str, int]:
        return {img: int(c) for img, c in zip(image_ids, self.assignments)}


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Spread-out initial centroids: each next one drawn ∝ squared distance."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a centroid
            centroids[i] = x[rng.integers(n)]
            continue
        centroids[i] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(
    features: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> KMeansResult:
    """Lloyd's algorithm with spread-out (k-means++) seeding.

    Deterministic given ``seed``. Stops when the relative centroid shift
    drops below ``tol`` or after ``max_iter`` sweeps. The recorded inertia
    history (within-cluster sum of squares after each assignment step) is
    non-increasing.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise CorpusError("kmeans needs a non-empty (n, d) feature matrix")
    if k < 1:
        raise CorpusError("k must be >= 1")
    n_distinct = np.unique(x, axis=0).shape[0]
    if k > n_distinct:
        raise CorpusError(f"k={k} exceeds the {n_distinct} distinct feature vectors")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(x, k, rng)

    history: list[float] = []
    labels = np.zeros(x.shape[0], dtype=int)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(x.shape[0]), labels].sum()))

        new_centroids = centroids.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                # relocate an empty cluster onto the worst-served point
                worst = int(np.argmax(d2[np.arange(x.shape[0]), labels]))
                new_centroids[j] = x[worst]

        shift = np.sqrt(((new_centroids - centroids) ** 2).sum())
        scale = max(np.sqrt((centroids**2).sum()), 1e-12)
        centroids = new_centroids
        if shift / scale < tol:
            break

    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    history.append(inertia)
    return KMeansResult(
        k=k,
        seed=seed,
        centroids=centroids,
        assignments=labels,
        n_iter=n_iter,
        inertia=inertia,
        inertia_history=history,
    )


def stratified_sample(
    image_ids: Sequence[str],
    assignments: Mapping[str, int] | np.ndarray,
    n: int,
    seed: int = 0,
) -> list[str]:
    """Draw ``n`` images with per-cluster quotas proportional to cluster size.

    Quotas use largest-remainder rounding, so each cluster's count differs
    from exact proportionality by less than one. Within a cluster the draw
    is uniform without replacement. Deterministic given ``seed``.
    """
    if n > len(image_ids):
        raise CorpusError(f"cannot sample {n} from a corpus of {len(image_ids)}")
    if n < 0:
        raise CorpusError("n must be non-negative")

    if isinstance(assignments, np.ndarray):
        label_of = {img: int(c) for img, c in zip(image_ids, assignments)}
    else:
        label_of = {img: int(assignments[img]) for img in image_ids}

    members: dict[int, list[str]] = {}
    for img in sorted(image_ids):
        members.setdefault(label_of[img], []).append(img)

    clusters = sorted(members)
    total = len(image_ids)
    quotas = {c: n * len(members[c]) / total for c in clusters}
    counts = {c: int(quotas[c]) for c in clusters}
    shortfall = n - sum(counts.values())
    # hand the leftover draws to the largest fractional remainders
    by_remainder = sorted(clusters, key=lambda c: (counts[c] - quotas[c], c))
    for c in by_remainder[:shortfall]:
        counts[c] += 1

    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    for c in clusters:
        take = counts[c]
        if take:
            picks = rng.choice(len(members[c]), size=take, replace=False)
            chosen.extend(members[c][i] for i in sorted(picks))
    return chosen


def write_assignments(
    image_ids: Sequence[str], assignments: np.ndarray, path: str | Path
) -> None:
    """Write cluster labels as CSV ``image_id,cluster``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "cluster"])
        for img, c in zip(image_ids, assignments):
            writer.writerow([img, int(c)])


def read_assignments(path: str | Path) -> dict[str, int]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {rec["image_id"]: int(rec["cluster"]) for rec in reader}
