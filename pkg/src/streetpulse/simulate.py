"""Synthetic survey fixture: a small city with scripted raters.

Builds every input file the pipeline consumes (roads, image features,
output areas, scene-feature tables) plus a vote log produced by driving
the real survey service with simulated raters. Image quality follows a
south-to-north gradient, rater choices are noisy comparisons of that
latent quality, and a few deliberately pathological raters (one-sided
clickers, duplicated database rows) are planted for the QA filters to
catch. Fully deterministic given the seed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import EARTH_RADIUS_M, GeoPoint
from .records import Vote, write_sessions_csv, write_votes_csv
from .scheduler import SchedulerConfig
from .service import SurveyService

CITY_ORIGIN = GeoPoint(51.45, -0.15)
CITY_SIZE_M = 1000.0
M_PER_DEG_LAT = math.pi * EARTH_RADIUS_M / 180.0

FEATURE_EFFECTS = {
    # scene feature -> (semantics, quality loading); mirrors walkable-street cues
    "sidewalk": ("fraction", 0.9),
    "terrain": ("fraction", 0.5),
    "road": ("fraction", 0.3),
    "car": ("count", 0.25),
    "truck": ("count", -0.6),
    "bus": ("count", -0.45),
    "sky": ("fraction", -0.5),
    "fence": ("fraction", -0.25),
    "pole": ("count", 0.0),
    "bench": ("count", 0.0),
}


@dataclass
class FixtureWorld:
    image_ids: list[str]
    locations: dict[str, GeoPoint]
    quality: dict[str, float]
    clusters: dict[str, int]


def _offset(north_m: float, east_m: float) -> GeoPoint:
    lat = CITY_ORIGIN.lat + north_m / M_PER_DEG_LAT
    lon = CITY_ORIGIN.lon + east_m / (
        M_PER_DEG_LAT * math.cos(math.radians(CITY_ORIGIN.lat))
    )
    return GeoPoint(lat, lon)


def _make_world(n_images: int, rng: np.random.Generator) -> FixtureWorld:
    ids, locations, quality, clusters = [], {}, {}, {}
    for i in range(n_images):
        img = f"img{i:04d}"
        north = float(rng.uniform(0, CITY_SIZE_M))
        east = float(rng.uniform(0, CITY_SIZE_M))
        ids.append(img)
        locations[img] = _offset(north, east)
        # quality rises to the north with street-level noise
        quality[img] = 6.0 * (north / CITY_SIZE_M) + float(rng.normal(0, 0.8))
        clusters[img] = int(2 * (north > CITY_SIZE_M / 2) + (east > CITY_SIZE_M / 2))
    return FixtureWorld(ids, locations, quality, clusters)


def _write_roads(path: Path, rng: np.random.Generator) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "lat", "lon", "bearing"])
        for street in range(6):
            north = 80.0 + street * 170.0
            for j, east in enumerate(np.arange(0.0, CITY_SIZE_M + 1.0, 20.0)):
                pt = _offset(north, float(east))
                writer.writerow([f"s{street}_{j:03d}", repr(pt.lat), repr(pt.lon), 90.0])


def _write_features(path: Path, world: FixtureWorld, rng: np.random.Generator, dim: int = 8) -> None:
    centers = rng.normal(0, 4.0, size=(4, dim))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "lat", "lon", "year"] + [f"f{k}" for k in range(dim)])
        for img in world.image_ids:
            vec = centers[world.clusters[img]] + rng.normal(0, 0.6, size=dim)
            pt = world.locations[img]
            writer.writerow([img, repr(pt.lat), repr(pt.lon), 2018] + [repr(float(v)) for v in vec])


def _write_areas(path: Path, grid: int = 5) -> None:
    features = []
    step = CITY_SIZE_M / grid
    for gy in range(grid):
        for gx in range(grid):
            corners = [
                _offset(gy * step, gx * step),
                _offset(gy * step, (gx + 1) * step),
                _offset((gy + 1) * step, (gx + 1) * step),
                _offset((gy + 1) * step, gx * step),
                _offset(gy * step, gx * step),
            ]
            features.append(
                {
                    "type": "Feature",
                    "properties": {"oa_id": f"oa{gy}{gx}"},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[round(c.lon, 6), round(c.lat, 6)] for c in corners]],
                    },
                }
            )
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))


def _write_feature_table(
    table_path: Path, meta_path: Path, world: FixtureWorld, rng: np.random.Generator
) -> None:
    names = list(FEATURE_EFFECTS)
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id"] + names)
        q = np.array([world.quality[i] for i in world.image_ids])
        zq = (q - q.mean()) / q.std()
        for row, img in enumerate(world.image_ids):
            values = []
            for name in names:
                kind, loading = FEATURE_EFFECTS[name]
                raw = loading * zq[row] + float(rng.normal(0, 0.7))
                if kind == "fraction":
                    values.append(round(1.0 / (1.0 + math.exp(-raw)), 6))
                else:
                    values.append(max(0, int(round(2.0 + 1.5 * raw))))
            writer.writerow([img] + values)
    meta_path.write_text(
        json.dumps({name: kind for name, (kind, _) in FEATURE_EFFECTS.items()}, indent=2)
    )


def simulate_survey(
    store_dir: Path,
    world: FixtureWorld,
    seed: int,
    n_raters: int = 24,
    votes_per_rater: int = 90,
    repeat_rate: float = 0.12,
    n_repeated_pairs: int = 14,
) -> SurveyService:
    """Drive the real service with scripted raters; returns it for export.

    Raters compare latent quality through a logistic choice with noise;
    two raters always click one side and one rater's games are later
    duplicated in the exports, giving the QA filters real work.
    """
    rng = np.random.default_rng(seed)
    ids = sorted(world.image_ids)
    repeated = []
    while len(repeated) < n_repeated_pairs:
        a, b = (ids[i] for i in rng.choice(len(ids), size=2, replace=False))
        if (a, b) not in repeated and (b, a) not in repeated:
            repeated.append((a, b))

    config = SchedulerConfig(
        alpha=0.15, repeat_rate=repeat_rate, repeated_pairs=tuple(repeated), seed=seed
    )
    clock = iter(np.arange(1_650_000_000.0, 1_660_000_000.0, 7.0))
    counter = iter(range(100_000))
    service = SurveyService(
        store_dir,
        ids,
        world.clusters,
        config,
        clock=lambda: float(next(clock)),
        id_factory=lambda: f"rater{next(counter):04d}",
        fsync=False,
    )

    demo_pool = [
        {"location": "london", "gender": "female", "activity": "high", "source": "network"},
        {"location": "london", "gender": "male", "activity": "low", "source": "amt"},
        {"location": "not_london", "gender": "female", "activity": "low", "source": "amt"},
        {"location": "not_london", "gender": "male", "activity": "high", "source": "amt"},
        {"location": "london", "gender": "other", "activity": "high", "source": "network"},
        None,  # some raters skip the form
    ]
    for r in range(n_raters):
        demographics = demo_pool[int(rng.integers(len(demo_pool)))]
        sid = service.create_session(demographics)
        one_sided = r < 2  # planted pathological raters
        for _ in range(votes_per_rater):
            pair = service.get_pair(sid)
            if pair is None:
                break
            if one_sided:
                choice = "left"
            else:
                roll = rng.random()
                if roll < 0.02:
                    choice = "not_comparable"
                elif roll < 0.05:
                    choice = "not_shown"
                else:
                    diff = world.quality[pair.left] - world.quality[pair.right]
                    p_left = 1.0 / (1.0 + math.exp(-diff / 1.2))
                    choice = "left" if rng.random() < p_left else "right"
            service.post_vote(sid, pair.token, choice)
    return service


def _plant_duplicates(votes: list[Vote], rng: np.random.Generator, n: int = 8) -> list[Vote]:
    """Re-append a few games as near-simultaneous copies (storage artifacts)."""
    games = [v for v in votes if v.choice in ("left", "right")]
    picks = rng.choice(len(games), size=min(n, len(games)), replace=False)
    out = list(votes)
    next_id = max(v.vote_id for v in votes) + 1
    for offset, i in enumerate(sorted(int(p) for p in picks)):
        v = games[i]
        out.append(
            Vote(
                vote_id=next_id + offset,
                session_id=v.session_id,
                left_image=v.left_image,
                right_image=v.right_image,
                choice=v.choice,
                pair_kind=v.pair_kind,
                client_ts=v.client_ts,
                server_ts=v.server_ts + 15.0,  # inside the duplicate window
            )
        )
    return out


def build_fixture(out_dir: str | Path, n_images: int = 200, seed: int = 0) -> dict[str, Path]:
    """Write the complete fixture into ``out_dir``; returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    world = _make_world(n_images, rng)

    paths = {
        "roads": out / "roads.csv",
        "features": out / "features.csv",
        "areas": out / "areas.geojson",
        "feature_table": out / "feature_table.csv",
        "feature_meta": out / "feature_meta.json",
        "votes": out / "votes.csv",
        "sessions": out / "sessions.csv",
        "config": out / "config.json",
    }
    _write_roads(paths["roads"], rng)
    _write_features(paths["features"], world, rng)
    _write_areas(paths["areas"])
    _write_feature_table(paths["feature_table"], paths["feature_meta"], world, rng)

    service = simulate_survey(out / "store", world, seed)
    votes = _plant_duplicates(service.votes(), rng)
    write_votes_csv(votes, paths["votes"])
    write_sessions_csv(service.sessions(), paths["sessions"])
    service.close()

    # paths are config-relative so the fixture can be moved or copied
    config = {
        "roads": paths["roads"].name,
        "features": paths["features"].name,
        "areas": paths["areas"].name,
        "feature_table": paths["feature_table"].name,
        "feature_meta": paths["feature_meta"].name,
        "votes": paths["votes"].name,
        "sessions": paths["sessions"].name,
        "seed": seed,
        "spacing_m": 20.0,
        "snap_max_dist_m": 15.0,
        "k": 4,
        "sample_n": n_images,
        "grouping": "location",
        "folds": 5,
        "l2": 1.0,
    }
    paths["config"].write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return paths
