"""Area-level aggregation of image scores and choropleth-ready export.

Output areas arrive as GeoJSON polygons; images are assigned by even-odd
ray casting in plain lon/lat (sub-metre error at the ~100 m scale of an
output area), per-area scores are arithmetic means, and areas are bucketed
into ten equal-frequency deciles for mapping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .geo import GeoPoint

Ring = list[tuple[float, float]]  # (lon, lat), closed: first == last


class MalformedPolygon(ValueError):
    pass


@dataclass(frozen=True)
class OutputArea:
    oa_id: str
    polygons: tuple[tuple[Ring, ...], ...]  # parts -> rings (outer first)

    def validate(self) -> None:
        for part in self.polygons:
            for ring in part:
                if len(ring) < 4:
                    raise MalformedPolygon(f"{self.oa_id}: ring has fewer than 4 vertices")
                if ring[0] != ring[-1]:
                    raise MalformedPolygon(f"{self.oa_id}: ring is not closed")

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [x for part in self.polygons for ring in part for x, _ in ring]
        ys = [y for part in self.polygons for ring in part for _, y in ring]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class AreaAggregate:
    oa_id: str
    mean_score: float | None
    n_images: int
    decile: int | None = None


def _on_segment(x: float, y: float, x1: float, y1: float, x2: float, y2: float) -> bool:
    cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
    if abs(cross) > 1e-12:
        return False
    return min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12 and (
        min(y1, y2) - 1e-12 <= y <= max(y1, y2) + 1e-12
    )


def point_in_area(lon: float, lat: float, area: OutputArea) -> bool:
    """Even-odd containment; points on a boundary edge count as inside."""
    inside = False
    for part in area.polygons:
        for ring in part:
            for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
                if _on_segment(lon, lat, x1, y1, x2, y2):
                    return True
                if (y1 > lat) != (y2 > lat):
                    x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
                    if lon < x_cross:
                        inside = not inside
    return inside


def assign_points(
    points: Mapping[str, GeoPoint], areas: Sequence[OutputArea]
) -> dict[str, str]:
    """Map each image to the containing output area.

    Areas are tried in ascending oa_id order, so a point on a shared
    boundary lands in the lowest id. Points outside every area are left
    unassigned.
    """
    ordered = sorted(areas, key=lambda a: a.oa_id)
    for area in ordered:
        area.validate()
    boxes = [a.bbox() for a in ordered]

    out: dict[str, str] = {}
    for img, pt in points.items():
        for area, (x0, y0, x1, y1) in zip(ordered, boxes):
            if not (x0 <= pt.lon <= x1 and y0 <= pt.lat <= y1):
                continue
            if point_in_area(pt.lon, pt.lat, area):
                out[img] = area.oa_id
                break
    return out


def aggregate(
    scores: Mapping[str, float],
    assignment: Mapping[str, str],
    areas: Sequence[OutputArea],
) -> tuple[list[AreaAggregate], dict]:
    """Mean score per area, plus the distribution of images per area.

    Areas with no scored image get mean None and no decile. The summary
    reports the image-count distribution (median included) over the areas
    that do have images.
    """
    totals: dict[str, list[float]] = {}
    for img, score in scores.items():
        oa = assignment.get(img)
        if oa is not None:
            totals.setdefault(oa, []).append(score)

    aggregates = []
    for area in sorted(areas, key=lambda a: a.oa_id):
        values = totals.get(area.oa_id)
        if values:
            aggregates.append(
                AreaAggregate(area.oa_id, sum(values) / len(values), len(values))
            )
        else:
            aggregates.append(AreaAggregate(area.oa_id, None, 0))

    counts = sorted(len(v) for v in totals.values())
    summary = {
        "areas": len(areas),
        "areas_with_images": len(counts),
        "images_assigned": sum(counts),
        "median_images_per_area": _median(counts) if counts else 0,
    }
    return aggregates, summary


def _median(ordered: Sequence[int]) -> float:
    n = len(ordered)
    mid = n // 2
    return float(ordered[mid]) if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2.0


def assign_deciles(aggregates: Sequence[AreaAggregate]) -> list[AreaAggregate]:
    """Decile 1 = lowest tenth of area means, decile 10 = highest.

    Buckets are equal-frequency with sizes differing by at most one (the
    lower deciles absorb the remainder); ties in the mean are broken by
    oa_id so the split is deterministic. Unscored areas keep decile None.
    """
    scored = [a for a in aggregates if a.n_images > 0]
    if len(scored) < 10:
        raise ValueError(f"need at least 10 scored areas, have {len(scored)}")
    ranked = sorted(scored, key=lambda a: (a.mean_score, a.oa_id))
    n = len(ranked)
    base, extra = divmod(n, 10)

    decile_of: dict[str, int] = {}
    start = 0
    for d in range(1, 11):
        size = base + (1 if d <= extra else 0)
        for a in ranked[start : start + size]:
            decile_of[a.oa_id] = d
        start += size

    return [
        replace(a, decile=decile_of[a.oa_id]) if a.oa_id in decile_of else a
        for a in aggregates
    ]


# GeoJSON I/O -------------------------------------------------------------


def read_areas_geojson(path: str | Path) -> list[OutputArea]:
    """Load a FeatureCollection whose features carry an ``oa_id`` property."""
    with open(path) as fh:
        doc = json.load(fh)
    areas: list[OutputArea] = []
    for feature in doc["features"]:
        oa_id = str(feature["properties"]["oa_id"])
        geom = feature["geometry"]
        if geom["type"] == "Polygon":
            parts = [geom["coordinates"]]
        elif geom["type"] == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise MalformedPolygon(f"{oa_id}: unsupported geometry {geom['type']}")
        polygons = tuple(
            tuple(tuple((float(x), float(y)) for x, y in ring) for ring in part)
            for part in parts
        )
        area = OutputArea(oa_id, polygons)
        area.validate()
        areas.append(area)
    return areas


def _q6(value: float) -> float:
    return round(value, 6)


def export_geojson(
    aggregates: Sequence[AreaAggregate],
    areas: Sequence[OutputArea],
    path: str | Path,
) -> None:
    """Choropleth-ready FeatureCollection; byte-stable for identical input.

    Coordinates and scores are rounded to 6 decimal places; features are
    ordered by oa_id; unscored areas carry a null decile.
    """
    area_of = {a.oa_id: a for a in areas}
    features = []
    for agg in sorted(aggregates, key=lambda a: a.oa_id):
        area = area_of[agg.oa_id]
        coords = [
            [[[_q6(x), _q6(y)] for x, y in ring] for ring in part] for part in area.polygons
        ]
        geometry = (
            {"type": "Polygon", "coordinates": coords[0]}
            if len(coords) == 1
            else {"type": "MultiPolygon", "coordinates": coords}
        )
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "oa_id": agg.oa_id,
                    "mean_score": _q6(agg.mean_score) if agg.mean_score is not None else None,
                    "n_images": agg.n_images,
                    "decile": agg.decile,
                },
                "geometry": geometry,
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_aggregates_geojson(path: str | Path) -> tuple[list[AreaAggregate], list[OutputArea]]:
    """Inverse of export_geojson, for round-trips and downstream tooling."""
    with open(path) as fh:
        doc = json.load(fh)
    aggregates: list[AreaAggregate] = []
    for feature in doc["features"]:
        props = feature["properties"]
        aggregates.append(
            AreaAggregate(
                oa_id=str(props["oa_id"]),
                mean_score=props["mean_score"],
                n_images=int(props["n_images"]),
                decile=props["decile"],
            )
        )
    return aggregates, read_areas_geojson(path)


def write_aggregates_csv(aggregates: Sequence[AreaAggregate], path: str | Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["oa_id", "mean_score", "n_images", "decile"])
        for a in sorted(aggregates, key=lambda x: x.oa_id):
            writer.writerow(
                [
                    a.oa_id,
                    repr(_q6(a.mean_score)) if a.mean_score is not None else "",
                    a.n_images,
                    a.decile if a.decile is not None else "",
                ]
            )
