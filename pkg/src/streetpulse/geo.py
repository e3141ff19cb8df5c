"""Geographic sampling helpers: grids, road snapping, camera headings.

All coordinates are WGS84 degrees and all distances are metres on a
spherical earth (haversine). At the ~20 m scales used here the spherical
approximation is far below measurement noise, so no projection machinery
is needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TypeVar

import numpy as np
from scipy.spatial import cKDTree

EARTH_RADIUS_M = 6371000.0

# Default snap radius: 3/4 of the 20 m grid spacing, so a road point can
# match at most one adjacent grid cell.
DEFAULT_SNAP_DIST_M = 15.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class RoadPoint:
    id: str
    point: GeoPoint
    bearing: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.bearing < 360.0):
            raise ValueError(f"bearing must be in [0, 360): {self.bearing}")


@dataclass(frozen=True)
class SamplePlan:
    """Camera locations with the two building-facing headings per point."""

    locations: tuple[tuple[RoadPoint, tuple[float, float]], ...]
    spacing_m: float


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in metres."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def generate_grid(bbox: tuple[GeoPoint, GeoPoint], spacing_m: float) -> list[GeoPoint]:
    """Axis-aligned grid of points covering ``bbox`` at ``spacing_m`` intervals.

    ``bbox`` is (southwest, northeast). Metre steps are converted to degree
    steps in the local equirectangular frame anchored at the southwest
    corner, with the longitude step measured at that corner's latitude.
    Both corners are included when they fall on the lattice; the grid never
    extends past the northeast corner.
    """
    sw, ne = bbox
    if ne.lat < sw.lat or ne.lon < sw.lon:
        raise ValueError("bbox corners must be ordered (southwest, northeast)")
    if spacing_m <= 0:
        raise ValueError("spacing_m must be positive")

    m_per_deg_lat = math.pi * EARTH_RADIUS_M / 180.0
    m_per_deg_lon = m_per_deg_lat * math.cos(math.radians(sw.lat))
    dlat = spacing_m / m_per_deg_lat
    eps = 1e-9  # absorbs float error so exact-multiple extents keep their far edge

    points: list[GeoPoint] = []
    n_rows = int(math.floor((ne.lat - sw.lat) / dlat + eps)) + 1
    n_cols = (
        1
        if m_per_deg_lon <= 0  # degenerate polar box
        else int(math.floor((ne.lon - sw.lon) / (spacing_m / m_per_deg_lon) + eps)) + 1
    )
    for i in range(n_rows):
        lat = sw.lat + i * dlat
        for j in range(n_cols):
            points.append(GeoPoint(lat, sw.lon + j * (spacing_m / m_per_deg_lon)))
    return points


def _unit_xyz(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Points on the unit sphere; chord length is monotone in arc distance."""
    phi = np.radians(lats)
    lam = np.radians(lons)
    return np.column_stack(
        (np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi))
    )


def snap_to_roads(
    candidates: Sequence[GeoPoint],
    roads: Sequence[RoadPoint],
    max_dist_m: float = DEFAULT_SNAP_DIST_M,
) -> dict[str, GeoPoint]:
    """Assign each road point its nearest candidate within ``max_dist_m``.

    Nearest-neighbour queries run against a k-d tree built on unit-sphere
    coordinates, where chord distance preserves the haversine ordering, so
    results are exact. Road points with no candidate in range are left out
    of the returned mapping.
    """
    if not roads:
        raise ValueError("road point list must be non-empty")
    if not candidates or max_dist_m < 0:
        return {}

    cand_xyz = _unit_xyz(
        np.array([c.lat for c in candidates]), np.array([c.lon for c in candidates])
    )
    road_xyz = _unit_xyz(
        np.array([r.point.lat for r in roads]), np.array([r.point.lon for r in roads])
    )
    tree = cKDTree(cand_xyz)
    # chord on the unit sphere subtending an arc of max_dist_m
    chord = 2.0 * math.sin(min(max_dist_m / EARTH_RADIUS_M, math.pi) / 2.0)
    dists, idx = tree.query(road_xyz, k=1, distance_upper_bound=chord * (1 + 1e-12))

    out: dict[str, GeoPoint] = {}
    for r, (d, i) in zip(roads, zip(dists, idx)):
        if math.isinf(d):
            continue
        if haversine_m(r.point, candidates[i]) <= max_dist_m + 1e-9:
            out[r.id] = candidates[i]
    return out


def perpendicular_headings(bearing: float) -> tuple[float, float]:
    """The two camera headings at right angles to a road bearing."""
    if not (0.0 <= bearing < 360.0):
        raise ValueError(f"bearing must be in [0, 360): {bearing}")
    return (bearing + 90.0) % 360.0, (bearing + 270.0) % 360.0


T = TypeVar("T")


def dedupe_images(assignments: Mapping[str, T], n_roads: int | None = None) -> tuple[set[T], float]:
    """Unique image set plus the fraction of road points that got an image.

    ``n_roads`` defaults to the number of assigned road points (coverage 1.0);
    pass the full road-point count to measure coverage over the whole network.
    """
    total = len(assignments) if n_roads is None else n_roads
    unique = set(assignments.values())
    coverage = len(assignments) / total if total else 0.0
    return unique, coverage


def fill_bearings(rows: Sequence[tuple[str, GeoPoint, float | None]]) -> list[RoadPoint]:
    """Materialise road points, inferring missing bearings from neighbours.

    Rows are assumed to run along the road in file order: a missing bearing
    is taken from the segment between the adjacent rows, endpoints from
    their single neighbour. A lone row with no bearing gets 0.
    """
    out: list[RoadPoint] = []
    n = len(rows)
    for i, (rid, pt, bearing) in enumerate(rows):
        if bearing is None:
            j, k = (i, i + 1) if i + 1 < n else (i - 1, i)
            if j < 0:
                bearing = 0.0
            else:
                bearing = _segment_bearing(rows[j][1], rows[k][1])
        out.append(RoadPoint(rid, pt, bearing % 360.0))
    return out


def _segment_bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial bearing of the segment a -> b, degrees clockwise from north."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return math.degrees(math.atan2(y, x)) % 360.0


def read_road_points(path: str | Path) -> list[RoadPoint]:
    """Load road points from CSV ``id,lat,lon,bearing`` (bearing optional)."""
    rows: list[tuple[str, GeoPoint, float | None]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            bearing = rec.get("bearing")
            rows.append(
                (
                    rec["id"],
                    GeoPoint(float(rec["lat"]), float(rec["lon"])),
                    float(bearing) if bearing not in (None, "") else None,
                )
            )
    return fill_bearings(rows)


def build_sample_plan(
    roads: Sequence[RoadPoint],
    assignments: Mapping[str, GeoPoint],
    spacing_m: float,
) -> SamplePlan:
    """Sample plan for every road point that received an image candidate."""
    locations = tuple(
        (r, perpendicular_headings(r.bearing)) for r in roads if r.id in assignments
    )
    return SamplePlan(locations=locations, spacing_m=spacing_m)


def write_sample_plan(plan: SamplePlan, path: str | Path) -> None:
    """Write the plan as CSV ``road_id,lat,lon,heading_a,heading_b``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["road_id", "lat", "lon", "heading_a", "heading_b"])
        for road, (ha, hb) in plan.locations:
            writer.writerow([road.id, repr(road.point.lat), repr(road.point.lon), ha, hb])


def bbox_of(points: Iterable[GeoPoint]) -> tuple[GeoPoint, GeoPoint]:
    """Southwest/northeast corners of a point set."""
    pts = list(points)
    if not pts:
        raise ValueError("empty point set")
    lats = [p.lat for p in pts]
    lons = [p.lon for p in pts]
    return GeoPoint(min(lats), min(lons)), GeoPoint(max(lats), max(lons))
