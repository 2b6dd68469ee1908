"""Planar city geometry: local projection, circle lattices, and area weights.

Administrative units arrive as WGS84 polygons. They are projected into a local
equirectangular frame centred on the city, a lattice of query circles is laid
over them, and each circle i gets a weight a_ij = area(circle_i intersect
unit_j) / area(circle_i) used later to spread circle-level audience counts
onto units. Circles are approximated by regular k-gons so every area here is
an exact polygon computation.

Circles overhanging the city boundary keep their purely geometric weights;
nothing is renormalised at the edge, so a boundary circle deliberately
contributes less than its full audience to the city.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0
_DEG = math.pi / 180.0

# Entries below this fraction of a circle are noise from clipped slivers.
WEIGHT_EPS = 1e-9

Point = tuple[float, float]
Ring = tuple[Point, ...]


class GeometryError(ValueError):
    """Invalid geometric input: bad ring, self-intersection, empty boundary."""


# ---------------------------------------------------------------------------
# polygon types


def _check_ring(ring: Ring, owner: str) -> None:
    if len(ring) < 4:
        raise GeometryError(f"unit {owner!r}: ring needs at least 4 vertices, got {len(ring)}")
    if ring[0] != ring[-1]:
        raise GeometryError(f"unit {owner!r}: ring is not closed (first vertex must repeat last)")


@dataclass(frozen=True)
class GeoPolygon:
    """One administrative unit outline in WGS84 degrees.

    Rings are closed (first vertex repeated at the end). Holes must lie
    inside the exterior; that containment is trusted, not repaired.
    A MultiPolygon unit becomes several GeoPolygon parts sharing one id.
    """

    id: str
    exterior: Ring
    holes: tuple[Ring, ...] = ()

    def __post_init__(self) -> None:
        _check_ring(self.exterior, self.id)
        for hole in self.holes:
            _check_ring(hole, self.id)

    def rings(self) -> tuple[Ring, ...]:
        return (self.exterior, *self.holes)


@dataclass(frozen=True)
class PlanarPolygon:
    """A unit already projected into a local frame, coordinates in metres."""

    id: str
    exterior: Ring
    holes: tuple[Ring, ...] = ()

    def rings(self) -> tuple[Ring, ...]:
        return (self.exterior, *self.holes)

    def area(self) -> float:
        a = abs(_ring_area(self.exterior))
        for hole in self.holes:
            a -= abs(_ring_area(hole))
        return a

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.exterior]
        ys = [p[1] for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)


# ---------------------------------------------------------------------------
# local frame


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular frame with cos(latitude) scaling about a city origin.

    Linear in both axes, hence exactly invertible; adequate below a few tens
    of kilometres. max_distortion documents the worst east-west scale error
    across the boundary's bounding box relative to the origin latitude.
    """

    origin_lon: float
    origin_lat: float
    kind: str = "equirectangular"
    earth_radius: float = EARTH_RADIUS_M
    max_distortion: float = 0.0

    def __post_init__(self) -> None:
        if self.kind != "equirectangular":
            raise GeometryError(f"unknown frame kind {self.kind!r}")
        if not -89.0 < self.origin_lat < 89.0:
            raise GeometryError("frame origin latitude too close to a pole")

    def forward(self, lon: float, lat: float) -> Point:
        k = self.earth_radius * _DEG
        x = (lon - self.origin_lon) * k * math.cos(self.origin_lat * _DEG)
        y = (lat - self.origin_lat) * k
        return x, y

    def inverse(self, x: float, y: float) -> Point:
        k = self.earth_radius * _DEG
        lon = self.origin_lon + x / (k * math.cos(self.origin_lat * _DEG))
        lat = self.origin_lat + y / k
        return lon, lat

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "origin_lon": self.origin_lon,
            "origin_lat": self.origin_lat,
            "earth_radius_m": self.earth_radius,
            "max_distortion": self.max_distortion,
        }


def build_local_frame(boundary: list[GeoPolygon]) -> LocalFrame:
    """Frame whose origin sits at the area centroid of the whole boundary."""
    if not boundary:
        raise GeometryError("empty boundary: no units to build a frame from")
    area_sum = 0.0
    cx = 0.0
    cy = 0.0
    lats: list[float] = []
    for poly in boundary:
        for ring, sign in [(poly.exterior, 1.0)] + [(h, -1.0) for h in poly.holes]:
            a, rx, ry = _ring_centroid(ring)
            area_sum += sign * abs(a)
            cx += sign * abs(a) * rx
            cy += sign * abs(a) * ry
        lats.extend(p[1] for p in poly.exterior)
    if area_sum <= 0.0:
        raise GeometryError("degenerate boundary: total area is zero")
    lon0 = cx / area_sum
    lat0 = cy / area_sum
    cos0 = math.cos(lat0 * _DEG)
    distortion = max(abs(math.cos(lat * _DEG) / cos0 - 1.0) for lat in (min(lats), max(lats)))
    if distortion > 0.005:
        logger.warning(
            "frame distortion %.4f exceeds 0.5%%; boundary too extended for a flat frame",
            distortion,
        )
    return LocalFrame(origin_lon=lon0, origin_lat=lat0, max_distortion=distortion)


def project_polygon(poly: GeoPolygon, frame: LocalFrame) -> PlanarPolygon:
    ext = tuple(frame.forward(lon, lat) for lon, lat in poly.exterior)
    holes = tuple(tuple(frame.forward(lon, lat) for lon, lat in h) for h in poly.holes)
    return PlanarPolygon(id=poly.id, exterior=ext, holes=holes)


# ---------------------------------------------------------------------------
# ring primitives


def _ring_area(ring: Ring) -> float:
    # shoelace, signed; positive for counter-clockwise traversal
    s = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        s += x1 * y2 - x2 * y1
    return 0.5 * s


def _ring_centroid(ring: Ring) -> tuple[float, float, float]:
    a = _ring_area(ring)
    if a == 0.0:
        xs = [p[0] for p in ring[:-1]]
        ys = [p[1] for p in ring[:-1]]
        return 0.0, sum(xs) / len(xs), sum(ys) / len(ys)
    sx = 0.0
    sy = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        w = x1 * y2 - x2 * y1
        sx += (x1 + x2) * w
        sy += (y1 + y2) * w
    return a, sx / (6.0 * a), sy / (6.0 * a)


def _segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    # proper crossing only: endpoints touching a segment do not count
    def orient(a: Point, b: Point, c: Point) -> float:
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    )


@functools.lru_cache(maxsize=4096)
def _ring_is_simple(ring: Ring) -> bool:
    n = len(ring) - 1
    segs = []
    for i in range(n):
        a, b = ring[i], ring[i + 1]
        if a != b:
            segs.append((a, b))
    m = len(segs)
    for i in range(m):
        a1, a2 = segs[i]
        bb1 = (min(a1[0], a2[0]), min(a1[1], a2[1]), max(a1[0], a2[0]), max(a1[1], a2[1]))
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            b1, b2 = segs[j]
            if (
                max(b1[0], b2[0]) < bb1[0]
                or min(b1[0], b2[0]) > bb1[2]
                or max(b1[1], b2[1]) < bb1[1]
                or min(b1[1], b2[1]) > bb1[3]
            ):
                continue
            if _segments_cross(a1, a2, b1, b2):
                return False
    return True


def ensure_simple(poly: PlanarPolygon) -> None:
    for ring in poly.rings():
        if not _ring_is_simple(ring):
            raise GeometryError(f"unit {poly.id!r}: self-intersecting ring")


# ---------------------------------------------------------------------------
# convex clipping


def _clip_convex(subject: list[Point], clip: Ring) -> list[Point]:
    """Sutherland-Hodgman clip of a convex subject against a CCW convex ring.

    `clip` is an open ring (no repeated first vertex). Points exactly on a
    clip edge count as inside.
    """
    out = subject
    m = len(clip)
    for i in range(m):
        if not out:
            return out
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        # inside means left of the edge for a CCW clip: cross(e, p-a) >= 0
        px, py = inp[-1]
        pcross = ex * (py - ay) - ey * (px - ax)
        pin = pcross >= 0.0
        for qx, qy in inp:
            qcross = ex * (qy - ay) - ey * (qx - ax)
            qin = qcross >= 0.0
            if qin != pin:
                t = pcross / (pcross - qcross)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            if qin:
                out.append((qx, qy))
            px, py, pcross, pin = qx, qy, qcross, qin
    return out


def _poly_area_ccw(points: list[Point]) -> float:
    n = len(points)
    if n < 3:
        return 0.0
    s = 0.0
    x1, y1 = points[-1]
    for x2, y2 in points:
        s += x1 * y2 - x2 * y1
        x1, y1 = x2, y2
    return max(0.0, 0.5 * s)


def _fan_clip_area(ring: Ring, clip: Ring, origin: Point) -> float:
    """Area of (interior of `ring`) intersect (convex `clip`), unsigned.

    Triangle-fan identity: the winding number of a closed ring equals the sum
    of winding numbers of the oriented triangles (origin, v_k, v_k+1), so the
    clipped area is the signed sum of clipped triangle areas. Exact for
    simple rings, concave ones included.
    """
    ox, oy = origin
    total = 0.0
    for (ax, ay), (bx, by) in zip(ring, ring[1:]):
        s = 0.5 * ((ax - ox) * (by - oy) - (bx - ox) * (ay - oy))
        if s == 0.0:
            continue
        if s > 0.0:
            tri = [(ox, oy), (ax, ay), (bx, by)]
        else:
            tri = [(ox, oy), (bx, by), (ax, ay)]
        piece = _poly_area_ccw(_clip_convex(tri, clip))
        total += piece if s > 0.0 else -piece
    return abs(total)


# ---------------------------------------------------------------------------
# circles and grids


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: float
    id: int

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise GeometryError(f"circle {self.id}: radius must be positive")

    def bbox(self) -> tuple[float, float, float, float]:
        return self.x - self.radius, self.y - self.radius, self.x + self.radius, self.y + self.radius


@dataclass(frozen=True)
class CircleGrid:
    circles: tuple[Circle, ...]
    lattice: str
    spacing: float
    radius: float
    frame: LocalFrame


def circle_polygon(cx: float, cy: float, radius: float, segments: int) -> Ring:
    """Regular `segments`-gon inscribed in the circle, CCW, open ring.

    First vertex sits at angle 0, so with an even vertex count the polygon is
    mirror-symmetric about both axes through the centre.
    """
    step = 2.0 * math.pi / segments
    return tuple(
        (cx + radius * math.cos(k * step), cy + radius * math.sin(k * step)) for k in range(segments)
    )


def regular_polygon_area(radius: float, segments: int) -> float:
    return 0.5 * segments * radius * radius * math.sin(2.0 * math.pi / segments)


def circle_polygon_intersection_area(
    circle: Circle, unit: PlanarPolygon, segments: int = 64
) -> float:
    """Intersection area between the circle's k-gon and a projected unit.

    Handles concave exteriors and holes. Rejects self-intersecting rings.
    """
    if segments < 8:
        raise GeometryError("segments must be at least 8")
    ensure_simple(unit)
    kgon = circle_polygon(circle.x, circle.y, circle.radius, segments)
    origin = (circle.x, circle.y)
    area = _fan_clip_area(unit.exterior, kgon, origin)
    for hole in unit.holes:
        area -= _fan_clip_area(hole, kgon, origin)
    cap = min(regular_polygon_area(circle.radius, segments), unit.area())
    return min(max(area, 0.0), cap)


def _rect_ring(x0: float, y0: float, x1: float, y1: float) -> Ring:
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def _bbox_overlaps(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def _rect_hits_polygon(rect: tuple[float, float, float, float], poly: PlanarPolygon) -> bool:
    clip = _rect_ring(*rect)
    area = _fan_clip_area(poly.exterior, clip, (rect[0], rect[1]))
    for hole in poly.holes:
        area -= _fan_clip_area(hole, clip, (rect[0], rect[1]))
    return area > 1e-9


def generate_grid(
    units: list[GeoPolygon],
    frame: LocalFrame,
    radius: float = 1000.0,
    spacing: float | None = None,
    lattice: str = "square",
) -> CircleGrid:
    """Lay a lattice of circles over the projected units.

    Default spacing is 2*radius (tangent circles). Candidates whose bounding
    box misses every unit are dropped. The lattice is centred on the joint
    bounding box, so a symmetric boundary gets a symmetric grid. For the
    square lattice at default spacing every point of every unit is within
    spacing/sqrt(2) + radius of some kept centre.
    """
    if radius <= 0.0:
        raise GeometryError("radius must be positive")
    s = 2.0 * radius if spacing is None else spacing
    if s <= 0.0:
        raise GeometryError("spacing must be positive")
    if lattice not in ("square", "hex"):
        raise GeometryError(f"unknown lattice {lattice!r}")
    if not units:
        raise GeometryError("no units to cover")

    projected = [project_polygon(u, frame) for u in units]
    boxes = [p.bbox() for p in projected]
    minx = min(b[0] for b in boxes)
    miny = min(b[1] for b in boxes)
    maxx = max(b[2] for b in boxes)
    maxy = max(b[3] for b in boxes)
    cx = 0.5 * (minx + maxx)
    cy = 0.5 * (miny + maxy)

    row_pitch = s if lattice == "square" else s * math.sqrt(3.0) / 2.0
    j_lo = math.floor((miny - radius - cy) / row_pitch - 0.5) - 1
    j_hi = math.ceil((maxy + radius - cy) / row_pitch - 0.5) + 1
    i_lo = math.floor((minx - radius - cx) / s - 0.5) - 1
    i_hi = math.ceil((maxx + radius - cx) / s - 0.5) + 1

    circles: list[Circle] = []
    next_id = 0
    for j in range(j_lo, j_hi + 1):
        y = cy + (j + 0.5) * row_pitch
        shift = 0.5 * s * (j % 2) if lattice == "hex" else 0.0
        for i in range(i_lo, i_hi + 1):
            x = cx + (i + 0.5) * s + shift
            rect = (x - radius, y - radius, x + radius, y + radius)
            hit = False
            for poly, box in zip(projected, boxes):
                if _bbox_overlaps(rect, box) and _rect_hits_polygon(rect, poly):
                    hit = True
                    break
            if hit:
                circles.append(Circle(x=x, y=y, radius=radius, id=next_id))
                next_id += 1
    if not circles:
        raise GeometryError("no circle candidate touches any unit")
    return CircleGrid(circles=tuple(circles), lattice=lattice, spacing=s, radius=radius, frame=frame)


# ---------------------------------------------------------------------------
# weight matrix


@dataclass
class AreaWeightMatrix:
    """Sparse a_ij fractions plus the polygonal circle areas behind them.

    Treated as immutable once built. Weights below WEIGHT_EPS are dropped.
    """

    entries: dict[tuple[int, str], float]
    circle_areas: dict[int, float]
    circle_ids: tuple[int, ...]
    unit_ids: tuple[str, ...]
    segments: int

    def row_sum(self, circle_id: int) -> float:
        return sum(w for (i, _), w in self.entries.items() if i == circle_id)

    def circles_for_unit(self, unit_id: str) -> tuple[int, ...]:
        return tuple(sorted(i for (i, j) in self.entries if j == unit_id))


def build_weight_matrix(
    grid: CircleGrid,
    units: list[GeoPolygon],
    frame: LocalFrame,
    segments: int = 64,
) -> AreaWeightMatrix:
    """Compute a_ij = area(circle_i intersect unit_j) / area(circle_i).

    Unit parts sharing an id (MultiPolygon units) contribute to one column.
    A row summing above 1 + 1e-3 means the input units overlap; that is
    reported as a warning, not an error.
    """
    parts: dict[str, list[PlanarPolygon]] = {}
    order: list[str] = []
    for u in units:
        p = project_polygon(u, frame)
        ensure_simple(p)
        if u.id not in parts:
            parts[u.id] = []
            order.append(u.id)
        parts[u.id].append(p)
    unit_ids = tuple(sorted(order))

    entries: dict[tuple[int, str], float] = {}
    circle_areas: dict[int, float] = {}
    for c in grid.circles:
        kgon_area = regular_polygon_area(c.radius, segments)
        circle_areas[c.id] = kgon_area
        cbox = c.bbox()
        for j in unit_ids:
            inter = 0.0
            for part in parts[j]:
                if not _bbox_overlaps(cbox, part.bbox()):
                    continue
                try:
                    inter += circle_polygon_intersection_area(c, part, segments=segments)
                except GeometryError as exc:
                    raise GeometryError(f"circle {c.id} x unit {j!r}: {exc}") from exc
            a = inter / kgon_area
            if a > WEIGHT_EPS:
                entries[(c.id, j)] = min(a, 1.0)

    sums: dict[int, float] = {}
    for (i, _), w in entries.items():
        sums[i] = sums.get(i, 0.0) + w
    bad = [i for i, v in sums.items() if v > 1.0 + 1e-3]
    if bad:
        logger.warning("weight rows exceed 1 for circles %s: overlapping units in input", bad[:10])

    return AreaWeightMatrix(
        entries=entries,
        circle_areas=circle_areas,
        circle_ids=tuple(c.id for c in grid.circles),
        unit_ids=unit_ids,
        segments=segments,
    )


# ---------------------------------------------------------------------------
# file formats


def load_units_geojson(path: str | Path) -> list[GeoPolygon]:
    """Read a FeatureCollection of Polygon/MultiPolygon units, id required."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise GeometryError(f"{path}: expected a FeatureCollection")
    out: list[GeoPolygon] = []
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        uid = props.get("id", feat.get("id"))
        if uid is None:
            raise GeometryError(f"{path}: feature {k} has no id property")
        uid = str(uid)
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [geom.get("coordinates", [])]
        elif gtype == "MultiPolygon":
            polys = geom.get("coordinates", [])
        else:
            raise GeometryError(f"{path}: unit {uid!r} has unsupported geometry {gtype!r}")
        for rings in polys:
            if not rings:
                raise GeometryError(f"{path}: unit {uid!r} has an empty polygon")
            ext = tuple((float(x), float(y)) for x, y in rings[0])
            holes = tuple(tuple((float(x), float(y)) for x, y in r) for r in rings[1:])
            out.append(GeoPolygon(id=uid, exterior=ext, holes=holes))
    if not out:
        raise GeometryError(f"{path}: no features")
    return out


def grid_to_geojson(grid: CircleGrid) -> dict:
    feats = []
    for c in grid.circles:
        lon, lat = grid.frame.inverse(c.x, c.y)
        feats.append(
            {
                "type": "Feature",
                "properties": {"id": c.id, "radius_m": c.radius},
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
            }
        )
    return {
        "type": "FeatureCollection",
        "properties": {
            "lattice": grid.lattice,
            "spacing_m": grid.spacing,
            "frame": grid.frame.metadata(),
        },
        "features": feats,
    }


def save_grid_geojson(grid: CircleGrid, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grid_to_geojson(grid), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_grid_geojson(path: str | Path) -> CircleGrid:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    props = doc.get("properties") or {}
    fmeta = props.get("frame") or {}
    frame = LocalFrame(
        origin_lon=fmeta["origin_lon"],
        origin_lat=fmeta["origin_lat"],
        kind=fmeta.get("kind", "equirectangular"),
        earth_radius=fmeta.get("earth_radius_m", EARTH_RADIUS_M),
        max_distortion=fmeta.get("max_distortion", 0.0),
    )
    circles = []
    radius = 0.0
    for feat in doc.get("features", []):
        p = feat["properties"]
        lon, lat = feat["geometry"]["coordinates"]
        x, y = frame.forward(lon, lat)
        radius = float(p["radius_m"])
        circles.append(Circle(x=x, y=y, radius=radius, id=int(p["id"])))
    return CircleGrid(
        circles=tuple(circles),
        lattice=props.get("lattice", "square"),
        spacing=float(props.get("spacing_m", 2.0 * radius)),
        radius=radius,
        frame=frame,
    )


def save_weights_csv(w: AreaWeightMatrix, path: str | Path, frame: LocalFrame) -> None:
    """Write the sparse weights plus a JSON sidecar with frame metadata."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["circle_id", "unit_id", "weight"])
        for (i, j), val in sorted(w.entries.items()):
            wr.writerow([i, j, repr(val)])
    sidecar = {
        "frame": frame.metadata(),
        "segments": w.segments,
        "n_circles": len(w.circle_ids),
        "n_units": len(w.unit_ids),
    }
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_weights_csv(path: str | Path) -> AreaWeightMatrix:
    entries: dict[tuple[int, str], float] = {}
    circle_ids: list[int] = []
    unit_ids: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            i = int(row["circle_id"])
            j = row["unit_id"]
            entries[(i, j)] = float(row["weight"])
            if i not in circle_ids:
                circle_ids.append(i)
            if j not in unit_ids:
                unit_ids.append(j)
    segments = 64
    sidecar = Path(path).with_suffix(".json")
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as fh:
            segments = json.load(fh).get("segments", 64)
    return AreaWeightMatrix(
        entries=entries,
        circle_areas={},
        circle_ids=tuple(sorted(circle_ids)),
        unit_ids=tuple(sorted(unit_ids)),
        segments=segments,
    )
