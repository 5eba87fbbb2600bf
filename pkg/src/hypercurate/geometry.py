"""Planar convex-polygon arithmetic in a projected CRS (meters).

Tile footprints and their mutual intersections are convex: pushbroom
footprints are near-rotated rectangles and intersections of convex sets
stay convex, so a Sutherland-Hodgman clipper covers every operation the
pipeline needs. Non-convex rings are rejected at construction.

All functions are pure and all value types are immutable, so everything
here is safe to call from concurrent workers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DegenerateGeometryError, ValidationError

# Vertices closer than this (meters) are merged into one.
VERTEX_MERGE_EPS = 1e-6
# Turning angles flatter than this (radians) are treated as collinear.
COLLINEAR_EPS = 1e-9
# Areas below this (m^2) mean the ring has collapsed entirely.
DEGENERATE_AREA = 1e-9
# Slop for closed containment tests, in meters of signed distance.
BOUNDARY_EPS = 1e-9
# Sliver suppression used when clipping footprints against each other:
# intersections below this area are treated as no overlap at all.
SLIVER_AREA = 1.0


@dataclass(frozen=True)
class Point2:
    """A point in projected coordinates: x = easting, y = northing."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"non-finite coordinates ({self.x}, {self.y})")


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self) -> None:
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise ValidationError("inverted bounding box")

    def intersects_interior(self, other: "BoundingBox") -> bool:
        """True when the open interiors of the two boxes meet."""
        return (
            self.min_x < other.max_x
            and other.min_x < self.max_x
            and self.min_y < other.max_y
            and other.min_y < self.max_y
        )

    def intersection(self, other: "BoundingBox") -> "BoundingBox | None":
        min_x = max(self.min_x, other.min_x)
        min_y = max(self.min_y, other.min_y)
        max_x = min(self.max_x, other.max_x)
        max_y = min(self.max_y, other.max_y)
        if min_x > max_x or min_y > max_y:
            return None
        return BoundingBox(min_x, min_y, max_x, max_y)

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.min_x <= other.min_x
            and self.min_y <= other.min_y
            and self.max_x >= other.max_x
            and self.max_y >= other.max_y
        )


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex ring without a repeated closing vertex.

    Construct via :func:`convex_polygon` (which cleans and orients raw
    rings) unless the vertices are already canonical.
    """

    vertices: tuple[Point2, ...]

    def __post_init__(self) -> None:
        _validate_ring([(p.x, p.y) for p in self.vertices])

    @property
    def ring(self) -> list[tuple[float, float]]:
        return [(p.x, p.y) for p in self.vertices]


def convex_polygon(points: Iterable[tuple[float, float]]) -> ConvexPolygon:
    """Build a polygon from raw (x, y) pairs.

    Merges near-duplicate and near-collinear vertices, drops a repeated
    closing vertex, and flips clockwise input to counter-clockwise.
    Raises ValidationError for non-convex rings and
    DegenerateGeometryError when the cleaned ring collapses.
    """
    ring = [(float(x), float(y)) for x, y in points]
    for x, y in ring:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError("non-finite polygon coordinates")
    if len(ring) >= 2 and _dist(ring[0], ring[-1]) <= VERTEX_MERGE_EPS:
        ring = ring[:-1]
    cleaned = _clean_ring(ring)
    if len(cleaned) < 3 or abs(_signed_area(cleaned)) < DEGENERATE_AREA:
        raise DegenerateGeometryError("polygon collapses below tolerance")
    if _signed_area(cleaned) < 0:
        cleaned.reverse()
        cleaned = _clean_ring(cleaned)
    _validate_ring(cleaned)
    return ConvexPolygon(tuple(Point2(x, y) for x, y in cleaned))


def polygon_area(p: ConvexPolygon) -> float:
    """Shoelace area in square meters; strictly positive for valid input."""
    area = _signed_area(p.ring)
    if area < DEGENERATE_AREA:
        raise DegenerateGeometryError("polygon area below tolerance")
    return area


def bbox(p: ConvexPolygon) -> BoundingBox:
    """Tight axis-aligned bounds of the vertex set."""
    xs = [v.x for v in p.vertices]
    ys = [v.y for v in p.vertices]
    return BoundingBox(min(xs), min(ys), max(xs), max(ys))


def intersect_convex(
    a: ConvexPolygon, b: ConvexPolygon, *, min_area: float = 0.0
) -> ConvexPolygon | None:
    """Exact convex intersection of two polygons, or None when empty.

    `min_area` suppresses sliver results: intersections with area below
    it report as empty. The default keeps every non-degenerate result;
    footprint-versus-footprint callers pass SLIVER_AREA.
    """
    boxes = bbox(a).intersection(bbox(b))
    if boxes is None:
        return None
    ring = a.ring
    clip = b.ring
    n = len(clip)
    for i in range(n):
        ring = _clip_halfplane(ring, clip[i], clip[(i + 1) % n])
        if len(ring) < 3:
            return None
    cleaned = _clean_ring(ring)
    if len(cleaned) < 3:
        return None
    area = _signed_area(cleaned)
    if area < max(min_area, DEGENERATE_AREA):
        return None
    return ConvexPolygon(tuple(Point2(x, y) for x, y in cleaned))


def translate(p: ConvexPolygon, dx: float, dy: float) -> ConvexPolygon:
    return ConvexPolygon(tuple(Point2(v.x + dx, v.y + dy) for v in p.vertices))


def contains_point(p: ConvexPolygon, x: float, y: float) -> bool:
    """Closed containment: on-boundary points count as inside."""
    ring = p.ring
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        cross = ex * (y - ay) - ey * (x - ax)
        if cross < -BOUNDARY_EPS * math.hypot(ex, ey):
            return False
    return True


def contains_box(p: ConvexPolygon, box: BoundingBox) -> bool:
    """True iff all four box corners lie inside or on the boundary of p."""
    return (
        contains_point(p, box.min_x, box.min_y)
        and contains_point(p, box.max_x, box.min_y)
        and contains_point(p, box.max_x, box.max_y)
        and contains_point(p, box.min_x, box.max_y)
    )


def contains_window(p: ConvexPolygon, window) -> bool:
    """Closed containment of a patch window (anything exposing `.box`)."""
    return contains_box(p, window.box)


def horizontal_slice(p: ConvexPolygon, y: float) -> tuple[float, float] | None:
    """The x-interval of the polygon at height y, or None when y misses it."""
    ring = p.ring
    n = len(ring)
    lo = math.inf
    hi = -math.inf
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        if (ay - y) * (by - y) > 0:
            continue
        if ay == by:
            # Horizontal edge at this height contributes both endpoints.
            if ay == y:
                lo = min(lo, ax, bx)
                hi = max(hi, ax, bx)
            continue
        t = (y - ay) / (by - ay)
        if t < 0.0 or t > 1.0:
            continue
        x = ax + t * (bx - ax)
        lo = min(lo, x)
        hi = max(hi, x)
    if lo > hi:
        return None
    return lo, hi


# --- WKT ---------------------------------------------------------------

_WKT_RE = re.compile(r"^\s*POLYGON\s*\(\s*\((?P<ring>[^()]*)\)\s*\)\s*$", re.IGNORECASE)


def polygon_to_wkt(p: ConvexPolygon) -> str:
    """Serialize as `POLYGON ((x y, ...))` with the ring explicitly closed."""
    pts = list(p.vertices) + [p.vertices[0]]
    body = ", ".join(f"{_fmt(v.x)} {_fmt(v.y)}" for v in pts)
    return f"POLYGON (({body}))"


def polygon_from_wkt(text: str) -> ConvexPolygon:
    """Parse a single-ring POLYGON; anything else is rejected."""
    m = _WKT_RE.match(text)
    if m is None:
        raise ValidationError(f"unsupported WKT (expected single-ring POLYGON): {text!r}")
    pairs = []
    for token in m.group("ring").split(","):
        parts = token.split()
        if len(parts) != 2:
            raise ValidationError(f"malformed WKT coordinate {token!r}")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ValidationError(f"malformed WKT coordinate {token!r}") from exc
    return convex_polygon(pairs)


def _fmt(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


# --- internals ---------------------------------------------------------


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _signed_area(ring: Sequence[tuple[float, float]]) -> float:
    total = 0.0
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        total += ax * by - bx * ay
    return 0.5 * total


def _clean_ring(ring: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Merge near-duplicate vertices, then drop near-collinear ones."""
    merged: list[tuple[float, float]] = []
    for pt in ring:
        if merged and _dist(merged[-1], pt) <= VERTEX_MERGE_EPS:
            continue
        merged.append(pt)
    while len(merged) >= 2 and _dist(merged[0], merged[-1]) <= VERTEX_MERGE_EPS:
        merged.pop()
    if len(merged) < 3:
        return merged
    out: list[tuple[float, float]] = []
    n = len(merged)
    for i in range(n):
        a = merged[(i - 1) % n]
        b = merged[i]
        c = merged[(i + 1) % n]
        ux, uy = b[0] - a[0], b[1] - a[1]
        vx, vy = c[0] - b[0], c[1] - b[1]
        cross = ux * vy - uy * vx
        norm = math.hypot(ux, uy) * math.hypot(vx, vy)
        if norm > 0 and abs(cross) <= COLLINEAR_EPS * norm:
            continue
        out.append(b)
    return out


def _validate_ring(ring: Sequence[tuple[float, float]]) -> None:
    if len(ring) < 3:
        raise DegenerateGeometryError("polygon needs at least 3 vertices")
    area = _signed_area(ring)
    if area < DEGENERATE_AREA:
        if area < 0:
            raise ValidationError("polygon ring must be counter-clockwise")
        raise DegenerateGeometryError("polygon area below tolerance")
    n = len(ring)
    for i in range(n):
        a = ring[i]
        b = ring[(i + 1) % n]
        c = ring[(i + 2) % n]
        ux, uy = b[0] - a[0], b[1] - a[1]
        vx, vy = c[0] - b[0], c[1] - b[1]
        cross = ux * vy - uy * vx
        norm = math.hypot(ux, uy) * math.hypot(vx, vy)
        if norm <= 0 or cross <= -COLLINEAR_EPS * norm:
            raise ValidationError("polygon is not convex")


def _clip_halfplane(
    ring: list[tuple[float, float]],
    a: tuple[float, float],
    b: tuple[float, float],
) -> list[tuple[float, float]]:
    """Keep the part of the ring left of the directed edge a->b."""
    ex, ey = b[0] - a[0], b[1] - a[1]
    out: list[tuple[float, float]] = []
    n = len(ring)
    for i in range(n):
        p = ring[i]
        q = ring[(i + 1) % n]
        dp = ex * (p[1] - a[1]) - ey * (p[0] - a[0])
        dq = ex * (q[1] - a[1]) - ey * (q[0] - a[0])
        if dp >= 0.0:
            out.append(p)
            if dq < 0.0:
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif dq >= 0.0:
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out
