"""Lattice-aligned patch windows and the global non-overlap index.

Window origins live on the shared pixel lattice (integer multiples of
gsd anchored at the projected-coordinate origin), not on a coarser
block grid: greedy row-major packing then decides which lattice
positions become windows. Containment in the source polygon is closed
(boundary corners allowed); overlap between windows is tested on open
interiors (shared edges allowed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

from .errors import ConsistencyError, CrossCrsError, NotFoundError, ValidationError
from .geometry import (
    BoundingBox,
    ConvexPolygon,
    Point2,
    bbox,
    contains_window,
    horizontal_slice,
)

# Absolute slop (meters) when snapping scan intervals to the lattice.
# Clip intersection points carry ~1e-8 m of float noise at UTM-scale
# coordinates; candidate generation over-approximates by this much and
# the exact containment test makes the final call.
LATTICE_SNAP_EPS = 1e-7
# Origins must sit on the lattice to within this many meters.
ALIGNMENT_EPS = 1e-6


class Member(NamedTuple):
    """One tile's contribution to a patch record."""

    tile_id: str
    timestamp: int
    row: int
    col: int


@dataclass(frozen=True)
class PatchWindow:
    """A square patch footprint anchored at its lower-left (SW) corner."""

    crs: int
    origin: Point2
    size_px: int
    gsd: float
    location_id: str = field(init=False)

    def __post_init__(self) -> None:
        if self.size_px <= 0:
            raise ValidationError(f"size_px must be positive, got {self.size_px}")
        if not (self.gsd > 0 and math.isfinite(self.gsd)):
            raise ValidationError(f"gsd must be positive and finite, got {self.gsd}")
        for value in (self.origin.x, self.origin.y):
            if abs(value - round(value / self.gsd) * self.gsd) > ALIGNMENT_EPS:
                raise ValidationError(
                    f"window origin {value} is not a multiple of gsd {self.gsd}"
                )
        object.__setattr__(self, "location_id", assign_location_id(self))

    @property
    def side(self) -> float:
        return self.size_px * self.gsd

    @property
    def box(self) -> BoundingBox:
        return BoundingBox(
            self.origin.x,
            self.origin.y,
            self.origin.x + self.side,
            self.origin.y + self.side,
        )


def assign_location_id(w: PatchWindow) -> str:
    """Deterministic id from the lattice position; injective per lattice."""
    ix = round(w.origin.x / w.gsd)
    iy = round(w.origin.y / w.gsd)
    return f"L{w.crs}_{ix}_{iy}_{w.size_px}"


@dataclass(frozen=True)
class PatchRecord:
    """A window plus every tile observing it, ordered by acquisition time."""

    window: PatchWindow
    members: tuple[Member, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValidationError("patch record needs at least one member")
        stamps = [m.timestamp for m in self.members]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValidationError("member timestamps must be strictly increasing")

    @property
    def location_id(self) -> str:
        return self.window.location_id

    @property
    def is_multitemporal(self) -> bool:
        return len(self.members) >= 2


@dataclass(frozen=True)
class PatchManifest:
    """Finished curation output: records sorted by location_id, ids unique."""

    records: tuple[PatchRecord, ...]

    def __post_init__(self) -> None:
        ids = [r.location_id for r in self.records]
        if ids != sorted(ids):
            raise ValidationError("manifest records must be sorted by location_id")
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate location_id {dupes[0]}")

    @classmethod
    def from_records(cls, records: Iterable[PatchRecord]) -> "PatchManifest":
        return cls(tuple(sorted(records, key=lambda r: r.location_id)))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PatchRecord]:
        return iter(self.records)

    @property
    def n_locations(self) -> int:
        return len(self.records)

    @property
    def n_patches(self) -> int:
        return sum(len(r.members) for r in self.records)

    @property
    def n_multitemporal(self) -> int:
        return sum(1 for r in self.records if r.is_multitemporal)


class SpatialIndex:
    """Committed window boxes with fast interior-overlap probes.

    Backed by a uniform grid of buckets (cell size = the side of the
    first committed window), which is enough structure for equal-size
    square windows; results always match a linear scan.
    """

    def __init__(self, crs: int, bucket_size: float | None = None) -> None:
        self.crs = crs
        self._bucket_size = bucket_size
        self._boxes: dict[str, BoundingBox] = {}
        self._buckets: dict[tuple[int, int], list[str]] = {}

    def __len__(self) -> int:
        return len(self._boxes)

    def __contains__(self, location_id: str) -> bool:
        return location_id in self._boxes

    def ids(self) -> Iterator[str]:
        return iter(self._boxes)

    def box(self, location_id: str) -> BoundingBox:
        try:
            return self._boxes[location_id]
        except KeyError:
            raise NotFoundError(f"unknown location_id {location_id!r}") from None

    def commit(self, windows: Iterable[PatchWindow]) -> "SpatialIndex":
        """Insert windows; recommitting an identical window is a no-op.

        Interior overlap with already-committed content raises
        ConsistencyError: callers are required to have filtered
        against this index already.
        """
        for w in windows:
            if w.crs != self.crs:
                raise CrossCrsError(f"window crs {w.crs} != index crs {self.crs}")
            existing = self._boxes.get(w.location_id)
            if existing is not None:
                if existing != w.box:
                    raise ConsistencyError(
                        f"location_id {w.location_id} recommitted with a different box"
                    )
                continue
            clashes = self.query_overlap(w.box)
            if clashes:
                raise ConsistencyError(
                    f"window {w.location_id} overlaps committed {clashes[0]}"
                )
            if self._bucket_size is None:
                self._bucket_size = w.side
            self._boxes[w.location_id] = w.box
            for key in self._bucket_keys(w.box):
                self._buckets.setdefault(key, []).append(w.location_id)
        return self

    def query_overlap(self, box: BoundingBox) -> list[str]:
        """Ids of committed windows whose open interiors meet the box."""
        if self._bucket_size is None:
            return []
        seen: set[str] = set()
        hits: list[str] = []
        for key in self._bucket_keys(box):
            for location_id in self._buckets.get(key, ()):
                if location_id in seen:
                    continue
                seen.add(location_id)
                if self._boxes[location_id].intersects_interior(box):
                    hits.append(location_id)
        hits.sort()
        return hits

    def _bucket_keys(self, box: BoundingBox) -> Iterator[tuple[int, int]]:
        size = self._bucket_size or 1.0
        x0 = math.floor(box.min_x / size)
        x1 = math.floor(box.max_x / size)
        y0 = math.floor(box.min_y / size)
        y1 = math.floor(box.max_y / size)
        for ix in range(x0, x1 + 1):
            for iy in range(y0, y1 + 1):
                yield ix, iy


def window_origin_span(
    polygon: ConvexPolygon, y: float, side: float
) -> tuple[float, float] | None:
    """x-interval of SW corners at height y whose window fits in the polygon.

    For a convex polygon the window fits iff all four corners do, and a
    corner at height h is inside iff its x lies in the polygon's slice
    at h; intersecting the bottom and top slices reduces the fit test
    to one interval. Degenerate (single-point) intervals are real: a
    footprint exactly one window wide admits exactly one origin.
    """
    bottom = horizontal_slice(polygon, y)
    if bottom is None:
        return None
    top = horizontal_slice(polygon, y + side)
    if top is None:
        return None
    lo = max(bottom[0], top[0])
    hi = min(bottom[1], top[1]) - side
    if lo > hi + LATTICE_SNAP_EPS:
        return None
    return lo, hi


def holds_window(polygon: ConvexPolygon, lattice: tuple[float, int]) -> bool:
    """True when at least one lattice-aligned window fits in the polygon."""
    gsd, size_px = lattice
    side = size_px * gsd
    pbox = bbox(polygon)
    iy_lo = math.ceil((pbox.min_y - LATTICE_SNAP_EPS) / gsd)
    iy_hi = math.floor((pbox.max_y - side + LATTICE_SNAP_EPS) / gsd)
    for iy in range(iy_lo, iy_hi + 1):
        y = iy * gsd
        span = window_origin_span(polygon, y, side)
        if span is None:
            continue
        ix = math.ceil((span[0] - LATTICE_SNAP_EPS) / gsd)
        if ix * gsd > span[1] + LATTICE_SNAP_EPS:
            continue
        window = PatchWindow(0, Point2(ix * gsd, y), size_px, gsd)
        if contains_window(polygon, window):
            return True
    return False


def patchify(
    intersection: ConvexPolygon,
    lattice: tuple[float, int],
    index: SpatialIndex,
) -> list[PatchWindow]:
    """Greedy row-major window placement inside a polygon.

    Scans the pixel lattice south to north, west to east, and emits a
    window whenever it fits entirely inside the polygon and its
    interior is free of both committed windows and windows emitted
    earlier in this call. The result is therefore mutually disjoint and
    deterministic. The index is not modified; callers commit.
    """
    gsd, size_px = lattice
    side = size_px * gsd
    out: list[PatchWindow] = []
    placed = SpatialIndex(index.crs, bucket_size=side)
    pbox = bbox(intersection)
    iy_lo = math.ceil((pbox.min_y - LATTICE_SNAP_EPS) / gsd)
    iy_hi = math.floor((pbox.max_y - side + LATTICE_SNAP_EPS) / gsd)
    for iy in range(iy_lo, iy_hi + 1):
        y = iy * gsd
        span = window_origin_span(intersection, y, side)
        if span is None:
            continue
        ix = math.ceil((span[0] - LATTICE_SNAP_EPS) / gsd)
        ix_hi = math.floor((span[1] + LATTICE_SNAP_EPS) / gsd)
        while ix <= ix_hi:
            window = PatchWindow(index.crs, Point2(ix * gsd, y), size_px, gsd)
            blockers = [index.box(i) for i in index.query_overlap(window.box)]
            blockers += [placed.box(i) for i in placed.query_overlap(window.box)]
            if blockers:
                # Every blocker ends strictly east of x, and on the
                # lattice, so this always advances.
                edge = max(b.max_x for b in blockers)
                ix = max(ix + 1, math.ceil((edge - LATTICE_SNAP_EPS) / gsd))
                continue
            if not contains_window(intersection, window):
                ix += 1
                continue
            out.append(window)
            placed.commit([window])
            ix += size_px
    return out


# --- manifest serialization ---------------------------------------------
#
# One record per line, UTF-8, tab-separated:
#   location_id \t crs \t origin_x \t origin_y \t size_px \t gsd \t members
# where members is `[tile_id:timestamp:row:col, ...]`. Floats use repr
# so that parse(format(r)) reproduces r bit for bit.


def format_manifest_record(record: PatchRecord) -> str:
    w = record.window
    members = ", ".join(f"{m.tile_id}:{m.timestamp}:{m.row}:{m.col}" for m in record.members)
    return "\t".join(
        (
            w.location_id,
            str(w.crs),
            repr(w.origin.x),
            repr(w.origin.y),
            str(w.size_px),
            repr(w.gsd),
            f"[{members}]",
        )
    )


def parse_manifest_record(line: str) -> PatchRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise ValidationError(f"manifest line has {len(parts)} fields, expected 7")
    location_id, crs_s, ox_s, oy_s, size_s, gsd_s, members_s = parts
    try:
        window = PatchWindow(
            crs=int(crs_s),
            origin=Point2(float(ox_s), float(oy_s)),
            size_px=int(size_s),
            gsd=float(gsd_s),
        )
    except ValueError as exc:
        raise ValidationError(f"malformed manifest numerics: {exc}") from exc
    if window.location_id != location_id:
        raise ValidationError(
            f"manifest id {location_id!r} does not match window {window.location_id!r}"
        )
    if not (members_s.startswith("[") and members_s.endswith("]")):
        raise ValidationError("manifest members must be bracketed")
    body = members_s[1:-1].strip()
    members: list[Member] = []
    if body:
        for token in body.split(","):
            fields = token.strip().split(":")
            if len(fields) != 4:
                raise ValidationError(f"malformed member {token.strip()!r}")
            tile_id, ts_s, row_s, col_s = fields
            try:
                members.append(Member(tile_id, int(ts_s), int(row_s), int(col_s)))
            except ValueError as exc:
                raise ValidationError(f"malformed member {token.strip()!r}") from exc
    return PatchRecord(window=window, members=tuple(members))


def write_manifest(manifest: PatchManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in manifest.records:
            fh.write(format_manifest_record(record))
            fh.write("\n")


def read_manifest(path) -> PatchManifest:
    records: list[PatchRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse_manifest_record(line))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{number}: {exc}") from exc
    return PatchManifest.from_records(records)
