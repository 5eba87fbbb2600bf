"""Overlap analysis and multi-temporal patch curation.

The pipeline: build a graph of spatio-temporal tile overlaps, enumerate
multi-tile combinations level-wise under a beam bound (largest common
intersections first), then extract patch windows per combination
against a shared spatial index so that no two emitted locations ever
overlap. Residual single-tile area is patchified last.

Work is partitioned by *spatial-conflict* components: tiles connected
through any footprint overlap of at least 1 m^2, with no temporal gate.
This is coarser than the overlap graph's components (same-day
neighbours overlap spatially but get no graph edge), and it is the
partition that makes per-component spatial indexes safe: windows from
different conflict components provably cannot overlap.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConsistencyError,
    CrossCrsError,
    HypercurateError,
    NotFoundError,
    ValidationError,
)
from .geometry import SLIVER_AREA, ConvexPolygon, bbox, intersect_convex, polygon_area
from .patch_index import (
    Member,
    PatchManifest,
    PatchRecord,
    PatchWindow,
    SpatialIndex,
    holds_window,
    patchify,
)
from .raster_io import derive_grid, filter_by_cloud, window_pixel_offsets

LOGGER = logging.getLogger(__name__)

DEFAULT_BEAM = 64
DEFAULT_MAX_ORDER = 32
DEFAULT_MIN_DT = 86400
DEFAULT_PATCH_PX = 128
DEFAULT_CLOUD_MAX = 0.10

_TILE_ID_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


@dataclass(frozen=True)
class TileRecord:
    """One georeferenced acquisition: footprint, instant, raster pointer."""

    tile_id: str
    footprint: ConvexPolygon
    timestamp: int
    crs: int
    raster_ref: str
    cloud_fraction: float
    gsd: float
    band_count: int

    def __post_init__(self) -> None:
        if not _TILE_ID_RE.match(self.tile_id):
            raise ValidationError(
                f"tile_id {self.tile_id!r} must match [A-Za-z0-9_.-]+"
            )
        if isinstance(self.timestamp, bool) or not isinstance(
            self.timestamp, (int, np.integer)
        ):
            raise ValidationError(
                f"tile {self.tile_id}: timestamp must be epoch seconds (int), "
                f"got {type(self.timestamp).__name__}"
            )
        if not (0.0 <= self.cloud_fraction <= 1.0):
            raise ValidationError(
                f"tile {self.tile_id}: cloud_fraction {self.cloud_fraction} outside [0, 1]"
            )
        if not (self.gsd > 0 and math.isfinite(self.gsd)):
            raise ValidationError(f"tile {self.tile_id}: gsd must be positive")
        if self.band_count < 1:
            raise ValidationError(f"tile {self.tile_id}: band_count must be >= 1")


@dataclass(frozen=True)
class Combination:
    """n mutually-overlapping tiles and their common intersection."""

    tiles: tuple[str, ...]
    intersection: ConvexPolygon
    area: float
    order: int

    def __post_init__(self) -> None:
        if self.order != len(self.tiles) or self.order < 2:
            raise ValidationError("combination order must equal its tile count (>= 2)")
        if tuple(sorted(self.tiles)) != self.tiles:
            raise ValidationError("combination tiles must be sorted")

    @property
    def key(self) -> frozenset:
        return frozenset(self.tiles)


class OverlapGraph:
    """Tiles as nodes, patchable spatio-temporal overlaps as edges."""

    def __init__(
        self,
        tiles: Sequence[TileRecord],
        edges: Mapping[tuple[str, str], tuple[ConvexPolygon, float]],
        lattice: tuple[float, int],
        crs: int,
    ) -> None:
        self.nodes: tuple[str, ...] = tuple(sorted(t.tile_id for t in tiles))
        self.edges: dict[tuple[str, str], tuple[ConvexPolygon, float]] = dict(edges)
        self.lattice = lattice
        self.crs = crs
        self.footprints: dict[str, ConvexPolygon] = {
            t.tile_id: t.footprint for t in tiles
        }
        self.timestamps: dict[str, int] = {t.tile_id: t.timestamp for t in tiles}
        self._adjacency: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            self._adjacency[a].add(b)
            self._adjacency[b].add(a)

    def __contains__(self, tile_id: str) -> bool:
        return tile_id in self._adjacency

    def neighbors(self, tile_id: str) -> set[str]:
        try:
            return self._adjacency[tile_id]
        except KeyError:
            raise NotFoundError(f"unknown tile_id {tile_id!r}") from None

    def edge(self, a: str, b: str) -> tuple[ConvexPolygon, float] | None:
        return self.edges.get((a, b) if a < b else (b, a))

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def build_overlap_graph(
    tiles: Sequence[TileRecord],
    min_dt: int,
    *,
    size_px: int = DEFAULT_PATCH_PX,
) -> OverlapGraph:
    """Edge (a, b) iff |dt| > min_dt and the intersection holds a window.

    Tiles are expected to be cloud-filtered already. Mixed CRS is
    rejected; all tiles must share one gsd (one lattice).
    """
    tiles = sorted(tiles, key=lambda t: t.tile_id)
    _validate_archive(tiles)
    if not tiles:
        return OverlapGraph((), {}, (1.0, size_px), 0)
    gsd = tiles[0].gsd
    crs = tiles[0].crs
    lattice = (gsd, size_px)
    edges: dict[tuple[str, str], tuple[ConvexPolygon, float]] = {}
    boxes = np.array(
        [
            (b.min_x, b.min_y, b.max_x, b.max_y)
            for b in (bbox(t.footprint) for t in tiles)
        ],
        dtype=float,
    ).reshape(len(tiles), 4)
    stamps = np.array([t.timestamp for t in tiles], dtype=np.int64)
    for i, tile in enumerate(tiles):
        rest = slice(i + 1, len(tiles))
        spatial = (
            (boxes[rest, 0] < boxes[i, 2])
            & (boxes[i, 0] < boxes[rest, 2])
            & (boxes[rest, 1] < boxes[i, 3])
            & (boxes[i, 1] < boxes[rest, 3])
        )
        temporal = np.abs(stamps[rest] - stamps[i]) > min_dt
        for j in np.nonzero(spatial & temporal)[0] + i + 1:
            other = tiles[j]
            poly = intersect_convex(
                tile.footprint, other.footprint, min_area=SLIVER_AREA
            )
            if poly is None or not holds_window(poly, lattice):
                continue
            edges[(tile.tile_id, other.tile_id)] = (poly, polygon_area(poly))
    return OverlapGraph(tiles, edges, lattice, crs)


def connected_components(g: OverlapGraph) -> list[set[str]]:
    """Node partition by edge connectivity; isolated nodes are singletons.

    Components are ordered by their smallest member for determinism.
    """
    seen: set[str] = set()
    components: list[set[str]] = []
    for start in g.nodes:
        if start in seen:
            continue
        component = {start}
        queue = [start]
        while queue:
            node = queue.pop()
            for nbr in g.neighbors(node):
                if nbr not in component:
                    component.add(nbr)
                    queue.append(nbr)
        seen |= component
        components.append(component)
    components.sort(key=lambda c: min(c))
    return components


class CombinationCache:
    """Per-component memo of subset intersections and valid extensions.

    Combination search from every seed tile revisits the same tile
    subsets; this cache computes each subset's intersection and each
    subset's valid one-tile extensions exactly once. Results are
    independent of which seed asked first: a subset's polygon is always
    derived from its canonical parent (the subset minus its largest
    tile id).
    """

    def __init__(self, graph: OverlapGraph) -> None:
        self._graph = graph
        self._combos: dict[frozenset, Combination | None] = {}
        for (a, b), (poly, area) in graph.edges.items():
            self._combos[frozenset((a, b))] = Combination((a, b), poly, area, 2)

    def combination(self, key: frozenset) -> Combination | None:
        """The subset's Combination, or None when invalid (not all pairs
        are edges, or the common intersection holds no window)."""
        hit = self._combos.get(key, _MISS)
        if hit is not _MISS:
            return hit
        ids = sorted(key)
        if len(ids) < 2:
            raise ConsistencyError("combination keys have at least two tiles")
        if len(ids) == 2:
            # Non-edge pair: graph construction already decided it.
            self._combos[key] = None
            return None
        last = ids[-1]
        result: Combination | None = None
        if all(self._graph.edge(t, last) is not None for t in ids[:-1]):
            parent = self.combination(key - {last})
            if parent is not None:
                poly = intersect_convex(
                    parent.intersection,
                    self._graph.footprints[last],
                    min_area=SLIVER_AREA,
                )
                if poly is not None and holds_window(poly, self._graph.lattice):
                    result = Combination(
                        tuple(ids), poly, polygon_area(poly), len(ids)
                    )
        self._combos[key] = result
        return result

    def children(self, combo: Combination) -> tuple[Combination, ...]:
        """Valid one-tile extensions of a combination, largest first."""
        key = combo.key
        members = set(combo.tiles)
        common: set[str] | None = None
        for t in combo.tiles:
            nbrs = self._graph.neighbors(t)
            common = set(nbrs) if common is None else common & nbrs
            if not common:
                break
        out: list[Combination] = []
        for v in sorted((common or set()) - members):
            child = self.combination(frozenset(members | {v}))
            if child is not None:
                out.append(child)
        out.sort(key=_ranking)
        return tuple(out)


_MISS = object()


def _ranking(c: Combination) -> tuple[float, tuple[str, ...]]:
    return (-c.area, c.tiles)


def build_combinations(
    tile: str,
    g: OverlapGraph,
    beam: float = DEFAULT_BEAM,
    max_order: int = DEFAULT_MAX_ORDER,
    cache: CombinationCache | None = None,
) -> list[Combination]:
    """Level-wise combination search seeded at one tile.

    Level 2 is the seed's incident edges; level n extends the retained
    (n-1)-tuples by common graph neighbours, keeping combinations whose
    intersection still holds a full window. At most `beam` tuples
    survive per level, ranked by (area desc, ids asc). Returns the
    retained tuples of all levels.
    """
    if tile not in g:
        raise NotFoundError(f"unknown tile_id {tile!r}")
    if beam < 1:
        raise ValidationError(f"beam must be >= 1, got {beam}")
    if max_order < 2:
        raise ValidationError(f"max_order must be >= 2, got {max_order}")
    if cache is None:
        cache = CombinationCache(g)
    level: list[Combination] = []
    for nbr in g.neighbors(tile):
        combo = cache.combination(frozenset((tile, nbr)))
        if combo is None:
            raise ConsistencyError(f"edge ({tile}, {nbr}) lost its combination")
        level.append(combo)
    level.sort(key=_ranking)
    level = _retain(level, beam)
    results: dict[frozenset, Combination] = {c.key: c for c in level}
    order = 2
    while level and order < max_order:
        candidates: dict[frozenset, Combination] = {}
        for combo in level:
            for child in cache.children(combo):
                candidates.setdefault(child.key, child)
        if not candidates:
            break
        level = _retain(sorted(candidates.values(), key=_ranking), beam)
        results.update({c.key: c for c in level})
        order += 1
    return sorted(results.values(), key=lambda c: (c.order, _ranking(c)))


def _retain(ranked: list[Combination], beam: float) -> list[Combination]:
    if math.isinf(beam):
        return ranked
    return ranked[: int(beam)]


@dataclass(frozen=True)
class CurationConfig:
    beam: float = DEFAULT_BEAM
    max_order: int = DEFAULT_MAX_ORDER
    min_dt_seconds: int = DEFAULT_MIN_DT
    patch_px: int = DEFAULT_PATCH_PX
    cloud_max: float = DEFAULT_CLOUD_MAX
    band_mask_ref: str | None = None
    worker_count: int = 1

    def __post_init__(self) -> None:
        if self.beam < 1:
            raise ValidationError(f"beam must be >= 1, got {self.beam}")
        if self.max_order < 2:
            raise ValidationError(f"max_order must be >= 2, got {self.max_order}")
        if self.min_dt_seconds < 0:
            raise ValidationError("min_dt_seconds must be >= 0")
        if self.patch_px < 1:
            raise ValidationError("patch_px must be >= 1")
        if not (0.0 <= self.cloud_max <= 1.0):
            raise ValidationError(f"cloud_max {self.cloud_max} outside [0, 1]")
        if self.worker_count < 1:
            raise ValidationError("worker_count must be >= 1")


def curate(tiles: Sequence[TileRecord], cfg: CurationConfig) -> PatchManifest:
    """Run the full extraction over an archive; see the module docstring.

    The output manifest is sorted by location_id and is byte-identical
    across runs and worker counts.
    """
    _validate_archive(tiles)
    kept = filter_by_cloud(tiles, cfg.cloud_max)
    LOGGER.info("curate: %d tiles, %d after cloud filter", len(tiles), len(kept))
    if not kept:
        return PatchManifest(())
    components = spatial_conflict_components(kept)
    LOGGER.info("curate: %d spatial-conflict components", len(components))
    jobs = [(component, cfg) for component in components]
    records: list[PatchRecord] = []
    if cfg.worker_count > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.worker_count) as pool:
            for part in pool.map(_curate_component_job, jobs, chunksize=1):
                records.extend(part)
    else:
        for job in jobs:
            records.extend(_curate_component_job(job))
    return PatchManifest.from_records(records)


def spatial_conflict_components(tiles: Sequence[TileRecord]) -> list[list[TileRecord]]:
    """Partition tiles by *any* footprint overlap (>= 1 m^2), no time gate.

    Patch windows are lattice-aligned, so two windows that overlap at
    all share at least one full lattice cell (>= gsd^2 >= 1 m^2); the
    footprints containing them then intersect above the sliver
    threshold and land in one component. Separate components therefore
    cannot produce conflicting windows and are safe parallel units.
    """
    tiles = sorted(tiles, key=lambda t: t.tile_id)
    n = len(tiles)
    adjacency: list[list[int]] = [[] for _ in range(n)]
    boxes = np.array(
        [
            (b.min_x, b.min_y, b.max_x, b.max_y)
            for b in (bbox(t.footprint) for t in tiles)
        ],
        dtype=float,
    ).reshape(n, 4)
    for i in range(n):
        rest = slice(i + 1, n)
        spatial = (
            (boxes[rest, 0] < boxes[i, 2])
            & (boxes[i, 0] < boxes[rest, 2])
            & (boxes[rest, 1] < boxes[i, 3])
            & (boxes[i, 1] < boxes[rest, 3])
        )
        for j in np.nonzero(spatial)[0] + i + 1:
            poly = intersect_convex(
                tiles[i].footprint, tiles[j].footprint, min_area=SLIVER_AREA
            )
            if poly is not None:
                adjacency[i].append(j)
                adjacency[j].append(i)
    seen = [False] * n
    components: list[list[TileRecord]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        group = []
        while stack:
            k = stack.pop()
            group.append(k)
            for j in adjacency[k]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        components.append([tiles[k] for k in sorted(group)])
    return components


def _curate_component_job(job: tuple[list[TileRecord], CurationConfig]) -> list[PatchRecord]:
    component, cfg = job
    try:
        return _curate_component(component, cfg)
    except HypercurateError as exc:
        ids = ", ".join(t.tile_id for t in component[:5])
        more = "..." if len(component) > 5 else ""
        raise type(exc)(f"component [{ids}{more}]: {exc}") from exc


def _curate_component(
    component: list[TileRecord], cfg: CurationConfig
) -> list[PatchRecord]:
    graph = build_overlap_graph(
        component, cfg.min_dt_seconds, size_px=cfg.patch_px
    )
    cache = CombinationCache(graph)
    combos: dict[frozenset, Combination] = {}
    for seed in graph.nodes:
        for combo in build_combinations(
            seed, graph, cfg.beam, cfg.max_order, cache
        ):
            combos.setdefault(combo.key, combo)
    ordered = sorted(combos.values(), key=lambda c: (-c.order, -c.area, c.tiles))
    by_id = {t.tile_id: t for t in component}
    grids = {t.tile_id: derive_grid(t.footprint, t.gsd) for t in component}
    index = SpatialIndex(graph.crs)
    records: list[PatchRecord] = []
    for combo in ordered:
        windows = patchify(combo.intersection, graph.lattice, index)
        index.commit(windows)
        member_tiles = sorted(
            (by_id[tid] for tid in combo.tiles), key=lambda t: t.timestamp
        )
        for window in windows:
            records.append(
                PatchRecord(window, _members(member_tiles, grids, window))
            )
    for tile in component:
        windows = patchify(tile.footprint, graph.lattice, index)
        index.commit(windows)
        for window in windows:
            records.append(PatchRecord(window, _members([tile], grids, window)))
    return records


def _members(
    tiles: list[TileRecord],
    grids: Mapping[str, tuple],
    window: PatchWindow,
) -> tuple[Member, ...]:
    members = []
    for tile in tiles:
        origin, _, _ = grids[tile.tile_id]
        row, col = window_pixel_offsets(origin, tile.gsd, window)
        members.append(Member(tile.tile_id, tile.timestamp, row, col))
    return tuple(members)


def _validate_archive(tiles: Sequence[TileRecord]) -> None:
    seen: set[str] = set()
    for tile in tiles:
        if tile.tile_id in seen:
            raise ValidationError(f"duplicate tile_id {tile.tile_id!r}")
        seen.add(tile.tile_id)
    if not tiles:
        return
    crs = tiles[0].crs
    gsd = tiles[0].gsd
    for tile in tiles:
        if tile.crs != crs:
            raise CrossCrsError(
                f"tile {tile.tile_id} crs {tile.crs} != {crs}; one CRS per run"
            )
        if tile.gsd != gsd:
            raise ValidationError(
                f"tile {tile.tile_id} gsd {tile.gsd} != {gsd}; one lattice per run"
            )
