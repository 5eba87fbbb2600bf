"""Overlap graph, combination search, and the end-to-end curate pipeline."""

import math

import numpy as np
import pytest

from hypercurate.curation import (
    CombinationCache,
    CurationConfig,
    build_combinations,
    build_overlap_graph,
    connected_components,
    curate,
    spatial_conflict_components,
)
from hypercurate.errors import CrossCrsError, NotFoundError, ValidationError
from hypercurate.geometry import polygon_area
from hypercurate.oracle import containment_check, exhaustive_combinations, naive_overlap_check
from hypercurate.stats import compute_stats
from synthgen import make_tile, random_layout, rect, square

GSD = 30.0
CELL = GSD
HALF_DAY = 43200

INF = math.inf


def combo_family(graph, beam=INF, max_order=32):
    """Tile-set -> area over build_combinations from every seed."""
    cache = CombinationCache(graph)
    family = {}
    for seed in graph.nodes:
        for combo in build_combinations(seed, graph, beam, max_order, cache):
            family[combo.key] = combo.area
    return family


# --- graph construction --------------------------------------------------------


def test_graph_disjoint_tiles():
    tiles = [
        make_tile("A", square(0, 0, 2 * CELL), 0),
        make_tile("B", square(10 * CELL, 0, 2 * CELL), 5),
    ]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    assert g.nodes == ("A", "B")
    assert g.n_edges == 0


def test_graph_identical_footprints():
    foot = square(0, 0, 2 * CELL)
    tiles = [make_tile("A", foot, 0), make_tile("B", foot, 30)]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    assert g.n_edges == 1
    poly, area = g.edge("A", "B")
    assert abs(area - polygon_area(foot)) <= 1e-9 * polygon_area(foot)


def test_graph_temporal_gate_blocks_same_day():
    foot = square(0, 0, 4 * CELL)
    tiles = [make_tile("A", foot, 3), make_tile("B", rect(2 * CELL, 0, 4 * CELL, 4 * CELL), 3)]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    assert g.n_edges == 0


def test_graph_gate_is_strict():
    foot = square(0, 0, 2 * CELL)
    tiles = [make_tile("A", foot, 0), make_tile("B", foot, 1)]
    # |dt| == min_dt exactly: no edge
    assert build_overlap_graph(tiles, 86400, size_px=1).n_edges == 0
    assert build_overlap_graph(tiles, 86399, size_px=1).n_edges == 1


def test_graph_requires_patchable_intersection():
    tiles = [
        make_tile("A", square(0, 0, 2 * CELL), 0),
        # half-cell strip of overlap: no full window fits
        make_tile("B", rect(1.5 * CELL, 0, 2 * CELL, 2 * CELL), 5),
    ]
    assert build_overlap_graph(tiles, HALF_DAY, size_px=1).n_edges == 0


def test_graph_rejects_duplicates_and_mixed_crs():
    foot = square(0, 0, 2 * CELL)
    with pytest.raises(ValidationError):
        build_overlap_graph([make_tile("A", foot, 0), make_tile("A", foot, 1)], HALF_DAY)
    with pytest.raises(CrossCrsError):
        build_overlap_graph(
            [make_tile("A", foot, 0), make_tile("B", foot, 1, crs=32610)], HALF_DAY
        )


def test_graph_neighbors_unknown_tile():
    g = build_overlap_graph([make_tile("A", square(0, 0, CELL), 0)], HALF_DAY, size_px=1)
    with pytest.raises(NotFoundError):
        g.neighbors("nope")


# --- connected components -------------------------------------------------------


def test_components_empty():
    g = build_overlap_graph([], HALF_DAY)
    assert connected_components(g) == []


def test_components_chain_plus_isolate():
    tiles = [
        make_tile("A", rect(0, 0, 2 * CELL, 2 * CELL), 0),
        make_tile("B", rect(CELL, 0, 2 * CELL, 2 * CELL), 2),
        make_tile("C", rect(2 * CELL, 0, 2 * CELL, 2 * CELL), 4),
        make_tile("D", rect(90 * CELL, 0, 2 * CELL, 2 * CELL), 6),
    ]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    assert connected_components(g) == [{"A", "B", "C"}, {"D"}]


def test_components_complete_graph():
    foot = square(0, 0, 3 * CELL)
    tiles = [make_tile(t, foot, d) for t, d in zip("ABCD", (0, 2, 4, 6))]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    assert g.n_edges == 6
    assert connected_components(g) == [{"A", "B", "C", "D"}]


def test_components_match_union_find_oracle():
    rng = np.random.default_rng(31)
    for _ in range(20):
        tiles = random_layout(rng, int(rng.integers(2, 14)))
        g = build_overlap_graph(tiles, HALF_DAY, size_px=2)
        parent = {n: n for n in g.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in g.edges:
            parent[find(a)] = find(b)
        groups = {}
        for n in g.nodes:
            groups.setdefault(find(n), set()).add(n)
        expected = sorted(groups.values(), key=min)
        assert connected_components(g) == expected


# --- combination search -----------------------------------------------------------


def test_combinations_no_edges():
    tiles = [
        make_tile("A", square(0, 0, 2 * CELL), 0),
        make_tile("B", square(10 * CELL, 0, 2 * CELL), 5),
    ]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    assert build_combinations("A", g, INF, 32) == []


def test_combinations_unknown_seed():
    g = build_overlap_graph([make_tile("A", square(0, 0, CELL), 0)], HALF_DAY, size_px=1)
    with pytest.raises(NotFoundError):
        build_combinations("Z", g, INF, 32)


def test_combinations_chain_without_core():
    tiles = [
        make_tile("A", rect(0, 0, 2 * CELL, 2 * CELL), 0),
        make_tile("B", rect(CELL, 0, 2 * CELL, 2 * CELL), 10),
        make_tile("C", rect(2 * CELL, 0, 2 * CELL, 2 * CELL), 20),
    ]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    combos = build_combinations("B", g, INF, 32)
    assert {c.tiles for c in combos} == {("A", "B"), ("B", "C")}


def test_combinations_common_core_triple():
    tiles = [
        make_tile("A", rect(0, 0, 4 * CELL, 4 * CELL), 0),
        make_tile("B", rect(CELL, 0, 4 * CELL, 4 * CELL), 10),
        make_tile("C", rect(0, CELL, 4 * CELL, 4 * CELL), 20),
    ]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    combos = build_combinations("A", g, INF, 32)
    by_tiles = {c.tiles: c for c in combos}
    assert set(by_tiles) == {("A", "B"), ("A", "C"), ("A", "B", "C")}
    triple = by_tiles[("A", "B", "C")]
    assert triple.area <= min(by_tiles[("A", "B")].area, by_tiles[("A", "C")].area) + 1e-9


def test_combinations_area_anti_monotone():
    rng = np.random.default_rng(37)
    for _ in range(20):
        tiles = random_layout(rng, int(rng.integers(3, 10)))
        g = build_overlap_graph(tiles, HALF_DAY, size_px=2)
        family = combo_family(g)
        for key, area in family.items():
            if len(key) < 3:
                continue
            subs = [family[key - {t}] for t in key if (key - {t}) in family]
            assert subs, f"no retained sub-tuples for {sorted(key)}"
            assert area <= min(subs) + 1e-9


def test_finite_beam_family_within_unbounded():
    rng = np.random.default_rng(41)
    for _ in range(15):
        tiles = random_layout(rng, int(rng.integers(3, 10)))
        g = build_overlap_graph(tiles, HALF_DAY, size_px=2)
        full = set(combo_family(g, beam=INF))
        for beam in (1, 2, 4):
            assert set(combo_family(g, beam=beam)) <= full


@pytest.mark.xfail(
    strict=True,
    reason=(
        "per-level top-K retention is not monotone in K: a wider beam keeps "
        "extra low-order tuples whose extensions outrank and displace "
        "candidates that a narrower beam retained; only the unbounded-beam "
        "superset relation holds"
    ),
)
def test_beam_monotonicity_between_finite_beams():
    tiles = [
        make_tile("A", rect(0, 0, 20 * CELL, 4 * CELL), 0),
        make_tile("B", rect(0, 0, 10 * CELL, 4 * CELL), 2),
        make_tile("C", rect(11 * CELL, 0, 9 * CELL, 4 * CELL), 4),
        make_tile("X", rect(0, 0, 3 * CELL, 4 * CELL), 6),
        make_tile("Y1", rect(11 * CELL, 0, 8 * CELL, 4 * CELL), 8),
        make_tile("Y2", rect(11 * CELL, 0, 7 * CELL, 4 * CELL), 10),
    ]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    narrow = {c.key for c in build_combinations("A", g, 1, 32)}
    wide = {c.key for c in build_combinations("A", g, 2, 32)}
    assert narrow <= wide


def test_max_order_caps_depth():
    foot = square(0, 0, 4 * CELL)
    tiles = [make_tile(t, foot, 2 * d) for d, t in enumerate("ABCDE")]
    g = build_overlap_graph(tiles, HALF_DAY, size_px=1)
    family = combo_family(g, max_order=3)
    assert max(len(k) for k in family) == 3


def test_combinations_match_exhaustive_oracle():
    rng = np.random.default_rng(43)
    for _ in range(25):
        tiles = random_layout(rng, int(rng.integers(2, 9)))
        g = build_overlap_graph(tiles, HALF_DAY, size_px=2)
        family = combo_family(g)
        oracle = exhaustive_combinations(tiles, HALF_DAY, size_px=2)
        assert set(family) == set(oracle)
        for key, area in family.items():
            assert abs(area - oracle[key]) <= 1e-6 * max(1.0, oracle[key])


# --- curate ---------------------------------------------------------------------


def cfg(**kwargs):
    base = dict(beam=INF, max_order=32, min_dt_seconds=HALF_DAY, patch_px=1)
    base.update(kwargs)
    return CurationConfig(**base)


def test_config_validation():
    with pytest.raises(ValidationError):
        CurationConfig(beam=0)
    with pytest.raises(ValidationError):
        CurationConfig(max_order=1)
    with pytest.raises(ValidationError):
        CurationConfig(patch_px=0)
    with pytest.raises(ValidationError):
        CurationConfig(cloud_max=1.5)
    with pytest.raises(ValidationError):
        CurationConfig(worker_count=0)
    with pytest.raises(ValidationError):
        CurationConfig(min_dt_seconds=-1)


def test_curate_single_tile_four_cells():
    tiles = [make_tile("A", square(0, 0, 2 * CELL), 0)]
    manifest = curate(tiles, cfg())
    assert len(manifest.records) == 4
    assert all(len(r.members) == 1 for r in manifest.records)


def test_curate_one_cell_temporal_pair():
    foot = square(0, 0, CELL)
    tiles = [make_tile("A", foot, 0), make_tile("B", foot, 30)]
    manifest = curate(tiles, cfg())
    assert len(manifest.records) == 1
    rec = manifest.records[0]
    assert [m.tile_id for m in rec.members] == ["A", "B"]
    stats = compute_stats(manifest)
    assert (stats.n_locations, stats.n_patches, stats.n_multitemporal) == (1, 2, 1)


def test_curate_half_overlap_counts():
    # A covers cells x 0..3, B covers 2..5 (2x2 rows): overlap = 2 columns
    tiles = [
        make_tile("A", rect(0, 0, 4 * CELL, 2 * CELL), 0),
        make_tile("B", rect(2 * CELL, 0, 4 * CELL, 2 * CELL), 10),
    ]
    manifest = curate(tiles, cfg())
    stats = compute_stats(manifest)
    assert stats.n_locations == 12  # 6x2 distinct cells
    assert stats.n_multitemporal == 4  # the 2x2 shared block
    assert stats.n_patches == 16  # 12 + 4 second takes
    assert naive_overlap_check(manifest).passed
    assert containment_check(manifest, tiles).passed


def test_curate_same_day_overlap_claims_once():
    # no temporal edge, but the shared strip must still be claimed once
    tiles = [
        make_tile("A", rect(0, 0, 4 * CELL, 2 * CELL), 7),
        make_tile("B", rect(2 * CELL, 0, 4 * CELL, 2 * CELL), 7),
    ]
    manifest = curate(tiles, cfg())
    stats = compute_stats(manifest)
    assert stats.n_locations == 12
    assert stats.n_multitemporal == 0
    assert naive_overlap_check(manifest).passed


def test_curate_applies_cloud_filter():
    foot = square(0, 0, CELL)
    tiles = [make_tile("A", foot, 0), make_tile("B", foot, 30, cloud=0.5)]
    manifest = curate(tiles, cfg())
    members = {m.tile_id for r in manifest.records for m in r.members}
    assert members == {"A"}


def test_curate_pixel_offsets_are_per_tile():
    tiles = [
        make_tile("A", rect(0, 0, 3 * CELL, CELL), 0),
        make_tile("B", rect(CELL, 0, 3 * CELL, CELL), 10),
    ]
    manifest = curate(tiles, cfg())
    overlap = [r for r in manifest.records if len(r.members) == 2]
    assert len(overlap) == 2
    for rec in overlap:
        by_tile = {m.tile_id: m for m in rec.members}
        # same window, one-cell horizontal shift between the two rasters
        assert by_tile["A"].col == by_tile["B"].col + 1
        assert by_tile["A"].row == by_tile["B"].row == 0


def test_curate_deterministic_and_parallel_equivalent():
    rng = np.random.default_rng(47)
    tiles = random_layout(rng, 40, size_px=2)
    seq = curate(tiles, cfg(patch_px=2, worker_count=1))
    again = curate(tiles, cfg(patch_px=2, worker_count=1))
    par = curate(tiles, cfg(patch_px=2, worker_count=4))
    assert seq == again
    assert seq == par


def test_spatial_conflict_components_split_work():
    tiles = [
        make_tile("A", square(0, 0, 2 * CELL), 0),
        make_tile("B", square(CELL, 0, 2 * CELL), 0),  # same-day spatial conflict
        make_tile("C", square(50 * CELL, 0, 2 * CELL), 5),
    ]
    parts = spatial_conflict_components(tiles)
    assert [[t.tile_id for t in part] for part in parts] == [["A", "B"], ["C"]]


def test_curate_random_layouts_never_overlap():
    rng = np.random.default_rng(53)
    for _ in range(10):
        tiles = random_layout(rng, int(rng.integers(5, 25)), size_px=2)
        manifest = curate(tiles, cfg(patch_px=2))
        report = naive_overlap_check(manifest)
        assert report.passed, report.violations[:3]
        contain = containment_check(manifest, tiles)
        assert contain.passed, contain.violations[:3]
