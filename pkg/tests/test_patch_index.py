"""Lattice windows, greedy patchify, the overlap index, manifest format."""

import numpy as np
import pytest

from hypercurate.errors import ConsistencyError, CrossCrsError, NotFoundError, ValidationError
from hypercurate.geometry import BoundingBox, Point2, convex_polygon
from hypercurate.patch_index import (
    Member,
    PatchManifest,
    PatchRecord,
    PatchWindow,
    SpatialIndex,
    assign_location_id,
    format_manifest_record,
    holds_window,
    parse_manifest_record,
    patchify,
    read_manifest,
    write_manifest,
)
from synthgen import DAY, EPOCH, random_patch_record, rect, rotated_square, square

GSD = 30.0
CELL = GSD  # 1-px windows in most layout tests keep the arithmetic obvious


def window(ix, iy, size_px=1, crs=32632, gsd=GSD):
    return PatchWindow(crs=crs, origin=Point2(ix * gsd, iy * gsd), size_px=size_px, gsd=gsd)


def test_window_requires_lattice_alignment():
    with pytest.raises(ValidationError):
        PatchWindow(crs=32632, origin=Point2(7.5, 0.0), size_px=1, gsd=GSD)


def test_window_side_and_box():
    w = window(2, 3, size_px=4)
    assert w.side == 120.0
    assert w.box == BoundingBox(60.0, 90.0, 180.0, 210.0)


def test_location_id_deterministic_and_injective():
    w = window(2, 3)
    assert assign_location_id(w) == assign_location_id(window(2, 3))
    assert w.location_id == "L32632_2_3_1"
    neighbors = {window(2, 3).location_id, window(3, 3).location_id,
                 window(2, 4).location_id, window(2, 3, size_px=2).location_id}
    assert len(neighbors) == 4


def test_record_member_validation():
    w = window(0, 0)
    with pytest.raises(ValidationError):
        PatchRecord(window=w, members=())
    with pytest.raises(ValidationError):
        PatchRecord(
            window=w,
            members=(Member("A", EPOCH + DAY, 0, 0), Member("B", EPOCH, 0, 0)),
        )
    rec = PatchRecord(
        window=w, members=(Member("A", EPOCH, 0, 0), Member("B", EPOCH + DAY, 0, 0))
    )
    assert rec.is_multitemporal
    assert rec.location_id == w.location_id


# --- patchify ----------------------------------------------------------------


def test_patchify_too_small_polygon():
    poly = square(0, 0, 0.5 * CELL)
    assert patchify(poly, (GSD, 1), SpatialIndex(32632)) == []


def test_patchify_2x2_lattice_count():
    poly = square(0, 0, 2 * CELL)
    wins = patchify(poly, (GSD, 1), SpatialIndex(32632))
    assert [(w.origin.x / GSD, w.origin.y / GSD) for w in wins] == [
        (0, 0), (1, 0), (0, 1), (1, 1)
    ]


def test_patchify_skips_committed_quadrant():
    poly = square(0, 0, 2 * CELL)
    index = SpatialIndex(32632)
    index.commit([window(0, 0)])
    wins = patchify(poly, (GSD, 1), index)
    assert [(w.origin.x / GSD, w.origin.y / GSD) for w in wins] == [
        (1, 0), (0, 1), (1, 1)
    ]


def test_patchify_single_cell_footprint():
    # the admissible-corner locus collapses to one point and must survive
    poly = square(3 * CELL, 5 * CELL, CELL)
    wins = patchify(poly, (GSD, 1), SpatialIndex(32632))
    assert len(wins) == 1
    assert wins[0].origin == Point2(3 * CELL, 5 * CELL)


def test_patchify_row_major_greedy_multicell_windows():
    # 5x2 cells with 2x2-px windows: greedy places x=0 and x=2, not x=1
    poly = rect(0, 0, 5 * CELL, 2 * CELL)
    wins = patchify(poly, (GSD, 2), SpatialIndex(32632))
    assert [(w.origin.x / GSD, w.origin.y / GSD) for w in wins] == [(0, 0), (2, 0)]


def test_patchify_unaligned_polygon_keeps_interior_cells():
    # a half-cell shift leaves a 1-cell-wide aligned core
    poly = rect(0.5 * CELL, 0.5 * CELL, 2 * CELL, 2 * CELL)
    wins = patchify(poly, (GSD, 1), SpatialIndex(32632))
    assert [(w.origin.x / GSD, w.origin.y / GSD) for w in wins] == [(1, 1)]


def test_patchify_respects_convex_boundary():
    tri = convex_polygon([(0, 0), (4 * CELL, 0), (0, 4 * CELL)])
    wins = patchify(tri, (GSD, 1), SpatialIndex(32632))
    cells = {(w.origin.x / GSD, w.origin.y / GSD) for w in wins}
    # a cell is inside iff its NE corner is: (x+1) + (y+1) <= 4
    expected = {(x, y) for y in range(4) for x in range(4) if x + y <= 2}
    assert cells == expected


def test_patchify_windows_mutually_disjoint():
    rng = np.random.default_rng(7)
    for _ in range(20):
        poly = rect(
            float(rng.integers(-5, 5)) * CELL,
            float(rng.integers(-5, 5)) * CELL,
            float(rng.integers(2, 9)) * CELL,
            float(rng.integers(2, 9)) * CELL,
        )
        wins = patchify(poly, (GSD, 2), SpatialIndex(32632))
        boxes = [w.box for w in wins]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert not boxes[i].intersects_interior(boxes[j])


def test_holds_window():
    assert holds_window(square(0, 0, CELL), (GSD, 1))
    assert not holds_window(square(0, 0, 0.9 * CELL), (GSD, 1))
    assert holds_window(rotated_square(0, 0, 3 * CELL), (GSD, 1))


# --- spatial index -----------------------------------------------------------


def test_commit_empty_is_noop():
    index = SpatialIndex(32632)
    index.commit([])
    assert index.query_overlap(BoundingBox(-1e9, -1e9, 1e9, 1e9)) == []


def test_commit_then_query_hits():
    index = SpatialIndex(32632)
    w = window(0, 0)
    index.commit([w])
    assert index.query_overlap(w.box) == [w.location_id]


def test_commit_overlap_is_consistency_error():
    index = SpatialIndex(32632)
    index.commit([window(0, 0, size_px=2)])
    with pytest.raises(ConsistencyError):
        index.commit([window(1, 1, size_px=2)])


def test_commit_idempotent_per_location():
    index = SpatialIndex(32632)
    w = window(0, 0)
    index.commit([w])
    index.commit([w])  # same id, same box: fine
    assert index.query_overlap(w.box) == [w.location_id]


def test_commit_cross_crs_rejected():
    index = SpatialIndex(32632)
    with pytest.raises(CrossCrsError):
        index.commit([window(0, 0, crs=32610)])


def test_query_edge_touch_is_not_overlap():
    index = SpatialIndex(32632)
    index.commit([window(0, 0)])
    assert index.query_overlap(BoundingBox(CELL, 0, 2 * CELL, CELL)) == []
    assert index.query_overlap(BoundingBox(0, CELL, CELL, 2 * CELL)) == []


def test_box_lookup():
    index = SpatialIndex(32632)
    w = window(4, 4)
    index.commit([w])
    assert index.box(w.location_id) == w.box
    with pytest.raises(NotFoundError):
        index.box("L32632_9_9_1")


def test_query_matches_linear_scan():
    rng = np.random.default_rng(11)
    index = SpatialIndex(32632)
    # distinct lattice cells spaced >= window size: windows cannot overlap
    cells = rng.choice(60 * 60, size=1000, replace=False)
    windows = [window(int(c % 60) * 2, int(c // 60) * 2, size_px=2) for c in cells]
    index.commit(windows)
    boxes = [w.box for w in windows]
    ids = [w.location_id for w in windows]
    for _ in range(200):
        x0 = float(rng.uniform(-10, 130)) * GSD
        y0 = float(rng.uniform(-10, 130)) * GSD
        probe = BoundingBox(x0, y0, x0 + float(rng.uniform(0.5, 8)) * GSD,
                            y0 + float(rng.uniform(0.5, 8)) * GSD)
        naive = sorted(i for i, b in zip(ids, boxes) if b.intersects_interior(probe))
        assert index.query_overlap(probe) == naive


# --- manifest format ----------------------------------------------------------


def test_manifest_record_round_trip_fixed():
    rec = PatchRecord(
        window=window(3, -2, size_px=128),
        members=(Member("T1", EPOCH, 0, 128), Member("T2", EPOCH + 5 * DAY, 128, 0)),
    )
    line = format_manifest_record(rec)
    assert line.count("\t") == 6
    assert parse_manifest_record(line) == rec


def test_manifest_record_round_trip_random():
    rng = np.random.default_rng(13)
    for _ in range(200):
        rec = random_patch_record(rng)
        assert parse_manifest_record(format_manifest_record(rec)) == rec


def test_manifest_rejects_malformed_lines():
    rec = random_patch_record(np.random.default_rng(17))
    line = format_manifest_record(rec)
    with pytest.raises(ValidationError):
        parse_manifest_record(line + "\textra")
    with pytest.raises(ValidationError):
        parse_manifest_record(line.replace("\t", " ", 1))
    # id must match the window it claims to describe
    forged = "L99999_0_0_1" + line[line.index("\t"):]
    with pytest.raises(ValidationError):
        parse_manifest_record(forged)


def test_manifest_sorted_and_unique():
    rec_a = PatchRecord(window=window(0, 0), members=(Member("A", EPOCH, 0, 0),))
    rec_b = PatchRecord(window=window(1, 0), members=(Member("A", EPOCH, 0, 1),))
    with pytest.raises(ValidationError):
        PatchManifest(records=(rec_b, rec_a))
    with pytest.raises(ValidationError):
        PatchManifest(records=(rec_a, rec_a))
    manifest = PatchManifest.from_records([rec_b, rec_a])
    assert [r.location_id for r in manifest.records] == sorted(
        [rec_a.location_id, rec_b.location_id]
    )


def test_manifest_file_round_trip(tmp_path):
    rng = np.random.default_rng(19)
    records = {}
    while len(records) < 50:
        rec = random_patch_record(rng)
        records.setdefault(rec.location_id, rec)
    manifest = PatchManifest.from_records(records.values())
    path = tmp_path / "patches.tsv"
    write_manifest(manifest, path)
    again = read_manifest(path)
    assert again == manifest
    # byte-for-byte stable across a second write
    path2 = tmp_path / "patches2.tsv"
    write_manifest(again, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_read_manifest_reports_line_numbers(tmp_path):
    path = tmp_path / "broken.tsv"
    good = format_manifest_record(random_patch_record(np.random.default_rng(23)))
    path.write_text(good + "\nnot a record\n", encoding="utf-8")
    with pytest.raises(ValidationError, match=":2"):
        read_manifest(path)
