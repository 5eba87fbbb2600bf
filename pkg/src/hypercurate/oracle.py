"""Brute-force reference implementations for certification.

Everything here recomputes a production result by the most direct route
available, sharing only domain types with the rest of the package:
subset enumeration instead of beam search, all-pairs scans instead of a
spatial index, GEOS (shapely) instead of the in-house clipper, plain
loops instead of vectorized metric kernels. Slow on purpose; inputs are
expected to be desk-scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from shapely.affinity import translate as _shapely_translate
from shapely.geometry import LineString, Point, Polygon, box as _shapely_box

from .errors import ValidationError

if TYPE_CHECKING:
    from .curation import TileRecord
    from .metrics import (
        F1Report,
        MaskBatch,
        MiouReport,
        MultiLabelBatch,
        NormalizedMseReport,
        RegressionBatch,
    )
    from .patch_index import PatchManifest

# Mirrors the lattice-snap slop used by production scanning so both
# routes classify boundary-exact fits identically.
_EPS = 1e-7
_BOUNDARY_PAD = 1e-9


@dataclass(frozen=True)
class OracleReport:
    checked_property: str
    violations: tuple[tuple, ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "checked_property": self.checked_property,
            "violations": [list(v) for v in self.violations],
            "pass": self.passed,
        }


# --- exhaustive combination enumeration -----------------------------------


def exhaustive_combinations(
    tiles: Sequence["TileRecord"],
    min_dt: int,
    *,
    size_px: int = 128,
) -> dict[frozenset, float]:
    """All tile subsets (size >= 2) with passing pairwise temporal gates
    and a patchable common intersection, mapped to exact areas.

    Enumerates 2^n subsets via ordered extension with subset pruning,
    so n is capped at 16.
    """
    if len(tiles) > 16:
        raise ValidationError(
            f"exhaustive enumeration is capped at 16 tiles, got {len(tiles)}"
        )
    if not tiles:
        return {}
    gsd = tiles[0].gsd
    ids = sorted(t.tile_id for t in tiles)
    geoms = {t.tile_id: Polygon(t.footprint.ring) for t in tiles}
    stamps = {t.tile_id: t.timestamp for t in tiles}

    def gated(a: str, b: str) -> bool:
        return abs(stamps[a] - stamps[b]) > min_dt

    out: dict[frozenset, float] = {}
    current: dict[frozenset, Polygon] = {}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if not gated(a, b):
                continue
            geom = geoms[a].intersection(geoms[b])
            if _holds_window_geos(geom, gsd, size_px):
                key = frozenset((a, b))
                current[key] = geom
                out[key] = geom.area
    while current:
        grown: dict[frozenset, Polygon] = {}
        for key, geom in current.items():
            last = max(key)
            for v in ids:
                if v <= last or not all(gated(v, m) for m in key):
                    continue
                extended = geom.intersection(geoms[v])
                if _holds_window_geos(extended, gsd, size_px):
                    new_key = key | {v}
                    grown[new_key] = extended
                    out[new_key] = extended.area
        current = grown
    return out


def _holds_window_geos(geom, gsd: float, size_px: int) -> bool:
    """Does a lattice-aligned size_px window fit inside the geometry?

    Computes the locus of admissible SW corners (intersection of four
    translates), pads it by a hair so boundary-exact fits survive GEOS
    rounding, then scans lattice rows for a lattice point.
    """
    if geom.is_empty:
        return False
    side = size_px * gsd
    minx, miny, maxx, maxy = geom.bounds
    if maxx - minx < side - _EPS or maxy - miny < side - _EPS:
        return False
    locus = geom
    for dx, dy in ((-side, 0.0), (0.0, -side), (-side, -side)):
        locus = locus.intersection(_shapely_translate(geom, xoff=dx, yoff=dy))
        if locus.is_empty:
            return False
    locus = locus.buffer(_BOUNDARY_PAD)
    minx, miny, maxx, maxy = locus.bounds
    for iy in range(
        math.ceil((miny - _EPS) / gsd), math.floor((maxy + _EPS) / gsd) + 1
    ):
        y = iy * gsd
        cut = locus.intersection(LineString([(minx - 1.0, y), (maxx + 1.0, y)]))
        for x0, x1 in _x_intervals(cut):
            if math.ceil((x0 - _EPS) / gsd) * gsd <= x1 + _EPS:
                return True
    return False


def _x_intervals(geom) -> list[tuple[float, float]]:
    if geom.is_empty:
        return []
    if isinstance(geom, Point):
        return [(geom.x, geom.x)]
    if isinstance(geom, LineString):
        xs = [c[0] for c in geom.coords]
        return [(min(xs), max(xs))]
    parts = getattr(geom, "geoms", None)
    if parts is None:
        return []
    out: list[tuple[float, float]] = []
    for part in parts:
        out.extend(_x_intervals(part))
    return out


# --- manifest certification ------------------------------------------------


def naive_overlap_check(manifest: "PatchManifest") -> OracleReport:
    """All-pairs open-interior overlap test over same-CRS windows."""
    records = manifest.records
    n = len(records)
    violations: list[tuple] = []
    if n > 1:
        data = np.array(
            [
                (r.window.crs, b.min_x, b.min_y, b.max_x, b.max_y)
                for r in records
                for b in (r.window.box,)
            ],
            dtype=float,
        )
        crs, min_x, min_y, max_x, max_y = data.T
        for i in range(n - 1):
            rest = slice(i + 1, n)
            clash = (
                (crs[rest] == crs[i])
                & (min_x[rest] < max_x[i])
                & (min_x[i] < max_x[rest])
                & (min_y[rest] < max_y[i])
                & (min_y[i] < max_y[rest])
            )
            for j in np.nonzero(clash)[0] + i + 1:
                violations.append(
                    (
                        records[i].location_id,
                        records[j].location_id,
                        "interior overlap",
                    )
                )
    return OracleReport("window non-overlap", tuple(violations))


def containment_check(
    manifest: "PatchManifest", tiles: Sequence["TileRecord"]
) -> OracleReport:
    """Every member tile's footprint must contain its window (closed,
    with a 1e-7 m tolerance band for float noise on boundaries)."""
    footprints = {t.tile_id: Polygon(t.footprint.ring).buffer(_EPS) for t in tiles}
    violations: list[tuple] = []
    for record in manifest.records:
        b = record.window.box
        window_geom = _shapely_box(b.min_x, b.min_y, b.max_x, b.max_y)
        for member in record.members:
            footprint = footprints.get(member.tile_id)
            if footprint is None:
                violations.append(
                    (record.location_id, member.tile_id, "unknown tile")
                )
            elif not footprint.covers(window_geom):
                violations.append(
                    (record.location_id, member.tile_id, "window outside footprint")
                )
    return OracleReport("member containment", tuple(violations))


# --- loop-based metric recomputation ---------------------------------------


def naive_f1_multilabel(batch: "MultiLabelBatch", mode: str = "macro") -> "F1Report":
    from .metrics import F1Report

    if mode not in ("micro", "macro"):
        raise ValidationError(f"mode must be micro or macro, got {mode!r}")
    preds = [[bool(v) for v in row] for row in batch.predictions]
    targs = [[bool(v) for v in row] for row in batch.targets]
    n_classes = len(preds[0])
    table: list[float | None] = []
    tp_all = fp_all = fn_all = 0
    scores = []
    for k in range(n_classes):
        tp = fp = fn = 0
        for p_row, t_row in zip(preds, targs):
            if p_row[k] and t_row[k]:
                tp += 1
            elif p_row[k]:
                fp += 1
            elif t_row[k]:
                fn += 1
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
        if tp + fp + fn == 0:
            table.append(None)
        else:
            value = 2 * tp / (2 * tp + fp + fn)
            table.append(value)
            scores.append(value)
    if mode == "micro":
        denom = 2 * tp_all + fp_all + fn_all
        score = 2 * tp_all / denom if denom else 0.0
    else:
        score = sum(scores) / len(scores) if scores else 0.0
    return F1Report(float(score), mode, tuple(table))


def naive_miou(batch: "MaskBatch") -> "MiouReport":
    from .metrics import IGNORE_INDEX, MiouReport

    inter: dict[int, int] = {}
    union_t: dict[int, int] = {}
    union_p: dict[int, int] = {}
    for p_mask, t_mask in zip(batch.predictions, batch.targets):
        for p_val, t_val in zip(p_mask.reshape(-1), t_mask.reshape(-1)):
            t = int(t_val)
            p = int(p_val)
            if t == IGNORE_INDEX:
                continue
            union_t[t] = union_t.get(t, 0) + 1
            union_p[p] = union_p.get(p, 0) + 1
            if p == t:
                inter[t] = inter.get(t, 0) + 1
    table: list[float | None] = []
    scores = []
    for c in range(batch.n_classes):
        union = union_t.get(c, 0) + union_p.get(c, 0) - inter.get(c, 0)
        if union == 0:
            table.append(None)
            continue
        value = inter.get(c, 0) / union
        table.append(value)
        scores.append(value)
    score = sum(scores) / len(scores) if scores else 0.0
    return MiouReport(float(score), tuple(table))


def naive_normalized_mse(batch: "RegressionBatch") -> "NormalizedMseReport":
    from .metrics import NormalizedMseReport

    n, p = batch.predictions.shape
    ratios = []
    for j in range(p):
        err = 0.0
        base = 0.0
        for i in range(n):
            err += (float(batch.predictions[i, j]) - float(batch.targets[i, j])) ** 2
            base += (float(batch.baseline_means[j]) - float(batch.targets[i, j])) ** 2
        if base <= 0.0:
            raise ValidationError(f"baseline MSE is zero for parameter {j}")
        ratios.append((err / n) / (base / n))
    total = sum(ratios)
    return NormalizedMseReport(
        sum_form=float(total),
        mean_percent=float(100.0 * total / p),
        per_parameter=tuple(ratios),
    )


def naive_metrics(batch, mode: str = "macro"):
    """Dispatch a batch to the matching loop-based metric."""
    from .metrics import MaskBatch, MultiLabelBatch, RegressionBatch

    if isinstance(batch, MultiLabelBatch):
        return naive_f1_multilabel(batch, mode)
    if isinstance(batch, MaskBatch):
        return naive_miou(batch)
    if isinstance(batch, RegressionBatch):
        return naive_normalized_mse(batch)
    raise ValidationError(f"unsupported batch type {type(batch).__name__}")
