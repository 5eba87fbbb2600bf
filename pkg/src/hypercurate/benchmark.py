"""Downstream benchmark construction from label rasters.

Label rasters are usually coarser than patches (100 m land cover vs
30 m pixels); both target builders resample by nearest neighbour at
patch pixel centres through one shared sampler, which is what makes
multi-label targets and segmentation masks agree on the class set of a
window by construction.

Aggregation configs translate raw label codes to contiguous class
indices. A code may map to null, meaning the taxonomy deliberately
drops it: such pixels behave exactly like nodata (mask value 255,
excluded from multi-label denominators). Codes absent from the config
raise MappingError instead of being silently dropped.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

import numpy as np

from .errors import CoverageError, MappingError, ValidationError
from .metrics import IGNORE_INDEX
from .raster_io import RasterHeader, read_raster

if TYPE_CHECKING:
    from .patch_index import PatchRecord, PatchWindow

LOGGER = logging.getLogger(__name__)

PACKAGED_AGGREGATIONS = {
    "corine-multilabel-19": "corine_multilabel_19.json",
    "cdl-segmentation-20": "cdl_segmentation_20.json",
    "nlcd-segmentation-15": "nlcd_segmentation_15.json",
    "desis-cdl-segmentation-19": "desis_cdl_segmentation_19.json",
}


@dataclass(frozen=True)
class LabelRaster:
    """Single-band integer class-code raster held in memory."""

    header: RasterHeader
    values: np.ndarray
    nodata: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValidationError("label raster values must be 2-D [rows, cols]")
        if values.shape != (self.header.height_px, self.header.width_px):
            raise ValidationError(
                f"label raster shape {values.shape} != header "
                f"({self.header.height_px}, {self.header.width_px})"
            )
        if bool(((values < 0) & (values != self.nodata)).any()):
            raise ValidationError("label codes must be non-negative (or nodata)")
        object.__setattr__(self, "values", values.astype(np.int64))

    @classmethod
    def load(cls, path) -> "LabelRaster":
        header, cube = read_raster(path)
        if header.bands != 1:
            raise ValidationError(
                f"label raster must have exactly 1 band, got {header.bands}"
            )
        return cls(header=header, values=cube[0], nodata=header.nodata_value)


@dataclass(frozen=True)
class AggregationMap:
    """Label code -> target class index (or None = dropped)."""

    name: str
    n_classes: int
    class_names: tuple[str, ...]
    mapping: dict[int, int | None]

    def __post_init__(self) -> None:
        if not (1 <= self.n_classes <= IGNORE_INDEX):
            raise ValidationError(f"n_classes {self.n_classes} outside [1, 255]")
        if len(self.class_names) != self.n_classes:
            raise ValidationError(
                f"{len(self.class_names)} class names != {self.n_classes} classes"
            )
        for code, target in self.mapping.items():
            if code < 0:
                raise ValidationError(f"negative label code {code}")
            if target is not None and not (0 <= target < self.n_classes):
                raise ValidationError(
                    f"code {code} maps to {target}, outside [0, {self.n_classes})"
                )


def load_aggregation(path) -> AggregationMap:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return _aggregation_from_doc(doc, str(path))


def packaged_aggregation(name: str) -> AggregationMap:
    """One of the shipped taxonomy configs, by its short name."""
    try:
        filename = PACKAGED_AGGREGATIONS[name]
    except KeyError:
        known = ", ".join(sorted(PACKAGED_AGGREGATIONS))
        raise ValidationError(f"unknown aggregation {name!r}; shipped: {known}") from None
    doc = json.loads(
        resources.files("hypercurate.configs").joinpath(filename).read_text()
    )
    return _aggregation_from_doc(doc, filename)


def _aggregation_from_doc(doc: dict, source: str) -> AggregationMap:
    try:
        return AggregationMap(
            name=str(doc["name"]),
            n_classes=int(doc["classes"]),
            class_names=tuple(str(n) for n in doc["class_names"]),
            mapping={
                int(code): (None if target is None else int(target))
                for code, target in doc["map"].items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed aggregation config {source}: {exc}") from exc


@dataclass(frozen=True)
class MultiLabelTarget:
    location_id: str
    classes: frozenset[int]

    def to_json(self) -> str:
        return json.dumps(
            {"location_id": self.location_id, "classes": sorted(self.classes)}
        )

    @classmethod
    def from_json(cls, line: str) -> "MultiLabelTarget":
        try:
            doc = json.loads(line)
            return cls(str(doc["location_id"]), frozenset(int(c) for c in doc["classes"]))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(f"bad multi-label record: {exc}") from exc


@dataclass(frozen=True)
class SegmentationPair:
    location_id: str
    mask: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise ValidationError("mask must be 2-D")
        bad = (mask != IGNORE_INDEX) & ((mask < 0) | (mask >= self.n_classes))
        if bool(bad.any()):
            raise ValidationError(
                f"mask values outside [0, {self.n_classes}) + ignore"
            )
        object.__setattr__(self, "mask", mask.astype(np.uint8))


def _sample_codes(window: "PatchWindow", labels: LabelRaster) -> np.ndarray:
    """Nearest-neighbour source codes on the window's pixel grid.

    Sampling happens at pixel centres; a label cell is selected by
    floor division, so boundaries sitting exactly on centre lines
    cannot occur for integer-ratio grids (centres land at half-pixel
    offsets). Any sample falling off the raster is a coverage error.
    """
    header = labels.header
    if window.crs != header.crs:
        raise CoverageError(
            f"window crs {window.crs} != label raster crs {header.crs}"
        )
    size = window.size_px
    gsd = window.gsd
    top = window.origin.y + window.side
    xs = window.origin.x + (np.arange(size) + 0.5) * gsd
    ys = top - (np.arange(size) + 0.5) * gsd
    cols = np.floor((xs - header.geo_origin.x) / header.gsd).astype(np.int64)
    rows = np.floor((header.geo_origin.y - ys) / header.gsd).astype(np.int64)
    if (
        cols[0] < 0
        or rows[0] < 0
        or cols[-1] >= header.width_px
        or rows[-1] >= header.height_px
    ):
        raise CoverageError(
            f"window {window.location_id} not covered by label raster "
            f"({header.height_px}x{header.width_px} at {header.gsd} m)"
        )
    return labels.values[rows[:, None], cols[None, :]]


def _code_lut(codes: np.ndarray, labels: LabelRaster, agg: AggregationMap) -> np.ndarray:
    """Target-index lookup table over observed codes; nodata/dropped -> 255."""
    observed = np.unique(codes)
    unmapped = [
        int(c)
        for c in observed
        if int(c) != labels.nodata and int(c) not in agg.mapping
    ]
    if unmapped:
        raise MappingError(unmapped)
    top = int(observed.max()) if observed.size else 0
    lut = np.full(max(top, labels.nodata if labels.nodata >= 0 else 0) + 1,
                  IGNORE_INDEX, dtype=np.int64)
    for code in observed:
        code = int(code)
        if code == labels.nodata:
            continue
        target = agg.mapping[code]
        if target is not None:
            lut[code] = target
    return lut


def multilabel_from_raster(
    window: "PatchWindow",
    labels: LabelRaster,
    agg: AggregationMap,
    min_fraction: float = 0.0,
) -> MultiLabelTarget:
    """Classes whose share of labelled window pixels exceeds min_fraction.

    The denominator counts pixels that carry a mapped class: nodata and
    dropped codes are excluded. An all-unlabelled window yields an
    empty class set; callers building datasets exclude such records.
    """
    if not (0.0 <= min_fraction < 1.0):
        raise ValidationError(f"min_fraction {min_fraction} outside [0, 1)")
    codes = _sample_codes(window, labels)
    lut = _code_lut(codes, labels, agg)
    indices = _apply_lut(lut, codes, labels.nodata)
    labelled = indices[indices != IGNORE_INDEX]
    if labelled.size == 0:
        return MultiLabelTarget(window.location_id, frozenset())
    counts = np.bincount(labelled, minlength=agg.n_classes)
    fractions = counts / labelled.size
    classes = frozenset(int(c) for c in np.nonzero(fractions > min_fraction)[0])
    return MultiLabelTarget(window.location_id, classes)


def segmentation_mask(
    window: "PatchWindow",
    labels: LabelRaster,
    agg: AggregationMap,
    *,
    majority_vote: bool = False,
    subsamples: int = 4,
) -> SegmentationPair:
    """Per-pixel class-index mask; nodata and dropped codes become 255.

    With majority_vote, each patch pixel is supersampled on a
    subsamples x subsamples grid and takes its most frequent mapped
    value (ties to the smallest index). Useful when downsampling finer
    label rasters; the default nearest-neighbour path is exact for
    coarser-or-equal rasters.
    """
    codes = _sample_codes(window, labels)
    lut = _code_lut(codes, labels, agg)
    mask = _apply_lut(lut, codes, labels.nodata)
    if majority_vote:
        mask = _majority_mask(window, labels, agg, subsamples)
    return SegmentationPair(
        window.location_id, mask.astype(np.uint8), agg.n_classes
    )


def _apply_lut(lut: np.ndarray, codes: np.ndarray, nodata: int) -> np.ndarray:
    safe = np.where(codes == nodata, 0, codes)
    out = lut[safe]
    out[codes == nodata] = IGNORE_INDEX
    return out


def _majority_mask(
    window: "PatchWindow", labels: LabelRaster, agg: AggregationMap, subsamples: int
) -> np.ndarray:
    if subsamples < 1:
        raise ValidationError("subsamples must be >= 1")
    header = labels.header
    size = window.size_px
    gsd = window.gsd
    top = window.origin.y + window.side
    step = gsd / subsamples
    n = size * subsamples
    xs = window.origin.x + (np.arange(n) + 0.5) * step
    ys = top - (np.arange(n) + 0.5) * step
    cols = np.floor((xs - header.geo_origin.x) / header.gsd).astype(np.int64)
    rows = np.floor((header.geo_origin.y - ys) / header.gsd).astype(np.int64)
    if cols[0] < 0 or rows[0] < 0 or cols[-1] >= header.width_px or rows[-1] >= header.height_px:
        raise CoverageError(f"window {window.location_id} not covered by label raster")
    codes = labels.values[rows[:, None], cols[None, :]]
    lut = _code_lut(codes, labels, agg)
    fine = _apply_lut(lut, codes, labels.nodata)
    blocks = fine.reshape(size, subsamples, size, subsamples).swapaxes(1, 2)
    blocks = blocks.reshape(size, size, subsamples * subsamples)
    out = np.empty((size, size), dtype=np.int64)
    for r in range(size):
        for c in range(size):
            values, counts = np.unique(blocks[r, c], return_counts=True)
            keep = values != IGNORE_INDEX
            if not keep.any():
                out[r, c] = IGNORE_INDEX
                continue
            values, counts = values[keep], counts[keep]
            out[r, c] = int(values[np.argmax(counts)])
    return out


# --- rebalancing -----------------------------------------------------------


@dataclass(frozen=True)
class RebalanceResult:
    selected: tuple[SegmentationPair, ...]
    feasible: bool
    max_class_share: float
    class_pixel_shares: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.selected)

    def __iter__(self):
        return iter(self.selected)


def rebalance(
    pairs: Sequence[SegmentationPair],
    target_count: int,
    cap_fraction: float = 1.0,
    seed: int = 0,
) -> RebalanceResult:
    """Greedy class-balanced subset selection.

    Each step adds the patch that minimizes the maximum class share of
    the running pixel histogram, preferring patches that keep every
    class at or under cap_fraction; when no candidate can, the cap is
    waived for that step and the result is flagged infeasible if the
    final histogram still breaches it. Deterministic given seed (ties
    broken by a seeded shuffle).
    """
    if not pairs:
        raise ValidationError("empty candidate pool")
    if not (1 <= target_count <= len(pairs)):
        raise ValidationError(
            f"target_count {target_count} outside [1, {len(pairs)}]"
        )
    if not (0.0 < cap_fraction <= 1.0):
        raise ValidationError(f"cap_fraction {cap_fraction} outside (0, 1]")
    k = pairs[0].n_classes
    if any(p.n_classes != k for p in pairs):
        raise ValidationError("pairs disagree on n_classes")
    counts = np.zeros((len(pairs), k), dtype=np.int64)
    for i, pair in enumerate(pairs):
        flat = pair.mask.reshape(-1)
        flat = flat[flat != IGNORE_INDEX]
        counts[i] = np.bincount(flat, minlength=k)
    order = np.random.default_rng(seed).permutation(len(pairs))
    counts = counts[order]
    available = np.ones(len(pairs), dtype=bool)
    hist = np.zeros(k, dtype=np.int64)
    chosen: list[int] = []
    for _ in range(target_count):
        idx = np.nonzero(available)[0]
        cand = hist[None, :] + counts[idx]
        totals = cand.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            shares = np.where(totals > 0, cand.max(axis=1) / np.where(totals > 0, totals, 1), 0.0)
        under_cap = shares <= cap_fraction
        pool = idx[under_cap] if bool(under_cap.any()) else idx
        pool_shares = shares[under_cap] if bool(under_cap.any()) else shares
        winner = pool[int(np.argmin(pool_shares))]
        chosen.append(int(winner))
        hist += counts[winner]
        available[winner] = False
    total = int(hist.sum())
    shares_final = tuple(float(v) / total if total else 0.0 for v in hist)
    max_share = max(shares_final) if total else 0.0
    feasible = max_share <= cap_fraction
    if not feasible:
        LOGGER.warning(
            "rebalance: cap %.3f infeasible, best achievable max share %.3f",
            cap_fraction,
            max_share,
        )
    selected = tuple(pairs[int(order[i])] for i in chosen)
    return RebalanceResult(selected, feasible, float(max_share), shares_final)


# --- deterministic splits ---------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


def default_block_key(record: "PatchRecord") -> str:
    """Block key for leakage-free splits: the earliest member tile."""
    return record.members[0].tile_id


def make_split(
    records: Iterable,
    ratios: tuple[float, float, float],
    seed: int = 0,
    key: Callable = default_block_key,
) -> dict[str, str]:
    """Assign whole blocks to train/val/test by hashing (block, seed).

    Every record sharing a block key lands in one split, so patches
    from one source tile never straddle splits. Returns block -> split.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValidationError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)}")
    blocks = sorted({key(r) for r in records})
    train_edge = ratios[0]
    val_edge = ratios[0] + ratios[1]
    assignment: dict[str, str] = {}
    for block in blocks:
        digest = hashlib.blake2b(
            f"{block}|{seed}".encode("utf-8"), digest_size=8
        ).digest()
        u = int.from_bytes(digest, "big") / 2**64
        if u < train_edge:
            assignment[block] = "train"
        elif u < val_edge:
            assignment[block] = "val"
        else:
            assignment[block] = "test"
    return assignment


def month_of(timestamp: int) -> int:
    from datetime import datetime, timezone

    return datetime.fromtimestamp(timestamp, tz=timezone.utc).month


def season_filter(
    records: Sequence["PatchRecord"], months: frozenset[int] = frozenset({6, 7, 8})
) -> list:
    """Records whose every member was acquired in the given months."""
    bad = [m for m in months if not 1 <= m <= 12]
    if bad:
        raise ValidationError(f"invalid months {sorted(bad)}")
    return [
        r for r in records if all(month_of(m.timestamp) in months for m in r.members)
    ]
