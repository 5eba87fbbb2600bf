"""Command-line surface: ingest, curate, pair, eval, stats, verify.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 internal
invariant breach (including failed verification). Configuration comes
from an optional flat key=value file; command-line flags override file
values. All outputs are UTF-8; plot-ready data is emitted as CSV.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (
    LabelRaster,
    MultiLabelTarget,
    load_aggregation,
    make_split,
    multilabel_from_raster,
    packaged_aggregation,
    rebalance,
    season_filter,
    segmentation_mask,
)
from .curation import CurationConfig, TileRecord, curate
from .errors import ConsistencyError, HypercurateError, ValidationError
from .geometry import polygon_from_wkt
from .metrics import (
    MaskBatch,
    MultiLabelBatch,
    RegressionBatch,
    f1_multilabel,
    miou,
    normalized_mse,
)
from .oracle import containment_check, naive_overlap_check
from .patch_index import read_manifest, write_manifest
from .raster_io import (
    RasterHeader,
    derive_grid,
    parse_timestamp,
    read_raster,
    read_raster_header,
    read_tile_catalog,
    tile_to_json,
    write_raster,
)
from .stats import (
    compute_stats,
    multilabel_class_histogram,
    segmentation_class_histogram,
    write_class_histogram_csv,
    write_monthly_csv,
    write_timestamp_histogram_csv,
)

LOGGER = logging.getLogger(__name__)

CONFIG_KEYS = {
    "beam",
    "max_order",
    "min_dt_seconds",
    "patch_px",
    "cloud_max",
    "band_mask_ref",
    "worker_count",
    "seed",
}

_CATALOG_REQUIRED = {
    "tile_id",
    "timestamp",
    "crs",
    "footprint",
    "raster",
    "cloud_fraction",
    "gsd",
    "bands",
}


def load_config_file(path) -> dict[str, str]:
    """Flat key=value config; '#' starts a comment, blanks ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{number}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                known = ", ".join(sorted(CONFIG_KEYS))
                raise ValidationError(
                    f"{path}:{number}: unknown key {key!r} (known: {known})"
                )
            values[key] = value
    return values


def _curation_config(args) -> CurationConfig:
    file_values = load_config_file(args.config) if args.config else {}

    def pick(flag_value, key: str, cast, fallback):
        if flag_value is not None:
            return flag_value
        if key in file_values:
            raw = file_values[key]
            try:
                return cast(raw)
            except ValueError as exc:
                raise ValidationError(f"config key {key}={raw!r}: {exc}") from exc
        return fallback

    beam = pick(args.beam, "beam", _parse_beam, CurationConfig.beam)
    return CurationConfig(
        beam=_parse_beam(str(beam)),
        max_order=pick(args.max_order, "max_order", int, CurationConfig.max_order),
        min_dt_seconds=pick(
            args.min_dt, "min_dt_seconds", int, CurationConfig.min_dt_seconds
        ),
        patch_px=pick(args.patch_px, "patch_px", int, CurationConfig.patch_px),
        cloud_max=pick(args.cloud_max, "cloud_max", float, CurationConfig.cloud_max),
        band_mask_ref=pick(None, "band_mask_ref", str, None),
        worker_count=pick(args.workers, "worker_count", int, 1),
    )


def _parse_beam(raw: str) -> float:
    text = str(raw).strip().lower()
    if text in ("inf", "infinite", "unbounded"):
        return math.inf
    try:
        return int(text)
    except ValueError as exc:
        raise ValidationError(f"beam must be an integer or 'inf', got {raw!r}") from exc


def _beam_flag(raw: str) -> float:
    # argparse only understands ValueError/ArgumentTypeError from type callables
    try:
        return _parse_beam(raw)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


# --- ingest -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    cloud_max = args.cloud_max
    if cloud_max is None and args.config:
        cloud_max = float(load_config_file(args.config).get("cloud_max", 0.10))
    if cloud_max is None:
        cloud_max = 0.10
    accepted: list[TileRecord] = []
    rejected: list[dict] = []
    seen_ids: set[str] = set()
    with open(args.catalog, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            verdict = _validate_tile_line(raw, number, cloud_max, seen_ids)
            if isinstance(verdict, TileRecord):
                accepted.append(verdict)
                seen_ids.add(verdict.tile_id)
            else:
                rejected.append(verdict)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for tile in accepted:
            fh.write(tile_to_json(tile))
            fh.write("\n")
    report = {
        "catalog": str(args.catalog),
        "accepted": len(accepted),
        "rejected": rejected,
    }
    print(json.dumps(report, indent=2))
    return 0


def _validate_tile_line(
    raw: str, number: int, cloud_max: float, seen_ids: set[str]
) -> "TileRecord | dict":
    def reject(reason: str, detail: str, tile_id: str | None = None) -> dict:
        entry = {"line": number, "reason": reason, "detail": detail}
        if tile_id:
            entry["tile_id"] = tile_id
        return entry

    try:
        doc = json.loads(raw)
        if not isinstance(doc, dict):
            raise ValidationError("tile record must be a JSON object")
        missing = _CATALOG_REQUIRED - set(doc)
        if missing:
            raise ValidationError(f"missing keys: {', '.join(sorted(missing))}")
        tile_id = str(doc["tile_id"])
        timestamp = parse_timestamp(str(doc["timestamp"]))
        crs = int(doc["crs"])
        cloud = float(doc["cloud_fraction"])
        gsd = float(doc["gsd"])
        bands = int(doc["bands"])
        raster = str(doc["raster"])
    except (json.JSONDecodeError, TypeError, ValueError, ValidationError) as exc:
        return reject("schema", str(exc))
    try:
        footprint = polygon_from_wkt(str(doc["footprint"]))
    except ValidationError as exc:
        return reject("geometry", str(exc), tile_id)
    try:
        tile = TileRecord(
            tile_id=tile_id,
            footprint=footprint,
            timestamp=timestamp,
            crs=crs,
            raster_ref=raster,
            cloud_fraction=cloud,
            gsd=gsd,
            band_count=bands,
        )
    except ValidationError as exc:
        return reject("schema", str(exc), tile_id)
    if tile.tile_id in seen_ids:
        return reject("duplicate", f"tile_id {tile.tile_id!r} seen earlier", tile_id)
    if tile.cloud_fraction > cloud_max:
        return reject(
            "cloud",
            f"cloud_fraction {tile.cloud_fraction} > threshold {cloud_max}",
            tile_id,
        )
    if os.path.exists(tile.raster_ref):
        grid_error = _check_grid(tile)
        if grid_error:
            return reject("grid", grid_error, tile_id)
    return tile


def _check_grid(tile: TileRecord) -> str | None:
    header = read_raster_header(tile.raster_ref)
    origin, width, height = derive_grid(tile.footprint, tile.gsd)
    if header.crs != tile.crs:
        return f"raster crs {header.crs} != tile crs {tile.crs}"
    if abs(header.gsd - tile.gsd) > 1e-9:
        return f"raster gsd {header.gsd} != tile gsd {tile.gsd}"
    if header.bands != tile.band_count:
        return f"raster bands {header.bands} != tile bands {tile.band_count}"
    if (
        abs(header.geo_origin.x - origin.x) > 1e-6
        or abs(header.geo_origin.y - origin.y) > 1e-6
    ):
        return (
            f"raster origin ({header.geo_origin.x}, {header.geo_origin.y}) is not "
            f"registered to the footprint lattice grid ({origin.x}, {origin.y})"
        )
    if header.width_px != width or header.height_px != height:
        return (
            f"raster shape {header.height_px}x{header.width_px} != "
            f"footprint grid {height}x{width}"
        )
    return None


# --- curate and stats --------------------------------------------------------


def cmd_curate(args) -> int:
    tiles = read_tile_catalog(args.catalog)
    cfg = _curation_config(args)
    manifest = curate(tiles, cfg)
    write_manifest(manifest, args.out)
    stats = compute_stats(manifest)
    _emit_stats(stats, Path(args.out))
    print(json.dumps(stats.to_json(), indent=2))
    return 0


def cmd_stats(args) -> int:
    manifest = read_manifest(args.manifest)
    stats = compute_stats(manifest)
    if args.out:
        _emit_stats(stats, Path(args.out))
    print(json.dumps(stats.to_json(), indent=2))
    return 0


def _emit_stats(stats, base: Path) -> None:
    with open(base.with_suffix(base.suffix + ".stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats.to_json(), fh, indent=2)
        fh.write("\n")
    write_timestamp_histogram_csv(stats, base.with_suffix(base.suffix + ".timestamps.csv"))
    write_monthly_csv(stats, base.with_suffix(base.suffix + ".months.csv"))


# --- pair ---------------------------------------------------------------------


def _load_aggregation_arg(ref: str):
    if os.path.exists(ref):
        return load_aggregation(ref)
    return packaged_aggregation(ref)


def cmd_pair(args) -> int:
    manifest = read_manifest(args.manifest)
    labels = LabelRaster.load(args.labels)
    agg = _load_aggregation_arg(args.agg)
    records = list(manifest.records)
    if args.months:
        months = frozenset(int(m) for m in args.months.split(","))
        records = season_filter(records, months)
    split_of = None
    if args.split:
        ratios = tuple(float(r) for r in args.split.split(","))
        if len(ratios) != 3:
            raise ValidationError("--split needs three comma-separated ratios")
        assignment = make_split(records, ratios, seed=args.seed)
        split_of = lambda record: assignment[record.members[0].tile_id]  # noqa: E731
    if args.task == "multilabel":
        return _pair_multilabel(args, records, labels, agg, split_of)
    return _pair_segmentation(args, records, labels, agg, split_of)


def _pair_multilabel(args, records, labels, agg, split_of) -> int:
    targets = []
    kept_records = []
    for record in records:
        target = multilabel_from_raster(
            record.window, labels, agg, min_fraction=args.min_fraction
        )
        if target.classes:
            targets.append(target)
            kept_records.append(record)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for record, target in zip(kept_records, targets):
            doc = {
                "location_id": target.location_id,
                "classes": sorted(target.classes),
            }
            if split_of:
                doc["split"] = split_of(record)
            fh.write(json.dumps(doc))
            fh.write("\n")
    hist = multilabel_class_histogram(targets)
    write_class_histogram_csv(
        hist, agg.class_names, str(args.out) + ".classes.csv", "records"
    )
    summary = {
        "task": "multilabel",
        "records": len(targets),
        "skipped_unlabelled": len(records) - len(targets),
        "classes_present": len(hist),
    }
    print(json.dumps(summary, indent=2))
    return 0


def _pair_segmentation(args, records, labels, agg, split_of) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = []
    pair_records = []
    for record in records:
        pair = segmentation_mask(record.window, labels, agg)
        if bool((pair.mask != 255).any()):
            pairs.append(pair)
            pair_records.append(record)
    feasible = True
    if args.rebalance:
        by_id = {p.location_id: r for p, r in zip(pairs, pair_records)}
        result = rebalance(
            pairs, args.rebalance, cap_fraction=args.cap, seed=args.seed
        )
        feasible = result.feasible
        pairs = list(result.selected)
        pair_records = [by_id[p.location_id] for p in pairs]
    index_path = out_dir / "pairs.jsonl"
    with open(index_path, "w", encoding="utf-8", newline="\n") as fh:
        for record, pair in zip(pair_records, pairs):
            window = record.window
            mask_path = out_dir / f"{pair.location_id}.hsrc"
            header = RasterHeader(
                width_px=window.size_px,
                height_px=window.size_px,
                bands=1,
                dtype="uint8",
                nodata_value=255,
                geo_origin=type(window.origin)(
                    window.origin.x, window.origin.y + window.side
                ),
                gsd=window.gsd,
                crs=window.crs,
            )
            write_raster(mask_path, header, pair.mask[None, :, :])
            doc = {"location_id": pair.location_id, "mask": mask_path.name}
            if split_of:
                doc["split"] = split_of(record)
            fh.write(json.dumps(doc))
            fh.write("\n")
    hist = segmentation_class_histogram(pairs)
    write_class_histogram_csv(
        hist, agg.class_names, out_dir / "classes.csv", "pixels"
    )
    summary = {
        "task": "segmentation",
        "records": len(pairs),
        "skipped_unlabelled": len(records) - len(pair_records)
        if not args.rebalance
        else None,
        "classes_present": len(hist),
        "rebalance_feasible": feasible,
    }
    print(json.dumps({k: v for k, v in summary.items() if v is not None}, indent=2))
    return 0


# --- eval ---------------------------------------------------------------------


def _read_multilabel_file(path, n_classes: int) -> dict[str, frozenset]:
    out: dict[str, frozenset] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                target = MultiLabelTarget.from_json(line)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{number}: {exc}") from exc
            if any(c < 0 or c >= n_classes for c in target.classes):
                raise ValidationError(
                    f"{path}:{number}: class index outside [0, {n_classes})"
                )
            if target.location_id in out:
                raise ValidationError(
                    f"{path}:{number}: duplicate location_id {target.location_id}"
                )
            out[target.location_id] = target.classes
    return out


def _read_vector_file(path) -> dict[str, tuple[float, ...]]:
    out: dict[str, tuple[float, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                key = str(doc["id"])
                values = tuple(float(v) for v in doc["values"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{number}: bad record: {exc}") from exc
            if key in out:
                raise ValidationError(f"{path}:{number}: duplicate id {key}")
            out[key] = values
    return out


def _matched_ids(predictions: dict, targets: dict, what: str) -> list[str]:
    missing = sorted(set(targets) - set(predictions))
    extra = sorted(set(predictions) - set(targets))
    if missing or extra:
        raise ValidationError(
            f"{what}: predictions and targets disagree "
            f"(missing {missing[:3]}, extra {extra[:3]})"
        )
    return sorted(targets)


def cmd_eval(args) -> int:
    if args.task == "f1":
        preds = _read_multilabel_file(args.predictions, args.classes)
        targs = _read_multilabel_file(args.targets, args.classes)
        ids = _matched_ids(preds, targs, "multi-label eval")
        n, k = len(ids), args.classes
        p = np.zeros((n, k), dtype=bool)
        t = np.zeros((n, k), dtype=bool)
        for row, location_id in enumerate(ids):
            p[row, sorted(preds[location_id])] = True
            t[row, sorted(targs[location_id])] = True
        report = f1_multilabel(MultiLabelBatch(p, t), mode=args.mode)
    elif args.task == "miou":
        pred_masks = _read_mask_dir(args.predictions)
        targ_masks = _read_mask_dir(args.targets)
        ids = _matched_ids(pred_masks, targ_masks, "mask eval")
        p = np.stack([pred_masks[i] for i in ids])
        t = np.stack([targ_masks[i] for i in ids])
        report = miou(MaskBatch(p, t, n_classes=args.classes))
    else:
        preds = _read_vector_file(args.predictions)
        targs = _read_vector_file(args.targets)
        ids = _matched_ids(preds, targs, "regression eval")
        if not args.baseline:
            raise ValidationError("--baseline means are required for nmse")
        baseline = np.array([float(v) for v in args.baseline.split(",")])
        p = np.array([preds[i] for i in ids])
        t = np.array([targs[i] for i in ids])
        report = normalized_mse(RegressionBatch(p, t, baseline))
    doc = report.to_json()
    doc["n_samples"] = len(ids)
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")
    print(text)
    return 0


def _read_mask_dir(path) -> dict[str, np.ndarray]:
    directory = Path(path)
    if not directory.is_dir():
        raise ValidationError(f"{path} is not a directory of .hsrc masks")
    out: dict[str, np.ndarray] = {}
    for mask_file in sorted(directory.glob("*.hsrc")):
        header, values = read_raster(mask_file)
        if header.bands != 1:
            raise ValidationError(f"{mask_file}: masks must be single-band")
        out[mask_file.stem] = values[0]
    if not out:
        raise ValidationError(f"{path} contains no .hsrc masks")
    return out


# --- verify -------------------------------------------------------------------


def cmd_verify(args) -> int:
    manifest = read_manifest(args.manifest)
    reports = [naive_overlap_check(manifest)]
    if args.catalog:
        tiles = read_tile_catalog(args.catalog)
        reports.append(containment_check(manifest, tiles))
    all_pass = all(r.passed for r in reports)
    doc = {"reports": [r.to_json() for r in reports], "pass": all_pass}
    print(json.dumps(doc, indent=2))
    if not all_pass:
        LOGGER.error("verification failed")
        return 3
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypercurate",
        description="Curation and benchmarking engine for georeferenced "
        "hyperspectral tile archives.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, default=0, help="deterministic seed")
    common.add_argument("--workers", type=int, default=None, help="worker processes")
    common.add_argument("--out", help="output path")
    common.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser(
        "ingest", parents=[common], help="validate a tile catalog"
    )
    p_ingest.add_argument("catalog", help="tile catalog (JSON lines)")
    p_ingest.add_argument("--cloud-max", type=float, default=None)
    p_ingest.set_defaults(func=cmd_ingest, needs_out=True)

    p_curate = sub.add_parser(
        "curate", parents=[common], help="run patch extraction"
    )
    p_curate.add_argument("catalog", help="validated tile catalog (JSON lines)")
    p_curate.add_argument("--beam", type=_beam_flag, default=None)
    p_curate.add_argument("--max-order", type=int, default=None)
    p_curate.add_argument("--min-dt", type=int, default=None, help="seconds")
    p_curate.add_argument("--patch-px", type=int, default=None)
    p_curate.add_argument("--cloud-max", type=float, default=None)
    p_curate.set_defaults(func=cmd_curate, needs_out=True)

    p_pair = sub.add_parser(
        "pair", parents=[common], help="build a labelled benchmark"
    )
    p_pair.add_argument("manifest", help="patch manifest")
    p_pair.add_argument("labels", help="label raster (.hsrc)")
    p_pair.add_argument("--task", choices=("multilabel", "segmentation"), required=True)
    p_pair.add_argument("--agg", required=True, help="aggregation config path or shipped name")
    p_pair.add_argument("--min-fraction", type=float, default=0.0)
    p_pair.add_argument("--months", help="comma-separated month filter, e.g. 6,7,8")
    p_pair.add_argument("--rebalance", type=int, default=None, help="target count")
    p_pair.add_argument("--cap", type=float, default=1.0, help="max class pixel share")
    p_pair.add_argument("--split", help="train,val,test ratios, e.g. 0.7,0.15,0.15")
    p_pair.set_defaults(func=cmd_pair, needs_out=True)

    p_eval = sub.add_parser(
        "eval", parents=[common], help="score predictions against targets"
    )
    p_eval.add_argument("predictions")
    p_eval.add_argument("targets")
    p_eval.add_argument("--task", choices=("f1", "miou", "nmse"), required=True)
    p_eval.add_argument("--classes", type=int, default=None)
    p_eval.add_argument("--mode", choices=("micro", "macro"), default="macro")
    p_eval.add_argument("--baseline", help="comma-separated training means (nmse)")
    p_eval.set_defaults(func=cmd_eval, needs_out=False)

    p_stats = sub.add_parser(
        "stats", parents=[common], help="summarize a patch manifest"
    )
    p_stats.add_argument("manifest")
    p_stats.set_defaults(func=cmd_stats, needs_out=False)

    p_verify = sub.add_parser(
        "verify", parents=[common], help="certify a manifest with brute force"
    )
    p_verify.add_argument("manifest")
    p_verify.add_argument("--catalog", help="tile catalog for containment checks")
    p_verify.set_defaults(func=cmd_verify, needs_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if getattr(args, "needs_out", False) and not args.out:
            raise ValidationError(f"{args.command} requires --out")
        if args.command == "eval" and args.task in ("f1", "miou") and not args.classes:
            raise ValidationError("--classes is required for f1 and miou")
        return args.func(args)
    except ConsistencyError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except HypercurateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
