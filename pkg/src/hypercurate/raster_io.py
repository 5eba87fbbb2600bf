"""Raster ingestion, band masking, windowed reads, and the HSRC format.

HSRC is a minimal band-sequential binary container, little-endian:

    offset  size  field
    0       4     magic `HSRC`
    4       2     version (u16, currently 1)
    6       2     dtype code (u16: 1=int16, 2=uint8, 3=uint16, 4=int32)
    8       4     bands (u32)
    12      4     height px (u32)
    16      4     width px (u32)
    20      4     nodata value (i32)
    24      8     gsd meters (f64)
    32      8     origin_x (f64, NW corner easting)
    40      8     origin_y (f64, NW corner northing)
    48      4     crs code (u32)
    52      12    reserved, zero
    64      ...   samples, band-sequential, row-major within band

The geographic origin is the north-west corner of the top-left pixel;
row 0 is the northernmost row. Patch windows are anchored at their
south-west corner, so offset math flips the y axis.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from importlib import resources
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import CoverageError, NoDataError, ValidationError
from .geometry import ConvexPolygon, Point2, bbox, polygon_from_wkt, polygon_to_wkt

if TYPE_CHECKING:
    from .curation import TileRecord
    from .patch_index import PatchWindow

MAGIC = b"HSRC"
VERSION = 1
HEADER_SIZE = 64
_HEADER_STRUCT = struct.Struct("<4sHHIIIidddI12x")

DTYPE_CODES = {1: np.dtype("<i2"), 2: np.dtype("u1"), 3: np.dtype("<u2"), 4: np.dtype("<i4")}
_CODE_BY_NAME = {"int16": 1, "uint8": 2, "uint16": 3, "int32": 4}

DEFAULT_NODATA = -32768


@dataclass(frozen=True)
class RasterHeader:
    width_px: int
    height_px: int
    bands: int
    dtype: str
    nodata_value: int
    geo_origin: Point2
    gsd: float
    crs: int

    def __post_init__(self) -> None:
        if self.width_px < 1 or self.height_px < 1 or self.bands < 1:
            raise ValidationError("raster dimensions must all be >= 1")
        if not (self.gsd > 0 and math.isfinite(self.gsd)):
            raise ValidationError(f"gsd must be positive, got {self.gsd}")
        if self.dtype not in _CODE_BY_NAME:
            raise ValidationError(f"unsupported dtype {self.dtype!r}")

    @property
    def numpy_dtype(self) -> np.dtype:
        return DTYPE_CODES[_CODE_BY_NAME[self.dtype]]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.bands, self.height_px, self.width_px)


@dataclass(frozen=True)
class BandMask:
    """Boolean spectral-channel selection; True = keep the band."""

    name: str
    keep: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not any(self.keep):
            raise ValidationError(f"band mask {self.name!r} keeps no bands")

    def __len__(self) -> int:
        return len(self.keep)

    @property
    def kept_count(self) -> int:
        return sum(self.keep)

    @property
    def kept_indices(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.keep) if k)

    @classmethod
    def identity(cls, length: int, name: str = "identity") -> "BandMask":
        return cls(name, (True,) * length)


def compose_masks(first: BandMask, then: BandMask) -> BandMask:
    """Mask equal to applying `first` and afterwards `then`.

    `then` indexes into the bands `first` kept, so its length must be
    first.kept_count.
    """
    if len(then) != first.kept_count:
        raise ValidationError(
            f"mask {then.name!r} has length {len(then)}, "
            f"expected {first.kept_count} (bands kept by {first.name!r})"
        )
    keep = list(first.keep)
    for position, band in enumerate(first.kept_indices):
        keep[band] = then.keep[position]
    return BandMask(f"{first.name}+{then.name}", tuple(keep))


def apply_band_mask(header: RasterHeader, mask: BandMask) -> RasterHeader:
    """Header after dropping masked-out bands."""
    if len(mask) != header.bands:
        raise ValidationError(
            f"mask length {len(mask)} != raster band count {header.bands}"
        )
    return replace(header, bands=mask.kept_count)


def load_band_mask(path) -> BandMask:
    """Read a mask config: {"name", "length", "exclude": [indices]}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return _mask_from_doc(doc, str(path))


def default_band_mask() -> BandMask:
    """The shipped 224-band mask keeping 202 bands.

    The excluded indices are a documented stand-in for the two
    water-vapour absorption regions; replace the config to match a
    specific sensor's band list.
    """
    doc = json.loads(
        resources.files("hypercurate.configs").joinpath("band_mask_202.json").read_text()
    )
    return _mask_from_doc(doc, "band_mask_202.json")


def _mask_from_doc(doc: dict, source: str) -> BandMask:
    try:
        length = int(doc["length"])
        name = str(doc["name"])
        exclude = {int(i) for i in doc["exclude"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed band mask config {source}: {exc}") from exc
    if any(i < 0 or i >= length for i in exclude):
        raise ValidationError(f"band mask {source} excludes out-of-range indices")
    return BandMask(name, tuple(i not in exclude for i in range(length)))


@dataclass(frozen=True)
class PatchCube:
    """One windowed, band-masked raster extract with its provenance."""

    values: np.ndarray
    header: RasterHeader
    provenance: tuple[str, int, "PatchWindow"] | None = None

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ValidationError("cube values must be [bands, rows, cols]")
        if self.values.shape != self.header.shape:
            raise ValidationError(
                f"cube shape {self.values.shape} != header shape {self.header.shape}"
            )

    def equals(self, other: "PatchCube") -> bool:
        return self.header == other.header and bool(
            np.array_equal(self.values, other.values)
        )


# --- HSRC read/write -----------------------------------------------------


def pack_header(header: RasterHeader) -> bytes:
    return _HEADER_STRUCT.pack(
        MAGIC,
        VERSION,
        _CODE_BY_NAME[header.dtype],
        header.bands,
        header.height_px,
        header.width_px,
        header.nodata_value,
        header.gsd,
        header.geo_origin.x,
        header.geo_origin.y,
        header.crs,
    )


def unpack_header(blob: bytes) -> RasterHeader:
    if len(blob) < HEADER_SIZE:
        raise ValidationError("truncated header")
    magic, version, code, bands, height, width, nodata, gsd, ox, oy, crs = (
        _HEADER_STRUCT.unpack(blob[:HEADER_SIZE])
    )
    if magic != MAGIC:
        raise ValidationError(f"bad magic {magic!r}, not an HSRC file")
    if version != VERSION:
        raise ValidationError(f"unsupported HSRC version {version}")
    if code not in DTYPE_CODES:
        raise ValidationError(f"unknown dtype code {code}")
    dtype_name = {v: k for k, v in _CODE_BY_NAME.items()}[code]
    return RasterHeader(
        width_px=width,
        height_px=height,
        bands=bands,
        dtype=dtype_name,
        nodata_value=nodata,
        geo_origin=Point2(ox, oy),
        gsd=gsd,
        crs=crs,
    )


def write_raster(path, header: RasterHeader, values: np.ndarray) -> None:
    if values.shape != header.shape:
        raise ValidationError(
            f"values shape {values.shape} != header shape {header.shape}"
        )
    data = np.ascontiguousarray(values, dtype=header.numpy_dtype)
    try:
        with open(path, "wb") as fh:
            fh.write(pack_header(header))
            fh.write(data.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write raster {path}: {exc}") from exc


def read_raster_header(path) -> RasterHeader:
    try:
        with open(path, "rb") as fh:
            blob = fh.read(HEADER_SIZE)
    except OSError as exc:
        raise OSError(f"cannot read raster {path}: {exc}") from exc
    try:
        return unpack_header(blob)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def read_raster(path) -> tuple[RasterHeader, np.ndarray]:
    header = read_raster_header(path)
    count = header.bands * header.height_px * header.width_px
    try:
        with open(path, "rb") as fh:
            fh.seek(HEADER_SIZE)
            data = np.fromfile(fh, dtype=header.numpy_dtype, count=count)
    except OSError as exc:
        raise OSError(f"cannot read raster {path}: {exc}") from exc
    if data.size != count:
        raise ValidationError(f"{path}: truncated raster body")
    return header, data.reshape(header.shape)


def read_raster_window(
    path, header: RasterHeader, row_off: int, col_off: int, rows: int, cols: int
) -> np.ndarray:
    """Windowed read of [bands, rows, cols] without loading whole bands."""
    if (
        row_off < 0
        or col_off < 0
        or row_off + rows > header.height_px
        or col_off + cols > header.width_px
    ):
        raise CoverageError(
            f"window rows {row_off}:{row_off + rows} cols {col_off}:{col_off + cols} "
            f"outside raster {header.height_px}x{header.width_px}"
        )
    mm = np.memmap(
        path,
        dtype=header.numpy_dtype,
        mode="r",
        offset=HEADER_SIZE,
        shape=header.shape,
    )
    try:
        return np.array(mm[:, row_off : row_off + rows, col_off : col_off + cols])
    finally:
        del mm


def write_patch(cube: PatchCube, path) -> None:
    """Persist a cube; read_patch recovers header and samples bit-exactly."""
    write_raster(path, cube.header, cube.values)


def read_patch(path) -> PatchCube:
    header, values = read_raster(path)
    return PatchCube(values=values, header=header)


# --- tile grid derivation and windowed patch extraction -------------------


def derive_grid(footprint: ConvexPolygon, gsd: float) -> tuple[Point2, int, int]:
    """Lattice-registered raster grid covering a footprint.

    Returns (NW corner origin, width_px, height_px): the smallest
    pixel-lattice-aligned box containing the footprint. Tiles without a
    raster on disk get their pixel offsets from this grid, and rasters
    that do exist must agree with it.
    """
    box = bbox(footprint)
    west = math.floor(box.min_x / gsd + 1e-9) * gsd
    north = math.ceil(box.max_y / gsd - 1e-9) * gsd
    width = math.ceil((box.max_x - west) / gsd - 1e-9)
    height = math.ceil((north - box.min_y) / gsd - 1e-9)
    return Point2(west, north), max(width, 1), max(height, 1)


def window_pixel_offsets(
    grid_origin: Point2, gsd: float, window: "PatchWindow"
) -> tuple[int, int]:
    """(row, col) of the window's top-left pixel in a tile's grid."""
    top = window.origin.y + window.side
    row = (grid_origin.y - top) / gsd
    col = (window.origin.x - grid_origin.x) / gsd
    row_i, col_i = round(row), round(col)
    if abs(row - row_i) > 1e-6 or abs(col - col_i) > 1e-6:
        raise ValidationError(
            f"window {window.location_id} is not registered to the tile grid"
        )
    return row_i, col_i


def read_window(tile: "TileRecord", window: "PatchWindow", mask: BandMask) -> PatchCube:
    """Extract one band-masked patch cube from a tile's raster.

    Rejects windows not fully covered by the raster (CoverageError) and
    windows containing the nodata sentinel in any kept band
    (NoDataError); no imputation is attempted.
    """
    header = read_raster_header(tile.raster_ref)
    if len(mask) != header.bands:
        raise ValidationError(
            f"mask length {len(mask)} != tile band count {header.bands}"
        )
    if window.crs != header.crs:
        raise CoverageError(
            f"window crs {window.crs} != raster crs {header.crs}"
        )
    if abs(window.gsd - header.gsd) > 1e-9:
        raise ValidationError(
            f"window gsd {window.gsd} != raster gsd {header.gsd}"
        )
    row_off, col_off = window_pixel_offsets(header.geo_origin, header.gsd, window)
    if row_off < 0 or col_off < 0:
        raise CoverageError(
            f"window {window.location_id} starts outside raster {tile.raster_ref}"
        )
    values = read_raster_window(
        tile.raster_ref, header, row_off, col_off, window.size_px, window.size_px
    )
    keep = np.asarray(mask.keep, dtype=bool)
    values = values[keep]
    if bool((values == header.nodata_value).any()):
        raise NoDataError(
            f"window {window.location_id} contains nodata in kept bands"
        )
    cube_header = RasterHeader(
        width_px=window.size_px,
        height_px=window.size_px,
        bands=mask.kept_count,
        dtype=header.dtype,
        nodata_value=header.nodata_value,
        geo_origin=Point2(window.origin.x, window.origin.y + window.side),
        gsd=header.gsd,
        crs=header.crs,
    )
    return PatchCube(
        values=values,
        header=cube_header,
        provenance=(tile.tile_id, tile.timestamp, window),
    )


def filter_by_cloud(tiles: Sequence["TileRecord"], max_fraction: float) -> list:
    """Tiles at or below the cloud threshold, order preserved."""
    if not (0.0 <= max_fraction <= 1.0):
        raise ValidationError(f"cloud threshold {max_fraction} outside [0, 1]")
    return [t for t in tiles if t.cloud_fraction <= max_fraction]


# --- tile catalog (JSON lines) -------------------------------------------

_CATALOG_KEYS = {
    "tile_id",
    "timestamp",
    "crs",
    "footprint",
    "raster",
    "cloud_fraction",
    "gsd",
    "bands",
}


def parse_timestamp(text: str) -> int:
    """ISO-8601 UTC instant to epoch seconds."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValidationError(f"bad timestamp {text!r}: {exc}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())


def format_timestamp(epoch_seconds: int) -> str:
    stamp = datetime.fromtimestamp(epoch_seconds, tz=timezone.utc)
    return stamp.isoformat().replace("+00:00", "Z")


def tile_to_json(tile: "TileRecord") -> str:
    doc = {
        "tile_id": tile.tile_id,
        "timestamp": format_timestamp(tile.timestamp),
        "crs": tile.crs,
        "footprint": polygon_to_wkt(tile.footprint),
        "raster": tile.raster_ref,
        "cloud_fraction": tile.cloud_fraction,
        "gsd": tile.gsd,
        "bands": tile.band_count,
    }
    return json.dumps(doc, separators=(", ", ": "), sort_keys=True)


def tile_from_json(line: str) -> "TileRecord":
    from .curation import TileRecord

    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bad JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("tile record must be a JSON object")
    missing = _CATALOG_KEYS - set(doc)
    if missing:
        raise ValidationError(f"missing keys: {', '.join(sorted(missing))}")
    try:
        return TileRecord(
            tile_id=str(doc["tile_id"]),
            footprint=polygon_from_wkt(str(doc["footprint"])),
            timestamp=parse_timestamp(str(doc["timestamp"])),
            crs=int(doc["crs"]),
            raster_ref=str(doc["raster"]),
            cloud_fraction=float(doc["cloud_fraction"]),
            gsd=float(doc["gsd"]),
            band_count=int(doc["bands"]),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad tile record field: {exc}") from exc


def write_tile_catalog(tiles: Iterable["TileRecord"], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tile in tiles:
            fh.write(tile_to_json(tile))
            fh.write("\n")


def read_tile_catalog(path) -> list:
    tiles = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                tiles.append(tile_from_json(line))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{number}: {exc}") from exc
    return tiles
