"""Curation and benchmarking engine for georeferenced hyperspectral tiles."""

from .curation import CurationConfig, TileRecord, curate
from .errors import (
    ConsistencyError,
    CoverageError,
    CrossCrsError,
    DegenerateGeometryError,
    HypercurateError,
    MappingError,
    NoDataError,
    NotFoundError,
    ValidationError,
)
from .patch_index import PatchManifest, PatchRecord, PatchWindow, read_manifest, write_manifest

__version__ = "0.1.0"

__all__ = [
    "ConsistencyError",
    "CoverageError",
    "CrossCrsError",
    "CurationConfig",
    "DegenerateGeometryError",
    "HypercurateError",
    "MappingError",
    "NoDataError",
    "NotFoundError",
    "PatchManifest",
    "PatchRecord",
    "PatchWindow",
    "TileRecord",
    "ValidationError",
    "curate",
    "read_manifest",
    "write_manifest",
    "__version__",
]
