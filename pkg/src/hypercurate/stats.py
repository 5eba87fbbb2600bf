"""Dataset summary statistics and CSV emission for external plotting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import TYPE_CHECKING, Mapping

from .errors import ConsistencyError

if TYPE_CHECKING:
    from .benchmark import MultiLabelTarget, SegmentationPair
    from .patch_index import PatchManifest


@dataclass(frozen=True)
class DatasetStats:
    n_locations: int
    n_patches: int
    n_multitemporal: int
    timestamps_histogram: dict[int, int]
    monthly_patches: dict[int, int]

    def __post_init__(self) -> None:
        hist_patches = sum(
            count * locations for count, locations in self.timestamps_histogram.items()
        )
        if hist_patches != self.n_patches:
            raise ConsistencyError(
                f"histogram sums to {hist_patches} patches, stats say {self.n_patches}"
            )
        hist_multi = sum(
            locations
            for count, locations in self.timestamps_histogram.items()
            if count >= 2
        )
        if hist_multi != self.n_multitemporal:
            raise ConsistencyError(
                f"histogram has {hist_multi} multi-temporal locations, "
                f"stats say {self.n_multitemporal}"
            )
        if sum(self.timestamps_histogram.values()) != self.n_locations:
            raise ConsistencyError("histogram does not cover all locations")

    @property
    def multitemporal_fraction(self) -> float:
        return self.n_multitemporal / self.n_locations if self.n_locations else 0.0

    def to_json(self) -> dict:
        return {
            "n_locations": self.n_locations,
            "n_patches": self.n_patches,
            "n_multitemporal": self.n_multitemporal,
            "multitemporal_fraction": self.multitemporal_fraction,
            "timestamps_histogram": {
                str(k): v for k, v in sorted(self.timestamps_histogram.items())
            },
            "monthly_patches": {
                str(k): v for k, v in sorted(self.monthly_patches.items())
            },
        }


def compute_stats(manifest: "PatchManifest") -> DatasetStats:
    histogram: dict[int, int] = {}
    monthly: dict[int, int] = {}
    n_patches = 0
    n_multi = 0
    for record in manifest.records:
        count = len(record.members)
        n_patches += count
        if count >= 2:
            n_multi += 1
        histogram[count] = histogram.get(count, 0) + 1
        for member in record.members:
            month = datetime.fromtimestamp(member.timestamp, tz=timezone.utc).month
            monthly[month] = monthly.get(month, 0) + 1
    return DatasetStats(
        n_locations=len(manifest.records),
        n_patches=n_patches,
        n_multitemporal=n_multi,
        timestamps_histogram=histogram,
        monthly_patches=monthly,
    )


def write_timestamp_histogram_csv(stats: DatasetStats, path) -> None:
    """Plot-ready histogram data: locations per timestamp count."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamps", "locations"])
        for count in sorted(stats.timestamps_histogram):
            writer.writerow([count, stats.timestamps_histogram[count]])


def write_monthly_csv(stats: DatasetStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "patches"])
        for month in sorted(stats.monthly_patches):
            writer.writerow([month, stats.monthly_patches[month]])


def multilabel_class_histogram(targets) -> dict[int, int]:
    """Records per class over MultiLabelTarget iterables."""
    hist: dict[int, int] = {}
    for target in targets:
        for cls in target.classes:
            hist[cls] = hist.get(cls, 0) + 1
    return hist


def segmentation_class_histogram(pairs) -> dict[int, int]:
    """Pixels per class over SegmentationPair iterables (255 excluded)."""
    import numpy as np

    from .metrics import IGNORE_INDEX

    hist: dict[int, int] = {}
    for pair in pairs:
        flat = pair.mask.reshape(-1)
        flat = flat[flat != IGNORE_INDEX]
        for cls, count in zip(*np.unique(flat, return_counts=True)):
            hist[int(cls)] = hist.get(int(cls), 0) + int(count)
    return hist


def write_class_histogram_csv(
    hist: Mapping[int, int], class_names, path, value_label: str = "count"
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_index", "class_name", value_label])
        for cls in sorted(hist):
            name = class_names[cls] if 0 <= cls < len(class_names) else str(cls)
            writer.writerow([cls, name, hist[cls]])
