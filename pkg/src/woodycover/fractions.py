"""Aggregate fine label maps into coarse-cell class cover fractions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import CATEGORICAL_NODATA, GridGeometry, RasterGrid


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class LegendEntry:
    class_id: int
    name: str
    is_woody_target: bool


class ClassLegend:
    """Ordered class legend; order fixes fraction column order."""

    def __init__(self, entries: Sequence[LegendEntry | tuple]):
        self.entries = [e if isinstance(e, LegendEntry) else LegendEntry(int(e[0]), str(e[1]), bool(e[2]))
                        for e in entries]
        ids = [e.class_id for e in self.entries]
        names = [e.name for e in self.entries]
        if len(set(ids)) != len(ids):
            raise AggregationError(f"duplicate class ids in legend: {ids}")
        if len(set(names)) != len(names):
            raise AggregationError(f"duplicate class names in legend: {names}")
        for i in ids:
            if not 0 <= i < CATEGORICAL_NODATA:
                raise AggregationError(f"class id {i} outside 0..{CATEGORICAL_NODATA - 1}")

    @property
    def class_ids(self) -> list[int]:
        return [e.class_id for e in self.entries]

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def woody_targets(self) -> list[str]:
        return [e.name for e in self.entries if e.is_woody_target]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise AggregationError(f"class {name!r} not in legend {self.names}") from None

    def id_of(self, name: str) -> int:
        return self.entries[self.index_of(name)].class_id

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, ClassLegend) and self.entries == other.entries

    def to_list(self) -> list[dict]:
        return [{"class_id": e.class_id, "name": e.name, "is_woody_target": e.is_woody_target}
                for e in self.entries]

    @classmethod
    def from_list(cls, items) -> "ClassLegend":
        return cls([LegendEntry(int(d["class_id"]), str(d["name"]), bool(d["is_woody_target"])) for d in items])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_list(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ClassLegend":
        return cls.from_list(json.loads(Path(path).read_text()))


def default_legend() -> ClassLegend:
    return ClassLegend([
        LegendEntry(1, "Grewia flava", True),
        LegendEntry(2, "Senegalia mellifera", True),
        LegendEntry(3, "Vachellia genus", True),
        LegendEntry(4, "Grass", False),
        LegendEntry(5, "Soil", False),
        LegendEntry(6, "Shadow", False),
    ])


@dataclass
class LabelMap:
    grid: RasterGrid
    legend: ClassLegend

    def __post_init__(self):
        if self.grid.dtype != "u8" or self.grid.n_bands != 1:
            raise AggregationError("label map must be a single-band u8 raster")


@dataclass
class FractionSampleSet:
    """Coarse-cell cover fractions; ``fractions[i, k]`` follows legend order."""

    coarse_geometry: GridGeometry
    legend: ClassLegend
    rows: np.ndarray
    cols: np.ndarray
    fractions: np.ndarray
    valid_fine_count: np.ndarray
    total_fine_count: np.ndarray

    def __len__(self):
        return len(self.rows)

    def fraction_of(self, class_name: str) -> np.ndarray:
        return self.fractions[:, self.legend.index_of(class_name)]

    def centers(self):
        return self.coarse_geometry.col_centers(self.cols), self.coarse_geometry.row_centers(self.rows)

    def subset(self, idx) -> "FractionSampleSet":
        idx = np.asarray(idx)
        return FractionSampleSet(self.coarse_geometry, self.legend, self.rows[idx], self.cols[idx],
                                 self.fractions[idx], self.valid_fine_count[idx], self.total_fine_count[idx])

    def equals(self, other: "FractionSampleSet") -> bool:
        return (
            self.coarse_geometry == other.coarse_geometry
            and self.legend == other.legend
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.fractions, other.fractions)
            and np.array_equal(self.valid_fine_count, other.valid_fine_count)
            and np.array_equal(self.total_fine_count, other.total_fine_count)
        )


def _axis_maps(fine: GridGeometry, coarse: GridGeometry, fine_rows, fine_cols):
    """Coarse row/col index (or -1) for the given fine row/col indices."""
    r = coarse.row_of(fine.row_centers(fine_rows))
    c = coarse.col_of(fine.col_centers(fine_cols))
    r = np.where((r >= 0) & (r < coarse.n_rows), r, -1)
    c = np.where((c >= 0) & (c < coarse.n_cols), c, -1)
    return r, c


def assign_fine_cells(fine: GridGeometry, coarse: GridGeometry) -> np.ndarray:
    """Flat coarse index of the cell containing each fine cell's center.

    Returns an ``(fine.n_rows, fine.n_cols)`` int64 array; ``-1`` marks fine
    cells whose centers fall outside the coarse extent.
    """
    r, c = _axis_maps(fine, coarse, np.arange(fine.n_rows), np.arange(fine.n_cols))
    out = r[:, None] * coarse.n_cols + c[None, :]
    out[(r < 0)[:, None] | (c < 0)[None, :]] = -1
    return out


def nominal_fine_counts(fine: GridGeometry, coarse: GridGeometry) -> np.ndarray:
    """Fine-lattice cells per coarse cell, as if the fine grid extended indefinitely.

    Fine cells missing from the mosaic therefore count against coverage.
    """
    # fine row/col index range whose centers can fall inside the coarse extent, padded
    r0 = int(np.floor((fine.origin_y - coarse.origin_y) / fine.pixel_size_y)) - 2
    r1 = int(np.ceil((fine.origin_y - coarse.extent[1]) / fine.pixel_size_y)) + 2
    c0 = int(np.floor((coarse.origin_x - fine.origin_x) / fine.pixel_size_x)) - 2
    c1 = int(np.ceil((coarse.extent[2] - fine.origin_x) / fine.pixel_size_x)) + 2
    r, c = _axis_maps(fine, coarse, np.arange(r0, r1), np.arange(c0, c1))
    per_row = np.bincount(r[r >= 0], minlength=coarse.n_rows)
    per_col = np.bincount(c[c >= 0], minlength=coarse.n_cols)
    return np.outer(per_row, per_col).astype(np.int64)


def merge_class(labels: LabelMap, source: str, target: str) -> LabelMap:
    """Relabel every ``source`` fine cell as ``target`` (e.g. shadow reallocation)."""
    src = labels.legend.id_of(source)
    dst = labels.legend.id_of(target)
    values = labels.grid.values[0].copy()
    values[(values == src) & labels.grid.valid_mask] = dst
    return LabelMap(labels.grid.with_values(values), labels.legend)


def aggregate_fractions(labels: LabelMap, coarse: GridGeometry, legend: ClassLegend | None = None,
                        theta: float = 0.95) -> FractionSampleSet:
    """Per-class cover fractions for every coarse cell with coverage >= ``theta``.

    Coverage is valid fine cells over the nominal fine-cell count of the coarse
    cell; fractions are counted over valid fine cells only.
    """
    legend = labels.legend if legend is None else legend
    if not 0 < theta <= 1:
        raise AggregationError(f"coverage threshold must be in (0, 1], got {theta}")
    fine = labels.grid.geometry
    fx0, fy0, fx1, fy1 = fine.extent
    cx0, cy0, cx1, cy1 = coarse.extent
    if fx0 >= cx1 or cx0 >= fx1 or fy0 >= cy1 or cy0 >= fy1:
        raise AggregationError("label map and coarse grid extents do not intersect")

    values = labels.grid.values[0]
    valid = labels.grid.valid_mask
    lookup = np.full(256, -1, dtype=np.int64)
    lookup[legend.class_ids] = np.arange(len(legend))
    class_pos = lookup[values]
    bad = valid & (class_pos < 0)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise AggregationError(f"label value {int(values[r, c])} at fine cell (row {r}, col {c}) is not in the legend")

    target = assign_fine_cells(fine, coarse)
    use = valid & (target >= 0)
    if not use.any():
        raise AggregationError("no valid fine cell falls inside the coarse grid")
    n_coarse = coarse.n_rows * coarse.n_cols
    k = len(legend)
    counts = np.bincount(target[use] * k + class_pos[use], minlength=n_coarse * k).reshape(n_coarse, k)
    valid_count = counts.sum(axis=1)
    total = nominal_fine_counts(fine, coarse).ravel()

    with np.errstate(divide="ignore", invalid="ignore"):
        coverage = np.where(total > 0, valid_count / np.maximum(total, 1), 0.0)
    keep = np.flatnonzero((valid_count > 0) & (coverage >= theta))
    fractions = counts[keep] / valid_count[keep, None]
    return FractionSampleSet(
        coarse_geometry=coarse,
        legend=legend,
        rows=(keep // coarse.n_cols).astype(np.int64),
        cols=(keep % coarse.n_cols).astype(np.int64),
        fractions=fractions,
        valid_fine_count=valid_count[keep].astype(np.int64),
        total_fine_count=total[keep].astype(np.int64),
    )


def coarse_grid_for(fine: GridGeometry, cell_size: float) -> GridGeometry:
    """Coarse grid sharing the fine grid's top-left corner and covering its extent."""
    x0, y0, x1, y1 = fine.extent
    return GridGeometry(
        fine.origin_x, fine.origin_y, float(cell_size), float(cell_size),
        max(1, int(np.ceil((y1 - y0) / cell_size - 1e-9))),
        max(1, int(np.ceil((x1 - x0) / cell_size - 1e-9))),
    )


def write_samples_csv(samples: FractionSampleSet, path) -> None:
    """CSV rows plus a ``<path>.json`` sidecar carrying geometry and legend."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cx = samples.coarse_geometry.col_centers(samples.cols)
    cy = samples.coarse_geometry.row_centers(samples.rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coarse_row", "coarse_col", "center_x", "center_y", *samples.legend.names,
                    "valid_fine_count", "total_fine_count"])
        for i in range(len(samples)):
            w.writerow([int(samples.rows[i]), int(samples.cols[i]), repr(float(cx[i])), repr(float(cy[i])),
                        *[repr(float(v)) for v in samples.fractions[i]],
                        int(samples.valid_fine_count[i]), int(samples.total_fine_count[i])])
    meta = {"coarse_geometry": samples.coarse_geometry.to_dict(), "legend": samples.legend.to_list()}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def read_samples_csv(path) -> FractionSampleSet:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    geometry = GridGeometry.from_dict(meta["coarse_geometry"])
    legend = ClassLegend.from_list(meta["legend"])
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n, k = len(rows), len(legend)
    fractions = np.zeros((n, k))
    for i, row in enumerate(rows):
        fractions[i] = [float(row[name]) for name in legend.names]
    return FractionSampleSet(
        geometry, legend,
        np.array([int(r["coarse_row"]) for r in rows], dtype=np.int64),
        np.array([int(r["coarse_col"]) for r in rows], dtype=np.int64),
        fractions,
        np.array([int(r["valid_fine_count"]) for r in rows], dtype=np.int64),
        np.array([int(r["total_fine_count"]) for r in rows], dtype=np.int64),
    )
