"""Predictor tables for the EnMAP-only and EnMAP + spectro-temporal experiments."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fractions import FractionSampleSet, assign_fine_cells
from .raster import GridGeometry, RasterGrid

EXPERIMENT_ENM = "EnM"
EXPERIMENT_ENM_S2 = "EnM+S2"


class FeatureError(ValueError):
    pass


def drop_bad_bands(cube: RasterGrid, flags: Sequence[bool]) -> RasterGrid:
    """Remove bands flagged bad; the remaining bands keep their order and names."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (cube.n_bands,):
        raise FeatureError(f"{flags.size} band flags for a {cube.n_bands}-band cube")
    if flags.all():
        raise FeatureError("every band is flagged bad")
    keep = np.flatnonzero(~flags)
    return RasterGrid(cube.geometry, cube.values[keep], cube.valid_mask,
                      [cube.band_names[i] for i in keep], dtype=cube.dtype, nodata=cube.nodata)


def load_band_flags(path) -> list[bool]:
    """Read a JSON bad-band list: either ``[bool, ...]`` or ``{"bad": [bool, ...]}``."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["bad"]
    return [bool(x) for x in data]


def resample_mean(grid: RasterGrid, coarse: GridGeometry) -> RasterGrid:
    """Block mean onto ``coarse``: each coarse cell averages the valid cells
    whose centers it contains. Cells without a valid contributor are invalid."""
    target = assign_fine_cells(grid.geometry, coarse).ravel()
    use = (target >= 0) & grid.valid_mask.ravel()
    n_coarse = coarse.n_rows * coarse.n_cols
    counts = np.bincount(target[use], minlength=n_coarse)
    out = np.zeros((grid.n_bands, n_coarse))
    flat = grid.values.reshape(grid.n_bands, -1)
    for b in range(grid.n_bands):
        out[b] = np.bincount(target[use], weights=flat[b, use].astype(np.float64), minlength=n_coarse)
    mask = counts > 0
    out[:, mask] /= counts[mask]
    return RasterGrid(coarse, out.reshape((grid.n_bands,) + coarse.shape), mask.reshape(coarse.shape),
                      grid.band_names, dtype="f32")


@dataclass
class FeatureTable:
    feature_names: list[str]
    rows: np.ndarray
    target_class: str
    targets: np.ndarray
    sample_ids: np.ndarray
    experiment: str = EXPERIMENT_ENM
    dropped: int = 0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.feature_names):
            raise FeatureError(f"rows shape {self.rows.shape} does not match {len(self.feature_names)} features")
        if len(self.rows) != len(self.targets) or len(self.rows) != len(self.sample_ids):
            raise FeatureError("rows, targets and sample_ids must align")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise FeatureError("feature names must be unique")
        if not np.all(np.isfinite(self.rows)):
            raise FeatureError("feature rows must be finite")

    def __len__(self):
        return len(self.targets)

    def subset(self, idx) -> "FeatureTable":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureTable(self.feature_names, self.rows[idx], self.target_class, self.targets[idx],
                            self.sample_ids[idx], self.experiment, self.dropped)

    def select_samples(self, sample_ids) -> "FeatureTable":
        """Rows for the given sample ids, in that order."""
        pos = {int(s): i for i, s in enumerate(self.sample_ids)}
        try:
            return self.subset([pos[int(s)] for s in sample_ids])
        except KeyError as exc:
            raise FeatureError(f"sample {exc} not present in feature table") from None


def build_features(samples: FractionSampleSet, enmap: RasterGrid, stm: RasterGrid | None,
                   target_class: str) -> FeatureTable:
    """Row per sample: EnMAP bands at its coarse cell, then STM bands when given.

    Samples touching an invalid or non-finite predictor are dropped; the count
    is kept on the table.
    """
    if enmap.geometry != samples.coarse_geometry:
        raise FeatureError("EnMAP grid geometry differs from the sample grid")
    if stm is not None and stm.geometry != samples.coarse_geometry:
        raise FeatureError("STM cube geometry differs from the sample grid; resample it first")
    if target_class not in samples.legend.names:
        raise FeatureError(f"target class {target_class!r} not in legend {samples.legend.names}")
    target_idx = samples.legend.index_of(target_class)

    r, c = samples.rows, samples.cols
    blocks = [enmap.values[:, r, c].T.astype(np.float64)]
    names = list(enmap.band_names)
    ok = enmap.valid_mask[r, c].copy()
    experiment = EXPERIMENT_ENM
    if stm is not None:
        blocks.append(stm.values[:, r, c].T.astype(np.float64))
        names += list(stm.band_names)
        ok &= stm.valid_mask[r, c]
        experiment = EXPERIMENT_ENM_S2
    rows = np.concatenate(blocks, axis=1)
    ok &= np.all(np.isfinite(rows), axis=1)
    keep = np.flatnonzero(ok)
    return FeatureTable(
        feature_names=names,
        rows=rows[keep],
        target_class=target_class,
        targets=samples.fractions[keep, target_idx],
        sample_ids=keep,
        experiment=experiment,
        dropped=int(len(samples) - len(keep)),
    )


@dataclass
class StandardizationParams:
    feature_names: list[str]
    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray
    removed: list[str] = field(default_factory=list)

    @property
    def kept_names(self) -> list[str]:
        return [self.feature_names[i] for i in self.kept]

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "kept": [int(i) for i in self.kept],
            "removed": list(self.removed),
        }

    @classmethod
    def from_dict(cls, d) -> "StandardizationParams":
        return cls(list(d["feature_names"]), np.array(d["mean"], dtype=np.float64),
                   np.array(d["std"], dtype=np.float64), np.array(d["kept"], dtype=np.int64),
                   list(d["removed"]))


def fit_standardization(table: FeatureTable | np.ndarray, train_indices=None,
                        feature_names: Sequence[str] | None = None) -> StandardizationParams:
    """Per-feature mean and population std over the training rows.

    Features with (numerically) zero variance are dropped and listed in
    ``removed``.
    """
    if isinstance(table, FeatureTable):
        rows, feature_names = table.rows, table.feature_names
    else:
        rows = np.asarray(table, dtype=np.float64)
        feature_names = feature_names or [f"f{i}" for i in range(rows.shape[1])]
    if train_indices is not None:
        rows = rows[np.asarray(train_indices, dtype=np.int64)]
    if len(rows) == 0:
        raise FeatureError("standardization needs at least one training row")
    mean = rows.mean(axis=0)
    std = np.sqrt(((rows - mean) ** 2).mean(axis=0))
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    kept = np.flatnonzero(~constant)
    return StandardizationParams(list(feature_names), mean[kept], std[kept], kept,
                                 [feature_names[i] for i in np.flatnonzero(constant)])


def apply_standardization(params: StandardizationParams, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return (rows[:, params.kept] - params.mean) / params.std


def invert_standardization(params: StandardizationParams, rows: np.ndarray) -> np.ndarray:
    """Map standardized rows back to the retained raw features."""
    return np.asarray(rows) * params.std + params.mean


def write_feature_table(table: FeatureTable, path) -> None:
    """CSV (features + ``target``) with a ``<path>.json`` companion."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*table.feature_names, "target"])
        for x, y in zip(table.rows, table.targets):
            w.writerow([*(repr(float(v)) for v in x), repr(float(y))])
    meta = {
        "target_class": table.target_class,
        "experiment": table.experiment,
        "dropped": table.dropped,
        "n_rows": len(table),
        "sample_ids": [int(s) for s in table.sample_ids],
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def read_feature_table(path) -> FeatureTable:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    if header[-1] != "target":
        raise FeatureError(f"{path}: last column must be 'target'")
    data = data.reshape(-1, len(header))
    return FeatureTable(header[:-1], data[:, :-1], meta["target_class"], data[:, -1],
                        meta["sample_ids"], meta["experiment"], int(meta["dropped"]))
