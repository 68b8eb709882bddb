"""Skill metrics and the species x experiment x algorithm benchmark matrix."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import (EXPERIMENT_ENM, EXPERIMENT_ENM_S2, FeatureTable, build_features,
                       drop_bad_bands, resample_mean)
from .fractions import FractionSampleSet
from .raster import RasterGrid
from .regression.model import ALGORITHMS, RegressorSpec, fit_rows, kfold_indices, predict_rows

EXPERIMENTS = (EXPERIMENT_ENM, EXPERIMENT_ENM_S2)
REPORT_FORMAT = "woodycover-report"
REPORT_VERSION = 1


class EvaluationError(ValueError):
    pass


def split_samples(n: int, ratio: float = 0.7, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split; ``round(ratio * n)`` indices go to training (halves round up)."""
    if n < 2:
        raise EvaluationError(f"need at least 2 samples to split, got {n}")
    if not 0 < ratio < 1:
        raise EvaluationError(f"split ratio must lie in (0, 1), got {ratio}")
    n_train = int(math.floor(ratio * n + 0.5))
    if n_train < 1 or n_train >= n:
        raise EvaluationError(f"ratio {ratio} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise EvaluationError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise EvaluationError("empty inputs")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return math.sqrt(float(np.mean((y - y_hat) ** 2)))


def r2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise EvaluationError("R2 is undefined for constant targets")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def ls_fit(x, y) -> tuple[float, float]:
    """Least-squares line ``y = slope * x + intercept``."""
    x, y = _pair(x, y)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx if sxx > 0 else 0.0
    return slope, float(y.mean() - slope * x.mean())


@dataclass
class Protocol:
    """``mode="split"`` uses one seeded train/test split; ``"cv"`` uses k seeded folds."""

    mode: str = "split"
    ratio: float = 0.7
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("split", "cv"):
            raise EvaluationError(f"unknown protocol mode {self.mode!r}")
        if self.mode == "cv" and self.folds < 2:
            raise EvaluationError("cv mode needs at least 2 folds")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BenchmarkCell:
    species: str
    experiment: str
    algorithm: str
    rmse_percent: float
    r2_percent: float
    n_test: int
    sample_ids: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    rmse_std: float | None = None  # across folds in cv mode
    r2_std: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def key(self):
        return (self.species, self.experiment, self.algorithm)

    @property
    def scatter_fit(self) -> tuple[float, float]:
        return ls_fit(self.y_true, self.y_pred)

    def to_dict(self) -> dict:
        slope, intercept = self.scatter_fit
        return {
            "species": self.species, "experiment": self.experiment, "algorithm": self.algorithm,
            "rmse_percent": self.rmse_percent, "r2_percent": self.r2_percent, "n_test": self.n_test,
            "rmse_std": self.rmse_std, "r2_std": self.r2_std,
            "scatter": {"sample_ids": self.sample_ids.tolist(), "y_true": self.y_true.tolist(),
                        "y_pred": self.y_pred.tolist(), "slope": slope, "intercept": intercept},
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d) -> "BenchmarkCell":
        s = d["scatter"]
        return cls(d["species"], d["experiment"], d["algorithm"], d["rmse_percent"], d["r2_percent"],
                   d["n_test"], np.asarray(s["sample_ids"], dtype=np.int64),
                   np.asarray(s["y_true"], dtype=np.float64), np.asarray(s["y_pred"], dtype=np.float64),
                   d.get("rmse_std"), d.get("r2_std"), dict(d.get("info", {})))


@dataclass
class EvalReport:
    protocol: Protocol
    species: list[str]
    experiments: list[str]
    algorithms: list[str]
    cells: dict  # (species, experiment, algorithm) -> BenchmarkCell
    test_sample_ids: np.ndarray | None = None  # split mode: shared by every cell

    def cell(self, species, experiment, algorithm) -> BenchmarkCell:
        return self.cells[(species, experiment, algorithm)]

    def lowest(self) -> dict:
        """Algorithm with the lowest RMSE for each (species, experiment) column; first wins on ties."""
        out = {}
        for sp in self.species:
            for ex in self.experiments:
                out[(sp, ex)] = min(self.algorithms, key=lambda a: self.cells[(sp, ex, a)].rmse_percent)
        return out

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "protocol": self.protocol.to_dict(),
            "species": list(self.species),
            "experiments": list(self.experiments),
            "algorithms": list(self.algorithms),
            "test_sample_ids": None if self.test_sample_ids is None else self.test_sample_ids.tolist(),
            "lowest_rmse": [{"species": s, "experiment": e, "algorithm": a} for (s, e), a in self.lowest().items()],
            "cells": [self.cells[(s, e, a)].to_dict() for s in self.species for e in self.experiments
                      for a in self.algorithms],
        }

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        if d.get("format") != REPORT_FORMAT or d.get("version") != REPORT_VERSION:
            raise EvaluationError("not a supported benchmark report")
        cells = {}
        for c in d["cells"]:
            cell = BenchmarkCell.from_dict(c)
            cells[cell.key] = cell
        ids = d.get("test_sample_ids")
        return cls(Protocol.from_dict(d["protocol"]), list(d["species"]), list(d["experiments"]),
                   list(d["algorithms"]), cells, None if ids is None else np.asarray(ids, dtype=np.int64))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def matrix_rows(self) -> list[list[str]]:
        """Table-shaped RMSE matrix: algorithm rows, species x experiment columns."""
        cols = [(s, e) for s in self.species for e in self.experiments]
        rows = [["algorithm"] + [f"{s} | {e}" for s, e in cols]]
        for a in self.algorithms:
            rows.append([a] + [f"{self.cells[(s, e, a)].rmse_percent:.4f}" for s, e in cols])
        low = self.lowest()
        rows.append(["lowest"] + [low[c] for c in cols])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.matrix_rows())

    def write_scatter(self, outdir) -> list[Path]:
        """One ``sample_id,observed,predicted`` CSV per cell."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for (s, e, a), cell in sorted(self.cells.items()):
            p = out / f"scatter_{s.replace(' ', '_')}_{e.replace('+', 'plus')}_{a}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["sample_id", "observed", "predicted"])
                for i, yt, yp in zip(cell.sample_ids, cell.y_true, cell.y_pred):
                    w.writerow([int(i), repr(float(yt)), repr(float(yp))])
            paths.append(p)
        return paths


def prepare_tables(samples: FractionSampleSet, enmap: RasterGrid, stm: RasterGrid | None,
                   species: Sequence[str], bad_bands: Sequence[bool] | None = None) -> dict:
    """Feature tables ``{(species, experiment): FeatureTable}`` restricted to the samples
    valid in every experiment, so all cells share one sample universe."""
    if bad_bands is not None:
        enmap = drop_bad_bands(enmap, bad_bands)
    if stm is not None and stm.geometry != samples.coarse_geometry:
        stm = resample_mean(stm, samples.coarse_geometry)
    tables = {}
    for sp in species:
        tables[(sp, EXPERIMENT_ENM)] = build_features(samples, enmap, None, sp)
        if stm is not None:
            tables[(sp, EXPERIMENT_ENM_S2)] = build_features(samples, enmap, stm, sp)
    common = None
    for t in tables.values():
        ids = set(t.sample_ids.tolist())
        common = ids if common is None else common & ids
    common = sorted(common or [])
    return {k: t.select_samples(common) for k, t in tables.items()}


def _clip(v):
    return np.clip(v, 0.0, 1.0)


def _run_cell(args):
    key, table, spec, splits = args
    ys, ps, ids, scores, r2s, infos = [], [], [], [], [], []
    for train_idx, test_idx in splits:
        tr, te = table.subset(train_idx), table.subset(test_idx)
        model = fit_rows(tr.rows, tr.targets, tr.feature_names, spec)
        pred = _clip(predict_rows(model, te.rows, te.feature_names))
        ys.append(te.targets)
        ps.append(pred)
        ids.append(te.sample_ids)
        scores.append(rmse(te.targets, pred))
        r2s.append(r2(te.targets, pred) if np.ptp(te.targets) > 0 else float("nan"))
        if "converged" in model.info:
            infos.append(bool(model.info["converged"]))
    return key, ys, ps, ids, scores, r2s, infos


def run_benchmark(samples: FractionSampleSet, enmap: RasterGrid, stm: RasterGrid | None,
                  specs: Mapping[str, RegressorSpec] | None = None, protocol: Protocol | None = None,
                  species: Sequence[str] | None = None, bad_bands: Sequence[bool] | None = None,
                  workers: int = 1) -> EvalReport:
    """Train and score every (species, experiment, algorithm) under one shared split.

    RMSE is in percentage points of cover on predictions clipped to [0, 1].
    """
    protocol = protocol or Protocol()
    specs = dict(specs) if specs is not None else {a: RegressorSpec(a) for a in ALGORITHMS}
    species = list(species) if species is not None else samples.legend.woody_targets
    tables = prepare_tables(samples, enmap, stm, species, bad_bands)
    experiments = [e for e in EXPERIMENTS if (species[0], e) in tables]
    n = len(next(iter(tables.values())))
    if protocol.mode == "split":
        train_idx, test_idx = split_samples(n, protocol.ratio, protocol.seed)
        splits = [(train_idx, test_idx)]
    else:
        folds = kfold_indices(n, protocol.folds, protocol.seed)
        splits = [(np.setdiff1d(np.arange(n), f), f) for f in folds]

    jobs = [((sp, ex, a), tables[(sp, ex)], specs[a], splits)
            for sp in species for ex in experiments for a in specs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    cells = {}
    for key, ys, ps, ids, scores, r2s, conv in results:
        y, p, sid = np.concatenate(ys), np.concatenate(ps), np.concatenate(ids)
        info = {} if not conv else {"converged": all(conv)}
        if protocol.mode == "split":
            cell = BenchmarkCell(*key, 100.0 * scores[0], 100.0 * r2s[0], len(y), sid, y, p, info=info)
        else:
            cell = BenchmarkCell(*key, 100.0 * float(np.mean(scores)), 100.0 * float(np.nanmean(r2s)),
                                 len(y), sid, y, p, 100.0 * float(np.std(scores)),
                                 100.0 * float(np.nanstd(r2s)), info)
        cells[key] = cell
    shared = None
    if protocol.mode == "split":
        shared = next(iter(tables.values())).sample_ids[splits[0][1]]
    return EvalReport(protocol, species, experiments, list(specs), cells, shared)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
