"""Spectro-temporal metrics: seasonal percentiles of bands and spectral indices."""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .raster import RasterGrid, load_raster

DEFAULT_PERCENTILES = (10, 25, 50, 75, 90)
INDICES = ("NDVI", "EVI", "SAVI")
DENOMINATOR_EPS = 1e-8


class StmError(ValueError):
    pass


def _index_arrays(index: str, get):
    """Numerator and denominator of ``index``; ``get(name)`` returns band arrays."""
    nir, red = get("NIR"), get("Red")
    if index == "NDVI":
        return nir - red, nir + red, 1.0
    if index == "EVI":
        blue = get("Blue")
        return nir - red, nir + 6.0 * red - 7.5 * blue + 1.0, 2.5
    if index == "SAVI":
        return nir - red, nir + red + 0.5, 1.5
    raise StmError(f"unknown index {index!r}; expected one of {INDICES}")


def index_values(index: str, bands: dict) -> tuple[np.ndarray, np.ndarray]:
    """Index values (float64) and a mask of cells with a usable denominator.

    NDVI = (NIR - Red) / (NIR + Red)
    EVI  = 2.5 (NIR - Red) / (NIR + 6 Red - 7.5 Blue + 1)
    SAVI = 1.5 (NIR - Red) / (NIR + Red + 0.5)
    """
    def get(name):
        if name not in bands:
            raise StmError(f"{index} requires a band named {name!r}")
        return np.asarray(bands[name], dtype=np.float64)

    num, den, gain = _index_arrays(index, get)
    ok = np.abs(den) >= DENOMINATOR_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gain * num / np.where(ok, den, 1.0)
    return out, ok


def compute_index(grid: RasterGrid, index: str) -> RasterGrid:
    """Single-band index raster; cells with a near-zero denominator become invalid."""
    needed = ("NIR", "Red", "Blue") if index == "EVI" else ("NIR", "Red")
    bands = {}
    for name in needed:
        if name not in grid.band_names:
            raise StmError(f"{index} requires a band named {name!r}")
        bands[name] = grid.band(name)
    values, ok = index_values(index, bands)
    mask = grid.valid_mask & ok
    return RasterGrid(grid.geometry, values[np.newaxis], mask, [index], dtype="f32")


def percentile(values: Iterable[float], p: float) -> float:
    """Linear-interpolation percentile (sample quantile type 7)."""
    xs = sorted(float(v) for v in values)
    if not xs:
        raise StmError("percentile of an empty list")
    if not 0 <= p <= 100:
        raise StmError(f"percentile {p} outside [0, 100]")
    h = (len(xs) - 1) * p / 100
    lo = math.floor(h)
    hi = math.ceil(h)
    return xs[lo] + (xs[hi] - xs[lo]) * (h - lo)


def temporal_percentiles(obs: np.ndarray, valid: np.ndarray, percentiles: Sequence[float],
                         min_obs: int = 3) -> np.ndarray:
    """Percentiles along axis 0 over valid observations.

    ``obs`` and ``valid`` share shape ``(T, ...)``. Returns an array of shape
    ``(len(percentiles), ...)`` with NaN where fewer than ``min_obs`` valid
    observations exist.
    """
    data = np.where(valid, obs.astype(np.float64), np.nan)
    data.sort(axis=0)  # NaN sorts last
    n = valid.sum(axis=0)
    out = np.full((len(percentiles),) + obs.shape[1:], np.nan)
    enough = n >= max(min_obs, 1)
    nm1 = np.maximum(n - 1, 0)
    for i, p in enumerate(percentiles):
        h = nm1 * p / 100
        lo = np.floor(h).astype(np.int64)
        hi = np.ceil(h).astype(np.int64)
        xlo = np.take_along_axis(data, lo[np.newaxis], axis=0)[0]
        xhi = np.take_along_axis(data, hi[np.newaxis], axis=0)[0]
        out[i] = np.where(enough, xlo + (xhi - xlo) * (h - lo), np.nan)
    return out


@dataclass(frozen=True)
class SeasonWindow:
    """Recurring annual window from ``start`` to ``end`` (month, day), inclusive.

    A window whose start falls after its end wraps the year boundary
    (e.g. Dec 1 - Mar 31).
    """

    name: str
    start: tuple[int, int]
    end: tuple[int, int]

    def __post_init__(self):
        for md in (self.start, self.end):
            dt.date(2000, *md)  # validates month/day, leap-day tolerant

    @property
    def wraps(self) -> bool:
        return self.start > self.end

    def contains(self, date: dt.date) -> bool:
        md = (date.month, date.day)
        if self.wraps:
            return md >= self.start or md <= self.end
        return self.start <= md <= self.end

    def to_dict(self) -> dict:
        return {"name": self.name, "start": "%02d-%02d" % self.start, "end": "%02d-%02d" % self.end}

    @classmethod
    def from_dict(cls, d: dict) -> "SeasonWindow":
        def md(s):
            m, d_ = s.split("-")
            return (int(m), int(d_))
        return cls(d["name"], md(d["start"]), md(d["end"]))


DRY_SEASON = SeasonWindow("dry", (6, 1), (8, 31))
WET_SEASON = SeasonWindow("wet", (12, 1), (3, 31))
DEFAULT_SEASONS = (DRY_SEASON, WET_SEASON)


class DatedStack:
    """Co-registered multi-band rasters, one per acquisition date."""

    def __init__(self, dates: Sequence[dt.date], grids: Sequence[RasterGrid]):
        if len(dates) != len(grids) or not grids:
            raise StmError("stack needs one grid per date and at least one date")
        for a, b in zip(dates, dates[1:]):
            if not a < b:
                raise StmError(f"stack dates must be strictly increasing ({a} then {b})")
        g0 = grids[0]
        for d, g in zip(dates, grids):
            if g.geometry != g0.geometry or g.band_names != g0.band_names:
                raise StmError(f"grid for {d} does not share geometry/bands with the first date")
        self.dates = list(dates)
        self.grids = list(grids)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[dt.date, RasterGrid]]) -> "DatedStack":
        pairs = sorted(pairs, key=lambda p: p[0])
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @property
    def geometry(self):
        return self.grids[0].geometry

    @property
    def band_names(self) -> list[str]:
        return self.grids[0].band_names

    def __len__(self):
        return len(self.dates)


def load_stack(manifest_path) -> DatedStack:
    """Read a JSON manifest ``[{"date": "YYYY-MM-DD", "path": ...}, ...]``."""
    manifest_path = Path(manifest_path)
    entries = json.loads(manifest_path.read_text())
    pairs = []
    for e in entries:
        p = Path(e["path"])
        if not p.is_absolute():
            p = manifest_path.parent / p
        pairs.append((dt.date.fromisoformat(e["date"]), load_raster(p)))
    return DatedStack.from_pairs(pairs)


def write_manifest(entries: Sequence[tuple[dt.date, str]], path) -> None:
    data = [{"date": d.isoformat(), "path": str(p)} for d, p in entries]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def stm_band_name(variable: str, p: float, season: str) -> str:
    return f"{variable}_p{p:g}_{season}"


def stack_observations(stack: DatedStack, indices: Sequence[str] = INDICES):
    """Per-date variables as float64: ``(T, V, rows, cols)`` values and validity."""
    names = list(stack.band_names) + list(indices)
    t = len(stack)
    shape = stack.geometry.shape
    obs = np.empty((t, len(names)) + shape)
    valid = np.empty((t, len(names)) + shape, dtype=bool)
    nb = len(stack.band_names)
    for i, g in enumerate(stack.grids):
        obs[i, :nb] = g.values
        valid[i, :nb] = g.valid_mask
        bands = {n: g.values[j] for j, n in enumerate(g.band_names)}
        for j, index in enumerate(indices):
            v, ok = index_values(index, bands)
            obs[i, nb + j] = v
            valid[i, nb + j] = ok & g.valid_mask
    return names, obs, valid


def stm_metrics(stack: DatedStack, seasons: Sequence[SeasonWindow] = DEFAULT_SEASONS,
                percentiles: Sequence[float] = DEFAULT_PERCENTILES, min_obs: int = 3,
                indices: Sequence[str] = INDICES):
    """Seasonal percentiles in float64: ``(band_names, values, valid)``.

    ``values`` is NaN where a metric has fewer than ``min_obs`` observations.
    """
    variables, obs, valid = stack_observations(stack, indices)
    blocks, names = [], []
    for season in seasons:
        sel = [i for i, d in enumerate(stack.dates) if season.contains(d)]
        if not sel:
            raise StmError(f"season window {season.name!r} selects no dates")
        pct = temporal_percentiles(obs[sel], valid[sel], percentiles, min_obs)  # (P, V, r, c)
        blocks.append(np.swapaxes(pct, 0, 1).reshape((-1,) + stack.geometry.shape))
        names += [stm_band_name(v, p, season.name) for v in variables for p in percentiles]
    cube = np.concatenate(blocks, axis=0)
    return names, cube, np.all(np.isfinite(cube), axis=0)


def compute_stm(stack: DatedStack, seasons: Sequence[SeasonWindow] = DEFAULT_SEASONS,
                percentiles: Sequence[float] = DEFAULT_PERCENTILES, min_obs: int = 3,
                indices: Sequence[str] = INDICES) -> RasterGrid:
    """Seasonal percentile cube with bands ``<variable>_p<percentile>_<season>``.

    Band order is season, then variable (reflectance bands followed by
    indices), then percentile. A cell is valid only when every metric has at
    least ``min_obs`` valid observations.
    """
    names, cube, mask = stm_metrics(stack, seasons, percentiles, min_obs, indices)
    return RasterGrid(stack.geometry, np.where(np.isfinite(cube), cube, 0.0), mask, names, dtype="f32")
