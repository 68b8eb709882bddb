"""Seeded synthetic scenes with known woody cover.

A 1 m label map is painted with woody crowns (disks) over a grass/soil
background, crowns cast small shadows, and per-species cover is capped per
coarse cell. Coarse hyperspectral and multi-date multispectral rasters are
then simulated by linear mixing of class endmembers plus Gaussian noise.
Ground-truth fractions always come from :func:`aggregate_fractions`.
"""
from __future__ import annotations

import copy
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fractions import (ClassLegend, FractionSampleSet, LabelMap, aggregate_fractions,
                        assign_fine_cells, default_legend, write_samples_csv)
from .raster import GridGeometry, RasterGrid, save_raster
from .stm import DEFAULT_SEASONS, DatedStack, SeasonWindow, write_manifest

S2_BANDS = ("Blue", "Green", "Red", "RE1", "RE2", "RE3", "NIR", "NIR2", "SWIR1", "SWIR2")
S2_WAVELENGTHS = (490.0, 560.0, 665.0, 705.0, 740.0, 783.0, 842.0, 865.0, 1610.0, 2190.0)
# atmospheric water vapour windows flagged as bad in the hyperspectral cube
BAD_WINDOWS = ((1340.0, 1460.0), (1790.0, 1960.0))


class SceneError(ValueError):
    pass


def _gauss(wl, center, width):
    return np.exp(-((wl - center) / width) ** 2)


def vegetation_spectrum(wl, vis, green, red_edge, nir, swir, water, cellulose=0.0):
    """Smooth leaf/canopy-like reflectance curve over wavelengths in nm."""
    wl = np.asarray(wl, dtype=np.float64)
    s = 1.0 / (1.0 + np.exp(-(wl - red_edge) / 18.0))
    r = vis + green * _gauss(wl, 555.0, 40.0) * (1 - s) + (nir - vis) * s
    t = np.clip((wl - 1250.0) / 1200.0, 0.0, 1.0)
    r = r * (1 - t) + swir * t
    r = r * (1 - water * (0.4 * _gauss(wl, 1200, 50) + _gauss(wl, 1450, 70) + 1.3 * _gauss(wl, 1940, 80)))
    r = r - cellulose * _gauss(wl, 2100, 60)
    return np.clip(r, 0.005, 0.95)


def soil_spectrum(wl, brightness=1.0, moisture=0.0):
    wl = np.asarray(wl, dtype=np.float64)
    r = 0.08 + 0.27 * (1 - np.exp(-(wl - 400.0) / 650.0)) - 0.02 * _gauss(wl, 900, 120)
    r = brightness * r * (1 - moisture * (0.3 + 0.5 * _gauss(wl, 1940, 90)))
    return np.clip(r, 0.005, 0.95)


# (dry, wet) parameters per class
_VEG_PARAMS = {
    "Grewia flava": (dict(vis=0.055, green=0.035, red_edge=716, nir=0.30, swir=0.20, water=0.50),
                     dict(vis=0.040, green=0.060, red_edge=722, nir=0.42, swir=0.16, water=0.62)),
    "Senegalia mellifera": (dict(vis=0.060, green=0.030, red_edge=714, nir=0.31, swir=0.21, water=0.48),
                            dict(vis=0.048, green=0.045, red_edge=717, nir=0.35, swir=0.19, water=0.52)),
    "Vachellia genus": (dict(vis=0.050, green=0.025, red_edge=711, nir=0.27, swir=0.19, water=0.45),
                  dict(vis=0.042, green=0.050, red_edge=720, nir=0.37, swir=0.15, water=0.58)),
    "Grass": (dict(vis=0.100, green=0.020, red_edge=700, nir=0.26, swir=0.30, water=0.10, cellulose=0.05),
              dict(vis=0.090, green=0.030, red_edge=703, nir=0.28, swir=0.28, water=0.16, cellulose=0.04)),
}


def default_wavelengths(n_bands: int = 80) -> np.ndarray:
    return np.linspace(420.0, 2450.0, n_bands)


def default_endmembers(legend: ClassLegend, wavelengths) -> dict:
    """Endmember table ``{class: {"hyper_dry", "hyper_wet", "s2_dry", "s2_wet"}}``."""
    out = {}
    for name in legend.names:
        spectra = {}
        for grid_name, wl in (("hyper", wavelengths), ("s2", S2_WAVELENGTHS)):
            if name in _VEG_PARAMS:
                dry, wet = (vegetation_spectrum(wl, **p) for p in _VEG_PARAMS[name])
            elif name == "Soil":
                dry, wet = soil_spectrum(wl), soil_spectrum(wl, moisture=0.12)
            elif name == "Shadow":
                dry = wet = 0.25 * soil_spectrum(wl)
            else:  # extra classes in a custom legend get a dull soil-like curve
                dry = wet = soil_spectrum(wl, brightness=0.8)
            spectra[f"{grid_name}_dry"] = [float(v) for v in dry]
            spectra[f"{grid_name}_wet"] = [float(v) for v in wet]
        out[name] = spectra
    return out


def default_dates() -> list[str]:
    dry = ["2023-06-04", "2023-06-19", "2023-07-04", "2023-07-19", "2023-08-03", "2023-08-18", "2023-08-28"]
    wet = ["2023-01-08", "2023-01-23", "2023-02-07", "2023-02-22", "2023-03-09", "2023-03-24",
           "2023-12-04", "2023-12-19"]
    return sorted(dry + wet)


@dataclass
class WoodyProcess:
    """Crown placement for one woody class: Poisson disks modulated by a smooth field."""

    density: float = 40.0       # crowns per hectare on average
    radius_mean: float = 2.5    # metres
    radius_sd: float = 0.8
    clustering: float = 1.4     # std of the log-intensity field

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SceneConfig:
    seed: int = 0
    coarse_rows: int = 16
    coarse_cols: int = 16
    coarse_size: float = 30.0
    fine_size: float = 1.0
    s2_size: float = 10.0
    origin_x: float = 500000.0
    origin_y: float = 7400000.0
    legend: ClassLegend = field(default_factory=default_legend)
    woody: dict = field(default_factory=lambda: {n: WoodyProcess() for n in default_legend().woody_targets})
    grass_share: float = 0.6        # mean grass share of the open background
    shadow_scale: float = 0.6       # shadow disk radius relative to crown radius
    wavelengths: list = field(default_factory=lambda: [float(w) for w in default_wavelengths()])
    endmembers: dict | None = None
    noise_std: float = 0.004        # per-band additive noise, hyperspectral
    brightness_std: float = 0.02    # per-pixel multiplicative illumination noise
    bad_band_noise_std: float = 0.1
    s2_noise_std: float = 0.006
    cloud_fraction: float = 0.08
    dates: list = field(default_factory=default_dates)
    seasons: tuple = DEFAULT_SEASONS
    enmap_season: str = "dry"
    cover_cap: float = 0.30
    theta: float = 0.95

    def __post_init__(self):
        if self.endmembers is None:
            self.endmembers = default_endmembers(self.legend, np.asarray(self.wavelengths))
        self.woody = {k: v if isinstance(v, WoodyProcess) else WoodyProcess(**v) for k, v in self.woody.items()}
        self.validate()

    # geometries
    @property
    def coarse_geometry(self) -> GridGeometry:
        return GridGeometry(self.origin_x, self.origin_y, self.coarse_size, self.coarse_size,
                            self.coarse_rows, self.coarse_cols)

    def _sub_geometry(self, size) -> GridGeometry:
        ratio = self.coarse_size / size
        return GridGeometry(self.origin_x, self.origin_y, size, size,
                            int(round(self.coarse_rows * ratio)), int(round(self.coarse_cols * ratio)))

    @property
    def fine_geometry(self) -> GridGeometry:
        return self._sub_geometry(self.fine_size)

    @property
    def s2_geometry(self) -> GridGeometry:
        return self._sub_geometry(self.s2_size)

    @property
    def bad_bands(self) -> list[bool]:
        wl = np.asarray(self.wavelengths)
        bad = np.zeros(len(wl), dtype=bool)
        for lo, hi in BAD_WINDOWS:
            bad |= (wl >= lo) & (wl <= hi)
        return [bool(b) for b in bad]

    def endmember_matrix(self, kind: str) -> np.ndarray:
        """``(n_classes, n_bands)`` endmembers in legend order; kind like ``"hyper_dry"``."""
        return np.array([self.endmembers[n][kind] for n in self.legend.names], dtype=np.float64)

    def validate(self) -> None:
        for size_ratio in (self.coarse_size / self.fine_size, self.coarse_size / self.s2_size):
            if abs(size_ratio - round(size_ratio)) > 1e-9 or round(size_ratio) < 1:
                raise SceneError("coarse size must be an integer multiple of the fine and S2 sizes")
        if self.coarse_rows < 1 or self.coarse_cols < 1:
            raise SceneError("coarse grid must have at least one cell")
        if not 0 < self.cover_cap <= 1:
            raise SceneError("cover_cap must lie in (0, 1]")
        for name in ("noise_std", "brightness_std", "bad_band_noise_std", "s2_noise_std"):
            if getattr(self, name) < 0:
                raise SceneError(f"{name} must be non-negative")
        if not 0 <= self.cloud_fraction < 1 or not 0 <= self.grass_share <= 1:
            raise SceneError("cloud_fraction and grass_share must be fractions")
        for name in self.woody:
            if name not in self.legend.woody_targets:
                raise SceneError(f"{name!r} is not a woody class of the legend")
            w = self.woody[name]
            if w.density < 0 or w.radius_mean <= 0 or w.radius_sd < 0 or w.clustering < 0:
                raise SceneError(f"invalid crown process for {name!r}")
        if set(self.endmembers) != set(self.legend.names):
            raise SceneError("endmembers must be given for exactly the legend classes")
        for name, spectra in self.endmembers.items():
            for kind, n in (("hyper_dry", len(self.wavelengths)), ("hyper_wet", len(self.wavelengths)),
                            ("s2_dry", len(S2_BANDS)), ("s2_wet", len(S2_BANDS))):
                e = np.asarray(spectra[kind], dtype=np.float64)
                if e.shape != (n,):
                    raise SceneError(f"{name} {kind} endmember must have {n} values")
                if np.any(e < 0) or np.any(e > 1):
                    raise SceneError(f"{name} {kind} endmember leaves [0, 1]")
        if self.enmap_season not in ("dry", "wet"):
            raise SceneError("enmap_season must be 'dry' or 'wet'")
        for d in self.dates:
            self.season_of(dt.date.fromisoformat(d))

    def season_of(self, date: dt.date) -> str:
        for s in self.seasons:
            if s.contains(date):
                return "wet" if s.name == "wet" else "dry"
        raise SceneError(f"date {date} falls in no season window")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("legend", "woody", "seasons")}
        d["legend"] = self.legend.to_list()
        d["woody"] = {k: v.to_dict() for k, v in self.woody.items()}
        d["seasons"] = [s.to_dict() for s in self.seasons]
        return copy.deepcopy(d)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SceneError(f"unknown scene config keys: {sorted(unknown)}")
        if "legend" in d:
            d["legend"] = ClassLegend.from_list(d["legend"])
        if "seasons" in d:
            d["seasons"] = tuple(SeasonWindow.from_dict(s) for s in d["seasons"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SceneConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Scene:
    config: SceneConfig
    labels: LabelMap
    truth: FractionSampleSet
    enmap: RasterGrid
    stack: DatedStack

    @property
    def bad_bands(self) -> list[bool]:
        return self.config.bad_bands


def _smooth_field(rng, x, y, n_waves=12, length=90.0):
    """Zero-mean, unit-variance random Fourier field evaluated at points."""
    k = rng.normal(0.0, 1.0 / length, size=(n_waves, 2)) * 2 * math.pi
    phase = rng.uniform(0, 2 * math.pi, n_waves)
    z = np.cos(np.outer(x, k[:, 0]) + np.outer(y, k[:, 1]) + phase).sum(axis=1)
    return z * math.sqrt(2.0 / n_waves)


def _place_crowns(rng, proc: WoodyProcess, width, height):
    """Crown centres (local metres from the upper-left corner) and radii."""
    area_ha = width * height / 1e4
    peak = math.exp(proc.clustering * 3.0)  # thinning bound for the log-normal intensity
    n_cand = rng.poisson(proc.density * area_ha * peak * math.exp(-proc.clustering ** 2 / 2))
    x = rng.uniform(0, width, n_cand)
    y = rng.uniform(0, height, n_cand)
    z = _smooth_field(rng, x, y)
    keep = rng.uniform(0, 1, n_cand) < np.minimum(np.exp(proc.clustering * z) / peak, 1.0)
    x, y = x[keep], y[keep]
    # log-normal radii with the requested mean/sd
    m, s = proc.radius_mean, proc.radius_sd
    sig2 = math.log(1 + (s / m) ** 2)
    r = rng.lognormal(math.log(m) - sig2 / 2, math.sqrt(sig2), len(x))
    return x, y, r


def _paint(labels, x, y, r, value, size, only=None):
    """Set fine cells whose centres fall in each disk; ``only`` restricts the overwritten labels."""
    nr, nc = labels.shape
    for cx, cy, cr in zip(x, y, r):
        c0, c1 = max(int((cx - cr) / size), 0), min(int((cx + cr) / size) + 1, nc)
        r0, r1 = max(int((cy - cr) / size), 0), min(int((cy + cr) / size) + 1, nr)
        if c0 >= c1 or r0 >= r1:
            continue
        xs = (np.arange(c0, c1) + 0.5) * size - cx
        ys = (np.arange(r0, r1) + 0.5) * size - cy
        inside = xs[None, :] ** 2 + ys[:, None] ** 2 <= cr * cr
        block = labels[r0:r1, c0:c1]
        if only is not None:
            inside &= np.isin(block, only)
        block[inside] = value


def enforce_cap(labels: np.ndarray, coarse_index: np.ndarray, totals: np.ndarray, class_id: int,
                replacement: int, cap: float, rng) -> int:
    """Relabel random excess cells so no coarse cell exceeds ``cap``; returns cells changed."""
    flat = labels.ravel()
    idx = np.flatnonzero((flat == class_id) & (coarse_index.ravel() >= 0))
    if idx.size == 0:
        return 0
    cells = coarse_index.ravel()[idx]
    allowed = np.floor(cap * totals).astype(np.int64)
    # guard against floor/round-off disagreeing with the float comparison
    allowed -= (allowed / np.maximum(totals, 1) > cap).astype(np.int64)
    order = np.lexsort((rng.random(idx.size), cells))
    cells_sorted = cells[order]
    first = np.searchsorted(cells_sorted, cells_sorted, side="left")
    rank = np.arange(idx.size) - first
    excess = order[rank >= allowed[cells_sorted]]
    flat[idx[excess]] = replacement
    return int(excess.size)


def generate_labels(config: SceneConfig, rng) -> LabelMap:
    legend = config.legend
    fine = config.fine_geometry
    nr, nc = fine.shape
    width, height = nc * config.fine_size, nr * config.fine_size
    grass, soil, shadow = legend.id_of("Grass"), legend.id_of("Soil"), legend.id_of("Shadow")

    # background: smooth grass/soil field
    cx = (np.arange(nc) + 0.5) * config.fine_size
    cy = (np.arange(nr) + 0.5) * config.fine_size
    gx = np.repeat(cx[None, :], nr, axis=0).ravel()
    gy = np.repeat(cy[:, None], nc, axis=1).ravel()
    field_ = _smooth_field(rng, gx, gy, length=60.0) + rng.normal(0, 0.6, gx.size)
    thresh = np.quantile(field_, 1 - config.grass_share) if 0 < config.grass_share < 1 else None
    if thresh is None:
        labels = np.full((nr, nc), grass if config.grass_share >= 1 else soil, dtype=np.uint8)
    else:
        labels = np.where(field_.reshape(nr, nc) > thresh, grass, soil).astype(np.uint8)

    crowns = []
    for name in legend.woody_targets:
        proc = config.woody.get(name)
        if proc is None or proc.density == 0:
            crowns.append((name, np.empty(0), np.empty(0), np.empty(0)))
            continue
        crowns.append((name,) + _place_crowns(rng, proc, width, height))
    # shadows fall to the lower right of each crown and only on open ground
    for _, x, y, r in crowns:
        s = config.shadow_scale
        if s > 0 and len(x):
            _paint(labels, x + 0.7 * r, y + 0.7 * r, s * r, shadow, config.fine_size, only=[grass, soil])
    for name, x, y, r in crowns:
        _paint(labels, x, y, r, legend.id_of(name), config.fine_size)

    coarse_index = assign_fine_cells(fine, config.coarse_geometry)
    totals = np.bincount(coarse_index[coarse_index >= 0].ravel(), minlength=config.coarse_rows * config.coarse_cols)
    for name in legend.woody_targets:
        enforce_cap(labels, coarse_index, totals, legend.id_of(name), grass, config.cover_cap, rng)
    return LabelMap(RasterGrid(fine, labels[None], band_names=["class"], dtype="u8"), legend)


def _mix(fractions, E, rng, noise_std, brightness_std):
    """Linear mixture ``fractions @ E`` with illumination and additive noise."""
    spectra = fractions @ E
    if brightness_std > 0:
        spectra = spectra * (1.0 + rng.normal(0.0, brightness_std, (len(spectra), 1)))
    if noise_std > 0:
        spectra = spectra + rng.normal(0.0, noise_std, spectra.shape)
    return spectra


def _cell_fractions(labels: LabelMap, geom: GridGeometry, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(n_cells, n_classes)`` fractions and validity on ``geom``."""
    s = aggregate_fractions(labels, geom, labels.legend, theta)
    dense = np.zeros((geom.n_rows * geom.n_cols, len(labels.legend)))
    flat = s.rows * geom.n_cols + s.cols
    dense[flat] = s.fractions
    ok = np.zeros(len(dense), dtype=bool)
    ok[flat] = True
    return dense, ok


def _cloud_mask(rng, geom: GridGeometry, fraction: float) -> np.ndarray:
    """Valid-cell mask with roughly ``fraction`` of cells under round clouds."""
    nr, nc = geom.shape
    clear = np.ones((nr, nc), dtype=bool)
    if fraction <= 0:
        return clear
    target = fraction * nr * nc
    covered = 0
    while covered < target:
        r = rng.uniform(2, 6)
        cy, cx = rng.uniform(0, nr), rng.uniform(0, nc)
        yy, xx = np.ogrid[:nr, :nc]
        clear &= (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 > r * r
        covered = int((~clear).sum())
    return clear


def generate_scene(config: SceneConfig) -> Scene:
    """Build a complete scene; identical configs give bit-identical scenes."""
    label_seq, enmap_seq, s2_seq = np.random.SeedSequence(config.seed).spawn(3)
    labels = generate_labels(config, np.random.default_rng(label_seq))
    truth = aggregate_fractions(labels, config.coarse_geometry, config.legend, config.theta)

    coarse = config.coarse_geometry
    dense = np.zeros((coarse.n_rows * coarse.n_cols, len(config.legend)))
    flat = truth.rows * coarse.n_cols + truth.cols
    dense[flat] = truth.fractions
    ok = np.zeros(len(dense), dtype=bool)
    ok[flat] = True
    rng = np.random.default_rng(enmap_seq)
    hyper = _mix(dense, config.endmember_matrix(f"hyper_{config.enmap_season}"), rng,
                 config.noise_std, config.brightness_std)
    bad = np.asarray(config.bad_bands)
    if bad.any() and config.bad_band_noise_std > 0:
        hyper[:, bad] += rng.normal(0.0, config.bad_band_noise_std, (len(hyper), int(bad.sum())))
    band_names = [f"B{i + 1:03d}_{w:.0f}nm" for i, w in enumerate(config.wavelengths)]
    enmap = RasterGrid(coarse, hyper.T.reshape((len(band_names),) + coarse.shape), ok.reshape(coarse.shape),
                       band_names)

    s2 = config.s2_geometry
    s2_frac, s2_ok = _cell_fractions(labels, s2, config.theta)
    rng = np.random.default_rng(s2_seq)
    pairs = []
    for d in sorted(config.dates):
        date = dt.date.fromisoformat(d)
        E = config.endmember_matrix(f"s2_{config.season_of(date)}")
        refl = _mix(s2_frac, E, rng, config.s2_noise_std, config.brightness_std)
        clear = _cloud_mask(rng, s2, config.cloud_fraction).ravel() & s2_ok
        pairs.append((date, RasterGrid(s2, refl.T.reshape((len(S2_BANDS),) + s2.shape),
                                       clear.reshape(s2.shape), list(S2_BANDS))))
    return Scene(config, labels, truth, enmap, DatedStack.from_pairs(pairs))


def scene_truth_check(scene: Scene, bins: int = 20) -> dict:
    """Cover histograms, cap compliance, sum-to-one and aggregation consistency."""
    cfg = scene.config
    truth = scene.truth
    recomputed = aggregate_fractions(scene.labels, cfg.coarse_geometry, cfg.legend, cfg.theta)
    edges = np.linspace(0.0, 1.0, bins + 1)
    hist = {n: np.histogram(truth.fraction_of(n), bins=edges)[0].tolist() for n in cfg.legend.names}
    max_woody = {n: float(truth.fraction_of(n).max(initial=0.0)) for n in cfg.legend.woody_targets}
    sums = truth.fractions.sum(axis=1)
    coverage_full = truth.valid_fine_count == truth.total_fine_count
    return {
        "n_samples": len(truth),
        "histogram_edges": edges.tolist(),
        "histograms": hist,
        "max_woody_fraction": max_woody,
        "cap": cfg.cover_cap,
        "cap_ok": all(v <= cfg.cover_cap for v in max_woody.values()),
        "max_sum_deviation": float(np.abs(sums[coverage_full] - 1.0).max(initial=0.0)),
        "matches_aggregation": truth.equals(recomputed),
    }


def write_scene(scene: Scene, outdir) -> dict:
    """Write every scene product in the standard formats; returns the written paths."""
    out = Path(outdir)
    (out / "s2").mkdir(parents=True, exist_ok=True)
    paths = {
        "config": out / "scene_config.json",
        "labels": out / "labels",
        "legend": out / "legend.json",
        "truth": out / "truth_samples.csv",
        "enmap": out / "enmap",
        "bad_bands": out / "enmap_bad_bands.json",
        "stack": out / "s2" / "manifest.json",
    }
    scene.config.save(paths["config"])
    save_raster(scene.labels.grid, paths["labels"])
    scene.config.legend.save(paths["legend"])
    write_samples_csv(scene.truth, paths["truth"])
    save_raster(scene.enmap, paths["enmap"])
    paths["bad_bands"].write_text(json.dumps({"bad": scene.bad_bands}) + "\n")
    entries = []
    for date, grid in zip(scene.stack.dates, scene.stack.grids):
        name = f"s2_{date:%Y%m%d}"
        save_raster(grid, out / "s2" / name)
        entries.append((date, name))
    write_manifest(entries, paths["stack"])
    return {k: str(v) for k, v in paths.items()}
