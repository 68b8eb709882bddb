"""Raster data model and flat-binary file I/O.

A raster on disk is two files sharing a stem: ``<name>.hdr.json`` holding the
geometry, dtype, nodata sentinel and band names, and ``<name>.bin`` holding the
band-sequential, row-major, little-endian payload.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FLOAT_NODATA = -9999.0
CATEGORICAL_NODATA = 255

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_DEFAULT_NODATA = {"f32": FLOAT_NODATA, "u8": CATEGORICAL_NODATA}
HEADER_SUFFIX = ".hdr.json"
PAYLOAD_SUFFIX = ".bin"


class RasterError(ValueError):
    """Raised for malformed rasters, headers or payloads."""


@dataclass(frozen=True)
class GridGeometry:
    """Axis-aligned grid anchored at its top-left corner.

    Rows increase southward, so ``pixel_size_y`` is stored positive and row
    ``r`` spans ``(origin_y - (r + 1) * pixel_size_y, origin_y - r * pixel_size_y]``.
    """

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise RasterError(f"pixel sizes must be positive, got {self.pixel_size_x}, {self.pixel_size_y}")
        if int(self.n_rows) != self.n_rows or int(self.n_cols) != self.n_cols:
            raise RasterError("n_rows and n_cols must be integers")
        if self.n_rows < 1 or self.n_cols < 1:
            raise RasterError(f"grid must have at least one cell, got {self.n_rows}x{self.n_cols}")
        for name in ("origin_x", "origin_y", "pixel_size_x", "pixel_size_y"):
            if not math.isfinite(getattr(self, name)):
                raise RasterError(f"{name} must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) in map units."""
        return (
            self.origin_x,
            self.origin_y - self.n_rows * self.pixel_size_y,
            self.origin_x + self.n_cols * self.pixel_size_x,
            self.origin_y,
        )

    def col_centers(self, cols=None) -> np.ndarray:
        cols = np.arange(self.n_cols) if cols is None else np.asarray(cols)
        return self.origin_x + (cols + 0.5) * self.pixel_size_x

    def row_centers(self, rows=None) -> np.ndarray:
        rows = np.arange(self.n_rows) if rows is None else np.asarray(rows)
        return self.origin_y - (rows + 0.5) * self.pixel_size_y

    def cell_center(self, row, col):
        return self.col_centers(col), self.row_centers(row)

    def col_of(self, x) -> np.ndarray:
        """Column whose half-open interval ``[left, left + size)`` holds ``x``.

        Result may lie outside ``[0, n_cols)``.
        """
        x = np.asarray(x, dtype=np.float64)
        c = np.floor((x - self.origin_x) / self.pixel_size_x)
        # Correct floor() against the explicit edge positions so the result
        # agrees with a point-in-interval test on origin + c * size.
        c = np.where(x < self.origin_x + c * self.pixel_size_x, c - 1, c)
        c = np.where(x >= self.origin_x + (c + 1) * self.pixel_size_x, c + 1, c)
        return c.astype(np.int64)

    def row_of(self, y) -> np.ndarray:
        """Row whose interval ``(top - size, top]`` holds ``y`` (top inclusive)."""
        y = np.asarray(y, dtype=np.float64)
        r = np.floor((self.origin_y - y) / self.pixel_size_y)
        r = np.where(y > self.origin_y - r * self.pixel_size_y, r - 1, r)
        r = np.where(y <= self.origin_y - (r + 1) * self.pixel_size_y, r + 1, r)
        return r.astype(np.int64)

    def cell_index(self, x, y):
        """Map coordinate -> (row, col) of the containing cell (may be out of bounds)."""
        return self.row_of(y), self.col_of(x)

    def in_bounds(self, row, col) -> np.ndarray:
        row = np.asarray(row)
        col = np.asarray(col)
        return (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)

    def to_dict(self) -> dict:
        return {
            "origin_x": float(self.origin_x),
            "origin_y": float(self.origin_y),
            "pixel_size_x": float(self.pixel_size_x),
            "pixel_size_y": float(self.pixel_size_y),
            "n_rows": int(self.n_rows),
            "n_cols": int(self.n_cols),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridGeometry":
        return cls(
            float(d["origin_x"]), float(d["origin_y"]),
            float(d["pixel_size_x"]), float(d["pixel_size_y"]),
            int(d["n_rows"]), int(d["n_cols"]),
        )


class RasterGrid:
    """Georeferenced multi-band grid with one validity mask shared by all bands.

    ``values`` has shape ``(n_bands, n_rows, n_cols)``; a C-ordered array of
    that shape is exactly the band-sequential row-major layout of the payload.
    Invalid cells carry the nodata sentinel in every band. Arrays are copied
    on construction and made read-only.
    """

    def __init__(
        self,
        geometry: GridGeometry,
        values,
        valid_mask=None,
        band_names: Sequence[str] | None = None,
        dtype: str = "f32",
        nodata: float | int | None = None,
    ):
        if dtype not in _DTYPES:
            raise RasterError(f"unknown dtype tag {dtype!r}")
        values = np.array(values, dtype=_DTYPES[dtype], copy=True)
        if values.ndim == 2:
            values = values[np.newaxis]
        if values.ndim != 3 or values.shape[1:] != geometry.shape:
            raise RasterError(
                f"values shape {values.shape} does not match grid {geometry.n_rows}x{geometry.n_cols}"
            )
        if valid_mask is None:
            valid_mask = np.ones(geometry.shape, dtype=bool)
        valid_mask = np.array(valid_mask, dtype=bool, copy=True)
        if valid_mask.shape != geometry.shape:
            raise RasterError(f"valid_mask shape {valid_mask.shape} does not match grid {geometry.shape}")
        if band_names is None:
            band_names = [f"band_{i + 1}" for i in range(values.shape[0])]
        band_names = [str(b) for b in band_names]
        if nodata is None:
            nodata = _DEFAULT_NODATA[dtype]
        values[:, ~valid_mask] = nodata
        values.flags.writeable = False
        valid_mask.flags.writeable = False

        self.geometry = geometry
        self.values = values
        self.valid_mask = valid_mask
        self.band_names = band_names
        self.dtype = dtype
        self.nodata = float(nodata) if dtype == "f32" else int(nodata)
        self.validate()

    @property
    def n_bands(self) -> int:
        return len(self.band_names)

    def validate(self) -> None:
        """Check every invariant; raise RasterError on the first violation."""
        g = self.geometry
        if not isinstance(self.values, np.ndarray) or self.values.size != self.n_bands * g.n_rows * g.n_cols:
            raise RasterError("values length does not equal n_bands * n_rows * n_cols")
        if self.values.shape != (self.n_bands, g.n_rows, g.n_cols):
            raise RasterError(f"values shape {self.values.shape} inconsistent with header")
        if self.values.dtype != _DTYPES[self.dtype]:
            raise RasterError(f"values dtype {self.values.dtype} does not match tag {self.dtype}")
        if not isinstance(self.valid_mask, np.ndarray) or self.valid_mask.shape != g.shape:
            raise RasterError("valid_mask length does not equal n_rows * n_cols")
        if len(set(self.band_names)) != len(self.band_names):
            raise RasterError("band_names must be unique")
        if self.n_bands < 1:
            raise RasterError("at least one band required")
        invalid = ~self.valid_mask
        if invalid.any() and not np.all(self.values[:, invalid] == self.values.dtype.type(self.nodata)):
            raise RasterError("invalid cells must hold the nodata sentinel")
        if self.valid_mask.any():
            all_nodata = np.all(self.values == self.values.dtype.type(self.nodata), axis=0)
            if np.any(all_nodata & self.valid_mask):
                raise RasterError("a valid cell holds nodata in every band")

    def band(self, name: str) -> np.ndarray:
        try:
            return self.values[self.band_names.index(name)]
        except ValueError:
            raise KeyError(f"band {name!r} not in raster (have {self.band_names[:5]}...)") from None

    def with_values(self, values, valid_mask=None, band_names=None) -> "RasterGrid":
        """New grid on the same geometry and dtype."""
        return RasterGrid(
            self.geometry, values,
            self.valid_mask if valid_mask is None else valid_mask,
            self.band_names if band_names is None else band_names,
            dtype=self.dtype, nodata=self.nodata,
        )

    def equals(self, other: "RasterGrid") -> bool:
        return (
            self.geometry == other.geometry
            and self.dtype == other.dtype
            and self.nodata == other.nodata
            and self.band_names == other.band_names
            and np.array_equal(self.valid_mask, other.valid_mask)
            and self.values.tobytes() == other.values.tobytes()
        )

    def __repr__(self):
        g = self.geometry
        return f"RasterGrid({self.n_bands} bands, {g.n_rows}x{g.n_cols}, {self.dtype}, valid={int(self.valid_mask.sum())})"


def _stem(path) -> str:
    path = os.fspath(path)
    for suffix in (HEADER_SUFFIX, PAYLOAD_SUFFIX):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def header_path(path) -> Path:
    return Path(_stem(path) + HEADER_SUFFIX)


def payload_path(path) -> Path:
    return Path(_stem(path) + PAYLOAD_SUFFIX)


def save_raster(grid: RasterGrid, path) -> None:
    """Write ``grid`` as ``<stem>.hdr.json`` + ``<stem>.bin``.

    ``path`` may be the stem or either file name. Output bytes are a pure
    function of the grid.
    """
    grid.validate()
    header = dict(grid.geometry.to_dict())
    header.update(
        n_bands=grid.n_bands,
        dtype=grid.dtype,
        nodata=grid.nodata,
        band_names=list(grid.band_names),
    )
    hdr = header_path(path)
    hdr.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(grid.values, dtype=_DTYPES[grid.dtype]).tobytes()
    _atomic_write(payload_path(path), payload)
    _atomic_write(hdr, (json.dumps(header, indent=2) + "\n").encode("utf-8"))


def load_raster(path) -> RasterGrid:
    """Read a raster written by :func:`save_raster`.

    The validity mask is reconstructed from the nodata sentinel: a cell is
    invalid when every band holds nodata.
    """
    hdr = header_path(path)
    try:
        header = json.loads(hdr.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RasterError(f"missing raster header {hdr}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RasterError(f"unparseable raster header {hdr}: {exc}") from None
    try:
        geometry = GridGeometry.from_dict(header)
        n_bands = int(header["n_bands"])
        dtype = header["dtype"]
        nodata = header["nodata"]
        band_names = list(header["band_names"])
    except (KeyError, TypeError) as exc:
        raise RasterError(f"raster header {hdr} missing field {exc}") from None
    if dtype not in _DTYPES:
        raise RasterError(f"unknown dtype tag {dtype!r} in {hdr}")
    if len(band_names) != n_bands:
        raise RasterError(f"{hdr}: {len(band_names)} band names for {n_bands} bands")
    payload = payload_path(path)
    try:
        raw = payload.read_bytes()
    except FileNotFoundError:
        raise RasterError(f"missing raster payload {payload}") from None
    np_dtype = _DTYPES[dtype]
    expected = n_bands * geometry.n_rows * geometry.n_cols * np_dtype.itemsize
    if len(raw) != expected:
        raise RasterError(f"{payload}: payload has {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype=np_dtype).reshape(n_bands, geometry.n_rows, geometry.n_cols)
    nodata_value = np_dtype.type(nodata)
    valid = ~np.all(values == nodata_value, axis=0)
    return RasterGrid(geometry, values, valid, band_names, dtype=dtype, nodata=nodata)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
