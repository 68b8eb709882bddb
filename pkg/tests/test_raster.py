import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from woodycover.raster import (FLOAT_NODATA, GridGeometry, RasterError, RasterGrid, header_path,
                               load_raster, payload_path, save_raster)


def small_grid(**kw):
    g = GridGeometry(100.0, 200.0, 1.0, 1.0, 2, 2)
    return RasterGrid(g, np.array([[1, 2], [3, 4]], dtype=np.float32), **kw)


def test_roundtrip_2x2(tmp_path):
    grid = small_grid(band_names=["v"])
    save_raster(grid, tmp_path / "a")
    back = load_raster(tmp_path / "a")
    assert back.equals(grid)
    assert back.values[0].tolist() == [[1, 2], [3, 4]]
    assert back.geometry == grid.geometry and back.band_names == ["v"]


def test_header_keys(tmp_path):
    save_raster(small_grid(), tmp_path / "a")
    hdr = json.loads(header_path(tmp_path / "a").read_text())
    assert set(hdr) >= {"origin_x", "origin_y", "pixel_size_x", "pixel_size_y", "n_rows", "n_cols",
                        "n_bands", "dtype", "nodata", "band_names"}
    assert hdr["dtype"] == "f32" and hdr["nodata"] == FLOAT_NODATA


def test_payload_is_little_endian_band_sequential(tmp_path):
    g = GridGeometry(0, 0, 1, 1, 2, 3)
    vals = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    save_raster(RasterGrid(g, vals), tmp_path / "b")
    raw = payload_path(tmp_path / "b").read_bytes()
    assert np.array_equal(np.frombuffer(raw, dtype="<f4"), np.arange(12, dtype=np.float32))


def test_payload_size_check(tmp_path):
    g = GridGeometry(0, 0, 30, 30, 10, 10)
    grid = RasterGrid(g, np.ones((3, 10, 10), dtype=np.float32))
    save_raster(grid, tmp_path / "c")
    assert payload_path(tmp_path / "c").stat().st_size == 1200
    load_raster(tmp_path / "c")
    p = payload_path(tmp_path / "c")
    p.write_bytes(p.read_bytes()[:1199])
    with pytest.raises(RasterError, match="1199"):
        load_raster(tmp_path / "c")


def test_bad_header(tmp_path):
    save_raster(small_grid(), tmp_path / "d")
    h = header_path(tmp_path / "d")
    hdr = json.loads(h.read_text())
    hdr["dtype"] = "f64"
    h.write_text(json.dumps(hdr))
    with pytest.raises(RasterError):
        load_raster(tmp_path / "d")
    h.write_text("{not json")
    with pytest.raises(RasterError):
        load_raster(tmp_path / "d")
    with pytest.raises(RasterError):
        load_raster(tmp_path / "missing")


def test_mask_preserved(tmp_path):
    g = GridGeometry(0, 0, 1, 1, 4, 4)
    mask = np.ones((4, 4), dtype=bool)
    bad = [(0, 0), (1, 2), (2, 1), (3, 3), (3, 0)]
    for r, c in bad:
        mask[r, c] = False
    grid = RasterGrid(g, np.random.default_rng(0).random((2, 4, 4)), mask)
    save_raster(grid, tmp_path / "m")
    back = load_raster(tmp_path / "m")
    assert (~back.valid_mask).sum() == 5
    assert sorted(map(tuple, np.argwhere(~back.valid_mask))) == sorted(bad)
    assert np.all(back.values[:, ~back.valid_mask] == FLOAT_NODATA)


def test_identical_grids_byte_identical(tmp_path):
    save_raster(small_grid(), tmp_path / "x")
    save_raster(small_grid(), tmp_path / "y")
    assert payload_path(tmp_path / "x").read_bytes() == payload_path(tmp_path / "y").read_bytes()
    assert header_path(tmp_path / "x").read_text() == header_path(tmp_path / "y").read_text()
    first = payload_path(tmp_path / "x").read_bytes()
    save_raster(load_raster(tmp_path / "x"), tmp_path / "x")
    assert payload_path(tmp_path / "x").read_bytes() == first


def test_invalid_grid_rejected_before_write(tmp_path):
    grid = small_grid()
    object.__setattr__(grid, "values", np.ones((1, 3), dtype=np.float32))
    with pytest.raises(RasterError):
        save_raster(grid, tmp_path / "z")
    assert not payload_path(tmp_path / "z").exists()
    assert not header_path(tmp_path / "z").exists()


def test_construction_errors():
    g = GridGeometry(0, 0, 1, 1, 2, 2)
    with pytest.raises(RasterError):
        RasterGrid(g, np.ones((1, 3, 2)))
    with pytest.raises(RasterError):
        RasterGrid(g, np.ones((2, 2, 2)), band_names=["a", "a"])
    with pytest.raises(RasterError):
        GridGeometry(0, 0, -1, 1, 2, 2)
    with pytest.raises(RasterError):
        GridGeometry(0, 0, 1, 1, 0, 2)
    with pytest.raises(RasterError):
        RasterGrid(g, np.full((1, 2, 2), FLOAT_NODATA))  # valid cells holding only nodata


def test_values_are_read_only():
    grid = small_grid()
    with pytest.raises(ValueError):
        grid.values[0, 0, 0] = 5


def test_half_open_cells():
    g = GridGeometry(10.0, 50.0, 2.0, 2.0, 3, 4)
    # left edge of column 1 is x = 12: inclusive
    assert g.col_of(12.0) == 1
    assert g.col_of(11.999999) == 0
    # top edge of row 1 is y = 48: inclusive (top-inclusive)
    assert g.row_of(48.0) == 1
    assert g.row_of(48.000001) == 0
    assert g.col_of(9.99) == -1 and g.row_of(50.01) == -1


@st.composite
def geometries(draw):
    return GridGeometry(
        draw(st.floats(-1e6, 1e6, allow_nan=False)), draw(st.floats(-1e6, 1e6, allow_nan=False)),
        draw(st.floats(0.01, 100)), draw(st.floats(0.01, 100)),
        draw(st.integers(1, 30)), draw(st.integers(1, 30)),
    )


@given(geometries())
def test_center_index_roundtrip(g):
    rows, cols = np.meshgrid(np.arange(g.n_rows), np.arange(g.n_cols), indexing="ij")
    x, y = g.cell_center(rows, cols)
    r, c = g.cell_index(x, y)
    assert np.array_equal(r, rows) and np.array_equal(c, cols)


@st.composite
def grids(draw):
    g = GridGeometry(draw(st.floats(-1e5, 1e5)), draw(st.floats(-1e5, 1e5)), draw(st.floats(0.1, 50)),
                     draw(st.floats(0.1, 50)), draw(st.integers(1, 8)), draw(st.integers(1, 8)))
    n_bands = draw(st.integers(1, 4))
    dtype = draw(st.sampled_from(["f32", "u8"]))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    if dtype == "f32":
        vals = rng.normal(0, 100, (n_bands,) + g.shape)
    else:
        vals = rng.integers(0, 255, (n_bands,) + g.shape)
    mask = rng.random(g.shape) > draw(st.floats(0, 1))
    return RasterGrid(g, vals, mask, [f"b{i}" for i in range(n_bands)], dtype=dtype)


@given(grids())
def test_save_load_identity(tmp_path_factory, grid):
    path = tmp_path_factory.mktemp("rt") / "g"
    save_raster(grid, path)
    back = load_raster(path)
    assert back.equals(grid)
