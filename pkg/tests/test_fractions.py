import numpy as np
import pytest
from hypothesis import given, strategies as st

from woodycover.fractions import (AggregationError, ClassLegend, LabelMap, aggregate_fractions,
                                  assign_fine_cells, coarse_grid_for, default_legend, merge_class,
                                  read_samples_csv, write_samples_csv)
from woodycover.raster import GridGeometry, RasterGrid

from oracles import _axis_assignment


def label_map(values, geom, valid=None, legend=None):
    legend = legend or default_legend()
    return LabelMap(RasterGrid(geom, np.asarray(values, dtype=np.uint8)[None], valid, dtype="u8"), legend)


def test_default_legend():
    lg = default_legend()
    assert len(lg) == 6
    assert lg.woody_targets == ["Grewia flava", "Senegalia mellifera", "Vachellia genus"]
    assert lg.names[3:] == ["Grass", "Soil", "Shadow"]


def test_exact_nesting():
    fine = GridGeometry(0.0, 2.0, 0.5, 0.5, 4, 4)
    coarse = GridGeometry(0.0, 2.0, 1.0, 1.0, 2, 2)
    idx = assign_fine_cells(fine, coarse)
    assert np.array_equal(np.bincount(idx.ravel()), [4, 4, 4, 4])


def test_center_on_boundary_goes_right_and_down():
    # fine centres at x = 0.5, 1.5, ... ; coarse edges at 1.5 -> centre 1.5 belongs to the right cell
    fine = GridGeometry(0.0, 4.0, 1.0, 1.0, 4, 4)
    coarse = GridGeometry(-0.5, 3.5, 2.0, 2.0, 2, 2)
    idx = assign_fine_cells(fine, coarse)
    # column centres 0.5, 1.5, 2.5, 3.5; coarse columns [-0.5, 1.5), [1.5, 3.5)
    assert idx[1].tolist() == [0, 1, 1, -1]
    # row centres 3.5, 2.5, 1.5, 0.5; coarse rows (1.5, 3.5], (-0.5, 1.5] -> 3.5 is in row 0 (top inclusive)
    assert (idx[:, 1] // 2).tolist() == [0, 0, 1, 1]


def test_assignment_matches_point_in_rectangle(rng):
    for _ in range(20):
        fine = GridGeometry(rng.integers(-40, 40) / 8, rng.integers(-40, 40) / 8, 0.25, 0.25,
                            int(rng.integers(3, 25)), int(rng.integers(3, 25)))
        coarse = GridGeometry(rng.integers(-40, 40) / 8, rng.integers(-40, 40) / 8, 1.0, 1.0,
                              int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        idx = assign_fine_cells(fine, coarse)
        cols = _axis_assignment(fine.origin_x, fine.pixel_size_x, fine.n_cols, coarse.origin_x,
                                coarse.pixel_size_x, coarse.n_cols, False)
        rows = _axis_assignment(fine.origin_y, fine.pixel_size_y, fine.n_rows, coarse.origin_y,
                                coarse.pixel_size_y, coarse.n_rows, True)
        for i in range(fine.n_rows):
            for j in range(fine.n_cols):
                want = rows[i] * coarse.n_cols + cols[j] if rows[i] >= 0 and cols[j] >= 0 else -1
                assert idx[i, j] == want


def test_uniform_species():
    fine = GridGeometry(0, 60, 1, 1, 60, 60)
    s = aggregate_fractions(label_map(np.full((60, 60), 2), fine), coarse_grid_for(fine, 30))
    assert len(s) == 4
    assert np.all(s.fraction_of("Senegalia mellifera") == 1.0)
    assert np.all(s.fractions.sum(axis=1) == 1.0)


def test_half_grass_half_soil():
    fine = GridGeometry(0, 4, 1, 1, 4, 4)
    vals = np.where(np.arange(4)[None, :] < 2, 4, 5).repeat(4, axis=0)
    s = aggregate_fractions(label_map(vals, fine), GridGeometry(0, 4, 4, 4, 1, 1))
    assert s.fraction_of("Grass")[0] == 0.5 and s.fraction_of("Soil")[0] == 0.5
    assert all(s.fraction_of(n)[0] == 0 for n in default_legend().woody_targets)


def test_theta_threshold():
    fine = GridGeometry(0, 10, 1, 1, 10, 20)
    valid = np.ones((10, 20), dtype=bool)
    valid[:9, :10] = False  # 90 % of the left coarse cell invalid
    s = aggregate_fractions(label_map(np.full((10, 20), 4), fine, valid), GridGeometry(0, 10, 10, 10, 1, 2))
    assert s.cols.tolist() == [1]
    s = aggregate_fractions(label_map(np.full((10, 20), 4), fine, valid), GridGeometry(0, 10, 10, 10, 1, 2),
                            theta=0.1)
    assert s.cols.tolist() == [0, 1]
    assert s.valid_fine_count.tolist() == [10, 100] and s.total_fine_count.tolist() == [100, 100]


def test_partial_mosaic_counts_against_coverage():
    fine = GridGeometry(0, 10, 1, 1, 10, 5)  # covers only half of the coarse cell
    s = aggregate_fractions(label_map(np.full((10, 5), 4), fine), GridGeometry(0, 10, 10, 10, 1, 1), theta=0.4)
    assert s.total_fine_count.tolist() == [100] and s.valid_fine_count.tolist() == [50]


def test_errors():
    fine = GridGeometry(0, 4, 1, 1, 4, 4)
    vals = np.full((4, 4), 4)
    vals[2, 3] = 9
    with pytest.raises(AggregationError, match=r"9.*row 2, col 3"):
        aggregate_fractions(label_map(vals, fine), GridGeometry(0, 4, 2, 2, 2, 2))
    with pytest.raises(AggregationError, match="intersect"):
        aggregate_fractions(label_map(np.full((4, 4), 4), fine), GridGeometry(100, 4, 2, 2, 2, 2))
    with pytest.raises(AggregationError):
        aggregate_fractions(label_map(np.full((4, 4), 4), fine), GridGeometry(0, 4, 2, 2, 2, 2), theta=0)


def test_merge_shadow():
    fine = GridGeometry(0, 2, 1, 1, 2, 2)
    lm = merge_class(label_map([[6, 6], [4, 1]], fine), "Shadow", "Grass")
    s = aggregate_fractions(lm, GridGeometry(0, 2, 2, 2, 1, 1))
    assert s.fraction_of("Shadow")[0] == 0 and s.fraction_of("Grass")[0] == 0.75


def test_csv_roundtrip(tmp_path, rng):
    fine = GridGeometry(3.0, 97.0, 1, 1, 50, 70)
    s = aggregate_fractions(label_map(rng.integers(1, 7, (50, 70)), fine), coarse_grid_for(fine, 30), theta=0.3)
    write_samples_csv(s, tmp_path / "s.csv")
    header = (tmp_path / "s.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["coarse_row", "coarse_col", "center_x", "center_y"]
    assert header[-2:] == ["valid_fine_count", "total_fine_count"]
    assert read_samples_csv(tmp_path / "s.csv").equals(s)


def test_legend_roundtrip(tmp_path):
    lg = ClassLegend([(1, "A", True), (7, "B", False)])
    lg.save(tmp_path / "l.json")
    assert ClassLegend.load(tmp_path / "l.json") == lg


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_sum_to_one_and_split_additivity(seed, fr, fc):
    rng = np.random.default_rng(seed)
    ratio = int(rng.integers(2, 6))
    fine = GridGeometry(rng.integers(-8, 8) / 4, rng.integers(-8, 8) / 4, 1.0, 1.0, fr * ratio + 1, fc * ratio + 2)
    valid = rng.random(fine.shape) > 0.2
    vals = rng.integers(1, 7, fine.shape)
    coarse = GridGeometry(0.0, 0.0, float(ratio), float(ratio), fr, fc)
    try:
        s = aggregate_fractions(label_map(vals, fine, valid), coarse, theta=0.05)
    except AggregationError:
        return
    assert np.all(np.abs(s.fractions.sum(axis=1) - 1) <= 1e-9)
    assert np.all((s.fractions >= 0) & (s.fractions <= 1))
    # counts merge by coarse index: the two halves of the mosaic, aggregated separately, add up
    half = fine.n_cols // 2
    left = GridGeometry(fine.origin_x, fine.origin_y, 1.0, 1.0, fine.n_rows, half)
    right = GridGeometry(fine.origin_x + half, fine.origin_y, 1.0, 1.0, fine.n_rows, fine.n_cols - half)
    total = np.zeros((fr * fc, 6))
    for g, sl in ((left, slice(0, half)), (right, slice(half, None))):
        if not valid[:, sl].any():
            continue
        try:
            part = aggregate_fractions(label_map(vals[:, sl], g, valid[:, sl]), coarse, theta=1e-12)
        except AggregationError:
            continue
        total[part.rows * fc + part.cols] += np.rint(part.fractions * part.valid_fine_count[:, None])
    whole = np.rint(s.fractions * s.valid_fine_count[:, None])
    assert np.array_equal(total[s.rows * fc + s.cols], whole)


@given(st.integers(0, 2 ** 32 - 1))
def test_resolution_doubling(seed):
    rng = np.random.default_rng(seed)
    coarse = GridGeometry(0, 12, 4, 4, 3, 3)
    per_cell = rng.integers(1, 7, (3, 3))
    fine1 = GridGeometry(0, 12, 1, 1, 12, 12)
    fine2 = GridGeometry(0, 12, 0.5, 0.5, 24, 24)
    a = aggregate_fractions(label_map(per_cell.repeat(4, 0).repeat(4, 1), fine1), coarse)
    b = aggregate_fractions(label_map(per_cell.repeat(8, 0).repeat(8, 1), fine2), coarse)
    assert np.array_equal(a.fractions, b.fractions)
