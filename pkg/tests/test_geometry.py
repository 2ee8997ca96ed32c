import numpy as np
import pytest

from po4dop.geometry import (APHOTIC, BOTTOM_APHOTIC, BOTTOM_EUPHOTIC, EUPHOTIC, SURFACE, GridConfig, GridError,
                             build_grid, cell_zone, euphotic_depth, grid_from_depths, ramp_depths,
                             read_bathymetry, write_bathymetry)


def test_single_column_at_euphotic_depth():
    g = grid_from_depths([[100]], 10.0, 10.0, 10.0, 100.0)
    assert g.ncells == 10
    assert g.euphotic.all()
    bottom = g.facet_kind[g.facet_kind != SURFACE]
    assert list(bottom) == [BOTTOM_EUPHOTIC]


def test_deep_column_splits_zones():
    g = grid_from_depths([[150]], 10.0, 10.0, 10.0, 100.0)
    assert g.ncells == 15
    assert g.euphotic.sum() == 10
    assert list(g.facet_kind[g.facet_kind != SURFACE]) == [BOTTOM_APHOTIC]


def test_two_columns_partition():
    g = grid_from_depths([[50], [150]], 10.0, 10.0, 10.0, 100.0)
    assert list(g.col_nlayers) == [5, 15]
    assert g.euphotic[g.column_cells(0)].all()
    assert g.euphotic[g.column_cells(1)].sum() == 10
    kinds = {int(g.facet_col[f]): int(g.facet_kind[f]) for f in range(g.nfacets) if g.facet_kind[f] != SURFACE}
    assert kinds == {0: BOTTOM_EUPHOTIC, 1: BOTTOM_APHOTIC}


@pytest.mark.parametrize("depth,expected", [(200, 100), (50, 50), (100, 100)])
def test_euphotic_depth_min_rule(depth, expected):
    g = grid_from_depths([[depth]], 10.0, 10.0, 10.0, 100.0)
    assert euphotic_depth(g, 0) == expected


def test_cell_zone_by_center():
    g = grid_from_depths([[150]], 10.0, 10.0, 10.0, 100.0)
    zone = {float(z): cell_zone(g, c) for c, z in enumerate(g.z_center)}
    assert zone[45.0] == EUPHOTIC
    assert zone[95.0] == EUPHOTIC
    assert zone[105.0] == APHOTIC


def test_non_multiple_depth_names_column():
    with pytest.raises(GridError, match=r"\(1, 0\)|column"):
        grid_from_depths([[100], [105]], 10.0, 10.0, 10.0, 100.0)


def test_all_dry_rejected():
    with pytest.raises(GridError):
        grid_from_depths([[0, 0]], 10.0, 10.0, 10.0, 100.0)


def test_dry_column_queries_rejected():
    g = grid_from_depths([[0], [50]], 10.0, 10.0, 10.0, 100.0)
    assert g.ncols == 1
    with pytest.raises(GridError):
        euphotic_depth(g, 1)
    with pytest.raises(GridError):
        cell_zone(g, g.ncells)


def test_measures_consistent(small_grid):
    g = small_grid
    assert np.allclose(g.volume, g.dx * g.dy * g.dz)
    # every column has exactly one surface and one bottom facet of full area
    assert g.nfacets == 2 * g.ncols
    assert np.allclose(g.facet_area, g.dx * g.dy)
    assert np.isclose(g.volume.sum(), np.sum(g.col_depth) * g.dx * g.dy)
    assert np.all(g.face_dist > 0)
    assert np.all(g.face_a < g.ncells) and np.all(g.face_b < g.ncells)


def test_index_round_trip(small_grid):
    g = small_grid
    cells = np.arange(g.ncells)
    assert np.array_equal(g.index[g.cell_i, g.cell_j, g.cell_k], cells)
    assert np.sum(g.index >= 0) == g.ncells


def test_ramp_depths_span():
    d = ramp_depths(8, 8, 10.0, 50.0, 150.0)
    assert d.min() == 50.0 and d.max() == 150.0
    assert np.allclose(d % 10.0, 0.0)


def test_bathymetry_round_trip(tmp_path, small_grid):
    cfg = GridConfig(3, 2, 100.0, 80.0, 10.0, 100.0, np.array([[50, 100], [150, 200], [100, 150]], float))
    p = tmp_path / "bathy.csv"
    write_bathymetry(p, cfg)
    back = read_bathymetry(p)
    assert np.array_equal(back.depth, cfg.depth)
    assert build_grid(back).ncells == small_grid.ncells


def test_bad_bathymetry_file(tmp_path):
    p = tmp_path / "bathy.txt"
    p.write_text("2 1 10 10 10 100\n50 abc\n")
    with pytest.raises(GridError):
        read_bathymetry(p)
    p.write_text("2 1 10 10 10\n50 50\n")
    with pytest.raises(GridError, match="header"):
        read_bathymetry(p)
