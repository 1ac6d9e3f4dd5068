import numpy as np
import pytest

from curbsense.signal_core import build_window_set
from curbsense.weak_supervision import (
    GridIndex,
    LocalProjection,
    ProjectionRangeError,
    assign_grid_labels,
    build_grid_index,
    grid_from_recordings,
    project_local_meters,
)

REF = LocalProjection(35.0, 139.0)
M_EAST = 111_320.0 * np.cos(np.radians(35.0))


def at(x, y):
    """lat/lon of a point x m east and y m north of REF."""
    return REF.unproject(np.atleast_1d(x), np.atleast_1d(y))


def test_projection_examples():
    assert project_local_meters(REF, 35.0, 139.0) == (0.0, 0.0)
    _, y = project_local_meters(REF, 35.0 + 1 / 111_320.0, 139.0)
    assert y == pytest.approx(1.0, abs=1e-9)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-5000, 5000, size=(2, 100))
    bx, by = REF.project(*REF.unproject(x, y))
    np.testing.assert_allclose(bx, x, atol=1e-6)
    np.testing.assert_allclose(by, y, atol=1e-6)


def test_projection_rejects_far_points():
    with pytest.raises(ProjectionRangeError):
        REF.project(35.2, 139.0)
    with pytest.raises(ValueError):
        LocalProjection(89.0, 0.0)


def test_grid_cells_and_ids():
    lat, lon = at([1.0, 3.0, 7.0, 12.0, 1.5], [1.0, 1.0, 0.0, 0.0, 1.2])
    grid = build_grid_index(lat, lon, REF)
    ids = grid.ids_of(lat, lon)
    assert ids[0] == ids[1] == ids[4]
    assert len({ids[0], ids[2], ids[3]}) == 3
    np.testing.assert_array_equal(ids, [0, 0, 1, 2, 0])
    assert grid.count == 3


def test_ids_follow_first_traversal():
    xs = [22.0, 17.0, 12.0, 7.0, 2.0]
    grid = build_grid_index(*at(xs, [1.0] * 5), REF)
    np.testing.assert_array_equal(grid.cols, [4, 3, 2, 1, 0])
    np.testing.assert_array_equal(grid.ids_of(*at(xs, [1.0] * 5)), np.arange(5))


def test_fallback_to_nearest_cell_within_10m():
    grid = build_grid_index(*at([2.0, 7.0], [2.0, 2.0]), REF)
    ids = grid.ids_of(*at([13.0, 2.0, 2.0, 30.0], [2.0, -4.0, 14.9, 2.0]))
    # 3 m beyond cell 1, 4 m below cell 0, 9.9 m above cell 0, 20 m away
    np.testing.assert_array_equal(ids, [1, 0, 0, -1])


def test_grid_text_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    lat, lon = at(rng.uniform(-100, 100, 50), rng.uniform(-100, 100, 50))
    grid = build_grid_index(lat, lon, REF)
    back = GridIndex.load(grid.save(tmp_path / "grid.txt"))
    np.testing.assert_array_equal(back.ids_of(lat, lon), grid.ids_of(lat, lon))
    assert back.to_text() == grid.to_text()


def test_stationary_windows_share_one_id(experiment):
    rec = experiment[0]
    ws, _ = build_window_set([rec])
    ws.lat[:] = ws.lat[100]
    ws.lon[:] = ws.lon[100]
    grid = grid_from_recordings([rec], REF.centered_on(rec.lat, rec.lon))
    lab = assign_grid_labels(ws, grid)
    assert lab.dropped == 0
    assert len(np.unique(lab.windows.grid_id)) == 1


def test_default_route_labels(experiment):
    train = [r for r in experiment if r.user != "U9"]
    test = [r for r in experiment if r.user == "U9"]
    grid = grid_from_recordings(train)
    # the class count equals the number of traversed cells
    rows, cols = grid.cells_of(np.concatenate([r.lat for r in train]), np.concatenate([r.lon for r in train]))
    assert grid.count == len(set(zip(rows.tolist(), cols.tolist())))
    assert 250 <= grid.count <= 450

    ws, _ = build_window_set(test)
    lab = assign_grid_labels(ws, grid)
    assert lab.dropped == 0
    g = lab.windows.grid_id
    same_rec = lab.windows.rec[1:] == lab.windows.rec[:-1]
    assert np.mean(g[1:][same_rec] == g[:-1][same_rec]) > 0.7

    # spatial coherence across laps and directions
    rows, cols = grid.cells_of(lab.windows.lat, lab.windows.lon)
    cell_to_id = {}
    for r, c, i in zip(rows.tolist(), cols.tolist(), g.tolist()):
        assert cell_to_id.setdefault((r, c), i) == i
    np.testing.assert_array_equal(assign_grid_labels(ws, grid).windows.grid_id, g)
