import numpy as np
import pytest

from crowdlab import (DensityField, DomainMask, GeometryError, build_grid,
                      is_support_contained, load_walkable_bitmap,
                      preferred_direction_field)
from crowdlab.geometry import bilinear_sampler, distance_to_exits


def test_build_grid_cell_centers():
    g = build_grid(3, 3, 1.0, 1.0, (0, 0))
    assert g.cell_center(0, 0) == (0.5, 0.5)


def test_build_grid_extent():
    g = build_grid(100, 50, 0.1, 0.1, (0, 0))
    assert np.allclose(g.extent, (10.0, 5.0))


@pytest.mark.parametrize("nx,ny,dx,dy", [(2, 3, 0.1, 0.1), (3, 2, 0.1, 0.1),
                                         (5, 5, 0.0, 0.1), (5, 5, 0.1, -1.0)])
def test_build_grid_rejects_bad_sizes(nx, ny, dx, dy):
    with pytest.raises(GeometryError):
        build_grid(nx, ny, dx, dy)


def test_mask_needs_walkable_cell():
    with pytest.raises(GeometryError):
        DomainMask(np.zeros((4, 4), dtype=bool))


def test_mask_exit_must_be_walkable():
    w = np.ones((4, 4), dtype=bool)
    w[0, 0] = False
    with pytest.raises(GeometryError):
        DomainMask(w, exits=[np.array([[0, 0]])])


def test_bitmap_orientation_and_errors():
    text = "111\n101\n111\n"
    w = load_walkable_bitmap(text)
    assert w.shape == (3, 3)
    assert not w[1, 1]
    assert w.sum() == 8
    # top text row maps to the highest iy
    text2 = "000\n111\n111\n"
    w2 = load_walkable_bitmap(text2)
    assert not w2[:, 2].any() and w2[:, :2].all()
    with pytest.raises(GeometryError):
        load_walkable_bitmap("11\n1\n")
    with pytest.raises(GeometryError):
        load_walkable_bitmap("1x\n11\n")


def square_room(n=20, exit_col=None):
    w = np.ones((n, n), dtype=bool)
    col = n - 1 if exit_col is None else exit_col
    exits = [np.column_stack([np.full(n, col), np.arange(n)])]
    return DomainMask(w, exits), build_grid(n, n, 0.1, 0.1)


def test_direction_field_symmetric_room_is_horizontal():
    mask, grid = square_room()
    nu = preferred_direction_field(mask, grid, smoothing=0.25)
    inner = slice(1, -1)
    assert np.allclose(nu.u[inner, :], 1.0, atol=1e-12)
    assert np.allclose(nu.v[inner, :], 0.0, atol=1e-12)


def test_direction_field_unit_norm_invariant():
    w = np.ones((20, 20), dtype=bool)
    w[:, 17:] = False      # wall band on top
    w[8:12, 5:9] = False   # interior obstacle
    mask = DomainMask(w, exits=[np.column_stack([np.full(17, 19), np.arange(17)])])
    grid = build_grid(20, 20, 0.1, 0.1)
    nu = preferred_direction_field(mask, grid, smoothing=0.2)
    n = nu.norm()
    assert np.all((n[~w] == 0.0))
    walk = n[w]
    assert np.all(np.abs(walk - 1.0) <= 1e-9)


def test_direction_field_wall_adjacent_projection():
    # wall band above the room: cells just below it must not point upward
    w = np.ones((20, 20), dtype=bool)
    w[:, 16:] = False
    mask = DomainMask(w, exits=[np.column_stack([np.full(16, 19), np.arange(16)])])
    grid = build_grid(20, 20, 0.1, 0.1)
    nu = preferred_direction_field(mask, grid, smoothing=0.2)
    assert np.all(nu.v[:, 15] <= 1e-12)


def brute_force_distances(mask, grid):
    """Bellman-Ford style relaxation to a fixed point; independent of the
    heap-based implementation."""
    w = mask.walkable
    nx, ny = w.shape
    dist = np.full((nx, ny), np.inf)
    for ix, iy in mask.exit_cells():
        dist[ix, iy] = 0.0
    diag = np.hypot(grid.dx, grid.dy)
    offsets = [(-1, 0, grid.dx), (1, 0, grid.dx), (0, -1, grid.dy), (0, 1, grid.dy),
               (1, 1, diag), (1, -1, diag), (-1, 1, diag), (-1, -1, diag)]
    changed = True
    while changed:
        changed = False
        for ix in range(nx):
            for iy in range(ny):
                if not w[ix, iy]:
                    continue
                best = dist[ix, iy]
                for ox, oy, c in offsets:
                    jx, jy = ix + ox, iy + oy
                    if 0 <= jx < nx and 0 <= jy < ny and w[jx, jy]:
                        cand = dist[jx, jy] + c
                        if cand < best - 1e-15:
                            best = cand
                            changed = True
                dist[ix, iy] = best
    return dist


def test_distance_matches_brute_force_oracle_with_obstacle():
    w = np.ones((20, 20), dtype=bool)
    w[9:11, 3:16] = False  # obstacle column forcing paths around it
    mask = DomainMask(w, exits=[np.array([[19, 10]])])
    grid = build_grid(20, 20, 0.1, 0.12)
    dist = distance_to_exits(mask, grid)
    oracle = brute_force_distances(mask, grid)
    walk = mask.walkable
    assert np.allclose(dist[walk], oracle[walk], atol=1e-12)
    # the field never points into the obstacle
    nu = preferred_direction_field(mask, grid, smoothing=0.0)
    for ix, iy in np.argwhere(walk):
        for ox, oy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            jx, jy = ix + ox, iy + oy
            if 0 <= jx < 20 and 0 <= jy < 20 and not w[jx, jy]:
                inward = np.array([-ox, -oy], dtype=float)
                inward /= np.linalg.norm(inward)
                assert nu.u[ix, iy] * inward[0] + nu.v[ix, iy] * inward[1] >= -1e-12


def test_disconnected_cells_reported():
    w = np.ones((10, 10), dtype=bool)
    w[4, :] = False  # full wall: left part cannot reach the right-edge exit
    mask = DomainMask(w, exits=[np.array([[9, 5]])])
    grid = build_grid(10, 10, 0.1, 0.1)
    with pytest.raises(GeometryError, match="cannot reach"):
        distance_to_exits(mask, grid)


def test_is_support_contained():
    mask, grid = square_room(10)
    zeros = DensityField(grid, np.zeros(grid.shape))
    assert is_support_contained(zeros, mask, tol=0.0)

    w = np.ones((10, 10), dtype=bool)
    w[0, 0] = False
    mask2 = DomainMask(w, exits=[np.array([[9, 5]])])
    vals = np.zeros(grid.shape)
    vals[0, 0] = 1.0
    assert not is_support_contained(DensityField(grid, vals), mask2, tol=1e-12)

    small = build_grid(5, 5, 0.1, 0.1)
    with pytest.raises(GeometryError):
        is_support_contained(DensityField(small, np.zeros(small.shape)), mask2)


def test_bilinear_sampler_matches_linear_function():
    grid = build_grid(12, 10, 0.25, 0.5, (1.0, -2.0))
    X, Y = grid.cell_centers()
    vals = 2.0 * X - 3.0 * Y + 0.5
    f = bilinear_sampler(grid, vals)
    pts = np.array([[1.7, -1.2], [2.4, 0.3], [3.1, 1.9]])
    assert np.allclose(f(pts), 2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 0.5, atol=1e-12)
