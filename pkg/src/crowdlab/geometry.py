"""Uniform grids, walkable-domain masks, and preferred-direction fields.

Everything is posed on the whole plane: walls and obstacles are encoded as
non-walkable cells whose influence enters the dynamics only through the
preferred-direction field (and through the impermeable-face convention of
the finite-volume solver). Arrays are indexed ``[ix, iy]`` with shape
``(nx, ny)``; x grows with the first index, y with the second.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid grid, mask, or field construction."""


def _lock(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered 2D grid."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise GeometryError(f"grid needs nx, ny >= 3, got {self.nx} x {self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise GeometryError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.dx, self.ny * self.dy)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) arrays of cell-center coordinates, shape (nx, ny)."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.dx,
            self.origin[1] + (iy + 0.5) * self.dy,
        )

    def contains_point(self, x: float, y: float) -> bool:
        ex, ey = self.extent
        return (
            self.origin[0] <= x <= self.origin[0] + ex
            and self.origin[1] <= y <= self.origin[1] + ey
        )


def build_grid(nx: int, ny: int, dx: float, dy: float,
               origin: tuple[float, float] = (0.0, 0.0)) -> Grid:
    """Build a uniform grid; rejects nonpositive sizes and fewer than 3 cells."""
    return Grid(int(nx), int(ny), float(dx), float(dy), (float(origin[0]), float(origin[1])))


@dataclass(frozen=True)
class DomainMask:
    """Walkable region plus exit cell sets.

    ``walkable`` is a boolean (nx, ny) array, True inside the walkable
    region. ``exits`` is a tuple of integer arrays of shape (k, 2) holding
    (ix, iy) cell indices; every exit cell must be walkable.
    """

    walkable: np.ndarray
    exits: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.walkable, dtype=bool)
        if w.ndim != 2:
            raise GeometryError("walkable mask must be 2D")
        if not w.any():
            raise GeometryError("mask has no walkable cell")
        object.__setattr__(self, "walkable", _lock(w))
        exits = []
        for e in self.exits:
            e = np.asarray(e, dtype=np.intp).reshape(-1, 2)
            if e.size and not w[e[:, 0], e[:, 1]].all():
                raise GeometryError("exit cells must be walkable")
            exits.append(_lock(e))
        object.__setattr__(self, "exits", tuple(exits))

    @property
    def shape(self) -> tuple[int, int]:
        return self.walkable.shape

    def exit_cells(self) -> np.ndarray:
        """All exit cells stacked into one (k, 2) array."""
        if not self.exits:
            return np.zeros((0, 2), dtype=np.intp)
        return np.concatenate(self.exits, axis=0)


@dataclass(frozen=True)
class VectorField:
    """Per-cell 2D vector field (u, v components, shape (nx, ny))."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != v.shape or u.ndim != 2:
            raise GeometryError("vector field components must share a 2D shape")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise GeometryError("vector field has non-finite entries")
        object.__setattr__(self, "u", _lock(u))
        object.__setattr__(self, "v", _lock(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def norm(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def max_component(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max()))


def load_walkable_bitmap(text: str) -> np.ndarray:
    """Parse a plain-text bitmap into a walkable array.

    One row per line, characters '1' (walkable) or '0' (wall), top row
    first. Returns a boolean array indexed [ix, iy] with iy increasing
    upward.
    """
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise GeometryError("empty bitmap")
    width = len(rows[0])
    grid_rows = []
    for r, line in enumerate(rows):
        line = line.strip()
        if len(line) != width:
            raise GeometryError(f"bitmap row {r} has length {len(line)}, expected {width}")
        bad = set(line) - {"0", "1"}
        if bad:
            raise GeometryError(f"bitmap row {r} has invalid characters {sorted(bad)}")
        grid_rows.append([c == "1" for c in line])
    # text rows go top-down; array iy goes bottom-up
    arr = np.array(grid_rows[::-1], dtype=bool)  # (ny, nx)
    return arr.T.copy()


_NEIGHBORS8 = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


def distance_to_exits(mask: DomainMask, grid: Grid) -> np.ndarray:
    """Multi-source Dijkstra distance to the nearest exit over walkable cells.

    8-neighbor graph with edge weights dx, dy and the diagonal
    sqrt(dx^2 + dy^2). Non-walkable cells get +inf. Raises with the list of
    disconnected cells when some walkable cell cannot reach any exit.
    """
    if mask.shape != grid.shape:
        raise GeometryError("mask and grid shapes differ")
    seeds = mask.exit_cells()
    if seeds.shape[0] == 0:
        raise GeometryError("mask has no exit cell")
    nx, ny = grid.shape
    dist = np.full((nx, ny), np.inf)
    w = mask.walkable
    step = {
        (-1, 0): grid.dx, (1, 0): grid.dx,
        (0, -1): grid.dy, (0, 1): grid.dy,
    }
    diag = math.hypot(grid.dx, grid.dy)
    heap: list[tuple[float, int, int]] = []
    for ix, iy in seeds:
        dist[ix, iy] = 0.0
        heap.append((0.0, int(ix), int(iy)))
    heapq.heapify(heap)
    while heap:
        d, ix, iy = heapq.heappop(heap)
        if d > dist[ix, iy]:
            continue
        for ox, oy in _NEIGHBORS8:
            jx, jy = ix + ox, iy + oy
            if not (0 <= jx < nx and 0 <= jy < ny) or not w[jx, jy]:
                continue
            nd = d + (diag if ox and oy else step[(ox, oy)])
            if nd < dist[jx, jy]:
                dist[jx, jy] = nd
                heapq.heappush(heap, (nd, jx, jy))
    unreachable = w & ~np.isfinite(dist)
    if unreachable.any():
        cells = np.argwhere(unreachable)
        shown = ", ".join(f"({i},{j})" for i, j in cells[:12])
        more = "" if len(cells) <= 12 else f" and {len(cells) - 12} more"
        raise GeometryError(
            f"{len(cells)} walkable cells cannot reach any exit: {shown}{more}")
    return dist


def _masked_smooth(values: np.ndarray, w: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    """Average `values` over walkable cells within `radius`, renormalizing
    the weights so walls do not contaminate the smoothed field.

    The window is a separable product of 1D bumps: truncation by a wall or
    a grid edge then leaves fields constant along the other axis unchanged.
    """
    if radius <= 0:
        return values.copy()
    ax = int(radius / grid.dx)
    ay = int(radius / grid.dy)
    if ax == 0 and ay == 0:
        return values.copy()
    filled = np.where(w, values, 0.0)
    num = np.zeros_like(values)
    den = np.zeros_like(values)
    nx, ny = values.shape
    for ox in range(-ax, ax + 1):
        wx = (1.0 - (ox * grid.dx / radius) ** 2) ** 3
        if wx <= 0.0:
            continue
        for oy in range(-ay, ay + 1):
            wy = (1.0 - (oy * grid.dy / radius) ** 2) ** 3
            if wy <= 0.0:
                continue
            wt = wx * wy
            sx = slice(max(0, -ox), min(nx, nx - ox))
            tx = slice(max(0, ox), min(nx, nx + ox))
            sy = slice(max(0, -oy), min(ny, ny - oy))
            ty = slice(max(0, oy), min(ny, ny + oy))
            num[tx, ty] += wt * filled[sx, sy]
            den[tx, ty] += wt * w[sx, sy]
    out = np.where(den > 0, num / np.maximum(den, 1e-300), values)
    return np.where(w, out, values)


def preferred_direction_field(mask: DomainMask, grid: Grid, smoothing: float = 0.0) -> VectorField:
    """Unit field descending a smoothed distance-to-exit function.

    The distance is the 8-neighbor Dijkstra distance to the exit set,
    mollified over `smoothing` with weights restricted to walkable cells.
    The direction is minus its gradient, normalized per cell. At cells
    adjacent to a wall the outward-normal component is removed so the
    field is tangent or entering (exit cells are exempt); the field is
    zero exactly on non-walkable cells.
    """
    dist = distance_to_exits(mask, grid)
    w = mask.walkable
    nx, ny = grid.shape
    sm = _masked_smooth(dist, w, grid, smoothing)

    gx = np.zeros((nx, ny))
    gy = np.zeros((nx, ny))
    # one-sided / central differences using walkable neighbors only
    d = np.where(w, sm, 0.0)
    for axis, g, h in ((0, gx, grid.dx), (1, gy, grid.dy)):
        has_p = np.zeros((nx, ny), dtype=bool)
        has_m = np.zeros((nx, ny), dtype=bool)
        vp = np.zeros((nx, ny))
        vm = np.zeros((nx, ny))
        if axis == 0:
            has_p[:-1, :] = w[1:, :]
            vp[:-1, :] = d[1:, :]
            has_m[1:, :] = w[:-1, :]
            vm[1:, :] = d[:-1, :]
        else:
            has_p[:, :-1] = w[:, 1:]
            vp[:, :-1] = d[:, 1:]
            has_m[:, 1:] = w[:, :-1]
            vm[:, 1:] = d[:, :-1]
        both = has_p & has_m
        g[both] = (vp[both] - vm[both]) / (2 * h)
        onlyp = has_p & ~has_m
        g[onlyp] = (vp[onlyp] - d[onlyp]) / h
        onlym = has_m & ~has_p
        g[onlym] = (d[onlym] - vm[onlym]) / h

    u = -gx
    v = -gy
    nrm = np.hypot(u, v)

    # fall back to the discrete descent direction where the gradient vanishes
    flat = w & (nrm < 1e-12)
    if flat.any():
        for ix, iy in np.argwhere(flat):
            best = None
            for ox, oy in _NEIGHBORS8:
                jx, jy = ix + ox, iy + oy
                if 0 <= jx < nx and 0 <= jy < ny and w[jx, jy] and dist[jx, jy] < dist[ix, iy]:
                    if best is None or dist[jx, jy] < best[0]:
                        best = (dist[jx, jy], ox * grid.dx, oy * grid.dy)
            if best is not None:
                u[ix, iy], v[ix, iy] = best[1], best[2]
                nrm[ix, iy] = math.hypot(best[1], best[2])

    ok = nrm > 1e-12
    u = np.where(ok, u / np.where(ok, nrm, 1.0), 0.0)
    v = np.where(ok, v / np.where(ok, nrm, 1.0), 0.0)

    # project to tangent-or-entering at wall-adjacent cells
    exit_mask = np.zeros((nx, ny), dtype=bool)
    ec = mask.exit_cells()
    exit_mask[ec[:, 0], ec[:, 1]] = True
    wall = ~w
    for ix, iy in np.argwhere(w & ~exit_mask):
        nxn, nyn = 0.0, 0.0
        for ox, oy in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            jx, jy = ix + ox, iy + oy
            if 0 <= jx < nx and 0 <= jy < ny and wall[jx, jy]:
                nxn -= ox
                nyn -= oy
        nn = math.hypot(nxn, nyn)
        if nn < 1e-12:
            continue
        nxn /= nn
        nyn /= nn
        dot = u[ix, iy] * nxn + v[ix, iy] * nyn
        if dot < 0:
            pu = u[ix, iy] - dot * nxn
            pv = v[ix, iy] - dot * nyn
            pn = math.hypot(pu, pv)
            if pn < 1e-12:
                # direction was purely outward: enter along the wall normal
                u[ix, iy], v[ix, iy] = nxn, nyn
            else:
                u[ix, iy], v[ix, iy] = pu / pn, pv / pn

    u[~w] = 0.0
    v[~w] = 0.0
    return VectorField(u, v)


def is_support_contained(rho, mask: DomainMask, tol: float = 0.0) -> bool:
    """True iff the density is at most `tol` on every non-walkable cell."""
    values = rho.values if hasattr(rho, "values") else np.asarray(rho, dtype=float)
    if values.shape != mask.shape:
        raise GeometryError(
            f"density shape {values.shape} does not match mask shape {mask.shape}")
    outside = values[~mask.walkable]
    return bool(outside.size == 0 or (outside <= tol).all())


def bilinear_sampler(grid: Grid, values: np.ndarray):
    """Return f(points) that bilinearly interpolates a cell-centered array.

    Points outside the grid are clamped to the nearest cell center.
    """
    values = np.asarray(values, dtype=float)
    nx, ny = values.shape

    def sample(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        fx = (pts[:, 0] - grid.origin[0]) / grid.dx - 0.5
        fy = (pts[:, 1] - grid.origin[1]) / grid.dy - 0.5
        fx = np.clip(fx, 0.0, nx - 1.0)
        fy = np.clip(fy, 0.0, ny - 1.0)
        ix = np.clip(fx.astype(int), 0, nx - 2)
        iy = np.clip(fy.astype(int), 0, ny - 2)
        tx = fx - ix
        ty = fy - iy
        out = (values[ix, iy] * (1 - tx) * (1 - ty)
               + values[ix + 1, iy] * tx * (1 - ty)
               + values[ix, iy + 1] * (1 - tx) * ty
               + values[ix + 1, iy + 1] * tx * ty)
        return out if np.asarray(points).ndim > 1 else out[0]

    return sample
