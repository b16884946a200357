import numpy as np
import pytest

from crowdlab import (DensityField, DomainMask, Grid, Scenario, VectorField,
                      build_grid)


def bump_values(grid: Grid, center, radius, amplitude=1.0) -> np.ndarray:
    """C^2 compactly supported bump A (1 - |x-c|^2/r^2)_+^3 on cell centers."""
    X, Y = grid.cell_centers()
    s = 1.0 - ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius ** 2
    return amplitude * np.where(s > 0.0, s, 0.0) ** 3


def open_scenario(nx=64, ny=64, dx=None, extent=4.0, blobs=((2.0, 2.0, 0.9, 0.8),),
                  nu_dir=(1.0, 0.0), name="open", pops=1) -> Scenario:
    """All-walkable square box with a uniform direction field and bump data."""
    dx = dx if dx is not None else extent / nx
    grid = build_grid(nx, ny, dx, dx, (0.0, 0.0))
    mask = DomainMask(np.ones(grid.shape, dtype=bool),
                      exits=[np.array([[nx - 1, ny // 2]])])
    nu = VectorField(np.full(grid.shape, nu_dir[0]), np.full(grid.shape, nu_dir[1]))
    vals = np.zeros(grid.shape)
    for cx, cy, r, a in blobs:
        vals += bump_values(grid, (cx, cy), r, a)
    rho0 = DensityField(grid, vals)
    return Scenario(name=name, grid=grid, mask=mask, nu=(nu,) * pops,
                    rho0=(rho0,) * pops, property_p=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
