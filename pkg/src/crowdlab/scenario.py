"""Scenario bundle shared by the Eulerian and Lagrangian solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainMask, Grid, GeometryError, VectorField


@dataclass(frozen=True)
class DensityField:
    """Cell-averaged nonnegative density on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GeometryError(
                f"density shape {v.shape} does not match grid {self.grid.shape}")
        if not np.isfinite(v).all():
            raise GeometryError("density has non-finite entries")
        if v.min() < -1e-12:
            raise GeometryError(f"density has negative entries (min {v.min()!r})")
        v = np.maximum(v, 0.0)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    @property
    def sup(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class Scenario:
    """Geometry, preferred directions, and initial data for one run.

    ``room`` optionally marks the sub-region whose remaining mass defines
    the evacuation fraction (defaults to the whole walkable set).
    ``property_p`` declares that the run must keep its support inside the
    walkable region on every frame.
    """

    name: str
    grid: Grid
    mask: DomainMask
    nu: tuple[VectorField, ...]
    rho0: tuple[DensityField, ...]
    room: np.ndarray | None = None
    property_p: bool = True
    rho_display: float = 1.0

    def __post_init__(self):
        if len(self.nu) != len(self.rho0) or not self.nu:
            raise GeometryError("need one direction field and one initial density per population")
        for f in self.nu:
            if f.shape != self.grid.shape:
                raise GeometryError("direction field shape does not match grid")
        for r in self.rho0:
            if r.grid.shape != self.grid.shape:
                raise GeometryError("initial density shape does not match grid")
        if self.mask.shape != self.grid.shape:
            raise GeometryError("mask shape does not match grid")
        if self.room is not None:
            room = np.asarray(self.room, dtype=bool)
            if room.shape != self.grid.shape:
                raise GeometryError("room region shape does not match grid")
            room.flags.writeable = False
            object.__setattr__(self, "room", room)

    @property
    def populations(self) -> int:
        return len(self.rho0)

    def room_region(self) -> np.ndarray:
        return self.room if self.room is not None else self.mask.walkable
