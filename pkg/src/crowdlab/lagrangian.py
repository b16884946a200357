"""Particle solver: ODE flow of weighted particle ensembles.

A positive measure is represented by particles (X_j, w_j); the solution is
the push-forward of the initial measure along the flow of

    dX/dt = V(X, rho_t * eta (X)),

with the convolution evaluated exactly from the particles. Weights never
change, so the represented measure is the exact push-forward and mass is
conserved to machine precision. Only the panic-type velocity laws are
meaningful here (the speed reads the averaged density, never the pointwise
one); an isolated agent coupled through a Dirac measure is simply a
one-particle population with its own kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Grid, VectorField, bilinear_sampler
from .kernels import Kernel, eval_convolution_at
from .models import ModelError, ModelSpec
from .scenario import DensityField, Scenario


class LagrangianError(ValueError):
    pass


@dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted particle set representing a positive measure."""

    positions: np.ndarray
    weights: np.ndarray
    tag: str = ""

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pos.shape[0] != w.shape[0]:
            raise LagrangianError("positions and weights disagree on particle count")
        if not (np.isfinite(pos).all() and np.isfinite(w).all()):
            raise LagrangianError("non-finite particle data")
        if (w <= 0).any():
            raise LagrangianError("particle weights must be positive")
        pos = pos.copy()
        w = w.copy()
        pos.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def moved_to(self, positions: np.ndarray) -> "ParticleEnsemble":
        return ParticleEnsemble(positions, self.weights, self.tag)


def sample_particles(rho0, n: int, tag: str = "") -> ParticleEnsemble:
    """Deterministic stratified sampling of a density field or atom list.

    For a DensityField the occupied bounding box is partitioned into square
    cell blocks sized so at most `n` blocks are occupied; each occupied
    block contributes one particle at its center of mass carrying the block
    mass. A sequence of (position, weight) atoms is taken verbatim.
    """
    if n < 1:
        raise LagrangianError("need at least one particle")
    if not isinstance(rho0, DensityField):
        atoms = list(rho0)
        if not atoms:
            raise LagrangianError("empty atom list")
        pos = np.array([a[0] for a in atoms], dtype=float)
        w = np.array([a[1] for a in atoms], dtype=float)
        return ParticleEnsemble(pos, w, tag)

    grid = rho0.grid
    vals = rho0.values
    occ = np.argwhere(vals > 0.0)
    if occ.size == 0:
        raise LagrangianError("cannot sample particles from a zero density")
    lo = occ.min(axis=0)
    hi = occ.max(axis=0) + 1
    w_cells = hi[0] - lo[0]
    h_cells = hi[1] - lo[1]
    side = max(1, int(math.floor(math.sqrt(n))))
    block = max(1, int(math.ceil(max(w_cells, h_cells) / side)))

    X, Y = grid.cell_centers()
    m = vals * grid.cell_area
    positions = []
    weights = []
    for bx in range(lo[0], hi[0], block):
        for by in range(lo[1], hi[1], block):
            sl = (slice(bx, min(bx + block, hi[0])), slice(by, min(by + block, hi[1])))
            bm = m[sl].sum()
            if bm <= 0.0:
                continue
            positions.append(((X[sl] * m[sl]).sum() / bm, ((Y[sl] * m[sl]).sum() / bm)))
            weights.append(bm)
    return ParticleEnsemble(np.array(positions), np.array(weights), tag)


def push_forward(p: ParticleEnsemble, transform: Callable[[np.ndarray], np.ndarray]
                 ) -> ParticleEnsemble:
    """Image measure under a map: positions move, weights are kept."""
    new_pos = np.asarray(transform(p.positions), dtype=float)
    if new_pos.shape != p.positions.shape:
        raise LagrangianError("transform must map (n, 2) positions to (n, 2)")
    return p.moved_to(new_pos)


def rasterize(p: ParticleEnsemble, grid: Grid) -> DensityField:
    """Mass-conserving cell binning (no smoothing) for visualization and
    for comparisons against grid solutions."""
    ix = np.floor((p.positions[:, 0] - grid.origin[0]) / grid.dx).astype(int)
    iy = np.floor((p.positions[:, 1] - grid.origin[1]) / grid.dy).astype(int)
    if (ix < 0).any() or (iy < 0).any() or (ix >= grid.nx).any() or (iy >= grid.ny).any():
        raise LagrangianError("particles outside the rasterization grid")
    vals = np.zeros(grid.shape)
    np.add.at(vals, (ix, iy), p.weights / grid.cell_area)
    return DensityField(grid, vals)


def nu_function(nu, grid: Grid | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Make a pointwise direction evaluator from a VectorField or callable."""
    if callable(nu):
        return nu
    if grid is None:
        raise LagrangianError("need a grid to interpolate a VectorField")
    fu = bilinear_sampler(grid, nu.u)
    fv = bilinear_sampler(grid, nu.v)

    def f(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.column_stack([fu(pts), fv(pts)])

    return f


def _total_convolution(model: ModelSpec, sources: Sequence[ParticleEnsemble],
                       points: np.ndarray) -> np.ndarray:
    total = np.zeros(np.atleast_2d(points).shape[0])
    for src, kern in zip(sources, model.kernels):
        total = total + eval_convolution_at(src, kern, points)
    return total


def particle_velocities(model: ModelSpec, nu_fns, ensembles: Sequence[ParticleEnsemble],
                        sources: Sequence[ParticleEnsemble] | None = None
                        ) -> list[np.ndarray]:
    """Velocity of every particle of every population.

    ``sources`` are the ensembles generating the convolution (defaults to
    the ensembles themselves; pass a frozen driver to realize one stage of
    the fixed-point map).
    """
    if model.kind not in ("panic", "multi_panic"):
        raise ModelError(
            f"the particle solver covers panic-type models only, got {model.kind!r}")
    if sources is None:
        sources = ensembles
    out = []
    for i, ens in enumerate(ensembles):
        conv = _total_convolution(model, sources, ens.positions)
        speed = model.laws[i](conv)
        out.append(speed[:, None] * np.atleast_2d(nu_fns[i](ens.positions)))
    return out


def lagrangian_step(ensembles: Sequence[ParticleEnsemble], model: ModelSpec,
                    nu_fns, dt: float, t: float = 0.0,
                    driver: Callable[[float], Sequence[ParticleEnsemble]] | None = None
                    ) -> list[ParticleEnsemble]:
    """One RK4 step of the coupled particle system; weights unchanged.

    Without a driver the convolution is re-evaluated from the stage
    positions (the self-consistent nonlinear system). With a driver the
    convolution sources are the driver's ensembles at the stage times.
    """
    if dt <= 0:
        raise LagrangianError("dt must be positive")
    pos0 = [e.positions for e in ensembles]

    def rhs(stage_pos: list[np.ndarray], tau: float) -> list[np.ndarray]:
        staged = [e.moved_to(p) for e, p in zip(ensembles, stage_pos)]
        sources = driver(tau) if driver is not None else staged
        return particle_velocities(model, nu_fns, staged, sources)

    k1 = rhs(pos0, t)
    k2 = rhs([p + 0.5 * dt * k for p, k in zip(pos0, k1)], t + 0.5 * dt)
    k3 = rhs([p + 0.5 * dt * k for p, k in zip(pos0, k2)], t + 0.5 * dt)
    k4 = rhs([p + dt * k for p, k in zip(pos0, k3)], t + dt)
    out = []
    for e, p, a, b, c, d in zip(ensembles, pos0, k1, k2, k3, k4):
        new_pos = p + dt / 6.0 * (a + 2 * b + 2 * c + d)
        if not np.isfinite(new_pos).all():
            raise LagrangianError("particle positions became non-finite")
        out.append(e.moved_to(new_pos))
    return out


@dataclass(frozen=True)
class LagrangianConfig:
    t_end: float
    dt: float | None = None
    n_particles: int = 4096
    store_stride: int = 1

    def __post_init__(self):
        if self.t_end <= 0:
            raise LagrangianError("t_end must be positive")
        if self.dt is not None and self.dt <= 0:
            raise LagrangianError("dt must be positive")


@dataclass
class LagrangianTrajectory:
    times: list[float] = field(default_factory=list)
    frames: list[list[ParticleEnsemble]] = field(default_factory=list)
    dt: float = 0.0

    def final(self, pop: int = 0) -> ParticleEnsemble:
        return self.frames[-1][pop]

    def masses(self) -> list[list[float]]:
        return [[e.mass for e in frame] for frame in self.frames]


def default_dt(model: ModelSpec, nu_sup: float = 1.0) -> float:
    """dt = 0.1 min_i R_i / |V_i|_inf: particles cross at most a tenth of a
    kernel radius per step, keeping the RK4 stages well inside the
    convolution's smoothness scale."""
    return min(0.1 * k.radius / max(l.sup * nu_sup, 1e-12)
               for k, l in zip(model.kernels, model.laws))


def run_lagrangian(scenario: Scenario | None, model: ModelSpec, cfg: LagrangianConfig,
                   ensembles: Sequence[ParticleEnsemble] | None = None,
                   nu_fns=None,
                   driver: Callable[[float], Sequence[ParticleEnsemble]] | None = None
                   ) -> LagrangianTrajectory:
    """Advance the particle system to t_end.

    Initial ensembles default to stratified samples of the scenario's
    densities; direction evaluators default to bilinear interpolation of
    the scenario's fields. Same inputs give bitwise identical trajectories.
    """
    for law in model.laws:
        if not (math.isfinite(law.lip) and math.isfinite(law.sup)):
            raise LagrangianError("speed law must report finite Lipschitz constants")
    if ensembles is None:
        if scenario is None:
            raise LagrangianError("need a scenario or explicit ensembles")
        ensembles = [sample_particles(r, cfg.n_particles, tag=str(i))
                     for i, r in enumerate(scenario.rho0)]
    ensembles = list(ensembles)
    if len(ensembles) != model.populations:
        raise LagrangianError("one ensemble per population required")
    if nu_fns is None:
        if scenario is None:
            raise LagrangianError("need a scenario or explicit direction evaluators")
        nu_fns = [nu_function(f, scenario.grid) for f in scenario.nu]

    nu_sup = 1.0
    for f, e in zip(nu_fns, ensembles):
        v = np.atleast_2d(f(e.positions))
        nu_sup = max(nu_sup, float(np.hypot(v[:, 0], v[:, 1]).max()))
    dt = cfg.dt if cfg.dt is not None else default_dt(model, nu_sup)

    traj = LagrangianTrajectory(dt=dt)
    traj.times.append(0.0)
    traj.frames.append(list(ensembles))
    t = 0.0
    step_idx = 0
    while t < cfg.t_end - 1e-12:
        h = min(dt, cfg.t_end - t)
        ensembles = lagrangian_step(ensembles, model, nu_fns, h, t, driver=driver)
        t = cfg.t_end if cfg.t_end - (t + h) < 1e-12 else t + h
        step_idx += 1
        if step_idx % cfg.store_stride == 0 or t >= cfg.t_end - 1e-12:
            traj.times.append(t)
            traj.frames.append(list(ensembles))
    return traj
