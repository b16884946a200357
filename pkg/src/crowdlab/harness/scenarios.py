"""Scenario presets.

The literature the models come from shows these configurations only as
figures; grid sizes, kernel radii, and speed ceilings are not published, so
every preset here documents its own choices and the reproductions are
qualitative. All presets seal the domain with wall cells so the support
stays inside the grid by construction.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..fv_solver import SolverConfig
from ..geometry import DomainMask, Grid, VectorField, build_grid, preferred_direction_field
from ..kernels import make_mollifier
from ..models import AgentSpec, ModelSpec, SpeedLaw
from ..scenario import DensityField, Scenario
from .config import ConfigError, RunConfig

SCENARIO_NAMES = ("corridor", "evacuation", "braess", "braess_empty",
                  "crossing", "retraction", "leader", "dogs", "predator",
                  "custom")


def _cells(grid: Grid, x0, x1, y0, y1):
    """Index slices covering the closed coordinate box [x0,x1]x[y0,y1]."""
    ix0 = max(0, int(round((x0 - grid.origin[0]) / grid.dx)))
    ix1 = min(grid.nx, int(round((x1 - grid.origin[0]) / grid.dx)))
    iy0 = max(0, int(round((y0 - grid.origin[1]) / grid.dy)))
    iy1 = min(grid.ny, int(round((y1 - grid.origin[1]) / grid.dy)))
    return slice(ix0, ix1), slice(iy0, iy1)


def _smooth_block(grid: Grid, x0, x1, y0, y1, amplitude, ramp=0.2):
    """Block profile with C^1 cosine ramps of width `ramp` on each side."""
    X, Y = grid.cell_centers()

    def ramp1(u, a, b):
        up = np.clip((u - a) / ramp, 0.0, 1.0)
        dn = np.clip((b - u) / ramp, 0.0, 1.0)
        return (0.5 - 0.5 * np.cos(np.pi * up)) * (0.5 - 0.5 * np.cos(np.pi * dn))

    return amplitude * ramp1(X, x0, x1) * ramp1(Y, y0, y1)


def _transverse_noise(grid: Grid, seed: int, amplitude=0.05, modes=(2, 3, 5, 7)):
    """Deterministic multi-mode modulation that breaks transverse symmetry
    so lane formation does not hinge on roundoff."""
    rng = np.random.default_rng(seed)
    X, Y = grid.cell_centers()
    Ly = grid.extent[1]
    out = np.zeros(grid.shape)
    for m in modes:
        phase = rng.uniform(0, 2 * np.pi)
        weight = rng.uniform(0.4, 1.0)
        out += weight * np.cos(2 * np.pi * m * Y / Ly + phase)
    out *= amplitude / max(np.abs(out).max(), 1e-12)
    return 1.0 + out


def _sealed_mask(grid: Grid, wall_cells: int) -> np.ndarray:
    w = np.zeros(grid.shape, dtype=bool)
    w[wall_cells:-wall_cells, wall_cells:-wall_cells] = True
    return w


def _exit_band(ix, iy_range):
    iy = np.arange(iy_range[0], iy_range[1])
    return np.column_stack([np.full(iy.size, ix), iy])


def _corridor(seed: int):
    # 10 m x 3 m at dx = 0.05, ceiling speed 2 m/s. The averaging radius
    # sets the lane spacing; 0.9 m reproduces the 3-to-5 lane pattern of
    # the reference figures (smaller radii give kernel-scale micro-lanes).
    grid = build_grid(200, 60, 0.05, 0.05)
    walk = _sealed_mask(grid, 3)
    exits = [_exit_band(grid.nx - 4, (3, grid.ny - 3))]
    mask = DomainMask(walk, exits)
    nu = preferred_direction_field(mask, grid, smoothing=0.2)
    rho = _smooth_block(grid, 0.5, 3.6, 0.35, 2.65, 0.65)
    rho *= _transverse_noise(grid, seed)
    rho[~walk] = 0.0
    scen = Scenario("corridor", grid, mask, (nu,),
                    (DensityField(grid, np.clip(rho, 0.0, 1.0)),),
                    rho_display=1.0)
    model = ModelSpec("orderly", (SpeedLaw("lwr_orderly", v_max=2.0),),
                      (make_mollifier(0.9),), deviation=1.0)
    cfg = SolverConfig(t_end=7.557, frame_stride=40,
                       snap_times=(2.529, 5.043, 7.557))
    return scen, model, cfg


def _room_geometry(columns: bool):
    """Square room with a door on the right and an open area beyond it."""
    grid = build_grid(120, 70, 0.1, 0.1)
    walk = _sealed_mask(grid, 2)
    # room wall at x = 6.0 with a door gap y in [2.8, 4.2]
    sx, sy = _cells(grid, 6.0, 6.3, 0.2, 6.8)
    walk[sx, sy] = False
    dx_door, dy_door = _cells(grid, 6.0, 6.3, 2.8, 4.2)
    walk[dx_door, dy_door] = True
    if columns:
        # four columns staggered in front of the door to direct the flow
        for cy in (2.35, 3.15, 3.85, 4.65):
            cxs, cys = _cells(grid, 5.1, 5.4, cy - 0.15, cy + 0.15)
            walk[cxs, cys] = False
    exits = [_exit_band(grid.nx - 3, (2, grid.ny - 2))]
    mask = DomainMask(walk, exits)
    nu = preferred_direction_field(mask, grid, smoothing=0.25)
    room = np.zeros(grid.shape, dtype=bool)
    rx, ry = _cells(grid, 0.2, 6.0, 0.2, 6.8)
    room[rx, ry] = True
    return grid, mask, nu, room


def _evacuation(seed: int):
    grid, mask, nu, room = _room_geometry(columns=False)
    rho = _smooth_block(grid, 0.8, 4.6, 1.2, 5.8, 0.85)
    rho *= _transverse_noise(grid, seed, amplitude=0.03)
    rho[~mask.walkable] = 0.0
    scen = Scenario("evacuation", grid, mask, (nu,),
                    (DensityField(grid, np.clip(rho, 0.0, 1.0)),),
                    room=room, rho_display=1.0)
    model = ModelSpec("orderly", (SpeedLaw("lwr_orderly", v_max=2.0),),
                      (make_mollifier(0.4),), deviation=1.0)
    cfg = SolverConfig(t_end=5.0, frame_stride=40)
    return scen, model, cfg


def _braess(seed: int, columns: bool):
    grid, mask, nu, room = _room_geometry(columns=columns)
    rho = _smooth_block(grid, 1.0, 3.6, 2.1, 4.9, 0.75)
    rho *= _transverse_noise(grid, seed, amplitude=0.03)
    rho[~mask.walkable] = 0.0
    name = "braess" if columns else "braess_empty"
    scen = Scenario(name, grid, mask, (nu,),
                    (DensityField(grid, np.clip(rho, 0.0, 1.0)),),
                    room=room, rho_display=1.0)
    model = ModelSpec("orderly", (SpeedLaw("lwr_orderly", v_max=2.0),),
                      (make_mollifier(0.4),), deviation=0.2)
    cfg = SolverConfig(t_end=12.0, frame_stride=40, snap_times=(4.438, 6.253, 11.396))
    return scen, model, cfg


def _crossing(seed: int):
    # two populations walking against each other in a corridor
    grid = build_grid(160, 60, 0.05, 0.05)
    walk = _sealed_mask(grid, 3)
    right = [_exit_band(grid.nx - 4, (3, grid.ny - 3))]
    left = [_exit_band(3, (3, grid.ny - 3))]
    mask = DomainMask(walk, exits=right + left)
    mask_r = DomainMask(walk, exits=right)
    mask_l = DomainMask(walk, exits=left)
    nu1 = preferred_direction_field(mask_r, grid, smoothing=0.2)
    nu2 = preferred_direction_field(mask_l, grid, smoothing=0.2)
    r1 = _smooth_block(grid, 0.4, 3.2, 0.35, 2.65, 0.55)
    r2 = _smooth_block(grid, 4.8, 7.6, 0.35, 2.65, 0.55)
    noise = _transverse_noise(grid, seed, amplitude=0.04)
    r1 *= noise
    r2 *= noise[::-1, :]
    for r in (r1, r2):
        r[~walk] = 0.0
    scen = Scenario("crossing", grid, mask, (nu1, nu2),
                    (DensityField(grid, np.clip(r1, 0, 1)),
                     DensityField(grid, np.clip(r2, 0, 1))),
                    rho_display=1.0)
    law = SpeedLaw("lwr_orderly", v_max=2.0)
    model = ModelSpec("multi_orderly", (law, law),
                      (make_mollifier(0.3), make_mollifier(0.3)),
                      eps_self=0.3, eps_other=0.7)
    cfg = SolverConfig(t_end=4.0, frame_stride=40)
    return scen, model, cfg


def _retraction(seed: int):
    # both populations start mixed in the same region; the first walks to
    # the right exit, the second only moves to give way
    grid = build_grid(120, 60, 0.05, 0.05)
    walk = _sealed_mask(grid, 3)
    mask = DomainMask(walk, exits=[_exit_band(grid.nx - 4, (3, grid.ny - 3))])
    nu1 = preferred_direction_field(mask, grid, smoothing=0.2)
    nu2 = VectorField(np.zeros(grid.shape), np.zeros(grid.shape))
    r1 = _smooth_block(grid, 0.6, 3.4, 0.4, 2.6, 0.45)
    r2 = _smooth_block(grid, 0.6, 3.4, 0.4, 2.6, 0.45)
    noise = _transverse_noise(grid, seed, amplitude=0.04)
    r1 *= noise
    r2 *= 2.0 - noise
    for r in (r1, r2):
        r[~walk] = 0.0
    scen = Scenario("retraction", grid, mask, (nu1, nu2),
                    (DensityField(grid, np.clip(r1, 0, 1)),
                     DensityField(grid, np.clip(r2, 0, 1))),
                    rho_display=1.0)
    law = SpeedLaw("lwr_orderly", v_max=2.0)
    model = ModelSpec("multi_orderly", (law, law),
                      (make_mollifier(0.3), make_mollifier(0.3)),
                      eps_self=0.0, eps_other=0.3)
    cfg = SolverConfig(t_end=4.0, frame_stride=40)
    return scen, model, cfg


def _open_square(side_cells: int, extent: float):
    grid = build_grid(side_cells, side_cells, extent / side_cells,
                      extent / side_cells)
    walk = np.ones(grid.shape, dtype=bool)
    mask = DomainMask(walk, exits=[np.array([[grid.nx - 1, grid.ny // 2]])])
    return grid, mask


def _leader(seed: int):
    grid, mask = _open_square(72, 6.0)
    nu = VectorField(np.zeros(grid.shape), np.zeros(grid.shape))
    X, Y = grid.cell_centers()
    s = 1.0 - ((X - 2.0) ** 2 + (Y - 3.0) ** 2) / 0.8 ** 2
    rho = 0.8 * np.where(s > 0, s, 0.0) ** 3
    scen = Scenario("leader", grid, mask, (nu,), (DensityField(grid, rho),),
                    rho_display=1.0)
    steering = lambda t: 0.45 * np.array([math.cos(0.35 * t), math.sin(0.35 * t)])
    agent = AgentSpec("leader", (3.0, 3.0), steering=steering)
    model = ModelSpec("coupled_leader", (SpeedLaw("lwr_orderly", v_max=1.0),),
                      (make_mollifier(0.5),), agents=(agent,))
    cfg = SolverConfig(t_end=3.0, frame_stride=20)
    return scen, model, cfg


def _containment_field(grid: Grid, center, hold_radius: float) -> VectorField:
    """Unit field pointing at the center beyond `hold_radius`, fading to
    zero inside it; keeps a herd loosely in place."""
    X, Y = grid.cell_centers()
    dxc = X - center[0]
    dyc = Y - center[1]
    r = np.hypot(dxc, dyc)
    strength = np.clip(r / hold_radius - 1.0, 0.0, 1.0)
    safe = np.maximum(r, 1e-12)
    return VectorField(-strength * dxc / safe, -strength * dyc / safe)


def _dogs(seed: int):
    grid, mask = _open_square(72, 6.0)
    nu = _containment_field(grid, (3.0, 3.0), 0.9)
    X, Y = grid.cell_centers()
    s = 1.0 - ((X - 3.0) ** 2 + (Y - 3.0) ** 2) / 0.9 ** 2
    rho = 0.85 * np.where(s > 0, s, 0.0) ** 3
    scen = Scenario("dogs", grid, mask, (nu,), (DensityField(grid, rho),),
                    rho_display=1.0)
    agents = (AgentSpec("dog", (1.9, 3.0)), AgentSpec("dog", (4.1, 3.0)))
    model = ModelSpec("coupled_dogs", (SpeedLaw("lwr_orderly", v_max=1.0),),
                      (make_mollifier(0.5),), agents=agents)
    cfg = SolverConfig(t_end=3.0, frame_stride=20)
    return scen, model, cfg


def _predator(seed: int):
    grid = build_grid(104, 78, 0.077, 0.077)
    mask = DomainMask(np.ones(grid.shape, dtype=bool),
                      exits=[np.array([[grid.nx - 1, grid.ny // 2]])])
    nu = VectorField(np.full(grid.shape, 1.0), np.zeros(grid.shape))
    X, Y = grid.cell_centers()
    s = 1.0 - ((X - 2.2) ** 2 + (Y - 3.0) ** 2) / 0.8 ** 2
    rho = 0.8 * np.where(s > 0, s, 0.0) ** 3
    scen = Scenario("predator", grid, mask, (nu,), (DensityField(grid, rho),),
                    rho_display=1.0)
    agent = AgentSpec("predator", (1.0, 2.6), velocity=(0.7, 0.15))
    model = ModelSpec("coupled_predator", (SpeedLaw("lwr_orderly", v_max=1.0),),
                      (make_mollifier(0.5),), agents=(agent,),
                      prey_base="nu")
    cfg = SolverConfig(t_end=2.0, frame_stride=20)
    return scen, model, cfg


def _custom(cfg: RunConfig):
    from pathlib import Path

    from ..geometry import load_walkable_bitmap

    g = cfg.grid
    grid = build_grid(g["nx"], g["ny"], g["dx"], g["dy"],
                      (g.get("origin_x", 0.0), g.get("origin_y", 0.0)))
    if "bitmap" in cfg.mask:
        text = Path(cfg.base_dir, cfg.mask["bitmap"]).read_text(encoding="utf-8")
        walk = load_walkable_bitmap(text)
        if walk.shape != grid.shape:
            raise ConfigError(f"bitmap shape {walk.shape} does not match grid "
                              f"{grid.shape}")
    else:
        walk = np.ones(grid.shape, dtype=bool)
    exits = []
    spec = cfg.mask.get("exits", f"{grid.nx - 1}:{grid.nx},0:{grid.ny}")
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            xr, yr = part.split(",")
            x0, x1 = (int(v) for v in xr.split(":"))
            y0, y1 = (int(v) for v in yr.split(":"))
        except ValueError:
            raise ConfigError(f"bad exit rectangle {part!r}; expected "
                              f"'ix0:ix1,iy0:iy1'") from None
        ix, iy = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1), indexing="ij")
        exits.append(np.column_stack([ix.ravel(), iy.ravel()]))
    mask = DomainMask(walk, exits)
    nu = preferred_direction_field(mask, grid, smoothing=2.5 * min(grid.dx, grid.dy))

    X, Y = grid.cell_centers()
    rho = np.zeros(grid.shape)
    for part in cfg.initial["blobs"].split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            cx, cy, r, amp = (float(v) for v in part.split(","))
        except ValueError:
            raise ConfigError(f"bad blob {part!r}; expected 'cx,cy,r,amp'") from None
        s = 1.0 - ((X - cx) ** 2 + (Y - cy) ** 2) / (r * r)
        rho += amp * np.where(s > 0, s, 0.0) ** 3
    rho[~walk] = 0.0
    kind = cfg.model.get("kind", "orderly")
    if kind == "orderly":
        rho = np.clip(rho, 0.0, 1.0)
        law = SpeedLaw("lwr_orderly", v_max=cfg.model.get("v_max", 2.0))
    else:
        law = SpeedLaw("affine_panic", v_max=cfg.model.get("v_max", 2.0))
    scen = Scenario("custom", grid, mask, (nu,), (DensityField(grid, rho),),
                    rho_display=1.0)
    model = ModelSpec(kind, (law,),
                      (make_mollifier(cfg.model.get("kernel_radius", 0.3)),),
                      deviation=cfg.model.get("deviation", 1.0))
    solver = SolverConfig(t_end=2.0, frame_stride=20)
    return scen, model, solver


_BUILDERS = {"corridor": _corridor, "evacuation": _evacuation,
             "braess": lambda seed: _braess(seed, True),
             "braess_empty": lambda seed: _braess(seed, False),
             "crossing": _crossing, "retraction": _retraction,
             "leader": _leader, "dogs": _dogs, "predator": _predator}


def build_preset(cfg: RunConfig):
    """Instantiate (Scenario, ModelSpec, SolverConfig) from a RunConfig,
    applying its model/solver overrides."""
    if cfg.scenario == "custom":
        scen, model, solver = _custom(cfg)
    else:
        scen, model, solver = _BUILDERS[cfg.scenario](cfg.seed)
        model = _apply_model_overrides(model, cfg.model)
    solver = _apply_solver_overrides(solver, cfg.solver, cfg.until)
    if "rho_display" in cfg.output:
        scen = replace(scen, rho_display=cfg.output["rho_display"])
    return scen, model, solver


def _apply_model_overrides(model: ModelSpec, over: dict) -> ModelSpec:
    if not over:
        return model
    changes = {}
    if "v_max" in over or "blend_width" in over:
        laws = []
        for law in model.laws:
            kw = {"kind": law.kind, "v_max": over.get("v_max", law.v_max)}
            if law.kind == "affine_panic":
                kw["blend_width"] = over.get("blend_width", law.blend_width)
            laws.append(SpeedLaw(**kw))
        changes["laws"] = tuple(laws)
    if "kernel_radius" in over:
        changes["kernels"] = tuple(make_mollifier(over["kernel_radius"])
                                   for _ in model.kernels)
    for src, dst in (("eps_self", "eps_self"), ("eps_other", "eps_other"),
                     ("deviation", "deviation"), ("prey_base_direction", "prey_base")):
        if src in over:
            changes[dst] = over[src]
    return replace(model, **changes) if changes else model


def _apply_solver_overrides(solver: SolverConfig, over: dict,
                            until: float | None) -> SolverConfig:
    changes = dict(over)
    if until is not None:
        changes["t_end"] = until
        snaps = tuple(s for s in solver.snap_times if s <= until + 1e-12)
        changes["snap_times"] = snaps
    return replace(solver, **changes) if changes else solver
