"""Eulerian finite-volume solver for the grid models.

One explicit step freezes the nonlocal term (convolutions and agent
positions) at the step's start and advances each population with a
dimensional-splitting conservative sweep:

- models whose flux is linear in the density once the nonlocal term is
  frozen (panic-type) use the upwind flux;
- models with a genuinely nonlinear flux rho v(rho) W(x) (orderly-type and
  the agent-coupled examples) use the local Lax-Friedrichs (Rusanov) flux.

Faces touching a non-walkable cell carry zero flux, which realizes the
support-invariance property exactly at the discrete level; the preferred
direction field still encodes the walls for the dynamics.

``picard`` mode re-solves each step with the convolution updated from the
previous sweep until the L1 change drops below tolerance, exhibiting the
contraction of the underlying fixed-point map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Grid, VectorField, bilinear_sampler, is_support_contained
from .kernels import ConvField, convolve
from .models import (AgentState, ModelSpec, SpeedLaw, multi_orderly_velocity,
                     multi_panic_velocity, orderly_velocity, panic_velocity,
                     repulsion_from)
from .scenario import DensityField, Scenario
from . import transport_metrics


class SolverError(ValueError):
    """Invalid solver configuration or initial data."""


class SolverAbort(RuntimeError):
    """Runtime abort: NaN state, CFL violation, Picard non-contraction, or
    support reaching the grid edge. Carries the offending fields."""

    def __init__(self, message, t=None, fields=None):
        super().__init__(message)
        self.t = t
        self.fields = fields


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``cfl`` must not exceed 0.5: each splitting sweep takes the full time
    step, so the monotonicity bound needs the half. ``fixed_dts`` bypasses
    the CFL computation with a prescribed step sequence (used when several
    runs must share identical time grids); the CFL bound is still checked.
    """

    t_end: float
    cfl: float = 0.45
    nonlocal_update: str = "explicit"
    picard_tol: float = 1e-10
    picard_max_iter: int = 25
    dt_max: float = 0.1
    frame_stride: int = 1
    store_stride: int | None = None
    snap_times: tuple[float, ...] = ()
    fixed_dts: tuple[float, ...] | None = None
    freeze_convolution: bool = False
    track_bounds: bool = True
    support_tol: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.cfl <= 0.5):
            raise SolverError(f"cfl must lie in (0, 0.5] for the split scheme, got {self.cfl}")
        if self.t_end <= 0:
            raise SolverError("t_end must be positive")
        if self.nonlocal_update not in ("explicit", "picard"):
            raise SolverError(f"unknown nonlocal update {self.nonlocal_update!r}")
        if self.frame_stride < 1 or (self.store_stride is not None and self.store_stride < 1):
            raise SolverError("strides must be >= 1")


@dataclass
class MetricRow:
    t: float
    pop: int
    mass: float
    linf: float
    tv: float
    support_ok: bool
    evac_frac: float


@dataclass
class SolverState:
    scenario: Scenario
    rhos: list[np.ndarray]
    agents: list[AgentState]
    t: float

    def copy(self) -> "SolverState":
        return SolverState(self.scenario, [r.copy() for r in self.rhos],
                           [a.copy() for a in self.agents], self.t)


@dataclass
class Trajectory:
    """Stored frames, metric rows, and per-step diagnostics of one run."""

    grid: Grid
    times: list[float] = field(default_factory=list)
    frame_steps: list[int] = field(default_factory=list)
    fields: list[list[DensityField]] = field(default_factory=list)
    agents: list[list[AgentState]] = field(default_factory=list)
    metrics: list[MetricRow] = field(default_factory=list)
    dts: list[float] = field(default_factory=list)
    step_times: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    clamped_mass: float = 0.0
    picard_log: list[tuple[int, float]] = field(default_factory=list)

    @property
    def populations(self) -> int:
        return len(self.fields[0]) if self.fields else 0

    def final(self, pop: int = 0) -> DensityField:
        return self.fields[-1][pop]

    def frame_at(self, t: float, pop: int = 0) -> DensityField:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"no stored frame at t={t} (closest {self.times[i]})")
        return self.fields[i][pop]


# ---------------------------------------------------------------------------
# flux assembly


def _coupled_direction(model: ModelSpec, scenario: Scenario,
                       agents: list[AgentState]) -> VectorField:
    X, Y = scenario.grid.cell_centers()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    nu = scenario.nu[0]
    if model.kind == "coupled_leader":
        p = agents[0].position
        d = p[None, :] - pts
        r = np.hypot(d[:, 0], d[:, 1])
        w = d * np.exp(-r)[:, None]
        return VectorField(w[:, 0].reshape(X.shape), w[:, 1].reshape(X.shape))
    if model.kind == "coupled_dogs":
        rep = repulsion_from(pts, [a.position for a in agents])
        return VectorField(nu.u + rep[:, 0].reshape(X.shape),
                           nu.v + rep[:, 1].reshape(X.shape))
    # predator: preys drift along a base direction and flee the predator
    rep = repulsion_from(pts, [agents[0].position])
    if model.prey_base == "nu":
        bu, bv = nu.u, nu.v
    else:
        bu = np.ones_like(nu.u)
        bv = np.ones_like(nu.v)
    return VectorField(bu + rep[:, 0].reshape(X.shape),
                       bv + rep[:, 1].reshape(X.shape))


@dataclass
class _Flux:
    """Frozen per-population flux: linear rho*c(x) or nonlinear g(rho)*W(x)."""

    linear: bool
    u: np.ndarray
    v: np.ndarray
    law: SpeedLaw | None = None

    def velocity(self, rho: np.ndarray) -> VectorField:
        if self.linear:
            return VectorField(self.u, self.v)
        speed = self.law(rho)
        return VectorField(speed * self.u, speed * self.v)

    def wavespeeds(self, rho: np.ndarray) -> tuple[float, float]:
        """Per-direction bounds on |d flux / d rho| for the CFL condition."""
        if self.linear:
            return float(np.abs(self.u).max()), float(np.abs(self.v).max())
        hi = float(max(rho.max(), 1.0))
        s = max(abs(self.law.flux_derivative(0.0)), abs(self.law.flux_derivative(hi)))
        return float(np.abs(self.u).max() * s), float(np.abs(self.v).max() * s)


def _assemble_fluxes(scenario: Scenario, model: ModelSpec, rhos: list[np.ndarray],
                     convs: list[ConvField], agents: list[AgentState]) -> list[_Flux]:
    out: list[_Flux] = []
    if model.kind == "panic":
        V = panic_velocity(model.laws[0], convs[0], scenario.nu[0])
        out.append(_Flux(True, V.u, V.v))
    elif model.kind == "multi_panic":
        for i in range(model.populations):
            V = multi_panic_velocity(model.laws[i], convs, scenario.nu[i])
            out.append(_Flux(True, V.u, V.v))
    elif model.kind == "orderly":
        gx, gy = convs[0].grad_x, convs[0].grad_y
        denom = np.sqrt(1.0 + gx ** 2 + gy ** 2)
        out.append(_Flux(False,
                         scenario.nu[0].u - model.deviation * gx / denom,
                         scenario.nu[0].v - model.deviation * gy / denom,
                         model.laws[0]))
    elif model.kind == "multi_orderly":
        for i in range(2):
            gsx, gsy = convs[i].grad_x, convs[i].grad_y
            gox, goy = convs[1 - i].grad_x, convs[1 - i].grad_y
            ds = np.sqrt(1.0 + gsx ** 2 + gsy ** 2)
            do = np.sqrt(1.0 + gox ** 2 + goy ** 2)
            out.append(_Flux(False,
                             scenario.nu[i].u - model.eps_self * gsx / ds
                             - model.eps_other * gox / do,
                             scenario.nu[i].v - model.eps_self * gsy / ds
                             - model.eps_other * goy / do,
                             model.laws[i]))
    else:
        W = _coupled_direction(model, scenario, agents)
        out.append(_Flux(False, W.u, W.v, model.laws[0]))
    return out


def cfl_dt(velocity, grid: Grid, cfl: float, dt_max: float = math.inf) -> float:
    """dt = cfl * min(dx, dy) / max(speed, 1e-12), capped at dt_max.

    `velocity` may be a VectorField, a sequence of them, or a scalar
    wave-speed bound (used by the nonlinear models, whose characteristic
    speed exceeds the transport velocity).
    """
    if np.isscalar(velocity):
        speed = float(velocity)
    else:
        fields = velocity if isinstance(velocity, (list, tuple)) else [velocity]
        speed = max(f.max_component() for f in fields)
    return min(cfl * min(grid.dx, grid.dy) / max(speed, 1e-12), dt_max)


# ---------------------------------------------------------------------------
# conservative sweeps


def _open_faces(walkable: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Faces strictly between two walkable cells carry flux; others do not."""
    fx = walkable[:-1, :] & walkable[1:, :]
    fy = walkable[:, :-1] & walkable[:, 1:]
    return fx, fy


def _sweep(rho: np.ndarray, flux: _Flux, axis: int, dt: float, grid: Grid,
           open_face: np.ndarray, cfl_cap: float) -> np.ndarray:
    h = grid.dx if axis == 0 else grid.dy
    lam = dt / h
    c = flux.u if axis == 0 else flux.v
    if axis == 0:
        cm, cp = c[:-1, :], c[1:, :]
        rm, rp = rho[:-1, :], rho[1:, :]
    else:
        cm, cp = c[:, :-1], c[:, 1:]
        rm, rp = rho[:, :-1], rho[:, 1:]
    cf = 0.5 * (cm + cp)
    if flux.linear:
        F = np.maximum(cf, 0.0) * rm + np.minimum(cf, 0.0) * rp
        speed = np.abs(cf)
    else:
        g = flux.law.flux(rho)
        gp = np.abs(flux.law.flux_derivative(rho))
        if axis == 0:
            gm, gpp = g[:-1, :], g[1:, :]
            sm, sp = gp[:-1, :], gp[1:, :]
        else:
            gm, gpp = g[:, :-1], g[:, 1:]
            sm, sp = gp[:, :-1], gp[:, 1:]
        alpha = np.abs(cf) * np.maximum(sm, sp)
        F = 0.5 * cf * (gm + gpp) - 0.5 * alpha * (rp - rm)
        speed = alpha
    if (lam * speed).max() > cfl_cap + 1e-12:
        raise SolverAbort(
            f"CFL violation on axis {axis}: lambda*speed = {(lam * speed).max():.3g} "
            f"> {cfl_cap}")
    F = np.where(open_face, F, 0.0)
    out = rho.copy()
    if axis == 0:
        out[:-1, :] -= lam * F
        out[1:, :] += lam * F
    else:
        out[:, :-1] -= lam * F
        out[:, 1:] += lam * F
    return out


def step(state: SolverState, model: ModelSpec, dt: float,
         convs: list[ConvField] | None = None,
         fluxes: list[_Flux] | None = None, cfl_cap: float = 0.5) -> SolverState:
    """One explicit step with the nonlocal term frozen at the step's start.

    Returns a new state; negative roundoff values are clamped to zero and
    the clamped mass is recorded on the returned state as ``clamped``.
    ``cfl_cap`` bounds lambda * wave speed per sweep; 1/2 is the
    monotonicity limit for diverging upwind flows.
    """
    scen = state.scenario
    if convs is None:
        convs = [convolve(r, k, scen.grid) for r, k in zip(state.rhos, model.kernels)]
    if fluxes is None:
        fluxes = _assemble_fluxes(scen, model, state.rhos, convs, state.agents)
    fx, fy = _open_faces(scen.mask.walkable)
    new_rhos = []
    clamped = 0.0
    for rho, flux in zip(state.rhos, fluxes):
        r = _sweep(rho, flux, 0, dt, scen.grid, fx, cfl_cap)
        r = _sweep(r, flux, 1, dt, scen.grid, fy, cfl_cap)
        neg = r < 0.0
        if neg.any():
            clamped += float(-r[neg].sum() * scen.grid.cell_area)
            r[neg] = 0.0
        if np.isnan(r).any():
            raise SolverAbort("NaN detected in density update", t=state.t,
                              fields=[x.copy() for x in state.rhos])
        new_rhos.append(r)
    new_agents = _advance_agents(state.agents, model, scen, convs, state.t, dt)
    out = SolverState(scen, new_rhos, new_agents, state.t + dt)
    out.clamped = clamped
    return out


def _advance_agents(agents: list[AgentState], model: ModelSpec, scen: Scenario,
                    convs: list[ConvField], t: float, dt: float) -> list[AgentState]:
    if not agents:
        return []
    val = bilinear_sampler(scen.grid, convs[0].values)
    gx = bilinear_sampler(scen.grid, convs[0].grad_x)
    gy = bilinear_sampler(scen.grid, convs[0].grad_y)

    def rhs(a: AgentState, pos, vel, tau):
        if a.kind == "leader":
            return (1.0 + val(pos)) * np.asarray(a.steering(tau), dtype=float), np.zeros(2)
        if a.kind == "dog":
            g = np.array([gx(pos), gy(pos)])
            perp = np.array([-g[1], g[0]])
            return perp / math.sqrt(1.0 + g @ g), np.zeros(2)
        # predator: second order, acceleration toward the averaged density
        return vel, np.array([gx(pos), gy(pos)])

    out = []
    for a in agents:
        p0, v0 = a.position, a.velocity
        k1p, k1v = rhs(a, p0, v0, t)
        k2p, k2v = rhs(a, p0 + 0.5 * dt * k1p, v0 + 0.5 * dt * k1v, t + 0.5 * dt)
        k3p, k3v = rhs(a, p0 + 0.5 * dt * k2p, v0 + 0.5 * dt * k2v, t + 0.5 * dt)
        k4p, k4v = rhs(a, p0 + dt * k3p, v0 + dt * k3v, t + dt)
        p = p0 + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        v = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.isfinite(p).all() and np.isfinite(v).all()):
            raise SolverAbort("agent state became non-finite", t=t)
        out.append(AgentState(a.kind, p, v, a.steering))
    return out


# ---------------------------------------------------------------------------
# per-step bound diagnostics


def _grad_mag(a: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    gx = np.gradient(a, grid.dx, axis=0)
    gy = np.gradient(a, grid.dy, axis=1)
    return gx, gy


def _flux_bound_pieces(flux: _Flux, rho: np.ndarray, grid: Grid) -> tuple[float, float, float]:
    """(kappa0, source_integral, max_grad_conv placeholder) for the frozen
    per-step flux, with the dimension-2 constant (2N+1) = 5.

    linear flux u*c(x):      kappa0 = 5 max |D c|,  source = U * int |grad div c|
    nonlinear g(u)*W(x):     kappa0 = 5 max |D W| * max |g'|,
                             source = max g * int |grad div W|
    """
    u, v = flux.u, flux.v
    dux, duy = _grad_mag(u, grid)
    dvx, dvy = _grad_mag(v, grid)
    jac = np.sqrt(dux ** 2 + duy ** 2 + dvx ** 2 + dvy ** 2)
    div = dux + dvy
    gdx, gdy = _grad_mag(div, grid)
    grad_div_l1 = float(np.hypot(gdx, gdy).sum() * grid.cell_area)
    umax = float(np.abs(rho).max())
    if flux.linear:
        kappa0 = 5.0 * float(jac.max())
        source = umax * grad_div_l1
    else:
        hi = max(umax, 1.0)
        s = max(abs(flux.law.flux_derivative(0.0)), abs(flux.law.flux_derivative(hi)))
        kappa0 = 5.0 * float(jac.max()) * s
        rr = np.linspace(0.0, umax, 65)
        gmax = float(np.abs(flux.law.flux(rr)).max()) if umax > 0 else 0.0
        source = gmax * grad_div_l1
    return kappa0, source, umax


# ---------------------------------------------------------------------------
# main driver


def _initial_checks(scenario: Scenario, model: ModelSpec, cfg: SolverConfig):
    if scenario.populations != model.populations:
        raise SolverError("scenario and model disagree on the number of populations")
    for rho in scenario.rho0:
        if not is_support_contained(rho, scenario.mask, tol=0.0):
            raise SolverError("initial support leaves the walkable region")
        if model.is_orderly and rho.sup > 1.0 + 1e-12:
            raise SolverError("orderly-type models need initial densities in [0, 1]")
    if not _is_sealed(scenario):
        _check_edge_margin(scenario, model, [r.values for r in scenario.rho0],
                           where="initially")


def _edge_band(grid: Grid, radius: float) -> np.ndarray:
    bx = max(1, int(math.ceil(radius / grid.dx)))
    by = max(1, int(math.ceil(radius / grid.dy)))
    band = np.zeros(grid.shape, dtype=bool)
    band[:bx, :] = True
    band[-bx:, :] = True
    band[:, :by] = True
    band[:, -by:] = True
    return band


def _is_sealed(scenario: Scenario) -> bool:
    """True when no boundary-rim cell is walkable: density can then never
    exist outside the grid, so the zero extension of the convolution is
    exact and the edge-margin check is unnecessary."""
    w = scenario.mask.walkable
    return not (w[0, :].any() or w[-1, :].any() or w[:, 0].any() or w[:, -1].any())


def _check_edge_margin(scenario: Scenario, model: ModelSpec, rhos, rtol=1e-6,
                       where="during the run", band=None):
    """Abort when meaningful mass sits within one kernel radius of the grid
    edge (the zero-extension of the convolution is then no longer harmless).
    The threshold is relative so the first-order scheme's exponentially
    small downstream tail does not trip it."""
    if band is None:
        band = _edge_band(scenario.grid, model.max_kernel_radius)
    dA = scenario.grid.cell_area
    for i, r in enumerate(rhos):
        total = float(r.sum() * dA)
        if total <= 0.0:
            continue
        band_mass = float(r[band].sum() * dA)
        if band_mass > rtol * total:
            raise SolverAbort(
                f"support of population {i} reached within one kernel radius of the "
                f"grid edge {where} (band mass {band_mass:.3e} of {total:.3e}); "
                f"enlarge the grid", fields=[x.copy() for x in rhos])


def _metric_rows(scenario: Scenario, rhos, t, room_mass0, support_tol) -> list[MetricRow]:
    rows = []
    room = scenario.room_region()
    dA = scenario.grid.cell_area
    for i, r in enumerate(rhos):
        mass = float(r.sum() * dA)
        tv = transport_metrics.tv_array(r, scenario.grid.dx, scenario.grid.dy)
        ok = is_support_contained(r, scenario.mask, tol=support_tol)
        room_mass = float(r[room].sum() * dA)
        evac = room_mass / room_mass0[i] if room_mass0[i] > 0 else 0.0
        rows.append(MetricRow(t=t, pop=i, mass=mass, linf=float(r.max()),
                              tv=tv, support_ok=ok, evac_frac=evac))
    return rows


def run(scenario: Scenario, model: ModelSpec, cfg: SolverConfig,
        frozen_from: list[np.ndarray] | None = None) -> Trajectory:
    """Advance the scenario to t_end and return the stored trajectory.

    ``frozen_from`` (or ``cfg.freeze_convolution``) freezes the nonlocal
    term for the whole run at the given (or initial) densities, which turns
    the model into a conservation law with a known flux; the quantitative
    bound checks rely on this mode.
    """
    _initial_checks(scenario, model, cfg)
    grid = scenario.grid
    dA = grid.cell_area
    store_stride = cfg.store_stride or cfg.frame_stride

    state = SolverState(scenario, [r.values.copy() for r in scenario.rho0],
                        [AgentState.from_spec(a) for a in model.agents], 0.0)
    room = scenario.room_region()
    room_mass0 = [float(r.values[room].sum() * dA) for r in scenario.rho0]

    traj = Trajectory(grid=grid)
    traj.constants["kernel_lip"] = [k.lip for k in model.kernels]
    traj.constants["kernel_sup"] = [k.sup for k in model.kernels]
    traj.constants["kernel_grad_l1"] = [k.grad_l1 for k in model.kernels]
    traj.constants["law_lip"] = [l.lip for l in model.laws]
    traj.constants["law_sup"] = [l.sup for l in model.laws]
    nu_sup, div_nu_sup = [], []
    for f in scenario.nu:
        nu_sup.append(float(f.norm().max()))
        dux = np.gradient(f.u, grid.dx, axis=0)
        dvy = np.gradient(f.v, grid.dy, axis=1)
        div_nu_sup.append(float(np.abs(dux + dvy).max()))
    traj.constants["nu_sup"] = nu_sup
    traj.constants["div_nu_sup"] = div_nu_sup

    diag = {"max_grad_conv": [], "kappa0": [], "tv_source": [], "umax": [],
            "picard_sweeps": [], "picard_factor": []}
    tv_envelope = [transport_metrics.tv_array(r.values, grid.dx, grid.dy)
                   for r in scenario.rho0]
    envelope_log = [list(tv_envelope)]

    frozen_convs = None
    if frozen_from is not None or cfg.freeze_convolution:
        base = frozen_from if frozen_from is not None else [r.values for r in scenario.rho0]
        frozen_convs = [convolve(b, k, grid) for b, k in zip(base, model.kernels)]

    def store_frame(idx: int):
        traj.times.append(state.t)
        traj.frame_steps.append(idx)
        traj.fields.append([DensityField(grid, r.copy()) for r in state.rhos])
        traj.agents.append([a.copy() for a in state.agents])

    store_frame(0)
    traj.metrics.extend(_metric_rows(scenario, state.rhos, 0.0, room_mass0,
                                     cfg.support_tol))

    targets = sorted({round(s, 12) for s in (*cfg.snap_times, cfg.t_end)
                      if 0.0 < s <= cfg.t_end + 1e-12})
    sealed = _is_sealed(scenario)
    band = None if sealed else _edge_band(grid, model.max_kernel_radius)
    step_idx = 0
    while state.t < cfg.t_end - 1e-12:
        convs = frozen_convs or [convolve(r, k, grid)
                                 for r, k in zip(state.rhos, model.kernels)]
        fluxes = _assemble_fluxes(scenario, model, state.rhos, convs, state.agents)
        if cfg.fixed_dts is not None:
            if step_idx >= len(cfg.fixed_dts):
                raise SolverError("fixed_dts exhausted before reaching t_end")
            dt = cfg.fixed_dts[step_idx]
        else:
            sx = max(f.wavespeeds(r)[0] for f, r in zip(fluxes, state.rhos))
            sy = max(f.wavespeeds(r)[1] for f, r in zip(fluxes, state.rhos))
            dt = cfg.cfl * min(grid.dx / max(sx, 1e-12), grid.dy / max(sy, 1e-12))
            dt = min(dt, cfg.dt_max)
            nxt = next(s for s in targets if s > state.t + 1e-12)
            dt = min(dt, nxt - state.t)

        if cfg.nonlocal_update == "explicit" or frozen_convs is not None:
            new_state = step(state, model, dt, convs=convs, fluxes=fluxes)
        else:
            new_state, sweeps, factor = _picard_step(state, model, dt, convs, cfg)
            diag["picard_sweeps"].append(sweeps)
            diag["picard_factor"].append(factor)
            traj.picard_log.append((sweeps, factor))
        traj.clamped_mass += getattr(new_state, "clamped", 0.0)

        if cfg.track_bounds:
            mgc, k0s, srcs, ums = 0.0, [], [], []
            for flux, conv, rho in zip(fluxes, convs, state.rhos):
                kappa0, source, umax = _flux_bound_pieces(flux, rho, grid)
                k0s.append(kappa0)
                srcs.append(source)
                ums.append(umax)
                mgc = max(mgc, float(conv.grad_norm().max()))
            diag["max_grad_conv"].append(mgc)
            diag["kappa0"].append(k0s)
            diag["tv_source"].append(srcs)
            diag["umax"].append(ums)
            NW = 2.0 * (math.pi / 4.0)
            for i in range(len(tv_envelope)):
                k0 = k0s[i]
                growth = math.exp(k0 * dt)
                integ = (growth - 1.0) / k0 if k0 > 1e-14 else dt
                tv_envelope[i] = tv_envelope[i] * growth + NW * srcs[i] * integ

        # snap exactly onto targets to avoid drift
        t_new = new_state.t
        for s in targets:
            if abs(t_new - s) < 1e-10:
                t_new = s
        new_state.t = t_new
        state = new_state
        traj.dts.append(dt)
        traj.step_times.append(state.t)
        step_idx += 1

        on_target = any(abs(state.t - s) < 1e-12 for s in targets)
        if step_idx % store_stride == 0 or on_target:
            store_frame(step_idx)
            envelope_log.append(list(tv_envelope))
        if step_idx % cfg.frame_stride == 0 or on_target:
            traj.metrics.extend(_metric_rows(scenario, state.rhos, state.t,
                                             room_mass0, cfg.support_tol))
        if not sealed:
            _check_edge_margin(scenario, model, state.rhos, band=band)

    diag["tv_envelope"] = envelope_log
    traj.diagnostics = diag
    return traj


def _picard_step(state: SolverState, model: ModelSpec, dt: float,
                 convs0: list[ConvField], cfg: SolverConfig):
    """Iterate the frozen-coefficient step to the fixed point of the step map.

    The driver starts at the step's initial state; each sweep re-solves the
    step with the convolution of the previous sweep's result. The L1
    contraction factor between successive sweeps is returned.
    """
    grid = state.scenario.grid
    dA = grid.cell_area
    prev = step(state, model, dt, convs=convs0)
    deltas: list[float] = []
    factor = 0.0
    rising = 0
    for sweep in range(1, cfg.picard_max_iter + 1):
        convs = [convolve(r, k, grid) for r, k in zip(prev.rhos, model.kernels)]
        cur = step(state, model, dt, convs=convs)
        delta = sum(float(np.abs(c - p).sum() * dA)
                    for c, p in zip(cur.rhos, prev.rhos))
        if deltas:
            factor = delta / max(deltas[-1], 1e-300)
            rising = rising + 1 if factor >= 1.0 else 0
            if rising >= 3:
                raise SolverAbort(
                    f"Picard iteration is not contracting (factor {factor:.3g} "
                    f"for 3 consecutive sweeps); reduce dt", t=state.t)
        deltas.append(delta)
        prev = cur
        if delta < cfg.picard_tol:
            return cur, sweep + 1, factor
    return prev, cfg.picard_max_iter + 1, factor
