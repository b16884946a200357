"""Linearized solver, directional-derivative checks, and cost functionals.

The linearization of the averaged-speed model around a trajectory rho(t)
transports a signed perturbation r with the frozen coefficient
v(rho*eta) nu and forces it with the divergence term coming from the
derivative of the speed law:

    d_t r + Div(r v(rho*eta) nu) = -Div(rho v'(rho*eta) (r*eta) nu).

The discrete source mirrors the structure of the solver's upwind flux (face
averages of the coefficient perturbation times the upwinded density), so
the solution tracks the exact derivative of the discrete time step up to
second order. A config switch can drop the (r*eta) factor to run the
variant without it for comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fv_solver import SolverConfig, Trajectory, _open_faces, run
from .kernels import convolve
from .models import ModelSpec
from .scenario import DensityField, Scenario


class SensitivityError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationField:
    """Signed per-cell perturbation of an initial density."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise SensitivityError("perturbation shape does not match grid")
        if not np.isfinite(v).all():
            raise SensitivityError("perturbation has non-finite entries")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.grid.cell_area)


@dataclass(frozen=True)
class CostSpec:
    """Congestion cost: integral of max(0, rho - threshold)^exponent * weight.

    The penalty vanishes below the threshold and is C^1 and strictly
    increasing above it; the weight defaults to 1 everywhere.
    """

    threshold: float
    horizon: float
    exponent: float = 2.0
    weight: np.ndarray | None = None

    def __post_init__(self):
        if self.threshold <= 0:
            raise SensitivityError("threshold must be positive")
        if self.exponent < 2:
            raise SensitivityError("exponent must be >= 2 so the penalty is C^1")
        if self.horizon <= 0:
            raise SensitivityError("horizon must be positive")

    def penalty(self, rho: np.ndarray) -> np.ndarray:
        return np.maximum(rho - self.threshold, 0.0) ** self.exponent

    def penalty_derivative(self, rho: np.ndarray) -> np.ndarray:
        return self.exponent * np.maximum(rho - self.threshold, 0.0) ** (self.exponent - 1)


@dataclass
class PerturbationTrajectory:
    grid: object
    times: list[float] = field(default_factory=list)
    fields: list[np.ndarray] = field(default_factory=list)

    def final(self) -> np.ndarray:
        return self.fields[-1]

    def l1_log(self) -> list[float]:
        dA = self.grid.cell_area
        return [float(np.abs(f).sum() * dA) for f in self.fields]


def _require_dense_panic(rho_traj: Trajectory, model: ModelSpec):
    if model.kind != "panic" or model.populations != 1 or model.agents:
        raise SensitivityError("the linearized solver covers the one-population "
                               "averaged-speed model")
    if len(rho_traj.times) != len(rho_traj.dts) + 1:
        raise SensitivityError("need a trajectory stored at every step "
                               "(run with store_stride=1)")


def _upwind_r(values: np.ndarray, cf: np.ndarray, axis: int) -> np.ndarray:
    if axis == 0:
        return np.where(cf >= 0.0, values[:-1, :], values[1:, :])
    return np.where(cf >= 0.0, values[:, :-1], values[:, 1:])


def _lin_sweep(r: np.ndarray, rho_in: np.ndarray, c: np.ndarray, dc: np.ndarray,
               axis: int, dt: float, grid, open_face: np.ndarray) -> np.ndarray:
    """One split sweep of the linearized equation.

    Transports r with the frozen coefficient c (upwind) and adds the
    source flux dc_face * rho_upwind, the derivative of the solver's flux
    with respect to the coefficient.
    """
    h = grid.dx if axis == 0 else grid.dy
    lam = dt / h
    if axis == 0:
        cf = 0.5 * (c[:-1, :] + c[1:, :])
        dcf = 0.5 * (dc[:-1, :] + dc[1:, :])
        rm, rp = r[:-1, :], r[1:, :]
    else:
        cf = 0.5 * (c[:, :-1] + c[:, 1:])
        dcf = 0.5 * (dc[:, :-1] + dc[:, 1:])
        rm, rp = r[:, :-1], r[:, 1:]
    F = np.maximum(cf, 0.0) * rm + np.minimum(cf, 0.0) * rp
    F = F + dcf * _upwind_r(rho_in, cf, axis)
    F = np.where(open_face, F, 0.0)
    out = r.copy()
    if axis == 0:
        out[:-1, :] -= lam * F
        out[1:, :] += lam * F
    else:
        out[:, :-1] -= lam * F
        out[:, 1:] += lam * F
    return out


def _transport_sweep(rho: np.ndarray, c: np.ndarray, axis: int, dt: float,
                     grid, open_face: np.ndarray) -> np.ndarray:
    zero = np.zeros_like(rho)
    return _lin_sweep(rho, rho, c, zero, axis, dt, grid, open_face)


def solve_linearized(rho_traj: Trajectory, model: ModelSpec, scenario: Scenario,
                     r0: PerturbationField, variant: str = "proof"
                     ) -> PerturbationTrajectory:
    """Evolve a perturbation along a stored density trajectory.

    ``variant`` selects the source term: 'proof' keeps the (r*eta) factor
    in -Div(rho v'(rho*eta) (r*eta) nu); 'printed' drops it.
    """
    _require_dense_panic(rho_traj, model)
    if variant not in ("proof", "printed"):
        raise SensitivityError(f"unknown source variant {variant!r}")
    grid = scenario.grid
    if r0.grid.shape != grid.shape:
        raise SensitivityError("perturbation grid does not match scenario grid")
    law = model.laws[0]
    kernel = model.kernels[0]
    nu = scenario.nu[0]
    fx, fy = _open_faces(scenario.mask.walkable)

    r = r0.values.copy()
    out = PerturbationTrajectory(grid=grid)
    out.times.append(rho_traj.times[0])
    out.fields.append(r.copy())
    for n, dt in enumerate(rho_traj.dts):
        rho_n = rho_traj.fields[n][0].values
        conv_rho = convolve(rho_n, kernel, grid)
        speed = law(conv_rho.values)
        cu = speed * nu.u
        cv = speed * nu.v
        dspeed = law.derivative(conv_rho.values)
        if variant == "proof":
            conv_r = convolve(r, kernel, grid)
            factor = dspeed * conv_r.values
        else:
            factor = dspeed
        dcu = factor * nu.u
        dcv = factor * nu.v

        rho_x = _transport_sweep(rho_n, cu, 0, dt, grid, fx)
        r = _lin_sweep(r, rho_n, cu, dcu, 0, dt, grid, fx)
        r = _lin_sweep(r, rho_x, cv, dcv, 1, dt, grid, fy)
        if np.isnan(r).any():
            raise SensitivityError(f"NaN in linearized solution at step {n}")
        out.times.append(rho_traj.times[n + 1])
        out.fields.append(r.copy())
    return out


# ---------------------------------------------------------------------------
# difference-quotient verification


@dataclass
class GateauxResult:
    hs: list[float]
    errors: list[float]
    rate: float
    floor: float
    monotone: bool
    quotient_l1: list[float]

    def summary(self) -> str:
        rows = ", ".join(f"h={h:g}: {e:.3e}" for h, e in zip(self.hs, self.errors))
        return f"rate={self.rate:.3f} floor={self.floor:.3e} [{rows}]"


def _perturbed_scenario(scenario: Scenario, delta: np.ndarray) -> Scenario:
    rho = DensityField(scenario.grid, scenario.rho0[0].values + delta)
    return replace(scenario, rho0=(rho,))


def gateaux_check(scenario: Scenario, model: ModelSpec, cfg: SolverConfig,
                  r0: PerturbationField,
                  h_list=(0.1, 0.05, 0.025, 0.0125)) -> GateauxResult:
    """Compare difference quotients of the solution map against the
    linearized solution at the final time.

    All runs share the base run's time steps. Errors must decrease in h
    down to the discretization floor; the fitted rate uses the strictly
    decreasing prefix of the error curve.
    """
    if any(h <= 0 for h in h_list) or list(h_list) != sorted(h_list, reverse=True):
        raise SensitivityError("h_list must be positive and decreasing")
    base_cfg = replace(cfg, store_stride=1, frame_stride=max(cfg.frame_stride, 1))
    base = run(scenario, model, base_cfg)
    lin = solve_linearized(base, model, scenario, r0)
    r_T = lin.final()
    dA = scenario.grid.cell_area
    fixed = replace(base_cfg, fixed_dts=tuple(base.dts))

    errors = []
    quotients = []
    base_T = base.final(0).values
    for h in h_list:
        pert = run(_perturbed_scenario(scenario, h * r0.values), model, fixed)
        quot = (pert.final(0).values - base_T) / h
        errors.append(float(np.abs(quot - r_T).sum() * dA))
        quotients.append(float(np.abs(quot).sum() * dA))

    floor = min(errors)
    hs = list(h_list)
    cut = 1
    while cut < len(errors) and errors[cut] < errors[cut - 1]:
        cut += 1
    monotone = cut == len(errors) or all(
        e <= 3.0 * floor for e in errors[cut:])
    # fit the rate on the decreasing prefix, excluding floor-level points
    pts = [(h, e) for h, e in zip(hs[:cut], errors[:cut]) if e > 3.0 * floor or cut == len(errors)]
    if len(pts) >= 2:
        lh = np.log([p[0] for p in pts])
        le = np.log(np.maximum([p[1] for p in pts], 1e-300))
        rate = float(np.polyfit(lh, le, 1)[0])
    else:
        rate = 0.0
    return GateauxResult(hs=hs, errors=errors, rate=rate, floor=floor,
                         monotone=monotone, quotient_l1=quotients)


# ---------------------------------------------------------------------------
# cost functional


def cost_J(traj: Trajectory, spec: CostSpec, pop: int = 0) -> float:
    """Space-time integral of the congestion penalty along the trajectory.

    Cell-centered (midpoint) quadrature in space, trapezoidal in time over
    the stored frames up to the horizon.
    """
    if traj.times[-1] < spec.horizon - 1e-9:
        raise SensitivityError(
            f"trajectory ends at {traj.times[-1]}, before the horizon {spec.horizon}")
    grid = traj.grid
    dA = grid.cell_area
    w = spec.weight if spec.weight is not None else 1.0
    times = []
    integrands = []
    for t, frame in zip(traj.times, traj.fields):
        if t > spec.horizon + 1e-12:
            break
        times.append(t)
        integrands.append(float((spec.penalty(frame[pop].values) * w).sum() * dA))
    return float(np.trapezoid(integrands, times))


def cost_gradient_pairing(rho_traj: Trajectory, lin: PerturbationTrajectory,
                          spec: CostSpec, pop: int = 0) -> float:
    """Directional derivative of the cost from the linearized solution:
    integral of f'(rho) r weight, with the same quadrature as cost_J."""
    dA = rho_traj.grid.cell_area
    w = spec.weight if spec.weight is not None else 1.0
    times = []
    integrands = []
    for t, frame, r in zip(rho_traj.times, rho_traj.fields, lin.fields):
        if t > spec.horizon + 1e-12:
            break
        times.append(t)
        integrands.append(
            float((spec.penalty_derivative(frame[pop].values) * r * w).sum() * dA))
    return float(np.trapezoid(integrands, times))


@dataclass
class ResidualRow:
    direction: int
    dj_linearized: float
    dj_quotient: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.dj_quotient), 1e-300)
        return abs(self.dj_linearized - self.dj_quotient) / scale


def optimality_residual(scenario: Scenario, model: ModelSpec, cfg: SolverConfig,
                        directions: list[PerturbationField], spec: CostSpec,
                        h: float = 0.02) -> list[ResidualRow]:
    """First-order residuals of the cost in the given directions.

    Each residual pairs the linearized-solution derivative with a
    Richardson-extrapolated finite-difference quotient of the cost; at a
    minimizer every residual vanishes.
    """
    if not directions:
        raise SensitivityError("need at least one direction")
    base_cfg = replace(cfg, store_stride=1)
    base = run(scenario, model, base_cfg)
    fixed = replace(base_cfg, fixed_dts=tuple(base.dts))
    j0 = cost_J(base, spec)
    rows = []
    for i, r0 in enumerate(directions):
        lin = solve_linearized(base, model, scenario, r0)
        dj_lin = cost_gradient_pairing(base, lin, spec)
        qs = []
        for hh in (h, h / 2):
            pert = run(_perturbed_scenario(scenario, hh * r0.values), model, fixed)
            qs.append((cost_J(pert, spec) - j0) / hh)
        dj_fd = 2.0 * qs[1] - qs[0]
        rows.append(ResidualRow(direction=i, dj_linearized=dj_lin, dj_quotient=dj_fd))
    return rows


def descent_demo(scenario: Scenario, model: ModelSpec, cfg: SolverConfig,
                 spec: CostSpec, directions: list[PerturbationField],
                 iterations: int = 3, step_size: float = 0.5,
                 log_path=None) -> list[dict]:
    """Projected quasi-gradient descent on the initial density (demo only).

    Descends along the span of the given directions using linearized
    derivatives, then projects back to nonnegative densities of unchanged
    mass. Returns one record per iterate; optionally appends JSON lines.
    """
    dA = scenario.grid.cell_area
    current = scenario
    records = []
    mass0 = scenario.rho0[0].mass
    for it in range(iterations):
        base_cfg = replace(cfg, store_stride=1)
        base = run(current, model, base_cfg)
        j = cost_J(base, spec)
        coeffs = []
        for r0 in directions:
            lin = solve_linearized(base, model, current, r0)
            dj = cost_gradient_pairing(base, lin, spec)
            coeffs.append(dj / max(r0.l1, 1e-300) ** 2)
        update = sum(c * r0.values for c, r0 in zip(coeffs, directions))
        vals = np.maximum(current.rho0[0].values - step_size * update, 0.0)
        total = vals.sum() * dA
        if total > 0:
            vals *= mass0 / total
        current = replace(current, rho0=(DensityField(scenario.grid, vals),))
        records.append({"iteration": it, "cost": j,
                        "directional_derivatives": coeffs})
    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return records
