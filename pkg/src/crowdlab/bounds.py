"""Assembly of the quantitative bound checks from measured run data.

Each function turns one trajectory (or a pair) into a BoundReport whose
constants are computed from the measured norms of the velocity law, the
direction field, and the kernel, never fitted to the observed solution.
"""

from __future__ import annotations

import math

import numpy as np

from .fv_solver import Trajectory
from .models import ModelSpec
from .scenario import Scenario
from .transport_metrics import BoundReport, stability_bound_rhs, tv_array


def sup_growth_constant(traj: Trajectory, model: ModelSpec, scenario: Scenario) -> float:
    """Admissible constant for the sup-norm growth bound of panic models.

    Along characteristics the density grows at most like the divergence of
    the velocity field: |div V| <= Lip(v) |nu|_inf sup_t |grad(rho*eta)|_inf
    + |v|_inf |div nu|_inf. All factors are measured.
    """
    law = model.laws[0]
    grad_conv_sup = max(traj.diagnostics.get("max_grad_conv", [0.0]) or [0.0])
    nu_sup = max(traj.constants["nu_sup"])
    div_nu_sup = max(traj.constants["div_nu_sup"])
    return law.lip * nu_sup * grad_conv_sup + law.sup * div_nu_sup


def linf_growth_report(traj: Trajectory, model: ModelSpec, scenario: Scenario,
                       margin: float = 0.1) -> BoundReport:
    """Per-frame check of |rho(t)|_inf <= |rho_0|_inf exp(C t)."""
    C = sup_growth_constant(traj, model, scenario)
    linf0 = max(f.sup for f in traj.fields[0])
    worst = 0.0
    for t, frame in zip(traj.times, traj.fields):
        bound = linf0 * math.exp(C * t)
        worst = max(worst, max(f.sup for f in frame) / max(bound, 1e-300))
    return BoundReport("linf_growth", lhs=worst, rhs=1.0,
                       constants={"C": C, "linf0": linf0,
                                  "lip_v": model.laws[0].lip,
                                  "sup_v": model.laws[0].sup,
                                  "nu_sup": max(traj.constants["nu_sup"]),
                                  "div_nu_sup": max(traj.constants["div_nu_sup"]),
                                  "grad_conv_sup": max(
                                      traj.diagnostics.get("max_grad_conv", [0.0]) or [0.0])},
                       margin=margin)


def tv_growth_report(traj: Trajectory, pop: int = 0, margin: float = 0.1) -> BoundReport:
    """Per-frame check of the chained total-variation envelope.

    The envelope accumulates, step by step, the one-step bound
    TV(t+dt) <= TV(t) e^{kappa0 dt} + N W_N A (e^{kappa0 dt}-1)/kappa0 with
    kappa0 and the source integral A measured from the step's frozen flux.
    """
    env = traj.diagnostics.get("tv_envelope")
    if not env:
        raise ValueError("trajectory was run without bound tracking")
    worst = 0.0
    kmax = 0.0
    for frame, envelope, t in zip(traj.fields, env, traj.times):
        f = frame[pop]
        tv = tv_array(f.values, f.grid.dx, f.grid.dy)
        worst = max(worst, tv / max(envelope[pop], 1e-300))
    if traj.diagnostics.get("kappa0"):
        kmax = max(k[pop] for k in traj.diagnostics["kappa0"])
    return BoundReport("tv_growth", lhs=worst, rhs=1.0,
                       constants={"kappa0_max": kmax, "W_N": math.pi / 4.0,
                                  "N": 2},
                       margin=margin)


def max_principle_report(traj: Trajectory, ceiling: float = 1.0,
                         tol: float = 1e-10) -> BoundReport:
    """sup rho(t) <= max(sup rho_0, ceiling) and rho >= -1e-12, per frame."""
    sup0 = max(f.sup for f in traj.fields[0])
    bound = max(sup0, ceiling)
    worst = max(max(f.sup for f in frame) for frame in traj.fields)
    least = min(min(float(f.values.min()) for f in frame) for frame in traj.fields)
    rep = BoundReport("max_principle", lhs=worst, rhs=bound,
                      constants={"sup0": sup0, "floor": least}, margin=tol)
    return rep


def mass_conservation_report(traj: Trajectory, rtol: float = 1e-10) -> BoundReport:
    """Per-population relative mass drift across all frames stays below rtol."""
    worst = 0.0
    m0s = [f.mass for f in traj.fields[0]]
    for frame in traj.fields:
        for f, m0 in zip(frame, m0s):
            worst = max(worst, abs(f.mass - m0) / max(m0, 1e-300))
    return BoundReport("mass_conservation", lhs=worst, rhs=rtol,
                       constants={"mass0": m0s, "clamped_mass": traj.clamped_mass},
                       margin=0.0)


def _linear_flux_fields(conv_values, law, nu):
    speed = law(conv_values)
    return speed * nu.u, speed * nu.v


def frozen_stability_report(traj_a: Trajectory, traj_b: Trajectory,
                            cu_a, cv_a, cu_b, cv_b, grid,
                            margin: float = 0.05) -> BoundReport:
    """Stability bound for two frozen-flux runs u_t + div(u c(x)) = 0.

    kappa = 0 (no source); the flux difference enters through
    sup |c_a - c_b| (the u-derivative term) and |div(c_a - c_b)| times the
    attained sup of the solution (the divergence term).
    """
    if traj_a.times[-1] != traj_b.times[-1]:
        raise ValueError("runs end at different times")
    T = traj_a.times[-1]
    dA = grid.cell_area
    ua = traj_a.final(0).values
    ub = traj_b.final(0).values
    lhs = float(np.abs(ua - ub).sum() * dA)
    l1_init = float(np.abs(traj_a.fields[0][0].values
                           - traj_b.fields[0][0].values).sum() * dA)

    dcu = cu_a - cu_b
    dcv = cv_a - cv_b
    flux_dev_rate = float(np.hypot(dcu, dcv).max())
    ddx = np.gradient(dcu, grid.dx, axis=0)
    ddy = np.gradient(dcv, grid.dy, axis=1)
    div_l1 = float(np.abs(ddx + ddy).sum() * dA)
    vmax_attained = max(max(f[0].sup for f in traj_a.fields),
                        max(f[0].sup for f in traj_b.fields))
    tv_sup = max(tv_array(f[0].values, grid.dx, grid.dy) for f in traj_a.fields)

    rhs = stability_bound_rhs(
        l1_init=l1_init, kappa=0.0, T=T, tv_sup=tv_sup,
        flux_dev=T * flux_dev_rate, source_dev=T * vmax_attained * div_l1)
    return BoundReport("frozen_flux_stability", lhs=lhs, rhs=rhs,
                       constants={"kappa": 0.0, "tv_sup": tv_sup,
                                  "flux_dev_rate": flux_dev_rate,
                                  "div_dev_l1": div_l1,
                                  "sup_attained": vmax_attained,
                                  "l1_init": l1_init, "T": T},
                       margin=margin)
