"""Scenario execution: solver driving, bound evaluation, and artifacts.

A run writes into its output directory:

- ``metrics.csv``       fixed-header metric log, one row per population per
                        logged frame
- ``frame_<pop>_<step>.pgm``  density frames (when frames are enabled)
- ``final_<pop>.npy``   final density arrays (always, for comparisons)
- ``manifest.txt``      config echo, code version, grid, timings, and every
                        constant used by the bound reports
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..bounds import (linf_growth_report, mass_conservation_report,
                      max_principle_report, tv_growth_report)
from ..fv_solver import SolverAbort, Trajectory, run
from ..geometry import is_support_contained
from ..transport_metrics import BoundReport
from .config import RunConfig, serialize_config
from .metrics_io import evacuation_time, lane_count, write_metrics, write_pgm
from .scenarios import build_preset


@dataclass
class RunResult:
    name: str
    out_dir: Path
    trajectory: Trajectory
    reports: list[BoundReport]
    elapsed: float
    extras: dict = field(default_factory=dict)

    @property
    def all_bounds_ok(self) -> bool:
        return all(r.satisfied for r in self.reports)


def _bound_reports(scen, model, traj) -> list[BoundReport]:
    reports = [mass_conservation_report(traj)]
    if model.kind in ("panic", "multi_panic"):
        reports.append(linf_growth_report(traj, model, scen))
    else:
        reports.append(max_principle_report(traj))
    reports.append(tv_growth_report(traj))
    return reports


def _manifest_text(cfg: RunConfig, scen, model, solver, traj, reports,
                   elapsed, extras) -> str:
    lines = ["# run manifest", ""]
    lines.append("[meta]")
    lines.append(f'code_version = "{__version__}"')
    lines.append(f'scenario = "{scen.name}"')
    lines.append(f"elapsed_seconds = {elapsed!r}")
    lines.append(f"steps = {len(traj.dts)}")
    lines.append(f"frames = {len(traj.times)}")
    lines.append(f"clamped_mass = {traj.clamped_mass!r}")
    lines.append("")
    lines.append("[grid]")
    g = traj.grid
    lines.append(f"nx = {g.nx}")
    lines.append(f"ny = {g.ny}")
    lines.append(f"dx = {g.dx!r}")
    lines.append(f"dy = {g.dy!r}")
    lines.append(f"origin_x = {g.origin[0]!r}")
    lines.append(f"origin_y = {g.origin[1]!r}")
    lines.append("")
    lines.append("[solver]")
    lines.append(f'nonlocal_update = "{solver.nonlocal_update}"')
    lines.append(f"cfl = {solver.cfl!r}")
    lines.append(f"t_end = {solver.t_end!r}")
    lines.append("")
    lines.append("[constants]")
    for key, val in sorted(traj.constants.items()):
        lines.append(f"{key} = {val!r}")
    lines.append("")
    for rep in reports:
        lines.append(f"[bounds.{rep.name}]")
        lines.append(f"lhs = {rep.lhs!r}")
        lines.append(f"rhs = {rep.rhs!r}")
        lines.append(f"margin = {rep.margin!r}")
        lines.append(f"satisfied = {'true' if rep.satisfied else 'false'}")
        for key, val in sorted(rep.constants.items()):
            lines.append(f"const_{key} = {val!r}")
        lines.append("")
    if extras:
        lines.append("[extras]")
        for key, val in sorted(extras.items()):
            lines.append(f"{key} = {val!r}")
        lines.append("")
    lines.append("[config_echo]")
    for raw in serialize_config(cfg).splitlines():
        lines.append(f"# {raw}")
    return "\n".join(lines) + "\n"


def _write_outputs(cfg: RunConfig, scen, model, solver, traj, reports,
                   out_dir: Path, frames: bool, elapsed: float, extras: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(traj.metrics, out_dir / "metrics.csv")
    for pop in range(traj.populations):
        np.save(out_dir / f"final_{pop}.npy", traj.final(pop).values)
    if frames:
        for step, frame in zip(traj.frame_steps, traj.fields):
            for pop, f in enumerate(frame):
                write_pgm(f, scen.rho_display,
                          out_dir / f"frame_{pop}_{step:06d}.pgm")
    (out_dir / "manifest.txt").write_text(
        _manifest_text(cfg, scen, model, solver, traj, reports, elapsed, extras),
        encoding="utf-8")


def _execute(cfg: RunConfig, scen, model, solver, out_dir: Path,
             frames: bool) -> RunResult:
    t0 = time.perf_counter()
    traj = run(scen, model, solver)
    elapsed = time.perf_counter() - t0
    reports = _bound_reports(scen, model, traj)
    extras = {}
    if scen.property_p:
        ok = all(is_support_contained(f, scen.mask, tol=1e-10)
                 for frame in traj.fields for f in frame)
        extras["support_contained_all_frames"] = ok
    if scen.room is not None:
        extras["evacuation_time_10pct"] = evacuation_time(traj.metrics, 0.1)
    if scen.name == "corridor":
        mid = traj.frame_at(5.043) if 5.043 in traj.times else traj.final(0)
        extras["lane_count_t5"] = lane_count(mid, axis="x", threshold=0.25)
    _write_outputs(cfg, scen, model, solver, traj, reports, out_dir, frames,
                   elapsed, extras)
    return RunResult(name=scen.name, out_dir=out_dir, trajectory=traj,
                     reports=reports, elapsed=elapsed, extras=extras)


def run_scenario(cfg: RunConfig, out_dir, frames: bool = False,
                 until: float | None = None) -> list[RunResult]:
    """Run a configured scenario and write its artifacts.

    The braess scenario runs as a pair (with and without the columns) in
    sibling subdirectories and records both evacuation times. On solver
    aborts a diagnostic frame is written before the exception propagates.
    """
    out_dir = Path(out_dir)
    if until is not None:
        cfg = RunConfig(**{**cfg.__dict__, "until": until})
    names = ["braess", "braess_empty"] if cfg.scenario == "braess" else [cfg.scenario]
    results = []
    for name in names:
        sub_cfg = RunConfig(**{**cfg.__dict__, "scenario": name})
        scen, model, solver = build_preset(sub_cfg)
        sub_dir = out_dir / name if len(names) > 1 else out_dir
        try:
            results.append(_execute(sub_cfg, scen, model, solver, sub_dir, frames))
        except SolverAbort as exc:
            sub_dir.mkdir(parents=True, exist_ok=True)
            if exc.fields:
                for pop, vals in enumerate(exc.fields):
                    np.save(sub_dir / f"abort_{pop}.npy", vals)
            (sub_dir / "abort.txt").write_text(f"{exc}\n", encoding="utf-8")
            raise
    if len(results) == 2:
        t_with = results[0].extras.get("evacuation_time_10pct")
        t_without = results[1].extras.get("evacuation_time_10pct")
        for r in results:
            r.extras["evac_time_with_columns"] = t_with
            r.extras["evac_time_without_columns"] = t_without
    return results
