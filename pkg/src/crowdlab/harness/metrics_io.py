"""Metric CSV and PGM frame writers, plus the derived run metrics."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..fv_solver import MetricRow
from ..scenario import DensityField

METRICS_HEADER = "t,pop,mass,linf,tv,support_ok,evac_frac"


def write_metrics(rows: list[MetricRow], path) -> None:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join([repr(float(r.t)), str(r.pop), repr(float(r.mass)),
                               repr(float(r.linf)), repr(float(r.tv)),
                               "1" if r.support_ok else "0",
                               repr(float(r.evac_frac))]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path) -> list[MetricRow]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path} is not a metrics CSV (bad header)")
    rows = []
    for line in lines[1:]:
        t, pop, mass, linf, tv, ok, evac = line.split(",")
        rows.append(MetricRow(t=float(t), pop=int(pop), mass=float(mass),
                              linf=float(linf), tv=float(tv),
                              support_ok=ok == "1", evac_frac=float(evac)))
    return rows


def write_pgm(field: DensityField, rho_display: float, path) -> None:
    """Binary PGM (P5), gray = clamp(rho / rho_display) * 255, top row first."""
    scaled = np.clip(field.values / rho_display, 0.0, 1.0) * 255.0
    img = np.rint(scaled).astype(np.uint8)
    rows = img.T[::-1, :]  # top row = max y
    header = f"P5\n{rows.shape[1]} {rows.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + rows.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of write_pgm up to the gray quantization; returns [ix, iy]."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
    return img[::-1, :].T


def lane_count(rho, axis: str = "x", threshold: float = 0.25) -> int:
    """Number of lanes in the transverse profile of a density field.

    The field is averaged along the movement axis; lanes are the
    plateau-aware strict local maxima of that profile above
    threshold * max. A uniform strip counts as one lane.
    """
    values = rho.values if hasattr(rho, "values") else np.asarray(rho, dtype=float)
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    profile = values.mean(axis=0 if axis == "x" else 1)
    top = profile.max()
    if top <= 0:
        return 0
    cut = threshold * top
    # compress plateaus, then count interior strict maxima above the cut
    keep = np.concatenate([[True], np.diff(profile) != 0.0])
    comp = profile[keep]
    count = 0
    for i in range(len(comp)):
        left = comp[i - 1] if i > 0 else -math.inf
        right = comp[i + 1] if i + 1 < len(comp) else -math.inf
        if comp[i] > left and comp[i] > right and comp[i] >= cut:
            count += 1
    return count


def evacuation_time(rows: list[MetricRow], fraction: float, pop: int = 0) -> float:
    """First time the remaining-in-room mass fraction drops to `fraction`.

    Returns +inf when the threshold is never reached.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must lie in (0, 1)")
    for r in rows:
        if r.pop == pop and r.evac_frac <= fraction:
            return r.t
    return math.inf
