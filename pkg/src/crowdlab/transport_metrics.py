"""Discrete total variation, exact Wasserstein-1 distances, and evaluators
for the quantitative stability and total-variation bounds.

The W1 solver is an exact min-cost-flow computation (successive shortest
augmenting paths with node potentials) on the bipartite atom graph with
Euclidean costs. It is meant for small supports where the inequality tests
need exactness; entropic or sliced approximations are out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported positive measure: atoms (x_j, w_j) with w_j > 0."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pos.shape[0] != w.shape[0]:
            raise MetricError("positions and weights disagree on atom count")
        if not (np.isfinite(pos).all() and np.isfinite(w).all()):
            raise MetricError("non-finite atom data")
        keep = w > 0.0
        if (w < 0.0).any():
            raise MetricError("atom weights must be positive")
        pos = pos[keep].copy()
        w = w[keep].copy()
        if w.size == 0:
            raise MetricError("measure has no atoms with positive weight")
        pos.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class BoundReport:
    """One evaluated inequality: lhs <= rhs * (1 + margin)."""

    name: str
    lhs: float
    rhs: float
    constants: dict
    margin: float

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.margin) + 1e-300

    @property
    def slack(self) -> float:
        """rhs*(1+margin) - lhs, nonnegative iff satisfied."""
        return self.rhs * (1.0 + self.margin) - self.lhs


def _as_measure(m) -> DiscreteMeasure:
    return m if isinstance(m, DiscreteMeasure) else DiscreteMeasure(*m)


def w1_discrete(mu, nu, max_atoms: int = 2000, mass_tol: float = 1e-12) -> float:
    """Exact Wasserstein-1 distance between equal-mass discrete measures.

    Successive shortest augmenting paths with potentials; every augmenting
    path is found by a dense Dijkstra over the bipartite residual graph, so
    the result is the exact optimal transport cost (up to roundoff).
    """
    mu = _as_measure(mu)
    nu = _as_measure(nu)
    if mu.dim != nu.dim:
        raise MetricError("measures live in different dimensions")
    m, n = mu.weights.size, nu.weights.size
    if m > max_atoms or n > max_atoms:
        raise MetricError(f"support too large for the exact solver (> {max_atoms} atoms)")
    total = max(mu.mass, nu.mass)
    if abs(mu.mass - nu.mass) > mass_tol * max(1.0, total):
        raise MetricError(f"mass mismatch: {mu.mass!r} vs {nu.mass!r}")

    diff = mu.positions[:, None, :] - nu.positions[None, :, :]
    C = np.sqrt((diff ** 2).sum(axis=2))

    rem_a = mu.weights.copy()
    rem_b = nu.weights.copy() * (mu.mass / nu.mass)  # exact balance
    phi = np.zeros(m + n)
    flow = np.zeros((m, n))
    stop = 1e-14 * max(total, 1.0)

    INF = math.inf
    while rem_a.sum() > stop:
        # Dijkstra on the residual graph in reduced costs
        dist = np.full(m + n, INF)
        dist[:m][rem_a > 0.0] = 0.0
        done = np.zeros(m + n, dtype=bool)
        parent = np.full(m + n, -1, dtype=np.intp)
        target = -1
        while True:
            cand = np.where(done, INF, dist)
            x = int(np.argmin(cand))
            if cand[x] == INF:
                break
            done[x] = True
            if x >= m and rem_b[x - m] > stop:
                target = x
                break
            if x < m:
                nd = dist[x] + C[x, :] + phi[x] - phi[m:]
                # never relax finalized nodes: floating-point potential dust
                # could otherwise rewrite tree parents and create cycles
                better = (nd < dist[m:]) & ~done[m:]
                if better.any():
                    idx = np.where(better)[0]
                    dist[m + idx] = nd[idx]
                    parent[m + idx] = x
            else:
                j = x - m
                srcs = np.where(flow[:, j] > 0.0)[0]
                if srcs.size:
                    nd = dist[x] - C[srcs, j] + phi[x] - phi[srcs]
                    better = (nd < dist[srcs]) & ~done[srcs]
                    if better.any():
                        idx = srcs[better]
                        dist[idx] = nd[better]
                        parent[idx] = x
        if target < 0:
            raise MetricError("no augmenting path found (mass imbalance beyond tolerance)")
        D = dist[target]

        # bottleneck along the alternating path
        amount = rem_b[target - m]
        x = target
        while True:
            p = parent[x]
            if x >= m:
                if p < 0:
                    break
                x = p
            else:
                if p < 0:
                    amount = min(amount, rem_a[x])
                    break
                amount = min(amount, flow[x, p - m])
                x = p
        # augment
        x = target
        while True:
            p = parent[x]
            if x >= m:
                if p < 0:
                    break
                flow[p, x - m] += amount
                x = p
            else:
                if p < 0:
                    rem_a[x] -= amount
                    break
                flow[x, p - m] -= amount
                x = p
        rem_b[target - m] -= amount
        phi += np.minimum(dist, D)

    return float((flow * C).sum())


def w1_1d(mu, nu, mass_tol: float = 1e-12) -> float:
    """W1 on the line: the L1 distance between the two CDFs."""
    mu = _as_measure(mu)
    nu = _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        raise MetricError("w1_1d needs atoms on a line")
    total = max(mu.mass, nu.mass)
    if abs(mu.mass - nu.mass) > mass_tol * max(1.0, total):
        raise MetricError(f"mass mismatch: {mu.mass!r} vs {nu.mass!r}")
    xs = np.concatenate([mu.positions[:, 0], nu.positions[:, 0]])
    order = np.argsort(xs, kind="stable")
    xs_sorted = xs[order]
    deltas = np.concatenate([mu.weights, -nu.weights * (mu.mass / nu.mass)])[order]
    gaps = np.diff(xs_sorted)
    F = np.cumsum(deltas)[:-1]
    return float(np.abs(F * gaps).sum())


def kr_duality_check(mu, nu, probes: int = 256, seed: int = 0) -> float:
    """Best lower bound on W1 from a family of 1-Lipschitz probe functions.

    The family mixes distances to atom locations and to random points,
    maxima of random affine functions with gradient norm at most 1, and
    random cone combinations min_j (|z - a_j| + psi_j) anchored at the
    atoms (every such function is 1-Lipschitz by construction). By weak
    duality the returned value never exceeds w1_discrete(mu, nu); with
    Dirac measures the atom-distance probe makes it tight.
    """
    mu = _as_measure(mu)
    nu = _as_measure(nu)
    if abs(mu.mass - 1.0) > 1e-8 or abs(nu.mass - 1.0) > 1e-8:
        raise MetricError("duality probes are defined for probability measures")
    rng = np.random.default_rng(seed)
    pts = np.vstack([mu.positions, nu.positions])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    diam = float(np.linalg.norm(span))

    def pairing(phi_mu: np.ndarray, phi_nu: np.ndarray) -> float:
        return abs(float(phi_mu @ mu.weights - phi_nu @ nu.weights))

    def cone_min(anchors: np.ndarray, psi: np.ndarray) -> float:
        dmu = np.linalg.norm(mu.positions[:, None, :] - anchors[None], axis=2)
        dnu = np.linalg.norm(nu.positions[:, None, :] - anchors[None], axis=2)
        return pairing((dmu + psi[None, :]).min(axis=1),
                       (dnu + psi[None, :]).min(axis=1))

    best = 0.0
    used = 0
    # distance to each atom, then distance to the two supports
    for a in pts[:probes]:
        dmu = np.linalg.norm(mu.positions - a, axis=1)
        dnu = np.linalg.norm(nu.positions - a, axis=1)
        best = max(best, pairing(dmu, dnu))
        used += 1
    for anchors in (mu.positions, nu.positions):
        if used >= probes:
            break
        best = max(best, cone_min(anchors, np.zeros(anchors.shape[0])))
        used += 1
    while used < probes:
        r = rng.random()
        if r < 0.25:
            a = lo - 0.25 * span + rng.random(pts.shape[1]) * 1.5 * span
            dmu = np.linalg.norm(mu.positions - a, axis=1)
            dnu = np.linalg.norm(nu.positions - a, axis=1)
            best = max(best, pairing(dmu, dnu))
        elif r < 0.5:
            k = rng.integers(2, 6)
            dirs = rng.normal(size=(k, pts.shape[1]))
            dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
            scale = rng.random((k, 1))
            offs = rng.normal(size=k) * diam
            phi_mu = (mu.positions @ (dirs * scale).T + offs).max(axis=1)
            phi_nu = (nu.positions @ (dirs * scale).T + offs).max(axis=1)
            best = max(best, pairing(phi_mu, phi_nu))
        else:
            anchors = nu.positions if rng.random() < 0.5 else mu.positions
            psi = rng.random(anchors.shape[0]) * diam * rng.random()
            best = max(best, cone_min(anchors, psi))
        used += 1
    return best


# ---------------------------------------------------------------------------
# total variation


def tv_array(values: np.ndarray, dx: float, dy: float) -> float:
    """Anisotropic discrete total variation on a cell array.

    sum |u[i+1,j] - u[i,j]| dy + sum |u[i,j+1] - u[i,j]| dx, matching the
    face stencil of the conservative scheme. Fields are expected to be
    compactly supported inside the grid; no boundary terms are added.
    """
    v = np.asarray(values, dtype=float)
    return float(np.abs(np.diff(v, axis=0)).sum() * dy
                 + np.abs(np.diff(v, axis=1)).sum() * dx)


def total_variation(rho) -> float:
    """TV of a DensityField (or of anything with .values and .grid)."""
    return tv_array(rho.values, rho.grid.dx, rho.grid.dy)


def dimension_weight(n: int) -> float:
    """W_N = integral of cos(theta)^N over [0, pi/2]; closed forms for N <= 2."""
    if n == 1:
        return 1.0
    if n == 2:
        return math.pi / 4.0
    from scipy.integrate import quad

    val, _ = quad(lambda th: math.cos(th) ** n, 0.0, math.pi / 2.0)
    return float(val)


def tv_bound_rhs(tv0: float, kappa0: float, T: float, source_term: float,
                 n_dim: int = 2) -> float:
    """Right-hand side of the total-variation growth bound.

    ``source_term`` must already carry its exponential-in-time weight:
    integral over [0, T] of exp(kappa0 (T - t)) * (spatial integral of the
    gradient of the effective source) dt. With kappa0 = 0 and no source the
    bound reduces to tv0; with data independent of the state it reduces to
    tv0 + N W_N * (plain space-time integral).
    """
    if n_dim < 1:
        raise MetricError("dimension must be >= 1")
    return tv0 * math.exp(kappa0 * T) + n_dim * dimension_weight(n_dim) * source_term


def stability_bound_rhs(l1_init: float, kappa: float, T: float, tv_sup: float,
                        flux_dev: float, source_dev: float) -> float:
    """Right-hand side of the flow/source stability bound.

    ``flux_dev``  : integral over [0, T] of sup |d/du (f - g)|.
    ``source_dev``: integral over [0, T] of exp(kappa (T - tau)) times the
                    spatial integral of sup_u |(F - G) - div(f - g)|.
    """
    if min(l1_init, tv_sup, flux_dev, source_dev) < 0:
        raise MetricError("bound inputs must be nonnegative")
    return math.exp(kappa * T) * (l1_init + tv_sup * flux_dev) + source_dev
