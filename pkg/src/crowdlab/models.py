"""Velocity laws for the crowd models and right-hand sides for coupled agents.

Model kinds
-----------
- ``panic``: speed depends on the averaged (convolved) density only, the
  direction is the fixed preferred field; the sup norm of the solution may
  grow exponentially.
- ``orderly``: speed depends on the local density with v(1) = 0, and the
  direction deviates away from the gradient of the averaged density; the
  solution stays in [0, 1].
- ``multi_panic`` / ``multi_orderly``: two-population versions.
- ``coupled_leader`` / ``coupled_dogs`` / ``coupled_predator``: a
  continuum coupled with one or more discrete agents through convolution
  values at the agent positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import VectorField
from .kernels import ConvField, Kernel


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SpeedLaw:
    """Scalar speed as a function of (averaged or local) density.

    kinds:
      - ``affine_panic``: v(r) = v_max (1 - r), blended C^1 to zero on
        [1 - w, 1 + w] so the law is smooth near its cutoff and vanishes
        beyond; linear (unclipped) for r < 1 - w.
      - ``lwr_orderly``: v(rho) = v_max (1 - rho); v(1) = 0 and v is
        nonincreasing on [0, 1].
      - ``constant``: v = v_max, derivative zero (useful to switch the
        nonlocal coupling off).
    """

    kind: str = "affine_panic"
    v_max: float = 1.0
    blend_width: float = 0.05

    def __post_init__(self):
        if self.v_max <= 0:
            raise ModelError("v_max must be positive")
        if self.kind not in ("affine_panic", "lwr_orderly", "constant"):
            raise ModelError(f"unknown speed law {self.kind!r}")
        if self.kind == "affine_panic" and not (0 < self.blend_width < 0.5):
            raise ModelError("blend_width must lie in (0, 0.5)")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            out = np.full_like(r, self.v_max)
        elif self.kind == "lwr_orderly":
            out = self.v_max * (1.0 - r)
        else:
            w = self.blend_width
            out = np.where(
                r <= 1.0 - w,
                self.v_max * (1.0 - r),
                np.where(r >= 1.0 + w, 0.0,
                         self.v_max * (1.0 + w - r) ** 2 / (4.0 * w)),
            )
        return out if out.ndim else float(out)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            out = np.zeros_like(r)
        elif self.kind == "lwr_orderly":
            out = np.full_like(r, -self.v_max)
        else:
            w = self.blend_width
            out = np.where(
                r <= 1.0 - w,
                -self.v_max,
                np.where(r >= 1.0 + w, 0.0,
                         -self.v_max * (1.0 + w - r) / (2.0 * w)),
            )
        return out if out.ndim else float(out)

    def flux(self, rho):
        """rho * v(rho), the scalar part of the orderly flux."""
        rho = np.asarray(rho, dtype=float)
        out = rho * self(rho)
        return out if out.ndim else float(out)

    def flux_derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = self(rho) + rho * self.derivative(rho)
        return out if out.ndim else float(out)

    @property
    def lip(self) -> float:
        return 0.0 if self.kind == "constant" else self.v_max

    @property
    def sup(self) -> float:
        """Sup of |v| over nonnegative arguments."""
        return self.v_max


@dataclass(frozen=True)
class AgentSpec:
    """Initial data for one discrete agent.

    ``steering`` is only used by leaders: a callable t -> (2,) array. The
    predator carries a velocity (second-order dynamics).
    """

    kind: str
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    steering: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("leader", "dog", "predator"):
            raise ModelError(f"unknown agent kind {self.kind!r}")
        if self.kind == "leader" and self.steering is None:
            raise ModelError("leader agents need a steering function")


@dataclass
class AgentState:
    kind: str
    position: np.ndarray
    velocity: np.ndarray
    steering: Callable[[float], np.ndarray] | None = None

    @classmethod
    def from_spec(cls, spec: AgentSpec) -> "AgentState":
        return cls(kind=spec.kind,
                   position=np.array(spec.position, dtype=float),
                   velocity=np.array(spec.velocity, dtype=float),
                   steering=spec.steering)

    def copy(self) -> "AgentState":
        return AgentState(self.kind, self.position.copy(), self.velocity.copy(),
                          self.steering)


_KINDS = ("panic", "orderly", "multi_panic", "multi_orderly",
          "coupled_leader", "coupled_dogs", "coupled_predator")


@dataclass(frozen=True)
class ModelSpec:
    """Which velocity law applies, with its populations and parameters."""

    kind: str
    laws: tuple[SpeedLaw, ...]
    kernels: tuple[Kernel, ...]
    eps_self: float = 0.0
    eps_other: float = 0.0
    deviation: float = 1.0
    agents: tuple[AgentSpec, ...] = ()
    prey_base: str = "nu"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        k = len(self.laws)
        if k < 1 or len(self.kernels) != k:
            raise ModelError("need one speed law and one kernel per population")
        if self.kind in ("panic", "orderly") and k != 1:
            raise ModelError(f"{self.kind} is a one-population model")
        if self.kind == "multi_panic" and k < 2:
            raise ModelError("multi_panic needs at least two populations")
        if self.kind == "multi_orderly" and k != 2:
            raise ModelError("multi_orderly is formulated for exactly two populations")
        if self.eps_self < 0 or self.eps_other < 0:
            raise ModelError("interaction weights must be nonnegative")
        if self.kind.startswith("coupled") and not self.agents:
            raise ModelError(f"{self.kind} needs at least one agent")
        if self.prey_base not in ("nu", "ones"):
            raise ModelError("prey_base must be 'nu' or 'ones'")
        for a in self.agents:
            expected = {"coupled_leader": "leader", "coupled_dogs": "dog",
                        "coupled_predator": "predator"}.get(self.kind)
            if expected and a.kind != expected:
                raise ModelError(f"{self.kind} expects {expected} agents, got {a.kind}")

    @property
    def populations(self) -> int:
        return len(self.laws)

    @property
    def is_orderly(self) -> bool:
        """Orderly-type models have a flux nonlinear in the local density."""
        return self.kind != "panic" and self.kind != "multi_panic"

    @property
    def max_kernel_radius(self) -> float:
        return max(k.radius for k in self.kernels)


def _normalized_grad(conv: ConvField) -> tuple[np.ndarray, np.ndarray]:
    denom = np.sqrt(1.0 + conv.grad_x ** 2 + conv.grad_y ** 2)
    return conv.grad_x / denom, conv.grad_y / denom


def panic_velocity(law: SpeedLaw, conv: ConvField, nu: VectorField) -> VectorField:
    """V = v(rho * eta) nu: speed from the averaged density, fixed direction."""
    if conv.shape != nu.shape:
        raise ModelError("convolution and direction field shapes differ")
    speed = law(conv.values)
    return VectorField(speed * nu.u, speed * nu.v)


def orderly_velocity(law: SpeedLaw, rho: np.ndarray, conv: ConvField,
                     nu: VectorField, deviation: float = 1.0) -> VectorField:
    """V = v(rho) (nu - eps * grad(rho*eta)/sqrt(1 + |grad(rho*eta)|^2)).

    The deviation term has norm < 1 by construction, so the velocity is
    bounded by v(rho) (|nu| + eps).
    """
    if conv.shape != nu.shape or np.shape(rho) != nu.shape:
        raise ModelError("field shapes differ")
    gx, gy = _normalized_grad(conv)
    speed = law(rho)
    return VectorField(speed * (nu.u - deviation * gx),
                       speed * (nu.v - deviation * gy))


def multi_panic_velocity(law: SpeedLaw, convs: Sequence[ConvField],
                         nu_i: VectorField) -> VectorField:
    """V_i = v(sum_j rho_j * eta_j) nu_i: speed from the total averaged density."""
    if len(convs) < 2:
        raise ModelError("multi_panic_velocity needs at least two populations")
    total = convs[0].values
    for c in convs[1:]:
        total = total + c.values
    speed = law(total)
    return VectorField(speed * nu_i.u, speed * nu_i.v)


def multi_orderly_velocity(law_i: SpeedLaw, rho_i: np.ndarray,
                           conv_self: ConvField, conv_other: ConvField,
                           nu_i: VectorField, eps_self: float,
                           eps_other: float) -> VectorField:
    """Two-population orderly velocity with self- and cross-repulsion."""
    if eps_self < 0 or eps_other < 0:
        raise ModelError("interaction weights must be nonnegative")
    gsx, gsy = _normalized_grad(conv_self)
    gox, goy = _normalized_grad(conv_other)
    speed = law_i(rho_i)
    return VectorField(speed * (nu_i.u - eps_self * gsx - eps_other * gox),
                       speed * (nu_i.v - eps_self * gsy - eps_other * goy))


# ---------------------------------------------------------------------------
# agent right-hand sides and agent-driven continuum directions


def agent_rhs_leader(conv_at_p: float, psi: np.ndarray) -> np.ndarray:
    """Leader velocity (1 + rho*eta(p)) psi: waits when few followers are near."""
    return (1.0 + conv_at_p) * np.asarray(psi, dtype=float)


def follower_velocity(law: SpeedLaw, rho_at_x, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """v(rho) (p - x) exp(-|p - x|): followers head for the leader."""
    d = np.asarray(p, dtype=float) - np.asarray(x, dtype=float)
    r = np.linalg.norm(d, axis=-1, keepdims=d.ndim > 1)
    if d.ndim == 1:
        r = np.linalg.norm(d)
    speed = law(rho_at_x)
    return np.asarray(speed)[..., None] * d * np.exp(-r)[..., None] \
        if d.ndim > 1 else speed * d * np.exp(-r)


def agent_rhs_dog(conv_grad_at_p: np.ndarray) -> np.ndarray:
    """Perpendicular of the averaged-density gradient, normalized below speed 1."""
    g = np.asarray(conv_grad_at_p, dtype=float)
    perp = np.array([-g[1], g[0]])
    return perp / np.sqrt(1.0 + g @ g)


def agent_rhs_predator(conv_grad_at_p: np.ndarray) -> np.ndarray:
    """Predator acceleration: straight toward the maximal averaged density."""
    return np.asarray(conv_grad_at_p, dtype=float)


def repulsion_from(points: np.ndarray, agent_positions: Sequence[np.ndarray]) -> np.ndarray:
    """sum_i (x - p_i) exp(-|x - p_i|) evaluated at an (n, 2) array of points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros_like(pts)
    for p in agent_positions:
        d = pts - np.asarray(p, dtype=float)[None, :]
        r = np.hypot(d[:, 0], d[:, 1])
        out += d * np.exp(-r)[:, None]
    return out if np.asarray(points).ndim > 1 else out[0]


def prey_velocity(law: SpeedLaw, rho_at_x, x: np.ndarray, p: np.ndarray,
                  base_dir: np.ndarray) -> np.ndarray:
    """v(rho) (base + (x - p) exp(-|x - p|)): preys drift and flee the predator."""
    d = np.asarray(x, dtype=float) - np.asarray(p, dtype=float)
    r = np.linalg.norm(d)
    speed = law(rho_at_x)
    return speed * (np.asarray(base_dir, dtype=float) + d * np.exp(-r))
