import math

import numpy as np
import pytest
from scipy.optimize import brentq

from crowdlab import (DensityField, DiscreteMeasure, LagrangianConfig,
                      LagrangianError, ParticleEnsemble, SpeedLaw, build_grid,
                      lagrangian_step, make_mollifier, push_forward,
                      rasterize, run_lagrangian, sample_particles,
                      w1_discrete)
from crowdlab.kernels import eval_convolution_at
from crowdlab.models import ModelSpec

from conftest import bump_values, open_scenario


def panic_model(v_max=1.0, R=0.5, kind="affine_panic", pops=1, radii=None):
    radii = radii or (R,) * pops
    return ModelSpec("panic" if pops == 1 else "multi_panic",
                     (SpeedLaw(kind, v_max=v_max),) * pops,
                     tuple(make_mollifier(r) for r in radii))


def measure_of(e: ParticleEnsemble) -> DiscreteMeasure:
    return DiscreteMeasure(e.positions, e.weights)


# --- sampling -----------------------------------------------------------------

def test_sample_atoms_verbatim():
    e = sample_particles([((1.0, 2.0), 0.7)], n=1)
    assert np.allclose(e.positions, [[1.0, 2.0]]) and np.allclose(e.weights, [0.7])


def test_sample_uniform_square_is_lattice():
    g = build_grid(32, 32, 0.125, 0.125)
    vals = np.zeros(g.shape)
    vals[8:24, 8:24] = 1.0  # 16x16 occupied cells
    e = sample_particles(DensityField(g, vals), n=16)  # k = 4 -> 4x4 blocks
    assert e.n == 16
    assert np.allclose(e.weights, e.weights[0])
    xs = np.unique(np.round(e.positions[:, 0], 12))
    ys = np.unique(np.round(e.positions[:, 1], 12))
    assert xs.size == 4 and ys.size == 4
    assert np.allclose(np.diff(xs), np.diff(xs)[0])


def test_sample_conserves_mass():
    scen = open_scenario(nx=64, ny=64, blobs=((2.0, 2.0, 0.9, 0.8),))
    e = sample_particles(scen.rho0[0], n=10_000)
    assert abs(e.mass - scen.rho0[0].mass) <= 1e-12 * scen.rho0[0].mass


def test_sample_rejects_zero_density():
    g = build_grid(8, 8, 0.5, 0.5)
    with pytest.raises(LagrangianError):
        sample_particles(DensityField(g, np.zeros(g.shape)), n=10)


# --- stepping ----------------------------------------------------------------

def constant_nu(c):
    c = np.asarray(c, dtype=float)
    return lambda pts: np.tile(c, (np.atleast_2d(pts).shape[0], 1))


def test_constant_velocity_translates_exactly():
    model = panic_model(kind="constant", v_max=1.3)
    e = ParticleEnsemble(np.array([[0.0, 0.0], [1.0, 0.5]]), np.array([0.5, 0.5]))
    out = lagrangian_step([e], model, [constant_nu((0.6, -0.8))], dt=0.25)[0]
    shift = 1.3 * 0.25 * np.array([0.6, -0.8])
    assert np.allclose(out.positions, e.positions + shift, atol=1e-15)
    assert np.array_equal(out.weights, e.weights)


def test_single_particle_matches_fine_reference():
    # one particle: its own averaged density is constant, so the flow is a
    # smooth autonomous ODE; RK4 at dt must match RK4 at dt/100 to 1e-10
    model = panic_model(v_max=1.0, R=0.5)

    def swirl(pts):
        pts = np.atleast_2d(pts)
        return np.column_stack([-np.sin(pts[:, 1]), np.cos(pts[:, 0])])

    e0 = ParticleEnsemble(np.array([[0.3, -0.2]]), np.array([0.8]))
    coarse = [e0]
    t = 0.0
    for _ in range(20):
        coarse = lagrangian_step(coarse, model, [swirl], dt=0.05, t=t)
        t += 0.05
    fine = [e0]
    t = 0.0
    for _ in range(2000):
        fine = lagrangian_step(fine, model, [swirl], dt=0.0005, t=t)
        t += 0.0005
    assert np.abs(coarse[0].positions - fine[0].positions).max() <= 1e-10


def test_dirac_coupling_velocity_formula():
    # population 2 is a single agent: its velocity must equal
    # v(rho1*eta1(p) + eta2(0)) nu2(p)
    from crowdlab.lagrangian import particle_velocities

    law = SpeedLaw("affine_panic", v_max=1.0)
    k1, k2 = make_mollifier(0.5), make_mollifier(0.25)
    model = ModelSpec("multi_panic", (law, law), (k1, k2))
    rng = np.random.default_rng(0)
    crowd = ParticleEnsemble(rng.random((40, 2)), np.full(40, 1.0 / 40))
    p = np.array([0.6, 0.4])
    agent = ParticleEnsemble(p[None, :], np.array([1.0]))
    nu1 = constant_nu((1.0, 0.0))
    nu2 = constant_nu((0.0, 1.0))
    vels = particle_velocities(model, [nu1, nu2], [crowd, agent])
    conv = eval_convolution_at(crowd, k1, p) + k2([[0.0, 0.0]])[0]
    expected = law(conv) * np.array([0.0, 1.0])
    assert np.allclose(vels[1][0], expected, atol=1e-12)


def test_run_conserves_mass_and_is_deterministic():
    scen = open_scenario(nx=48, ny=48, blobs=((1.6, 2.0, 0.8, 0.8),))
    model = panic_model(v_max=1.0, R=0.5)
    cfg = LagrangianConfig(t_end=0.4, n_particles=900, store_stride=4)
    t1 = run_lagrangian(scen, model, cfg)
    t2 = run_lagrangian(scen, model, cfg)
    for frame in t1.frames:
        assert frame[0].mass == t1.frames[0][0].mass  # weights untouched
    for fa, fb in zip(t1.frames, t2.frames):
        assert np.array_equal(fa[0].positions, fb[0].positions)


def test_push_forward_identities(rng):
    e = ParticleEnsemble(rng.random((50, 2)), rng.random(50) + 0.1)
    same = push_forward(e, lambda p: p)
    assert np.array_equal(same.positions, e.positions)

    c = np.array([0.7, -0.3])
    total = e.mass
    unit = ParticleEnsemble(e.positions, e.weights / total)
    moved = push_forward(unit, lambda p: p + c)
    assert np.isclose(w1_discrete(measure_of(unit), measure_of(moved)),
                      np.linalg.norm(c), atol=1e-9)

    A = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    img = push_forward(e, lambda p: p @ A.T + b)
    for k in range(3):  # polynomial probes of the defining identity
        probe = lambda x: (x[:, 0] ** k) * (x[:, 1] + 1.0)
        lhs = (probe(img.positions) * img.weights).sum()
        rhs = (probe(e.positions @ A.T + b) * e.weights).sum()
        assert abs(lhs - rhs) <= 1e-14 * max(1.0, abs(rhs))


def test_rasterize_conserves_mass():
    g = build_grid(16, 16, 0.25, 0.25)
    rng = np.random.default_rng(1)
    e = ParticleEnsemble(rng.random((200, 2)) * 3.5 + 0.25, rng.random(200) + 0.1)
    f = rasterize(e, g)
    assert abs(f.mass - e.mass) <= 1e-12 * e.mass


# --- stability estimate and contraction (frozen drivers) ----------------------

def rotation_nu(center, omega):
    c = np.asarray(center, dtype=float)

    def f(pts):
        pts = np.atleast_2d(pts)
        d = pts - c[None, :]
        return omega * np.column_stack([-d[:, 1], d[:, 0]])

    return f


def translating_driver(base: ParticleEnsemble, velocity):
    v = np.asarray(velocity, dtype=float)

    def f(t):
        return [base.moved_to(base.positions + t * v[None, :])]

    return f


def stability_constants(law, kernel, omega, r_max, mass=1.0):
    lip_x = law.sup * omega              # V(x,a) = v(a) nu(x), nu linear
    lip_r = law.lip * omega * r_max      # |nu|_inf over the reachable disk
    C = lip_x + lip_r * kernel.lip * mass
    Cp = lip_r * kernel.lip * mass
    return C, Cp


def random_cloud(rng, n, center, spread=0.3):
    pos = np.asarray(center) + rng.normal(scale=spread, size=(n, 2))
    w = rng.random(n) + 0.2
    return ParticleEnsemble(pos, w / w.sum())


def test_wasserstein_stability_estimate(rng):
    # two runs with frozen drivers r, s:
    # W1(rho_T, sigma_T) <= e^{CT} W1(rho0, sigma0) + T e^{CT} C' sup_t W1(r_t, s_t)
    law = SpeedLaw("affine_panic", v_max=1.0)
    kernel = make_mollifier(0.8)
    model = ModelSpec("panic", (law,), (kernel,))
    omega = 0.6
    center = (0.0, 0.0)
    T = 0.5
    dt = 0.05
    for trial in range(3):
        rho0 = random_cloud(rng, 60, (0.5, 0.2))
        sig0 = random_cloud(rng, 50, (0.45, 0.3))
        r = translating_driver(random_cloud(rng, 30, (0.2, 0.1)), (0.3, 0.1))
        s = translating_driver(random_cloud(rng, 25, (0.3, 0.2)), (0.25, 0.15))
        nu = rotation_nu(center, omega)
        cfgs = dict(model=model, nu_fns=[nu], cfg=LagrangianConfig(t_end=T, dt=dt))
        ta = run_lagrangian(None, ensembles=[rho0], driver=r, **cfgs)
        tb = run_lagrangian(None, ensembles=[sig0], driver=s, **cfgs)

        r_max = max(np.linalg.norm(e.positions, axis=1).max()
                    for fr in (ta.frames + tb.frames) for e in fr) * 1.01
        C, Cp = stability_constants(law, kernel, omega, r_max)
        sup_w1_rs = max(
            w1_discrete(measure_of(r(t)[0]), measure_of(s(t)[0]))
            for t in np.linspace(0.0, T, 6))
        lhs = w1_discrete(measure_of(ta.final(0)), measure_of(tb.final(0)))
        w1_init = w1_discrete(measure_of(rho0), measure_of(sig0))
        rhs = math.exp(C * T) * w1_init + T * math.exp(C * T) * Cp * sup_w1_rs
        assert lhs <= rhs * 1.05, (trial, lhs, rhs)


def test_fixed_point_map_contracts_for_small_horizon(rng):
    # the map driver -> solution contracts with factor <= 1/2 once
    # T e^{CT} C' <= 1/2
    law = SpeedLaw("affine_panic", v_max=1.0)
    kernel = make_mollifier(0.8)
    model = ModelSpec("panic", (law,), (kernel,))
    omega = 0.6
    rho0 = random_cloud(rng, 80, (0.4, 0.2))
    r = translating_driver(random_cloud(rng, 30, (0.2, 0.1)), (0.3, 0.1))
    s = translating_driver(random_cloud(rng, 25, (0.35, 0.25)), (0.2, 0.2))
    r_max = 1.5
    C, Cp = stability_constants(law, kernel, omega, r_max)
    t_star = brentq(lambda T: T * math.exp(C * T) * Cp - 0.5, 1e-6, 50.0)
    T = min(t_star, 2.0)
    nu = rotation_nu((0.0, 0.0), omega)
    cfg = LagrangianConfig(t_end=T, dt=T / 24)
    times = np.linspace(0.0, T, 5)

    ta = run_lagrangian(None, model, cfg, ensembles=[rho0], nu_fns=[nu], driver=r)
    tb = run_lagrangian(None, model, cfg, ensembles=[rho0], nu_fns=[nu], driver=s)
    d_in = max(w1_discrete(measure_of(r(t)[0]), measure_of(s(t)[0])) for t in times)

    def at_time(traj, t):
        i = int(np.argmin(np.abs(np.asarray(traj.times) - t)))
        return traj.frames[i][0]

    d_out = max(w1_discrete(measure_of(at_time(ta, t)), measure_of(at_time(tb, t)))
                for t in times)
    assert d_out <= 0.5 * d_in, (d_out, d_in, T)


def test_rasterized_sup_growth(rng):
    # |rho(t)|_inf <= |rho0|_inf e^{Ct} up to rasterization slack
    scen = open_scenario(nx=48, ny=48, blobs=((1.6, 2.0, 0.8, 0.9),))
    law = SpeedLaw("affine_panic", v_max=1.0)
    kernel = make_mollifier(0.5)
    model = ModelSpec("panic", (law,), (kernel,))
    cfg = LagrangianConfig(t_end=0.5, n_particles=4000, store_stride=5)
    traj = run_lagrangian(scen, model, cfg)
    coarse = build_grid(24, 24, 4.0 / 24, 4.0 / 24)
    sup0 = rasterize(traj.frames[0][0], coarse).sup
    mass = traj.frames[0][0].mass
    C = law.lip * mass * kernel.lip * 1.0  # uniform unit direction field
    for t, frame in zip(traj.times, traj.frames):
        sup_t = rasterize(frame[0], coarse).sup
        assert sup_t <= sup0 * math.exp(C * t) * 1.5
