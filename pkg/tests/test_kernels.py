import numpy as np
import pytest

from crowdlab import (DiscreteMeasure, KernelError, build_grid, convolve,
                      eval_convolution_at, eval_convolution_grad_at,
                      make_mollifier, w1_discrete)

from conftest import bump_values


def test_compact_support():
    k = make_mollifier(1.0)
    assert k([[1.0, 0.0]])[0] == 0.0
    assert k([[0.8, 0.601]])[0] == 0.0  # radius just above 1
    assert k([[0.99, 0.0]])[0] > 0.0


def test_unit_integral_midpoint_quadrature():
    k = make_mollifier(1.0)
    dx = 0.01
    n = 220
    x = (np.arange(n) - n / 2 + 0.5) * dx
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    integral = k(pts).sum() * dx * dx
    assert abs(integral - 1.0) <= 1e-4


def test_sup_scaling_with_radius():
    k1 = make_mollifier(1.0)
    k2 = make_mollifier(2.0)
    assert np.isclose(k2.sup, k1.sup / 4.0, rtol=1e-14)


def test_rejects_nonpositive_radius():
    with pytest.raises(KernelError):
        make_mollifier(0.0)
    with pytest.raises(KernelError):
        make_mollifier(-1.0)


def test_reported_lipschitz_constant_matches_sampled_gradient():
    k = make_mollifier(0.7)
    r = np.linspace(0, 0.7, 20001)
    pts = np.column_stack([r, np.zeros_like(r)])
    g = np.linalg.norm(k.grad(pts), axis=1)
    assert g.max() <= k.lip * (1 + 1e-9)
    assert g.max() >= k.lip * (1 - 1e-4)


def test_convolve_zero_density():
    g = build_grid(20, 20, 0.1, 0.1)
    cf = convolve(np.zeros(g.shape), make_mollifier(0.3), g)
    assert not cf.values.any() and not cf.grad_x.any() and not cf.grad_y.any()


def test_convolve_constant_region():
    g = build_grid(60, 60, 0.05, 0.05)
    k = make_mollifier(0.3)
    rho = np.zeros(g.shape)
    rho[10:50, 10:50] = 0.7
    cf = convolve(rho, k, g)
    core = cf.values[17:43, 17:43]  # more than R from the region edge
    assert np.allclose(core, 0.7, atol=1e-8)
    assert np.abs(cf.grad_x[17:43, 17:43]).max() <= 1e-10
    assert cf.values.max() <= 0.7 * (1 + 1e-12)


def test_convolve_point_mass_matches_kernel():
    g = build_grid(41, 41, 0.1, 0.1)
    k = make_mollifier(0.3)
    rho = np.zeros(g.shape)
    rho[20, 20] = 1.0 / g.cell_area  # unit mass in one cell
    cf = convolve(rho, k, g)
    X, Y = g.cell_centers()
    x0, y0 = g.cell_center(20, 20)
    pts = np.column_stack([(X - x0).ravel(), (Y - y0).ravel()])
    eta = k(pts).reshape(g.shape)
    inside = eta > 1e-9
    assert np.allclose(cf.values[inside], eta[inside], rtol=2e-2)


def test_convolve_linearity():
    g = build_grid(40, 40, 0.1, 0.1)
    k = make_mollifier(0.35)
    rng = np.random.default_rng(7)
    r1 = rng.random(g.shape)
    r2 = rng.random(g.shape)
    a, b = 0.7, -1.3
    lhs = convolve(a * r1 + b * r2, k, g)
    c1 = convolve(r1, k, g)
    c2 = convolve(r2, k, g)
    assert np.allclose(lhs.values, a * c1.values + b * c2.values, atol=1e-12)
    assert np.allclose(lhs.grad_x, a * c1.grad_x + b * c2.grad_x, atol=1e-12)


def test_convolve_sup_bounds():
    g = build_grid(50, 50, 0.08, 0.08)
    k = make_mollifier(0.4)
    rho = bump_values(g, (2.0, 2.0), 0.8, 1.3)
    cf = convolve(rho, k, g)
    mass = rho.sum() * g.cell_area
    assert cf.values.max() <= k.sup * mass * (1 + 1e-10)
    assert cf.values.max() <= rho.max() * (1 + 1e-12)


def test_fft_and_direct_agree():
    g = build_grid(48, 40, 0.1, 0.09)
    k = make_mollifier(0.42)
    rng = np.random.default_rng(3)
    rho = rng.random(g.shape)
    a = convolve(rho, k, g, method="fft")
    b = convolve(rho, k, g, method="direct")
    scale = np.abs(b.values).max()
    assert np.abs(a.values - b.values).max() <= 1e-10 * scale
    assert np.abs(a.grad_x - b.grad_x).max() <= 1e-10 * max(np.abs(b.grad_x).max(), 1)
    assert np.abs(a.grad_y - b.grad_y).max() <= 1e-10 * max(np.abs(b.grad_y).max(), 1)


def test_under_resolved_kernel_rejected():
    g = build_grid(10, 10, 0.5, 0.5)
    with pytest.raises(KernelError, match="under-resolved"):
        convolve(np.zeros(g.shape), make_mollifier(0.3), g)


class _Particles:
    def __init__(self, positions, weights):
        self.positions = np.asarray(positions, dtype=float)
        self.weights = np.asarray(weights, dtype=float)


def test_particle_convolution_single_and_far():
    k = make_mollifier(0.5)
    p = _Particles([[1.0, 2.0]], [1.0])
    assert np.isclose(eval_convolution_at(p, k, [1.0, 2.0]), k([[0.0, 0.0]])[0])
    assert eval_convolution_at(p, k, [3.0, 2.0]) == 0.0


def test_particle_convolution_matches_double_loop(rng):
    k = make_mollifier(0.6)
    pos = rng.random((100, 2)) * 2.0
    w = rng.random(100) + 0.1
    p = _Particles(pos, w)
    queries = rng.random((17, 2)) * 2.0
    vals = eval_convolution_at(p, k, queries)
    grads = eval_convolution_grad_at(p, k, queries)
    for qi, q in enumerate(queries):
        acc = 0.0
        ga = np.zeros(2)
        for j in range(100):
            acc += w[j] * k([q - pos[j]])[0]
            ga += w[j] * k.grad([q - pos[j]])[0]
        assert abs(vals[qi] - acc) <= 1e-14 * max(1.0, abs(acc))
        assert np.allclose(grads[qi], ga, atol=1e-12)


def test_lipschitz_transfer_against_w1(rng):
    # |(r - s) * eta (x)| <= Lip(eta) W1(r, s) for probability ensembles
    k = make_mollifier(0.8)
    for trial in range(5):
        n, m = rng.integers(5, 25), rng.integers(5, 25)
        pa = rng.random((n, 2))
        pb = rng.random((m, 2))
        wa = rng.random(n) + 0.05
        wb = rng.random(m) + 0.05
        wa /= wa.sum()
        wb /= wb.sum()
        w1 = w1_discrete(DiscreteMeasure(pa, wa), DiscreteMeasure(pb, wb))
        queries = rng.random((40, 2)) * 1.4 - 0.2
        va = eval_convolution_at(_Particles(pa, wa), k, queries)
        vb = eval_convolution_at(_Particles(pb, wb), k, queries)
        assert np.abs(va - vb).max() <= k.lip * w1 * (1 + 1e-9) + 1e-15
