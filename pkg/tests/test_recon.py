from __future__ import annotations

import math

import numpy as np
import pytest
from gmpy2 import mpq
from scipy import integrate, special

from tensortomo.polyfield import c_coefficient, random_field, saint_venant
from tensortomo.recon import (
    SV_TAPER,
    SpectralPlan,
    Taper,
    component_errors,
    d_operator,
    fractional_laplacian_half,
    invert_full,
    invert_partial_sv,
    j_x_grid,
    relative_error,
    saint_venant_grid,
    spectral_d,
    spectral_div,
)
from tensortomo.xray import Geometry, GridField, GridSpec, Phantom, normal_operator

import oracles


def gaussian_field(grid, m, center=(0.3, -0.2), width=0.5, direction=(1.0, -0.6)):
    return Phantom.gaussian(grid.n, m, [list(center)], [width], [1.0],
                            [list(direction)] if m else None).sample(grid)


# -- spectral primitives -----------------------------------------------------

def test_spectral_gradient_of_gaussian():
    grid = GridSpec(2, 128, 6.0)
    f = gaussian_field(grid, 0)
    x = grid.points()
    a = 1 / (2 * 0.5 ** 2)
    exact = -2 * a * (x - np.array([0.3, -0.2])[:, None, None]) * f.comps[0]
    got = spectral_d(f).comps
    assert np.abs(got - exact).max() <= 1e-10 * np.abs(exact).max()


def test_d_and_div_are_negative_adjoints():
    rng = np.random.default_rng(0)
    grid = GridSpec(2, 32, 3.0)
    for m in (0, 1, 2):
        u = GridField(grid, m, rng.normal(size=(m + 1,) + grid.shape))
        w = GridField(grid, m + 1, rng.normal(size=(m + 2,) + grid.shape))
        lhs, rhs = spectral_d(u).inner(w), -u.inner(spectral_div(w))
        assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + u.norm() * w.norm())


def test_multipliers_compose():
    rng = np.random.default_rng(1)
    grid = GridSpec(2, 32, 3.0)
    plan = SpectralPlan(grid)
    a = rng.normal(size=grid.shape)
    one = plan.derivative(a, (0, 1, 1))
    two = plan.derivative(plan.derivative(plan.derivative(a, (1,)), (0,)), (1,))
    assert np.abs(one - two).max() <= 1e-12 * np.abs(one).max()
    f = GridField(grid, 0, a[None])
    hh = fractional_laplacian_half(fractional_laplacian_half(f, plan), plan).comps[0]
    lap = plan.derivative(a, (0, 0)) + plan.derivative(a, (1, 1))
    assert np.abs(hh + lap).max() <= 1e-12 * np.abs(lap).max()


def test_imaginary_residue_is_checked():
    plan = SpectralPlan(GridSpec(2, 8, 1.0))
    spec = np.zeros((8, 8), dtype=complex)
    spec[1, 0] = 1.0  # no Hermitian partner
    with pytest.raises(AssertionError, match="imaginary"):
        plan.ifft(spec)


def test_half_laplacian_of_gaussian():
    """Radial oracle: sigma^2 int rho^2 exp(-sigma^2 rho^2 / 2) J0(rho r) d rho."""
    s = 0.5
    grid = GridSpec(2, 256, 8.0)
    f = Phantom.gaussian(2, 0, [[0.0, 0.0]], [s], [1.0]).sample(grid)
    got = fractional_laplacian_half(f).comps[0]
    mid = grid.N // 2
    peak = None
    for idx in range(mid, mid + 40, 4):
        r = grid.axis()[idx]
        ref, _ = integrate.quad(lambda rho: s * s * rho ** 2 * math.exp(-(s * rho) ** 2 / 2)
                                * special.j0(rho * r), 0, 40 / s, limit=400)
        peak = abs(ref) if peak is None else peak
        assert abs(got[idx, mid] - ref) <= 1e-3 * peak


# -- inversion operator and Saint Venant operator ----------------------------

@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_d_operator_matches_exact_enveloped_polynomial(m):
    grid = GridSpec(2, 128, 6.0)
    plan = SpectralPlan(grid)
    rng = np.random.default_rng([21, m])
    a = mpq(2)
    P = random_field(rng, 2, m, 2)
    env = np.exp(-float(a) * grid.radius() ** 2)
    g = GridField(grid, m, oracles.sample_poly(P, grid) * env)
    for k in range(m + 1):
        ref = oracles.sample_poly(oracles.enveloped_d_op(P, a, k, 2), grid) * env * c_coefficient(m, 2, k)
        got = d_operator(g, k, plan).comps
        assert np.abs(got - ref).max() <= 1e-6 * np.abs(ref).max()


def test_d_operator_is_linear():
    grid = GridSpec(2, 32, 3.0)
    rng = np.random.default_rng(2)
    u = GridField(grid, 2, rng.normal(size=(3,) + grid.shape))
    v = GridField(grid, 2, rng.normal(size=(3,) + grid.shape))
    for k in range(3):
        lhs = d_operator(u * 2.0 + v * -0.5, k)
        rhs = d_operator(u, k) * 2.0 + d_operator(v, k) * -0.5
        assert (lhs - rhs).norm() <= 1e-12 * lhs.norm()


def test_j_x_grid_uses_box_coordinates():
    grid = GridSpec(2, 8, 2.0)
    f = GridField(grid, 1, np.ones((2,) + grid.shape))
    x = grid.points()
    assert np.allclose(j_x_grid(f).comps[0], x[0] + x[1])


@pytest.mark.parametrize("m,r", [(1, 0), (2, 0), (2, 1)])
def test_saint_venant_grid_matches_exact_polynomial(m, r):
    grid = GridSpec(2, 256, 8.0)
    rng = np.random.default_rng([5, m, r])
    P = random_field(rng, 2, m, m - r + 1)
    chi = oracles.smooth_step(grid.radius(), 1.5, 7.5)
    g = GridField(grid, m, oracles.sample_poly(P, grid) * chi)
    mask = grid.interior(1.5 / 8.0)
    got = saint_venant_grid(g, r).comps[:, :, mask]
    ref = oracles.sample_poly(saint_venant(P, r), grid)[:, :, mask]
    assert np.abs(got - ref).max() <= 1e-6 * np.abs(ref).max()


@pytest.mark.parametrize("m,order", [(1, 1), (2, 1), (2, 2), (3, 1), (3, 3)])
def test_saint_venant_grid_annihilates_potentials(m, order):
    grid = GridSpec(2, 128, 5.0)
    dirs = [[1.0, -0.6]] if (m - order) % 2 else None
    pot = Phantom.potential(2, m, order, [[0.3, -0.2]], [0.5], [1.0], dirs).sample(grid)
    gen = gaussian_field(grid, m, direction=(1.0, 0.5))
    gen = gen * (np.abs(pot.comps).max() / np.abs(gen.comps).max())
    r = order - 1
    assert saint_venant_grid(pot, r).norm() <= 1e-8 * saint_venant_grid(gen, r).norm()


def test_saint_venant_grid_identity_when_r_equals_m():
    grid = GridSpec(2, 16, 2.0)
    f = gaussian_field(grid, 2)
    W = saint_venant_grid(f, 2)
    assert (W.p, W.q) == (0, 2) and np.array_equal(W.comps[0], f.comps)
    with pytest.raises(ValueError):
        saint_venant_grid(f, 3)


# -- inversion ---------------------------------------------------------------

def test_taper_windows():
    grid = GridSpec(2, 128, 4.0)
    t = Taper()
    inner, outer = t.inner(grid), t.outer(grid)
    assert inner[grid.interior(0.5)].min() > 1 - 1e-10
    assert outer[grid.interior(0.5)].min() > 1 - 1e-10
    assert inner.min() < 1e-5
    assert SV_TAPER.outer(grid) is None


def test_zero_data_gives_zero():
    grid = GridSpec(2, 32, 4.0)
    zeros = [GridField(grid, 1, np.zeros((2,) + grid.shape)) for _ in range(2)]
    assert not invert_full(zeros).comps.any()
    assert not invert_partial_sv(zeros[:1], 0).comps.any()


def test_inversion_input_checks():
    grid = GridSpec(2, 16, 4.0)
    f1 = GridField(grid, 1, np.zeros((2,) + grid.shape))
    with pytest.raises(ValueError):
        invert_full([f1])
    with pytest.raises(ValueError):
        invert_full([f1, GridField(GridSpec(2, 16, 5.0), 1, np.zeros((2, 16, 16)))])
    with pytest.raises(ValueError):
        invert_partial_sv([f1], 0, m=2)
    with pytest.raises(ValueError):
        invert_partial_sv([f1, f1], 0)
    with pytest.raises(ValueError):
        invert_full([])


@pytest.fixture(scope="module")
def m1_normals():
    geo = Geometry.default(2, 4.0, 128)
    ph = Phantom.gaussian(2, 1, [[0.3, -0.2]], [0.4], [1.0], [[1.0, -0.6]])
    return ph, geo, normal_operator(ph, [0, 1], geo, threads=4)


def test_partial_recovery_m1_matches_phantom(m1_normals):
    ph, geo, normals = m1_normals
    grid = geo.grid()
    mask = grid.interior(0.5)
    W = invert_partial_sv(normals[:1], 0, 1)
    ref = saint_venant_grid(ph.sample(grid), 0)
    assert relative_error(W, ref, mask) <= 0.15


def test_partial_with_r_equal_m_is_full_inversion(m1_normals):
    _, _, normals = m1_normals
    W = invert_partial_sv(normals, 1, taper=Taper())
    full = invert_full(normals, Taper())
    assert np.abs(W.comps[0] - full.comps).max() <= 1e-12 * np.abs(full.comps).max()


def test_full_inversion_m1(m1_normals):
    ph, geo, normals = m1_normals
    grid = geo.grid()
    rec = invert_full(normals)
    errs = component_errors(rec, ph.sample(grid), grid.interior(0.5))
    assert max(errs) <= 0.15
