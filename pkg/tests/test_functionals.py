"""Energy, entropy, dissipation and rescaling against closed forms and quadrature."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from muskat_jko import functionals as fn
from muskat_jko.errors import ZeroMass
from muskat_jko.functionals import EnergyForm, PairState, PhysParams, rescale_to_unit_mass
from muskat_jko.fvref import FvConfig, fv_run
from muskat_jko.jko import JkoParams, run_scheme
from muskat_jko.transport1d import Grid, GridDensity, QuantileState, mass, quantiles_from_density

from .conftest import gaussian_cells, uniform_cells

UNIT = Grid.uniform(-4.0, 4.0, 800)


def phi(x, m, s):
    return np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))


def dphi(x, m, s):
    return -(x - m) / s**2 * phi(x, m, s)


def sampled_pair(grid, params, mf=-0.5, sf=1.0, mg=0.5, sg=0.8):
    f = GridDensity.from_function(grid, lambda x: phi(x, mf, sf))
    g = GridDensity.from_function(grid, lambda x: phi(x, mg, sg))
    return PairState(f, g, params)


# ---------------------------------------------------------------------------
# parameters and forms


@pytest.mark.parametrize("R,R_mu", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (float("nan"), 1.0)])
def test_phys_params_reject_nonpositive(R, R_mu):
    with pytest.raises(ValueError):
        PhysParams(R, R_mu)


@pytest.mark.parametrize("R", [1e-3, 0.5, 1.0, 7.0])
def test_standard_form_is_positive_definite(R):
    form = EnergyForm.standard(PhysParams(R, 2.0))
    assert form.is_positive_definite
    assert form.a_ff * form.a_gg - form.a_fg**2 == pytest.approx(R)
    assert (form.w_f, form.w_g) == (1.0, R / 2.0)


# ---------------------------------------------------------------------------
# energy


def test_energy_of_equal_uniforms():
    u = uniform_cells(UNIT, 0, 1)
    assert fn.energy(PairState(u, u, PhysParams(1.0))) == pytest.approx(2.5, rel=1e-12)


def test_energy_of_disjoint_uniforms():
    s = PairState(uniform_cells(UNIT, 0, 1), uniform_cells(UNIT, 2, 3), PhysParams(2.0))
    assert fn.energy(s) == pytest.approx(2.5, rel=1e-12)


@pytest.mark.parametrize("R", [0.3, 1.0, 4.0])
def test_energy_of_gaussian_pair_matches_quadrature(R):
    grid = Grid.uniform(-10, 10, 4096)
    s = sampled_pair(grid, PhysParams(R))

    def integrand(x):
        f, g = phi(x, -0.5, 1.0), phi(x, 0.5, 0.8)
        return 0.5 * (f * f + R * (f + g) ** 2)

    exact, _ = integrate.quad(integrand, -12, 12, epsabs=1e-14, epsrel=1e-13, limit=200)
    assert fn.energy(s) == pytest.approx(exact, rel=1e-8)


def test_particle_energy_of_equally_spaced_positions():
    n = 64
    q = QuantileState((np.arange(n) + 0.5) / n)
    # reconstruction is 1 on [0,1] apart from the half-cells at both ends
    assert fn.l2_squared(q) == pytest.approx(1.0, rel=1e-12)
    assert fn.entropy_single(q) == pytest.approx(0.0, abs=1e-12)


def test_eulerian_and_lagrangian_energies_agree_under_refinement():
    # the two discretization errors partly cancel, so the gap is not monotone
    # in the resolution; it stays well inside the O(dx + 1/N) envelope
    params = PhysParams(1.0)
    for n_cells, n in ((512, 128), (1024, 256), (2048, 512), (4096, 1024)):
        grid = Grid.uniform(-8, 8, n_cells)
        s = PairState(gaussian_cells(grid, -0.5, 1.0), gaussian_cells(grid, 0.5, 1.0), params)
        q = PairState(quantiles_from_density(s.f, n), quantiles_from_density(s.g, n), params)
        assert abs(fn.energy(s) - fn.energy(q)) <= 0.01 * (grid.dx + 1.0 / n)


@st.composite
def pair_states(draw):
    def component():
        m = draw(st.floats(-1.5, 1.5))
        w = draw(st.floats(0.3, 2.0))
        return uniform_cells(UNIT, m - w / 2, m + w / 2)

    return component(), component()


@settings(max_examples=40, deadline=None)
@given(pair_states(), pair_states(), st.floats(0.05, 0.95), st.floats(0.1, 5.0))
def test_energy_is_strictly_convex(a, b, lam, R):
    params = PhysParams(R)
    sa, sb = PairState(*a, params), PairState(*b, params)
    mix = PairState(
        GridDensity(UNIT, lam * a[0].values + (1 - lam) * b[0].values),
        GridDensity(UNIT, lam * a[1].values + (1 - lam) * b[1].values),
        params,
    )
    # exact margin of a quadratic form: lam (1-lam) Q(a-b) / 1, Q >= min eigenvalue |a-b|^2
    form = EnergyForm.standard(params)
    eig = np.linalg.eigvalsh([[form.a_ff, form.a_fg], [form.a_fg, form.a_gg]])[0]
    d2 = fn.l2_squared(GridDensity(UNIT, np.abs(a[0].values - b[0].values))) + fn.l2_squared(
        GridDensity(UNIT, np.abs(a[1].values - b[1].values))
    )
    margin = 0.5 * lam * (1 - lam) * eig * d2
    assert fn.energy(mix) <= lam * fn.energy(sa) + (1 - lam) * fn.energy(sb) - margin + 1e-12


# ---------------------------------------------------------------------------
# entropy


def test_entropy_of_unit_uniforms_is_zero():
    u = uniform_cells(UNIT, 0, 1)
    assert fn.entropy_pair(PairState(u, u, PhysParams(3.0, 0.5))) == pytest.approx(0.0, abs=1e-12)
    assert fn.abs_entropy(u) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("L", [0.5, 2.0, 3.0])
@pytest.mark.parametrize("R,R_mu", [(1.0, 1.0), (2.0, 0.5)])
def test_entropy_of_uniform_pair(L, R, R_mu):
    u = uniform_cells(UNIT, 0, L)
    s = PairState(u, u, PhysParams(R, R_mu))
    assert fn.entropy_pair(s) == pytest.approx((1 + R / R_mu) * (-math.log(L)), rel=1e-12)


def test_entropy_single_and_abs_of_uniform_on_two():
    u = uniform_cells(UNIT, 0, 2)
    assert fn.entropy_single(u) == pytest.approx(-math.log(2), rel=1e-12)
    assert fn.abs_entropy(u) == pytest.approx(math.log(2), rel=1e-12)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 1.7])
def test_entropy_of_gaussian(sigma):
    grid = Grid.uniform(-12, 12, 4096)
    s = PairState(gaussian_cells(grid, 0, sigma), gaussian_cells(grid, 0.3, sigma), PhysParams(2.0, 4.0))
    exact = -0.5 * math.log(2 * math.pi * math.e * sigma**2)
    assert fn.entropy_pair(s) == pytest.approx(1.5 * exact, abs=1e-5)


def test_zero_cells_contribute_no_entropy():
    v = np.zeros(UNIT.n_cells)
    v[10] = 1.0 / UNIT.dx
    assert fn.entropy_single(GridDensity(UNIT, v)) == pytest.approx(-math.log(UNIT.dx), rel=1e-12)


def test_c_ell_value():
    # int exp(-(1+x^2)) (1+x^2) dx = e^{-1} (sqrt(pi) + sqrt(pi)/2)
    assert fn.c_ell() == pytest.approx(1.5 * math.sqrt(math.pi) / math.e, rel=1e-12)


@pytest.mark.parametrize("sigma", [1e-3, 0.01, 0.1, 1.0, 3.0])
def test_entropy_bounds_hold_for_gaussians(sigma):
    grid = Grid.uniform(-16, 16, 2**16)
    b = fn.entropy_bounds(gaussian_cells(grid, 0.2, sigma))
    assert b["abs_ok"] and b["entropy_ok"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 2.0), min_size=4, max_size=40), st.floats(-3, 3))
def test_entropy_bounds_hold_for_particle_states(gaps, x0):
    x = x0 + np.concatenate(([0.0], np.cumsum(gaps)))
    b = fn.entropy_bounds(QuantileState(x))
    assert b["abs_ok"] and b["entropy_ok"]


# ---------------------------------------------------------------------------
# cross term


def test_cross_term_examples():
    n = 40
    a = QuantileState((np.arange(n) + 0.5) / n)
    assert fn.cross_term(a, a.translated(5.0)) == 0.0
    # reconstructions are 1 on [0,1] up to the end half-cells
    assert fn.cross_term(a, a) == pytest.approx(fn.l2_squared(a), rel=1e-12)
    assert fn.cross_term(a, a.translated(0.5)) == pytest.approx(0.5, rel=1e-12)


def test_cross_term_matches_grid_inner_product():
    rng = np.random.default_rng(3)
    x = QuantileState(np.sort(rng.normal(size=30)))
    y = QuantileState(np.sort(rng.normal(size=30)) + 0.4)
    grid = Grid.uniform(-6, 6, 2**16)
    from muskat_jko.transport1d import density_from_quantiles

    oracle = fn.inner(density_from_quantiles(x, grid), density_from_quantiles(y, grid))
    assert fn.cross_term(x, y) == pytest.approx(oracle, rel=2e-3)
    assert fn.cross_term(x, y) == fn.cross_term(y, x)


# ---------------------------------------------------------------------------
# dissipation rates


def test_dissipation_of_flat_interiors_is_small():
    s = PairState(uniform_cells(UNIT, -3.5, 3.5), uniform_cells(UNIT, -3.5, 3.5), PhysParams())
    # only the two edge jumps contribute; interior derivatives vanish
    f = s.f.values
    df = np.gradient(f, UNIT.dx)
    assert np.count_nonzero(np.abs(df) > 1e-12) <= 4
    inside = PairState(GridDensity(UNIT, np.full(UNIT.n_cells, 1 / 8)), GridDensity(UNIT, np.full(UNIT.n_cells, 1 / 8)), PhysParams())
    assert fn.energy_dissipation_rate(inside) == 0.0
    assert fn.entropy_dissipation_rate(inside) == 0.0


@pytest.mark.parametrize("R", [0.5, 1.0, 3.0])
def test_energy_dissipation_with_empty_g(R):
    grid = Grid.uniform(-8, 8, 4096)
    f = GridDensity.from_function(grid, lambda x: phi(x, 0, 1))
    s = PairState(f, GridDensity(grid, np.zeros(grid.n_cells)), PhysParams(R, 2.0))
    df = np.gradient(f.values, grid.dx)
    expected = (1 + R) ** 2 * grid.dx * np.sum(f.values * df**2)
    assert fn.energy_dissipation_rate(s) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("R", [0.5, 2.0])
def test_entropy_dissipation_with_equal_components(R):
    grid = Grid.uniform(-8, 8, 4096)
    f = GridDensity.from_function(grid, lambda x: phi(x, 0, 1))
    s = PairState(f, f, PhysParams(R))
    df = np.gradient(f.values, grid.dx)
    assert fn.entropy_dissipation_rate(s) == pytest.approx((1 + 4 * R) * grid.dx * np.sum(df**2), rel=1e-13)


@pytest.mark.parametrize("R,R_mu", [(1.0, 1.0), (2.0, 0.5)])
def test_dissipation_rates_match_quadrature(R, R_mu):
    grid = Grid.uniform(-10, 10, 2**15)
    s = sampled_pair(grid, PhysParams(R, R_mu))

    def e_int(x):
        f, g = phi(x, -0.5, 1.0), phi(x, 0.5, 0.8)
        df, dg = dphi(x, -0.5, 1.0), dphi(x, 0.5, 0.8)
        return f * ((1 + R) * df + R * dg) ** 2 + R * R_mu * g * (df + dg) ** 2

    def h_int(x):
        df, dg = dphi(x, -0.5, 1.0), dphi(x, 0.5, 0.8)
        return df**2 + R * (df + dg) ** 2

    kw = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    assert fn.energy_dissipation_rate(s) == pytest.approx(integrate.quad(e_int, -12, 12, **kw)[0], rel=1e-6)
    assert fn.entropy_dissipation_rate(s) == pytest.approx(integrate.quad(h_int, -12, 12, **kw)[0], rel=1e-6)


def test_particle_states_need_a_grid_for_dissipation():
    q = QuantileState(np.linspace(0, 1, 8))
    with pytest.raises(ValueError):
        fn.energy_dissipation_rate(PairState(q, q, PhysParams()))


# ---------------------------------------------------------------------------
# rescaling


def test_rescaling_of_unit_masses_is_identity():
    grid = Grid.uniform(-8, 8, 512)
    f, g = gaussian_cells(grid, 0, 1), gaussian_cells(grid, 1, 1)
    s, r = rescale_to_unit_mass(f, g, PhysParams(2.0, 3.0))
    assert r.eta2 == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_allclose(s.f.values, f.values, rtol=1e-14)
    std = EnergyForm.standard(PhysParams(2.0, 3.0))
    for name in ("a_ff", "a_fg", "a_gg", "w_f", "w_g"):
        assert getattr(r.form, name) == pytest.approx(getattr(std, name), rel=1e-13)


def test_rescaling_masses_two_and_half():
    grid = Grid.uniform(-8, 8, 512)
    f, g = gaussian_cells(grid, 0, 1) * 2.0, gaussian_cells(grid, 1, 1) * 0.5
    s, r = rescale_to_unit_mass(f, g, PhysParams())
    assert r.eta2 == pytest.approx(4.0, rel=1e-13)
    assert mass(s.f) == pytest.approx(1.0, abs=1e-13)
    assert mass(s.g) == pytest.approx(1.0, abs=1e-13)
    a, b = r.restore(s)
    np.testing.assert_allclose(a.values, f.values, rtol=1e-13)
    np.testing.assert_allclose(b.values, g.values, rtol=1e-13)


def test_rescaling_rejects_zero_mass():
    grid = Grid.uniform(-1, 1, 8)
    with pytest.raises(ZeroMass):
        rescale_to_unit_mass(GridDensity(grid, np.zeros(8)), uniform_cells(grid, 0, 1), PhysParams())


@pytest.mark.slow
def test_rescaled_scheme_reproduces_unscaled_finite_volume_run():
    grid = Grid.uniform(-8, 8, 1024)
    params = PhysParams(1.0, 2.0)
    f = GridDensity.from_function(grid, lambda x: phi(x, -0.5, 1.0)).normalized() * 2.0
    g = GridDensity.from_function(grid, lambda x: phi(x, 0.5, 1.0)).normalized() * 0.5
    state, r = rescale_to_unit_mass(f, g, params)
    traj = run_scheme(state, JkoParams(tau=0.01, N=512, phys=params, form=r.form), 0.2, grid)
    ref = fv_run(PairState(f, g, params), FvConfig(grid, phys=params, T_final=0.2), [0.2])
    a, b = r.restore(traj.states[-1], grid)
    err = grid.dx * (np.abs(a.values - ref.states[-1].f.values).sum() + np.abs(b.values - ref.states[-1].g.values).sum())
    # the unscaled form would be off by more than 0.15 on this data
    assert err < 0.03
