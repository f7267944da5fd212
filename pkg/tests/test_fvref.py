"""Finite-volume reference solver against exact solutions and its own invariants."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from muskat_jko import functionals as fn
from muskat_jko.errors import CflViolation
from muskat_jko.functionals import PairState, PhysParams
from muskat_jko.fvref import (
    FvConfig,
    barenblatt,
    barenblatt_cell_averages,
    barenblatt_support,
    decoupled_state,
    fv_run,
    fv_step,
    stable_dt,
    weak_form_residual,
)
from muskat_jko.testfunctions import bump, cutoff_polynomial
from muskat_jko.transport1d import Grid, GridDensity, mass

from .conftest import gaussian_cells, gaussian_pair, uniform_cells


def l1(u: GridDensity, v: GridDensity) -> float:
    return u.grid.dx * float(np.sum(np.abs(u.values - v.values)))


@pytest.fixture(scope="module")
def short_run():
    grid = Grid.uniform(-8, 8, 512)
    c = FvConfig(grid, T_final=0.2)
    return fv_run(gaussian_pair(grid), c, np.linspace(0.01, 0.2, 20))


def test_config_validation(grid1024):
    with pytest.raises(ValueError):
        FvConfig(grid1024, cfl_safety=0.0)
    with pytest.raises(ValueError):
        FvConfig(grid1024, cfl_safety=1.5)
    with pytest.raises(ValueError):
        FvConfig(grid1024, T_final=-1.0)


def test_constant_state_is_stationary():
    grid = Grid.uniform(0, 1, 64)
    s = PairState(GridDensity(grid, np.ones(64)), GridDensity(grid, np.ones(64)), PhysParams(2.0, 3.0))
    c = FvConfig(grid, phys=s.params)
    out = fv_step(s, stable_dt(s, c), c)
    np.testing.assert_array_equal(out.f.values, s.f.values)
    np.testing.assert_array_equal(out.g.values, s.g.values)


def test_empty_g_stays_empty_and_f_spreads_like_porous_medium():
    grid = Grid.uniform(-3, 3, 1024)
    D = 2.0
    f0 = barenblatt_cell_averages(0.1, grid, D)
    traj = fv_run(decoupled_state(f0, PhysParams()), FvConfig(grid, T_final=0.1), [0.1])
    assert np.all(traj.states[-1].g.values == 0.0)
    assert l1(traj.states[-1].f, barenblatt_cell_averages(0.2, grid, D)) < 0.01


def test_upwind_and_centered_mobilities_agree_as_dx_shrinks():
    diffs = []
    for n_cells in (256, 512, 1024):
        grid = Grid.uniform(-8, 8, n_cells)
        s = gaussian_pair(grid)
        up, ce = FvConfig(grid), FvConfig(grid, centered=True)
        dt = stable_dt(s, up)
        a, b = fv_step(s, dt, up), fv_step(s, dt, ce)
        change = l1(a.f, s.f) + l1(a.g, s.g)
        diffs.append((l1(a.f, b.f) + l1(a.g, b.g)) / change)
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 0.6 * diffs[1]


def test_zero_final_time_keeps_initial(grid1024):
    traj = fv_run(gaussian_pair(grid1024), FvConfig(grid1024, T_final=0.0))
    assert traj.times == [0.0]


def test_cfl_violation(grid1024):
    s = gaussian_pair(grid1024)
    c = FvConfig(grid1024)
    with pytest.raises(CflViolation):
        fv_step(s, 2 * stable_dt(s, c) / c.cfl_safety, c)


def test_particle_input_is_rejected(grid1024):
    from muskat_jko.jko import to_particles

    with pytest.raises(TypeError):
        fv_run(to_particles(gaussian_pair(grid1024), 64), FvConfig(grid1024))


def test_snapshots_hit_requested_times(short_run):
    np.testing.assert_allclose(short_run.times, np.concatenate(([0.0], np.linspace(0.01, 0.2, 20))), atol=1e-14)


def test_mass_is_conserved(short_run):
    for name in ("mass_f", "mass_g"):
        assert np.max(np.abs(short_run.column(name) - 1.0)) <= 1e-13


def test_energy_and_entropy_decrease(short_run):
    dx2 = short_run.grid.dx ** 2
    assert np.all(np.diff(short_run.column("energy")) <= dx2)
    assert np.all(np.diff(short_run.column("entropy_pair")) <= dx2)


@pytest.mark.parametrize(
    "make",
    [
        lambda g: (gaussian_cells(g, -1, 0.7), gaussian_cells(g, 1, 0.7)),
        lambda g: (uniform_cells(g, -1, 0.5), uniform_cells(g, -0.5, 1.5)),
        lambda g: (
            GridDensity(g, 0.5 * (uniform_cells(g, -2, -1).values + uniform_cells(g, 1, 2).values)),
            uniform_cells(g, -0.5, 0.5),
        ),
    ],
)
def test_no_negative_values(make):
    grid = Grid.uniform(-6, 6, 384)
    f, g = make(grid)
    traj = fv_run(PairState(f, g, PhysParams(2.0, 0.5)), FvConfig(grid, phys=PhysParams(2.0, 0.5), T_final=0.1), [0.05, 0.1])
    assert traj.meta["clipped_cells"] == 0
    for s in traj.states:
        assert np.all(s.f.values >= 0) and np.all(s.g.values >= 0)


def test_even_data_stays_even():
    grid = Grid.uniform(-8, 8, 512)
    s = PairState(gaussian_cells(grid, 0, 1), gaussian_cells(grid, 0, 0.6), PhysParams(1.5, 0.7))
    traj = fv_run(s, FvConfig(grid, phys=s.params, T_final=0.2), [0.2])
    for h in (traj.states[-1].f, traj.states[-1].g):
        assert np.max(np.abs(h.values - h.values[::-1])) <= 1e-10


# ---------------------------------------------------------------------------
# self-similar solution


def test_barenblatt_profile_has_unit_mass_and_support():
    x = np.linspace(-5, 5, 200001)
    for t in (0.1, 0.35):
        u = barenblatt(t, x, 2.0)
        assert integrate.trapezoid(u, x) == pytest.approx(1.0, rel=1e-8)
        a = barenblatt_support(t, 2.0)
        assert np.all(u[np.abs(x) > a] == 0) and np.all(u[np.abs(x) < 0.99 * a] > 0)
        assert mass(barenblatt_cell_averages(t, Grid.uniform(-5, 5, 1000), 2.0)) == pytest.approx(1.0, abs=1e-13)


def test_barenblatt_solves_the_porous_medium_equation():
    # f_t = D (f f_x)_x checked by finite differences away from the front
    D, t, h = 2.0, 0.3, 1e-5
    x = np.linspace(-0.3, 0.3, 7)
    ft = (barenblatt(t + h, x, D) - barenblatt(t - h, x, D)) / (2 * h)
    flux = lambda y: barenblatt(t, y, D) * (barenblatt(t, y + h, D) - barenblatt(t, y - h, D)) / (2 * h)
    rhs = D * (flux(x + h) - flux(x - h)) / (2 * h)
    np.testing.assert_allclose(ft, rhs, rtol=1e-4)


def test_barenblatt_error_is_first_order_in_dx():
    D, t0, T = 2.0, 0.1, 0.25
    errs = []
    for n_cells in (512, 1024, 2048):
        grid = Grid.uniform(-4, 4, n_cells)
        traj = fv_run(decoupled_state(barenblatt_cell_averages(t0, grid, D), PhysParams()), FvConfig(grid, T_final=T), [T])
        errs.append(l1(traj.states[-1].f, barenblatt_cell_averages(t0 + T, grid, D)))
    assert errs[2] < 0.02
    assert errs[0] / errs[1] > 2**0.9 and errs[1] / errs[2] > 2**0.9
    # measured constant C = err / dx stays put
    c = [e / (8 / n) for e, n in zip(errs, (512, 1024, 2048))]
    assert max(c) < 1.25 * min(c)


# ---------------------------------------------------------------------------
# weak form


def test_weak_residual_vanishes_for_equal_times(short_run):
    assert weak_form_residual(short_run, bump(0, 1), 0.1, 0.1) == (0.0, 0.0)


def test_weak_residual_of_constant_window_is_mass_drift(short_run):
    one = cutoff_polynomial([1.0], half_width=6.0, ramp=1.5)
    rf, rg = weak_form_residual(short_run, one, 0.2, 0.0)
    assert rf <= 1e-10 and rg <= 1e-10


def test_weak_residual_is_symmetric_in_time(short_run):
    xi = bump(0.3, 1.5)
    assert weak_form_residual(short_run, xi, 0.2, 0.05) == pytest.approx(weak_form_residual(short_run, xi, 0.05, 0.2))


def test_weak_residual_shrinks_under_refinement():
    xi = bump(-0.2, 1.8)
    res = []
    for n_cells in (256, 512, 1024):
        grid = Grid.uniform(-8, 8, n_cells)
        traj = fv_run(gaussian_pair(grid), FvConfig(grid, T_final=0.1), np.linspace(0.0025, 0.1, 40))
        rf, rg = weak_form_residual(traj, xi, 0.1, 0.0)
        res.append(rf + rg)
    assert res[0] / res[1] >= 2**0.9 and res[1] / res[2] >= 2**0.9


def test_energy_and_entropy_of_run_match_functionals(short_run):
    s = short_run.states[-1]
    assert short_run.records[-1].energy == fn.energy(s)
    assert short_run.records[-1].entropy_pair == fn.entropy_pair(s)
