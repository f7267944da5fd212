"""Diagnostics harness: estimates, comparisons and fitted orders."""

from __future__ import annotations

import numpy as np
import pytest

from muskat_jko.errors import DegenerateFit, NoOverlap
from muskat_jko.functionals import PairState, PhysParams
from muskat_jko.fvref import FvConfig, fv_run
from muskat_jko.harness import (
    check_theorem_estimates,
    compare_trajectories,
    entropy_bound_report,
    equicontinuity_surrogate,
    estimate_convergence_order,
    scheme_estimates,
)
from muskat_jko.jko import JkoParams, run_scheme
from muskat_jko.records import Trajectory, make_record
from muskat_jko.transport1d import Grid

from .conftest import gaussian_pair


def single_snapshot(grid) -> Trajectory:
    s = gaussian_pair(grid)
    traj = Trajectory("jko", grid, s.params, tau=0.01)
    traj.append(0.0, s, make_record(s, 0.0, grid))
    return traj


def stationary(grid, n=5) -> Trajectory:
    s = gaussian_pair(grid)
    traj = Trajectory("fv", grid, s.params)
    rec = make_record(s, 0.0, grid)
    for k in range(n):
        traj.append(0.1 * k, s, rec)
    return traj


@pytest.fixture(scope="module")
def fv_traj(grid1024):
    return fv_run(gaussian_pair(grid1024), FvConfig(grid1024, T_final=0.5), np.arange(1, 51) * 0.01)


# ---------------------------------------------------------------------------
# theorem estimates


def test_single_snapshot_gives_equalities(grid1024):
    rep = check_theorem_estimates(single_snapshot(grid1024))
    assert rep.entropy_lhs[0] == rep.entropy_rhs
    assert rep.energy_lhs[0] == rep.energy_rhs
    assert rep.ok


def test_energy_estimate_holds_on_jko_run(default_run):
    head = Trajectory("jko", default_run.grid, default_run.params, tau=default_run.tau)
    for t, s, r in list(zip(default_run.times, default_run.states, default_run.records))[:51]:
        head.append(t, s, r)
    assert np.all(check_theorem_estimates(head).energy_ok)


def test_both_estimates_hold_on_fv_run(fv_traj):
    dx = fv_traj.grid.dx
    rep = check_theorem_estimates(fv_traj, slack=dx)
    assert rep.ok
    assert rep.worst_energy_excess <= 0.0


def test_scheme_estimates_on_fv_run(fv_traj):
    est = scheme_estimates(fv_traj, slack=fv_traj.grid.dx**2 * (len(fv_traj) - 1))
    assert est.e1_ok and est.e3_ok
    assert est.moment_constant == pytest.approx(np.max(est.moment_ratios))
    assert np.isfinite(est.C1) and est.C1 > 0


def test_scheme_estimates_on_jko_run(default_run):
    est = scheme_estimates(default_run)
    assert est.mass_drift <= 1e-12
    assert est.e2_ok and est.e3_ok
    # second moments of the offset pair start near 2 + 2 * 0.25 (particle tails
    # are truncated at the outermost quantiles) and grow linearly
    assert est.moment_ratios[0] == pytest.approx(2.5, abs=2.0 / 256)
    assert est.moment_constant < 10


# ---------------------------------------------------------------------------
# comparison


def test_trajectory_against_itself_is_zero(fv_traj):
    rep = compare_trajectories(fv_traj, fv_traj)
    assert rep.summary_l2 == 0.0
    assert np.all(rep.l1 == 0) and np.all(rep.offsets == 0)
    np.testing.assert_array_equal(rep.w2, 0.0)


def test_disjoint_time_ranges(grid1024):
    a = single_snapshot(grid1024)
    s = gaussian_pair(grid1024)
    b = Trajectory("fv", grid1024, s.params)
    b.append(5.0, s, make_record(s, 5.0, grid1024))
    b.append(6.0, s, make_record(s, 6.0, grid1024))
    with pytest.raises(NoOverlap):
        compare_trajectories(a, b)


def test_nearest_time_matching_records_offsets(fv_traj, default_run):
    rep = compare_trajectories(default_run, fv_traj, with_w2=False)
    assert rep.times[-1] == pytest.approx(0.5)
    assert np.max(np.abs(rep.offsets)) <= 0.005 + 1e-12
    assert np.all(np.isnan(rep.w2))


def test_jko_refinement_in_tau_contracts(grid1024):
    trajs = {tau: run_scheme(gaussian_pair(grid1024), JkoParams(tau=tau, N=256), 0.2, grid1024) for tau in (0.04, 0.02, 0.01)}
    d1 = compare_trajectories(trajs[0.04], trajs[0.02], with_w2=False).summary_l2
    d2 = compare_trajectories(trajs[0.02], trajs[0.01], with_w2=False).summary_l2
    assert d2 < d1


# ---------------------------------------------------------------------------
# fitted order


@pytest.mark.parametrize("order", [0.5, 1.0, 2.0])
def test_exact_power_laws(order):
    taus = [0.04, 0.02, 0.01, 0.005]
    assert estimate_convergence_order([(t, 3 * t**order) for t in taus]) == pytest.approx(order, abs=1e-12)


def test_constant_errors_give_zero_slope():
    assert estimate_convergence_order([(0.1, 2.0), (0.05, 2.0), (0.025, 2.0)]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "points",
    [[(0.1, 1.0), (0.05, 0.5)], [(0.1, 1.0), (0.05, 0.0), (0.02, 0.1)], [(0.1, 1.0)] * 3, [(0.1, np.nan), (0.05, 1), (0.02, 1)]],
)
def test_degenerate_fits(points):
    with pytest.raises(DegenerateFit):
        estimate_convergence_order(points)


# ---------------------------------------------------------------------------
# equicontinuity and entropy bounds


def test_stationary_trajectory_has_zero_modulus(grid1024):
    assert equicontinuity_surrogate(stationary(grid1024), tau=0.1) == 0.0
    assert equicontinuity_surrogate(single_snapshot(grid1024)) == 0.0


def test_equicontinuity_is_finite_on_runs(default_run, fv_traj):
    c_jko = equicontinuity_surrogate(default_run)
    c_fv = equicontinuity_surrogate(fv_traj, tau=0.01)
    assert 0 < c_jko < np.inf and 0 < c_fv < np.inf
    # the FV path is continuous in time and shares the data: same magnitude
    assert 0.5 < c_jko / c_fv < 2.0


def test_entropy_bound_report_covers_all_snapshots(default_run):
    rep = entropy_bound_report(default_run.states)
    assert rep["ok"]
    assert rep["upper_margin"] > 0 and rep["lower_margin"] > 0


def test_entropy_bound_report_skips_empty_components(grid1024):
    from muskat_jko.fvref import decoupled_state

    s = decoupled_state(gaussian_pair(grid1024).f, PhysParams())
    assert entropy_bound_report([s])["ok"]


def test_records_carry_exact_masses(default_run):
    rec = default_run.records[-1]
    assert rec.mass_f == pytest.approx(1.0, abs=1e-12)
    assert set(rec.as_dict()) >= {"time", "energy", "solver_report"}
    assert isinstance(default_run.states[-1], PairState)
    assert Grid.uniform(-8, 8, 1024) == default_run.grid
